"""Document-level reconstruction and evaluation toolkit for long paginated documents."""

__version__ = "0.1.0"
