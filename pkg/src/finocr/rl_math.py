"""Reward and objective arithmetic for group-relative policy optimization on table parsing."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

from finocr.errors import FinocrError, TooFewSamples
from finocr.metrics import TedsConfig, teds
from finocr.table_model import HtmlTable, grid_signature, parse_table


def whitespace_tokens(text: str) -> int:
    return len(text.split())


@dataclass(frozen=True)
class RewardConfig:
    lambda1: float = 0.5  # grid consistency
    lambda2: float = 0.5  # TEDS
    max_len: int = 8192
    token_counter: Callable = whitespace_tokens
    teds_config: TedsConfig = TedsConfig()

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0 or self.lambda1 + self.lambda2 <= 0:
            raise ValueError("reward weights must be non-negative with a positive sum")


@dataclass(frozen=True)
class GrpoGroup:
    rewards: tuple
    ratios: tuple
    kl: float = 0.0
    epsilon: float = 0.2
    kl_coeff: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "rewards", tuple(self.rewards))
        object.__setattr__(self, "ratios", tuple(self.ratios))
        if len(self.rewards) != len(self.ratios):
            raise ValueError("rewards and ratios must have the same length")
        if len(self.rewards) < 2:
            raise TooFewSamples("a group needs at least two samples")
        if any(r <= 0 for r in self.ratios):
            raise ValueError("probability ratios must be positive")
        if not 0 < self.epsilon < 1:
            raise ValueError("epsilon must lie in (0, 1)")
        if self.kl < 0 or self.kl_coeff < 0:
            raise ValueError("kl and kl_coeff must be non-negative")


def grid_consistent(pred: HtmlTable, gold: HtmlTable) -> bool:
    return grid_signature(pred) == grid_signature(gold)


def combine_reward(grid_ok: bool, teds_value: float, cfg: RewardConfig) -> float:
    return cfg.lambda1 * float(grid_ok) + cfg.lambda2 * teds_value


@dataclass(frozen=True)
class RewardBreakdown:
    reward: float
    grid_consistent: bool
    teds: float
    gated: str = ""  # "", "length" or "schema"


def score_output(pred_html: str, gold: HtmlTable, cfg: RewardConfig = RewardConfig()) -> RewardBreakdown:
    """Reward with its components; over-budget or unparseable output scores exactly 0."""
    if cfg.token_counter(pred_html) > cfg.max_len:
        return RewardBreakdown(0.0, False, 0.0, "length")
    try:
        pred = parse_table(pred_html)
    except FinocrError:
        return RewardBreakdown(0.0, False, 0.0, "schema")
    ok = grid_consistent(pred, gold)
    value = teds(pred, gold, cfg.teds_config)
    return RewardBreakdown(combine_reward(ok, value, cfg), ok, value)


def reward(pred_html: str, gold: HtmlTable, cfg: RewardConfig = RewardConfig()) -> float:
    return score_output(pred_html, gold, cfg).reward


def group_advantages(rewards: Sequence[float]) -> list:
    """Mean-baseline advantages ``r_i - mean(r)`` whose float sum is exactly zero.

    Rewards are snapped to a power-of-two grid fine enough that every partial
    sum of the group is representable, and centred in integer arithmetic. The
    rounding residue of the mean (fewer than ``g`` grid steps) is removed one
    step per entry, so the sum is 0 in any summation order and each entry is
    within two grid steps of the exact value.
    """
    g = len(rewards)
    if g < 2:
        raise TooFewSamples("need at least two rewards")
    top = max(abs(float(r)) for r in rewards)
    if top == 0:
        return [0.0] * g
    if not math.isfinite(top):
        raise ValueError("rewards must be finite")
    # partial sums stay below g * 2 * top < 2**(quantum_exp + 53)
    quantum_exp = math.frexp(top)[1] + 1 + math.ceil(math.log2(g)) - 53
    ticks = [round(math.ldexp(float(r), -quantum_exp)) for r in rewards]
    total = sum(ticks)
    mean_ticks = (2 * total + g) // (2 * g)  # round half up
    adv = [k - mean_ticks for k in ticks]
    residue = total - g * mean_ticks
    step = -1 if residue > 0 else 1
    for i in range(abs(residue)):
        adv[i] += step
    return [math.ldexp(float(a), quantum_exp) for a in adv]


def clip(value: float, low: float, high: float) -> float:
    return max(low, min(high, value))


def clipped_surrogate(ratio: float, advantage: float, epsilon: float) -> float:
    return min(ratio * advantage, clip(ratio, 1 - epsilon, 1 + epsilon) * advantage)


def grpo_objective(group: GrpoGroup) -> float:
    adv = group_advantages(group.rewards)
    terms = [clipped_surrogate(r, a, group.epsilon) - group.kl_coeff * group.kl for r, a in zip(group.ratios, adv)]
    return math.fsum(terms) / len(terms)


def unclipped_objective(group: GrpoGroup) -> float:
    adv = group_advantages(group.rewards)
    terms = [r * a - group.kl_coeff * group.kl for r, a in zip(group.ratios, adv)]
    return math.fsum(terms) / len(terms)


def score_candidates(candidates: Iterable[tuple], golds: dict, cfg: RewardConfig = RewardConfig()) -> list:
    """Score ``(sample_id, candidate_html)`` pairs against ``golds[sample_id]``."""
    records = []
    for sample_id, html in candidates:
        b = score_output(html, golds[sample_id], cfg)
        records.append({
            "sample_id": sample_id,
            "candidate_html": html,
            "reward": b.reward,
            "grid_consistent": b.grid_consistent,
            "teds": b.teds,
        })
    return records


def dump_records(records: Iterable[dict]) -> str:
    return "".join(json.dumps(r, ensure_ascii=False) + "\n" for r in records)
