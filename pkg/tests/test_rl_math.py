import math
import random

import pytest
from hypothesis import given, settings, strategies as st

from finocr.errors import TooFewSamples
from finocr.rl_math import (
    GrpoGroup,
    RewardConfig,
    clipped_surrogate,
    dump_records,
    grid_consistent,
    group_advantages,
    grpo_objective,
    reward,
    score_candidates,
    score_output,
    unclipped_objective,
)
from finocr.metrics import TedsConfig
from finocr.table_model import parse_table, serialize_table

GOLD = parse_table("<table><tr><td>a</td><td>b</td></tr><tr><td>c</td><td>d</td></tr></table>")


def test_grid_consistency():
    assert grid_consistent(GOLD, GOLD)
    other_text = parse_table("<table><tr><td>x</td><td>y</td></tr><tr><td>z</td><td>w</td></tr></table>")
    assert grid_consistent(other_text, GOLD)
    extra_row = parse_table("<table><tr><td>a</td><td>b</td></tr><tr><td>c</td><td>d</td></tr>"
                            "<tr><td>e</td><td>f</td></tr></table>")
    assert not grid_consistent(extra_row, GOLD)


def test_reward_examples():
    cfg = RewardConfig(0.3, 0.7)
    assert reward(serialize_table(GOLD), GOLD, cfg) == 1.0
    assert reward("<table><tr><td>a</td>", GOLD, cfg) == 0.0
    mismatched = "<table><tr><td>a</td><td>b</td></tr></table>"
    b = score_output(mismatched, GOLD, cfg)
    assert not b.grid_consistent
    assert b.reward == pytest.approx(0.7 * b.teds, abs=1e-15)


def test_reward_arithmetic_with_fixed_teds():
    from finocr.rl_math import combine_reward

    assert combine_reward(False, 0.8, RewardConfig(0.3, 0.7)) == pytest.approx(0.56, abs=1e-15)


def test_length_gate():
    html = serialize_table(GOLD)
    cfg = RewardConfig(max_len=3)
    assert score_output(html, GOLD, cfg).gated == ""  # a single whitespace-free token
    long = html.replace("<td>a</td>", "<td>a a a a</td>")
    b = score_output(long, GOLD, cfg)
    assert (b.reward, b.gated) == (0.0, "length")
    custom = RewardConfig(max_len=10, token_counter=len)
    assert score_output(html, GOLD, custom).reward == 0.0


def test_reward_config_validation():
    with pytest.raises(ValueError):
        RewardConfig(-0.1, 1.0)
    with pytest.raises(ValueError):
        RewardConfig(0.0, 0.0)


def test_structure_only_reward_mode():
    pred = "<table><tr><td>x</td><td>y</td></tr><tr><td>z</td><td>w</td></tr></table>"
    assert reward(pred, GOLD, RewardConfig(0.5, 0.5, teds_config=TedsConfig(structure_only=True))) == 1.0
    assert reward(pred, GOLD, RewardConfig(0.5, 0.5)) < 1.0


def test_advantages_examples():
    assert group_advantages([2, 4, 6]) == [-2.0, 0.0, 2.0]
    assert group_advantages([0.3, 0.3, 0.3]) == [0.0, 0.0, 0.0]
    with pytest.raises(TooFewSamples):
        group_advantages([1.0])


@given(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=2, max_size=32))
@settings(max_examples=500)
def test_advantages_sum_exactly_zero(rewards):
    adv = group_advantages(rewards)
    assert math.fsum(adv) == 0.0
    assert sum(adv) == 0.0 and sum(reversed(adv)) == 0.0
    # and they stay the mean-baseline values up to grid rounding
    mean = math.fsum(rewards) / len(rewards)
    top = max(abs(r) for r in rewards) or 1.0
    assert all(abs(a - (r - mean)) <= 1e-12 * top for a, r in zip(adv, rewards))


def test_objective_worked_examples():
    assert grpo_objective(GrpoGroup((1.0, 0.0), (1.0, 1.0), epsilon=0.2)) == 0.0
    assert clipped_surrogate(2.0, 1.0, 0.2) == pytest.approx(1.2, abs=1e-12)
    g = GrpoGroup((2.0, 0.0), (2.0, 1.0), epsilon=0.2)
    assert grpo_objective(g) == pytest.approx((1.2 - 1.0) / 2, abs=1e-12)
    g = GrpoGroup((0.5, 0.5, 0.5), (1.3, 0.7, 1.0), kl=0.1, kl_coeff=0.04)
    assert grpo_objective(g) == pytest.approx(-0.004, abs=1e-12)


def test_clip_for_negative_advantage():
    # pessimism: with A<0 the larger ratio term wins the min
    assert clipped_surrogate(0.5, -1.0, 0.2) == -0.8
    assert clipped_surrogate(1.5, -1.0, 0.2) == -1.5


@given(
    st.lists(st.tuples(st.floats(0, 1), st.floats(0.05, 5)), min_size=2, max_size=10),
    st.floats(0.01, 0.9),
    st.floats(0, 1),
    st.floats(0, 1),
)
@settings(max_examples=300)
def test_clipped_never_exceeds_unclipped(pairs, eps, kl, coeff):
    g = GrpoGroup(tuple(r for r, _ in pairs), tuple(q for _, q in pairs), kl, eps, coeff)
    assert grpo_objective(g) <= unclipped_objective(g) + 1e-12


def test_group_validation():
    with pytest.raises(ValueError):
        GrpoGroup((1, 0), (1,))
    with pytest.raises(TooFewSamples):
        GrpoGroup((1,), (1,))
    with pytest.raises(ValueError):
        GrpoGroup((1, 0), (1, 0))
    with pytest.raises(ValueError):
        GrpoGroup((1, 0), (1, 1), epsilon=1.5)


def test_score_candidates_records():
    recs = score_candidates([("s1", serialize_table(GOLD)), ("s1", "garbage")], {"s1": GOLD})
    assert [r["reward"] for r in recs] == [1.0, 0.0]
    lines = dump_records(recs).splitlines()
    assert len(lines) == 2 and '"sample_id": "s1"' in lines[0]


def test_random_groups_objective_bounded():
    rng = random.Random(2)
    for _ in range(200):
        n = rng.randint(2, 8)
        g = GrpoGroup(tuple(rng.random() for _ in range(n)), tuple(rng.uniform(0.5, 1.5) for _ in range(n)))
        assert math.isfinite(grpo_objective(g))
