from collections import Counter, defaultdict

import numpy as np
import pytest

from biplan.operators import (
    PAIR,
    SELF,
    EffectBranch,
    LiftedLiteral,
    Operator,
    SampledDomain,
    SymbolicTransition,
    deterministic_projection,
    format_operators,
    local_layout,
    mine,
    parse_literal,
    parse_operators,
    sample_domains,
    symbolize,
)
from biplan.world import ActionSpec, Transition, step

L = LiftedLiteral


def _record(add=(), delete=(), pre=None, offsets=(0, 0), kind=PAIR):
    return SymbolicTransition(kind, offsets, pre or (0,) * 10, tuple(add), tuple(delete))


def test_stacking_effect(encoder, two_blocks):
    a = ActionSpec(0, 0, 1, 0)
    rec = symbolize([Transition(two_blocks, a, step(two_blocks, a))], encoder)[0]
    layout = local_layout(encoder, PAIR)
    add = {str(layout[k]) for k in rec.add}
    delete = {str(layout[k]) for k in rec.delete}
    assert "on(?x,?y)" in add and "on_table(?x)" in delete
    # blocks start 20 cm apart, so stacking also makes them near
    assert add == {"on(?x,?y)", "near(?x,?y)", "near(?y,?x)"}
    assert delete == {"on_table(?x)", "clear(?y)"}


def test_noop_effect_is_empty(encoder, two_blocks):
    stacked = step(two_blocks, ActionSpec(0, 0, 1, 0))
    a = ActionSpec(1, 0, 0, 0)
    rec = symbolize([Transition(stacked, a, step(stacked, a))], encoder)[0]
    assert rec.add == () and rec.delete == ()


def test_symbolize_deterministic(encoder, noisy_data):
    assert symbolize(noisy_data[:500], encoder) == symbolize(noisy_data[:500], encoder)


def test_mine_frequencies(encoder):
    records = [_record(add=(0,))] * 70 + [_record(add=(1,))] * 30
    (op,) = mine(records, encoder)
    probs = {b.add[0].predicate + b.add[0].args[0]: b.prob for b in op.effects}
    assert probs == {"is_large?x": 0.7, "is_large?y": 0.3}
    assert [b.support for b in op.effects] == [70, 30]
    (single,) = mine([_record(delete=(2,))] * 12, encoder)
    assert single.deterministic and single.effects[0].prob == 1.0


def test_mine_min_support_filters_and_renormalizes(encoder):
    records = [_record(add=(0,))] * 96 + [_record(add=(1,))] * 4
    (op,) = mine(records, encoder, min_support=5)
    assert op.deterministic and op.effects[0].support == 96
    assert mine([_record()] * 3, encoder, min_support=5) == []


def test_mine_matches_counting_oracle(encoder):
    rng = np.random.default_rng(0)
    outcomes = [((0,), ()), ((1,), (2,)), ((), (3,)), ((4, 5), ())]
    pres = [tuple(rng.integers(0, 2, 10)) for _ in range(4)]
    records = []
    for _ in range(1000):
        kind_offsets = (int(rng.integers(-1, 2)), int(rng.integers(-1, 2)))
        pre = pres[rng.integers(len(pres))]
        add, delete = outcomes[rng.choice(4, p=[0.5, 0.25, 0.15, 0.1])]
        records.append(_record(add, delete, pre, kind_offsets))
    ops = mine(records, encoder, min_support=1, min_fraction=0.0)

    oracle = defaultdict(Counter)
    for r in records:
        oracle[(r.offsets, r.pre)][(r.add, r.delete)] += 1
    layout = local_layout(encoder, PAIR)
    assert len(ops) == len(oracle)
    for op in ops:
        pre = tuple(int(lit.positive) for lit in op.preconditions)
        counts = oracle[(op.offsets, pre)]
        total = sum(counts.values())
        got = {(tuple(b.add), tuple(b.delete)): (b.prob, b.support) for b in op.effects}
        want = {
            (tuple(layout[k] for k in a), tuple(layout[k] for k in d)): (c / total, c)
            for (a, d), c in counts.items()
        }
        assert got == want


def test_operator_names_and_kinds(noisy_ops):
    names = [op.name for op in noisy_ops]
    assert len(set(names)) == len(names)
    assert any(op.kind == SELF for op in noisy_ops) and any(op.kind == PAIR for op in noisy_ops)
    self_op = next(op for op in noisy_ops if op.kind == SELF and op.offsets == (-1, 1))
    assert self_op.name.startswith("pick-place_dm1_d1_s") and self_op.params == ("?x",)
    assert any(not op.deterministic for op in noisy_ops)


def _branch(name, prob):
    return EffectBranch((L(name, ("?x",)),), (), prob, 1)


def test_projection_keeps_most_probable_and_breaks_ties():
    pre = (L("clear", ("?x",)),)
    op = Operator("a", SELF, (0, 0), pre, (_branch("b", 0.3), _branch("a", 0.7)))
    assert deterministic_projection([op])[0].effects[0].add[0].predicate == "a"
    tie = Operator("t", SELF, (0, 0), pre, (_branch("zeta", 0.5), _branch("alpha", 0.5)))
    kept = deterministic_projection([tie])[0]
    assert kept.deterministic and kept.effects[0].add[0].predicate == "alpha" and kept.effects[0].prob == 1.0


def test_sample_domains_frequency():
    pre = (L("clear", ("?x",)),)
    op = Operator("a", SELF, (0, 0), pre, (_branch("a", 0.7), _branch("b", 0.3)))
    domains = sample_domains([op], 1000, seed=5)
    assert len(domains) == 1000
    freq = np.mean([d.choices[0] == 0 for d in domains])
    # three binomial standard errors is about 0.043
    assert abs(freq - 0.7) <= 0.05
    assert [d.sample_index for d in domains[:3]] == [0, 1, 2]
    again = sample_domains([op], 1000, seed=5)
    assert all(a == b for a, b in zip(domains, again))
    with pytest.raises(ValueError):
        sample_domains([op], 0, seed=5)


def test_sample_domains_all_deterministic(noisy_ops):
    det = deterministic_projection(noisy_ops)
    domains = sample_domains(det, 100, seed=1)
    assert len(domains) == 100
    assert all(d == domains[0] for d in domains)
    assert domains[0] == SampledDomain.from_deterministic(det)
    with pytest.raises(ValueError):
        SampledDomain.from_deterministic(noisy_ops)


def test_text_roundtrip(noisy_ops):
    text = format_operators(noisy_ops)
    assert parse_operators(text) == noisy_ops
    assert format_operators(parse_operators(text)) == text


def test_parse_errors():
    with pytest.raises(ValueError, match="line 2"):
        parse_operators("# biplan operators v1\nbogus\n")
    with pytest.raises(ValueError, match="unterminated"):
        parse_operators("operator a kind=self offsets=0,0\n  pre: clear(?x)\n")
    with pytest.raises(ValueError):
        parse_literal("clear ?x")
    assert parse_literal("!on(?x,?y)") == L("on", ("?x", "?y"), False)


def test_operator_validation():
    pre = (L("clear", ("?x",)),)
    with pytest.raises(ValueError):
        Operator("a", "triple", (0, 0), pre, (_branch("a", 1.0),))
    with pytest.raises(ValueError):
        Operator("a", SELF, (0, 0), pre, ())
    with pytest.raises(ValueError):
        Operator("a", SELF, (0, 0), pre, (_branch("a", 0.6),))
    with pytest.raises(ValueError):
        EffectBranch((L("a", ("?x",)),), (L("a", ("?x",)),), 1.0, 1)
