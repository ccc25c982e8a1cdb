"""Symbolic transitions, probabilistic operator mining, determinization and domain sampling.

Operators are lifted over the two action arguments only: ``?x`` is the picked
block, ``?y`` the target. Self-placements (picked == target) form a separate
one-parameter pattern. Preconditions are the full closed-world bit pattern of
the argument-local literals, so absent bits appear as negative literals.
"""
from __future__ import annotations

import re
from collections import Counter, defaultdict
from dataclasses import dataclass, field, replace
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from biplan.abstraction import Encoder, SymbolicState
from biplan.world import Transition

PAIR, SELF = "pair", "self"
KINDS = (PAIR, SELF)


class LiftedLiteral(NamedTuple):
    predicate: str
    args: tuple
    positive: bool = True

    def atom(self) -> "LiftedLiteral":
        return self if self.positive else self._replace(positive=True)

    def __str__(self):
        body = f"{self.predicate}({','.join(self.args)})"
        return body if self.positive else "!" + body


_LIT_RE = re.compile(r"^(!?)([A-Za-z_][\w-]*)\(([^)]*)\)$")


def parse_literal(text: str) -> LiftedLiteral:
    m = _LIT_RE.match(text.strip())
    if not m:
        raise ValueError(f"malformed literal {text!r}")
    args = tuple(a.strip() for a in m.group(3).split(",") if a.strip())
    return LiftedLiteral(m.group(2), args, m.group(1) != "!")


def local_layout(encoder: Encoder, kind: str) -> tuple[LiftedLiteral, ...]:
    """Argument-local literals in canonical order (predicate id, then arguments)."""
    if kind == SELF:
        return tuple(LiftedLiteral(p, ("?x",)) for p in encoder.unary_names)
    unary = [LiftedLiteral(p, (v,)) for p in encoder.unary_names for v in ("?x", "?y")]
    rel = [LiftedLiteral(r, a) for r in encoder.relation_names for a in (("?x", "?y"), ("?y", "?x"))]
    return tuple(unary + rel)


def local_bits(sym: SymbolicState, i: int, j: int) -> tuple[int, ...]:
    """Bits of ``local_layout`` for picked ``i`` and target ``j``."""
    if i == j:
        return tuple(int(b) for b in sym.unary[i])
    unary = np.stack([sym.unary[i], sym.unary[j]], axis=1).ravel()
    rel = np.stack([sym.relational[:, i, j], sym.relational[:, j, i]], axis=1).ravel()
    return tuple(int(b) for b in unary) + tuple(int(b) for b in rel)


class SymbolicTransition(NamedTuple):
    """``add``/``delete`` hold indices into ``local_layout(encoder, kind)``."""

    kind: str
    offsets: tuple
    pre: tuple
    add: tuple
    delete: tuple


def symbolize(dataset: Iterable[Transition], encoder: Encoder) -> list[SymbolicTransition]:
    out = []
    # episodes chain post -> pre, so the previous post usually is the next pre
    last_state, last_sym = None, None

    def enc(state):
        nonlocal last_state, last_sym
        if state is last_state:
            return last_sym
        sym = encoder.encode(state)
        last_state, last_sym = state, sym
        return sym

    for t in dataset:
        i, di, j, dj = t.action
        before = local_bits(enc(t.pre), i, j)
        after = local_bits(enc(t.post), i, j)
        add = tuple(k for k, (a, b) in enumerate(zip(before, after)) if a == 0 and b == 1)
        delete = tuple(k for k, (a, b) in enumerate(zip(before, after)) if a == 1 and b == 0)
        out.append(SymbolicTransition(SELF if i == j else PAIR, (di, dj), before, add, delete))
    return out


@dataclass(frozen=True)
class EffectBranch:
    add: tuple
    delete: tuple
    prob: float
    support: int

    def __post_init__(self):
        if set(self.add) & set(self.delete):
            raise ValueError("a branch cannot add and delete the same literal")

    def encoding(self) -> str:
        return "add:" + ",".join(map(str, self.add)) + "|del:" + ",".join(map(str, self.delete))


def _offset_tag(d: int) -> str:
    return "m1" if d < 0 else str(d)


@dataclass(frozen=True)
class Operator:
    name: str
    kind: str
    offsets: tuple
    preconditions: tuple
    effects: tuple

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown operator kind {self.kind!r}")
        if not self.effects:
            raise ValueError(f"operator {self.name} has no effect branches")
        total = sum(b.prob for b in self.effects)
        if abs(total - 1.0) > 1e-9 or any(b.prob <= 0 for b in self.effects):
            raise ValueError(f"operator {self.name} branch probabilities {[b.prob for b in self.effects]} invalid")

    @property
    def params(self) -> tuple:
        return ("?x",) if self.kind == SELF else ("?x", "?y")

    @property
    def deterministic(self) -> bool:
        return len(self.effects) == 1

    @property
    def probs(self) -> np.ndarray:
        return np.array([b.prob for b in self.effects])

    def with_branch(self, index: int) -> "Operator":
        return replace(self, effects=(replace(self.effects[index], prob=1.0),))


def operator_name(kind: str, offsets: tuple, index: int) -> str:
    return f"pick-place_d{_offset_tag(offsets[0])}_d{_offset_tag(offsets[1])}_{kind[0]}{index}"


def mine(
    records: Sequence[SymbolicTransition],
    encoder: Encoder,
    min_support: int = 5,
    min_fraction: float = 0.01,
) -> list[Operator]:
    """One operator per (kind, offsets, pre-pattern) group with its empirical effect distribution.

    Branches seen fewer than ``min_support`` times or in less than
    ``min_fraction`` of the group are dropped and the rest renormalized;
    groups left without branches produce no operator.
    """
    groups: dict[tuple, Counter] = defaultdict(Counter)
    for r in records:
        groups[(KINDS.index(r.kind), tuple(r.offsets), tuple(r.pre))][(tuple(r.add), tuple(r.delete))] += 1
    layouts = {kind: local_layout(encoder, kind) for kind in KINDS}
    counters: Counter = Counter()
    ops = []
    for key in sorted(groups):
        kind_id, offsets, pre = key
        kind = KINDS[kind_id]
        layout = layouts[kind]
        counts = groups[key]
        total = sum(counts.values())
        kept = [(eff, c) for eff, c in counts.items() if c >= min_support and c / total >= min_fraction]
        if not kept:
            continue
        kept_total = sum(c for _, c in kept)
        branches = [
            EffectBranch(
                tuple(layout[a] for a in add),
                tuple(layout[d] for d in delete),
                c / kept_total,
                c,
            )
            for (add, delete), c in kept
        ]
        branches.sort(key=EffectBranch.encoding)
        preconditions = tuple(lit if bit else lit._replace(positive=False) for lit, bit in zip(layout, pre))
        index = counters[(kind, offsets)]
        counters[(kind, offsets)] += 1
        ops.append(Operator(operator_name(kind, offsets, index), kind, offsets, preconditions, tuple(branches)))
    return ops


def deterministic_projection(operators: Iterable[Operator]) -> list[Operator]:
    """Keep each operator's most probable branch; ties go to the smaller canonical encoding."""
    out = []
    for op in operators:
        best = min(range(len(op.effects)), key=lambda b: (-op.effects[b].prob, op.effects[b].encoding()))
        out.append(op.with_branch(best))
    return out


@dataclass(frozen=True, eq=False)
class SampledDomain:
    """A determinization: branch ``choices[o]`` of ``source[o]`` for every operator."""

    source: tuple
    choices: np.ndarray
    sample_index: int = 0
    _ops: list = field(default=None, repr=False, compare=False)

    @property
    def operators(self) -> list[Operator]:
        if self._ops is None:
            object.__setattr__(self, "_ops", [op.with_branch(int(c)) for op, c in zip(self.source, self.choices)])
        return self._ops

    @classmethod
    def from_deterministic(cls, operators: Sequence[Operator], sample_index: int = 0) -> "SampledDomain":
        if any(not op.deterministic for op in operators):
            raise ValueError("from_deterministic needs single-branch operators")
        return cls(tuple(operators), np.zeros(len(operators), dtype=np.int64), sample_index)

    def __eq__(self, other):
        if not isinstance(other, SampledDomain):
            return NotImplemented
        return self.source == other.source and np.array_equal(self.choices, other.choices)


def sample_domains(operators: Sequence[Operator], n_domains: int, seed: int) -> list[SampledDomain]:
    """``n_domains`` independent determinizations drawn from the branch distributions."""
    if n_domains < 1:
        raise ValueError("need at least one sampled domain")
    source = tuple(operators)
    rng = np.random.default_rng(seed)
    u = rng.random((n_domains, len(source)))
    choices = np.zeros((n_domains, len(source)), dtype=np.int64)
    for o, op in enumerate(source):
        if op.deterministic:
            continue
        cum = np.cumsum(op.probs)
        choices[:, o] = np.minimum(np.searchsorted(cum, u[:, o], side="right"), len(op.effects) - 1)
    return [SampledDomain(source, choices[d], d) for d in range(n_domains)]


# ---------------------------------------------------------------- text form

OPS_HEADER = "# biplan operators v1"


def format_operators(operators: Iterable[Operator]) -> str:
    lines = [OPS_HEADER]
    for op in operators:
        lines.append(f"operator {op.name} kind={op.kind} offsets={op.offsets[0]},{op.offsets[1]}")
        lines.append("  pre: " + " ".join(map(str, op.preconditions)))
        for b in op.effects:
            lines.append(
                f"  branch p={b.prob!r} support={b.support} add: "
                + " ".join(map(str, b.add))
                + " | del: "
                + " ".join(map(str, b.delete))
            )
        lines.append("end")
    return "\n".join(lines) + "\n"


_BRANCH_RE = re.compile(r"^branch p=(\S+) support=(\d+) add:(.*)\| del:(.*)$")
_OP_RE = re.compile(r"^operator (\S+) kind=(\w+) offsets=(-?\d),(-?\d)$")


def parse_operators(text: str) -> list[Operator]:
    ops = []
    current = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        try:
            if line.startswith("operator "):
                m = _OP_RE.match(line)
                if not m:
                    raise ValueError("bad operator header")
                current = {
                    "name": m.group(1), "kind": m.group(2),
                    "offsets": (int(m.group(3)), int(m.group(4))), "pre": (), "branches": [],
                }
            elif line.startswith("pre:"):
                current["pre"] = tuple(parse_literal(t) for t in line[4:].split())
            elif line.startswith("branch "):
                m = _BRANCH_RE.match(line)
                if not m:
                    raise ValueError("bad branch line")
                current["branches"].append(
                    EffectBranch(
                        tuple(parse_literal(t) for t in m.group(3).split()),
                        tuple(parse_literal(t) for t in m.group(4).split()),
                        float(m.group(1)),
                        int(m.group(2)),
                    )
                )
            elif line == "end":
                ops.append(Operator(current["name"], current["kind"], current["offsets"], current["pre"], tuple(current["branches"])))
                current = None
            else:
                raise ValueError("unrecognized line")
        except (ValueError, TypeError, KeyError) as exc:
            raise ValueError(f"line {lineno}: {exc}: {raw!r}") from None
    if current is not None:
        raise ValueError("unterminated operator block")
    return ops
