"""PDDL/PPDDL text, grounding, an internal STRIPS planner, plan files and an external-planner adapter."""
from __future__ import annotations

import heapq
import logging
import re
import shlex
import subprocess
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from biplan.abstraction import SymbolicState
from biplan.kernels import relaxed_costs
from biplan.operators import PAIR, SELF, EffectBranch, LiftedLiteral, Operator, SampledDomain
from biplan.world import ActionSpec

logger = logging.getLogger(__name__)

DOMAIN_NAME = "tabletop"
OBJECT_TYPE = "block"
MAX_ATOMS = 64


# ---------------------------------------------------------------- emission

def _pddl_literal(lit: LiftedLiteral) -> str:
    body = f"({lit.predicate} {' '.join(lit.args)})" if lit.args else f"({lit.predicate})"
    return body if lit.positive else f"(not {body})"


def _conj(parts: Sequence[str], indent: str) -> str:
    if not parts:
        return "(and)"
    return "(and " + f"\n{indent}     ".join(parts) + ")"


def _effect_parts(branch: EffectBranch) -> list[str]:
    return [_pddl_literal(a) for a in branch.add] + [f"(not {_pddl_literal(d)})" for d in branch.delete]


def _predicates(operators: Sequence[Operator], predicates) -> list[tuple[str, int]]:
    if predicates is not None:
        return [(p, int(a)) for p, a in predicates]
    seen: dict[str, int] = {}
    for op in operators:
        lits = list(op.preconditions) + [l for b in op.effects for l in b.add + b.delete]
        for lit in lits:
            seen.setdefault(lit.predicate, len(lit.args))
    return list(seen.items())


def predicates_of(encoder) -> list[tuple[str, int]]:
    return [(p, 1) for p in encoder.unary_names] + [(r, 2) for r in encoder.relation_names]


def _action_block(op: Operator, effect: str) -> str:
    params = " ".join(f"{p} - {OBJECT_TYPE}" for p in op.params)
    pre = [_pddl_literal(l) for l in op.preconditions]
    if op.kind == PAIR:
        pre.append("(not (= ?x ?y))")
    return (
        f"  (:action {op.name}\n"
        f"    :parameters ({params})\n"
        f"    :precondition {_conj(pre, '    ')}\n"
        f"    :effect {effect})"
    )


def _domain_text(operators, predicates, requirements, effect_fn, name) -> str:
    preds = " ".join(
        f"({p}{''.join(f' ?a{i} - {OBJECT_TYPE}' for i in range(arity))})" for p, arity in _predicates(operators, predicates)
    )
    blocks = [_action_block(op, effect_fn(op)) for op in operators]
    body = "\n\n".join(blocks)
    return (
        f"(define (domain {name})\n"
        f"  (:requirements {' '.join(requirements)})\n"
        f"  (:types {OBJECT_TYPE})\n"
        f"  (:predicates {preds})\n"
        + (body + "\n" if body else "")
        + ")\n"
    )


def emit_pddl(domain: Sequence[Operator], predicates=None, name: str = DOMAIN_NAME) -> str:
    """Deterministic domain as PDDL 1.2; rejects operators with more than one branch."""
    domain = list(domain)
    bad = [op.name for op in domain if not op.deterministic]
    if bad:
        raise ValueError(f"emit_pddl needs deterministic operators; probabilistic: {bad[:5]}")
    reqs = [":strips", ":typing", ":negative-preconditions", ":equality"]
    return _domain_text(domain, predicates, reqs, lambda op: _conj(_effect_parts(op.effects[0]), "    "), name)


def emit_ppddl(operators: Sequence[Operator], predicates=None, name: str = DOMAIN_NAME) -> str:
    """PPDDL 1.0 with ``probabilistic`` effects for multi-branch operators."""
    reqs = [":strips", ":typing", ":negative-preconditions", ":equality", ":probabilistic-effects"]

    def effect(op: Operator) -> str:
        if op.deterministic:
            return _conj(_effect_parts(op.effects[0]), "    ")
        inner = "\n".join(
            f"        {b.prob:.12f} {_conj(_effect_parts(b), '        ')}" for b in op.effects
        )
        return f"(probabilistic\n{inner})"

    return _domain_text(list(operators), predicates, reqs, effect, name)


def object_name(index: int) -> str:
    return f"o{index}"


def emit_problem(
    n: int,
    init: SymbolicState,
    goal: SymbolicState,
    unary_names: Sequence[str],
    relation_names: Sequence[str],
    negative_goal_heads: Sequence[str] = ("on",),
    name: str = "task",
) -> str:
    objs = " ".join(object_name(i) for i in range(n))
    facts = []
    for i in range(n):
        for p, pname in enumerate(unary_names):
            if init.unary[i, p]:
                facts.append(f"({pname} {object_name(i)})")
    for r, rname in enumerate(relation_names):
        for i in range(n):
            for j in range(n):
                if i != j and init.relational[r, i, j]:
                    facts.append(f"({rname} {object_name(i)} {object_name(j)})")
    goals = []
    for i in range(n):
        for p, pname in enumerate(unary_names):
            if goal.unary[i, p]:
                goals.append(f"({pname} {object_name(i)})")
    for r, rname in enumerate(relation_names):
        for i in range(n):
            for j in range(n):
                if i == j:
                    continue
                if goal.relational[r, i, j]:
                    goals.append(f"({rname} {object_name(i)} {object_name(j)})")
                elif rname in negative_goal_heads:
                    goals.append(f"(not ({rname} {object_name(i)} {object_name(j)}))")
    return (
        f"(define (problem {name})\n"
        f"  (:domain {DOMAIN_NAME})\n"
        f"  (:objects {objs} - {OBJECT_TYPE})\n"
        f"  (:init {' '.join(facts)})\n"
        f"  (:goal (and {' '.join(goals)})))\n"
    )


# ---------------------------------------------------------------- reading

def _tokenize(text: str) -> list[str]:
    text = re.sub(r";[^\n]*", " ", text)
    return re.findall(r"\(|\)|[^\s()]+", text.lower())


def parse_sexpr(text: str):
    tokens = _tokenize(text)
    stack: list[list] = [[]]
    for tok in tokens:
        if tok == "(":
            stack.append([])
        elif tok == ")":
            if len(stack) == 1:
                raise ValueError("unbalanced ')'")
            done = stack.pop()
            stack[-1].append(done)
        else:
            stack[-1].append(tok)
    if len(stack) != 1:
        raise ValueError("unbalanced '('")
    return stack[0]


_NAME_RE = re.compile(r"^pick-place_d(m1|0|1)_d(m1|0|1)(?:_[a-z0-9_-]+)?$")


def _offset_value(tag: str) -> int:
    return -1 if tag == "m1" else int(tag)


def _read_literals(expr) -> list[LiftedLiteral]:
    if not expr:
        return []
    if expr[0] == "and":
        return [lit for sub in expr[1:] for lit in _read_literals(sub)]
    if expr[0] == "not":
        inner = expr[1]
        if inner[0] == "=":
            return []
        return [LiftedLiteral(inner[0], tuple(inner[1:]), False)]
    return [LiftedLiteral(expr[0], tuple(expr[1:]), True)]


def _read_branch(expr, prob: float) -> EffectBranch:
    lits = _read_literals(expr)
    add = tuple(l for l in lits if l.positive)
    delete = tuple(l.atom() for l in lits if not l.positive)
    return EffectBranch(add, delete, prob, 0)


def parse_domain(text: str) -> list[Operator]:
    """Read operators back from :func:`emit_pddl` / :func:`emit_ppddl` output.

    Supports are not part of the PDDL text and come back as 0.
    """
    top = parse_sexpr(text)
    if not top or top[0][0] != "define":
        raise ValueError("expected (define (domain ...))")
    ops = []
    for item in top[0][1:]:
        if not isinstance(item, list) or item[0] != ":action":
            continue
        name = item[1]
        fields = dict(zip(item[2::2], item[3::2]))
        m = _NAME_RE.match(name)
        if not m:
            raise ValueError(f"action name {name!r} does not follow pick-place_d<i>_d<j>")
        params = [p for p in fields.get(":parameters", []) if p.startswith("?")]
        kind = SELF if len(params) == 1 else PAIR
        pre = tuple(_read_literals(fields.get(":precondition", [])))
        eff = fields.get(":effect", [])
        if eff and eff[0] == "probabilistic":
            probs = [float(eff[i]) for i in range(1, len(eff), 2)]
            total = sum(probs)
            if abs(total - 1.0) > 1e-6:
                raise ValueError(f"action {name}: branch probabilities sum to {total}")
            # printed probabilities are rounded; renormalize to an exact distribution
            branches = tuple(_read_branch(eff[i + 1], p / total) for i, p in zip(range(1, len(eff), 2), probs))
        else:
            branches = (_read_branch(eff, 1.0),)
        ops.append(Operator(name, kind, (_offset_value(m.group(1)), _offset_value(m.group(2))), pre, branches))
    return ops


def same_structure(a: Sequence[Operator], b: Sequence[Operator], prob_tol: float = 1e-9) -> bool:
    """Equality of operator lists ignoring branch supports."""
    if len(a) != len(b):
        return False
    for x, y in zip(a, b):
        if (x.name, x.kind, tuple(x.offsets), tuple(x.preconditions)) != (y.name, y.kind, tuple(y.offsets), tuple(y.preconditions)):
            return False
        if len(x.effects) != len(y.effects):
            return False
        for bx, by in zip(x.effects, y.effects):
            if bx.add != by.add or bx.delete != by.delete or abs(bx.prob - by.prob) > prob_tol:
                return False
    return True


# ---------------------------------------------------------------- grounding

class AtomIndex:
    """Ground atoms: unary ``(p, i)`` then relational ``(r, i, j)`` with i != j."""

    def __init__(self, n: int, unary_names: Sequence[str], relation_names: Sequence[str]):
        self.n = n
        self.unary_names = tuple(unary_names)
        self.relation_names = tuple(relation_names)
        self.atoms: list[tuple] = []
        self.index: dict[tuple, int] = {}
        for i in range(n):
            for p in self.unary_names:
                self._add((p, i))
        for r in self.relation_names:
            for i in range(n):
                for j in range(n):
                    if i != j:
                        self._add((r, i, j))
        if len(self.atoms) > MAX_ATOMS:
            raise ValueError(f"{len(self.atoms)} ground atoms exceed the {MAX_ATOMS}-bit state limit")

    def _add(self, key):
        self.index[key] = len(self.atoms)
        self.atoms.append(key)

    def __len__(self):
        return len(self.atoms)

    def mask_of(self, sym: SymbolicState) -> int:
        if sym.n != self.n or sym.d_z != len(self.unary_names) or sym.heads != len(self.relation_names):
            raise ValueError(
                f"symbolic state (n={sym.n}, d_z={sym.d_z}, K={sym.heads}) does not match "
                f"(n={self.n}, d_z={len(self.unary_names)}, K={len(self.relation_names)})"
            )
        mask = 0
        for b, key in enumerate(self.atoms):
            if len(key) == 2:
                bit = sym.unary[key[1], self.unary_names.index(key[0])]
            else:
                bit = sym.relational[self.relation_names.index(key[0]), key[1], key[2]]
            if bit:
                mask |= 1 << b
        return mask

    def goal_masks(self, goal: SymbolicState, negative_goal_heads: Sequence[str] = ("on",)) -> tuple[int, int]:
        pos = self.mask_of(goal)
        neg = 0
        for b, key in enumerate(self.atoms):
            if len(key) == 3 and key[0] in negative_goal_heads and not (pos >> b) & 1:
                neg |= 1 << b
        return pos, neg

    def name(self, b: int) -> str:
        key = self.atoms[b]
        return f"{key[0]}({','.join(object_name(i) for i in key[1:])})"


def _mask_csr(masks: np.ndarray, n_atoms: int) -> tuple[np.ndarray, np.ndarray]:
    bits = ((masks[:, None] >> np.arange(n_atoms, dtype=np.uint64)[None, :]) & np.uint64(1)).astype(bool)
    counts = bits.sum(axis=1)
    ptr = np.zeros(masks.shape[0] + 1, dtype=np.int64)
    np.cumsum(counts, out=ptr[1:])
    return ptr, np.nonzero(bits)[1].astype(np.int64)


@dataclass(frozen=True, eq=False)
class GroundTask:
    """Propositional task over at most 64 atoms; masks are uint64 bit sets."""

    atoms: AtomIndex
    init: int
    goal_pos: int
    goal_neg: int
    pre_pos: np.ndarray
    pre_neg: np.ndarray
    add: np.ndarray
    delete: np.ndarray
    specs: tuple
    op_names: tuple = ()
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if np.any(self.add & self.delete):
            raise ValueError("a ground action adds and deletes the same atom")
        limit = np.uint64((1 << len(self.atoms)) - 1) if len(self.atoms) < 64 else np.uint64(2**64 - 1)
        for arr in (self.pre_pos, self.pre_neg, self.add, self.delete):
            if np.any(arr & ~limit):
                raise ValueError("bit set index beyond the atom universe")

    @property
    def n_actions(self) -> int:
        return self.pre_pos.shape[0]

    def applicable(self, state: int) -> np.ndarray:
        s = np.uint64(state)
        return np.flatnonzero(((self.pre_pos & s) == self.pre_pos) & ((self.pre_neg & s) == 0))

    def apply(self, state: int, action: int) -> int:
        return int((np.uint64(state) & ~self.delete[action]) | self.add[action])

    def is_goal(self, state: int) -> bool:
        return (state & self.goal_pos) == self.goal_pos and (state & self.goal_neg) == 0

    def csr(self):
        if "csr" not in self._cache:
            n = len(self.atoms)
            self._cache["csr"] = _mask_csr(self.pre_pos, n) + _mask_csr(self.add, n)
        return self._cache["csr"]

    def goal_atoms(self) -> np.ndarray:
        return np.array([b for b in range(len(self.atoms)) if (self.goal_pos >> b) & 1], dtype=np.int64)

    def validate(self, plan_indices: Sequence[int]) -> bool:
        state = self.init
        for a in plan_indices:
            if not (int(self.pre_pos[a]) & state) == int(self.pre_pos[a]) or int(self.pre_neg[a]) & state:
                return False
            state = self.apply(state, a)
        return self.is_goal(state)


def _bind(lit: LiftedLiteral, binding: dict, atoms: AtomIndex) -> int:
    key = (lit.predicate,) + tuple(binding[a] for a in lit.args)
    if key not in atoms.index:
        raise KeyError(key)
    return 1 << atoms.index[key]


class Grounding:
    """Ground every branch of every operator once; determinizations pick branches by index.

    Ground actions whose static preconditions (predicates that no branch of
    any operator changes) fail in the initial state are dropped.
    """

    def __init__(
        self,
        operators: Sequence[Operator],
        n: int,
        init: SymbolicState,
        goal: SymbolicState,
        unary_names: Sequence[str],
        relation_names: Sequence[str],
        negative_goal_heads: Sequence[str] = ("on",),
    ):
        self.operators = tuple(operators)
        self.atoms = AtomIndex(n, unary_names, relation_names)
        self.init = self.atoms.mask_of(init)
        self.goal_pos, self.goal_neg = self.atoms.goal_masks(goal, negative_goal_heads)
        changing = {l.predicate for op in self.operators for b in op.effects for l in b.add + b.delete}
        max_b = max((len(op.effects) for op in self.operators), default=1)
        rows_pre_pos, rows_pre_neg, rows_op, specs = [], [], [], []
        rows_add, rows_del = [], []
        for o, op in enumerate(self.operators):
            di, dj = op.offsets
            pairs = [(i, i) for i in range(n)] if op.kind == SELF else [(i, j) for i in range(n) for j in range(n) if i != j]
            for i, j in pairs:
                binding = {"?x": i, "?y": j}
                pp = pn = 0
                ok = True
                for lit in op.preconditions:
                    bit = _bind(lit, binding, self.atoms)
                    if lit.predicate not in changing and bool(self.init & bit) != lit.positive:
                        ok = False
                        break
                    if lit.positive:
                        pp |= bit
                    else:
                        pn |= bit
                if not ok or pp & pn:
                    continue
                adds = [0] * max_b
                dels = [0] * max_b
                for b, br in enumerate(op.effects):
                    adds[b] = sum(_bind(l, binding, self.atoms) for l in set(br.add))
                    dels[b] = sum(_bind(l, binding, self.atoms) for l in set(br.delete))
                rows_pre_pos.append(pp)
                rows_pre_neg.append(pn)
                rows_add.append(adds)
                rows_del.append(dels)
                rows_op.append(o)
                specs.append(ActionSpec(i, di, j, dj))
        self.pre_pos = np.array(rows_pre_pos, dtype=np.uint64)
        self.pre_neg = np.array(rows_pre_neg, dtype=np.uint64)
        self.add_by_branch = np.array(rows_add, dtype=np.uint64).reshape(-1, max_b)
        self.del_by_branch = np.array(rows_del, dtype=np.uint64).reshape(-1, max_b)
        self.action_op = np.array(rows_op, dtype=np.int64)
        self.specs = tuple(specs)
        self._pre_csr = None

    def relevant_ops(self) -> np.ndarray:
        return np.unique(self.action_op)

    def task(self, choices: np.ndarray | None = None) -> GroundTask:
        if choices is None:
            pick = np.zeros(self.action_op.shape[0], dtype=np.int64)
        else:
            pick = np.asarray(choices, dtype=np.int64)[self.action_op]
        rows = np.arange(self.action_op.shape[0])
        add = self.add_by_branch[rows, pick] if rows.size else np.zeros(0, dtype=np.uint64)
        delete = self.del_by_branch[rows, pick] if rows.size else np.zeros(0, dtype=np.uint64)
        task = GroundTask(
            self.atoms, self.init, self.goal_pos, self.goal_neg, self.pre_pos, self.pre_neg,
            add, delete, self.specs, tuple(self.operators[o].name for o in self.action_op),
        )
        if self._pre_csr is None:
            self._pre_csr = _mask_csr(self.pre_pos, len(self.atoms))
        task._cache["csr"] = self._pre_csr + _mask_csr(add, len(self.atoms))
        return task

    def domain_task(self, domain: SampledDomain) -> GroundTask:
        if domain.source != self.operators:
            raise ValueError("sampled domain was drawn from different operators")
        return self.task(domain.choices)


def ground(
    domain: Sequence[Operator],
    n: int,
    init: SymbolicState,
    goal: SymbolicState,
    unary_names: Sequence[str],
    relation_names: Sequence[str],
    negative_goal_heads: Sequence[str] = ("on",),
) -> GroundTask:
    """Ground a deterministic domain over all ordered object pairs (self pairs for self operators)."""
    domain = list(domain)
    if any(not op.deterministic for op in domain):
        raise ValueError("ground needs deterministic operators; sample or project first")
    return Grounding(domain, n, init, goal, unary_names, relation_names, negative_goal_heads).task()


# ---------------------------------------------------------------- search

@dataclass(frozen=True)
class SolveBudget:
    max_expansions: int = 100_000
    max_seconds: float = 5.0


@dataclass(frozen=True)
class SolverConfig:
    search: str = "gbfs"  # gbfs | astar
    heuristic: str = "hadd"  # hadd | hmax | blind

    def __post_init__(self):
        if self.search not in ("gbfs", "astar"):
            raise ValueError(f"unknown search {self.search!r}")
        if self.heuristic not in ("hadd", "hmax", "blind"):
            raise ValueError(f"unknown heuristic {self.heuristic!r}")


SOLVED, UNSOLVABLE, BUDGET = "solved", "unsolvable", "budget"


@dataclass(frozen=True)
class SolveResult:
    status: str
    plan: tuple | None
    indices: tuple | None
    expansions: int


class _Heuristic:
    def __init__(self, task: GroundTask, kind: str):
        self.kind = kind
        self.task = task
        self.n_atoms = len(task.atoms)
        self.goal = task.goal_atoms()
        self.shifts = np.arange(self.n_atoms, dtype=np.uint64)
        self.csr = task.csr() if kind != "blind" else None
        self.cache: dict[int, float] = {}

    def __call__(self, state: int) -> float:
        if self.kind == "blind":
            return 0.0 if self.task.is_goal(state) else 1.0
        h = self.cache.get(state)
        if h is None:
            true = ((np.uint64(state) >> self.shifts) & np.uint64(1)).astype(bool)
            cost = relaxed_costs(true, *self.csr, self.kind == "hmax")
            g = cost[self.goal]
            h = float(g.max() if self.kind == "hmax" and g.size else g.sum())
            self.cache[state] = h
        return h


def _successors(task: GroundTask, state: int):
    app = task.applicable(state)
    if app.size == 0:
        return [], []
    succ = (np.uint64(state) & ~task.delete[app]) | task.add[app]
    uniq, first = np.unique(succ, return_index=True)
    order = np.argsort(first, kind="stable")
    return [int(s) for s in uniq[order]], [int(app[f]) for f in first[order]]


def _extract(parents: dict, state: int) -> list[int]:
    out = []
    while parents[state] is not None:
        state, a = parents[state]
        out.append(a)
    return out[::-1]


def solve(task: GroundTask, budget: SolveBudget = SolveBudget(), config: SolverConfig = SolverConfig()) -> SolveResult:
    """Satisficing (GBFS) or A* search over the ground task.

    Returned plans are replayed through the ground actions before return; a
    plan that does not reach the goal raises ``RuntimeError``. States whose
    relaxed cost is infinite are pruned as dead ends, so an exhausted open
    list proves the task unsolvable.
    """
    t0 = time.perf_counter()
    h = _Heuristic(task, config.heuristic)
    init = task.init
    parents: dict[int, tuple | None] = {init: None}
    if config.search == "gbfs" and task.is_goal(init):
        return _finish(task, [], 0)
    h0 = h(init)
    if h0 == np.inf:
        return SolveResult(UNSOLVABLE, None, None, 0)
    counter = 0
    expansions = 0
    if config.search == "gbfs":
        open_list = [(h0, 0, init)]
        while open_list:
            _, _, state = heapq.heappop(open_list)
            if expansions >= budget.max_expansions or time.perf_counter() - t0 > budget.max_seconds:
                return SolveResult(BUDGET, None, None, expansions)
            expansions += 1
            for succ, a in zip(*_successors(task, state)):
                if succ in parents:
                    continue
                parents[succ] = (state, a)
                if task.is_goal(succ):
                    return _finish(task, _extract(parents, succ), expansions)
                hs = h(succ)
                if hs == np.inf:
                    continue
                counter += 1
                heapq.heappush(open_list, (hs, counter, succ))
        return SolveResult(UNSOLVABLE, None, None, expansions)

    g_cost = {init: 0}
    open_list = [(h0, h0, 0, init)]
    closed = set()
    while open_list:
        _, _, _, state = heapq.heappop(open_list)
        if state in closed:
            continue
        if task.is_goal(state):
            return _finish(task, _extract(parents, state), expansions)
        if expansions >= budget.max_expansions or time.perf_counter() - t0 > budget.max_seconds:
            return SolveResult(BUDGET, None, None, expansions)
        closed.add(state)
        expansions += 1
        g = g_cost[state] + 1
        for succ, a in zip(*_successors(task, state)):
            if succ in closed or g >= g_cost.get(succ, np.inf):
                continue
            hs = h(succ)
            if hs == np.inf:
                continue
            g_cost[succ] = g
            parents[succ] = (state, a)
            counter += 1
            heapq.heappush(open_list, (g + hs, hs, counter, succ))
    return SolveResult(UNSOLVABLE, None, None, expansions)


def _finish(task: GroundTask, indices: list[int], expansions: int) -> SolveResult:
    if not task.validate(indices):
        raise RuntimeError(f"internal planner produced an invalid plan {indices}")
    return SolveResult(SOLVED, tuple(task.specs[a] for a in indices), tuple(indices), expansions)


def breadth_first_length(task: GroundTask, max_states: int = 100_000) -> int | None:
    """Shortest plan length by plain BFS (reference for optimality checks)."""
    if task.is_goal(task.init):
        return 0
    frontier = [task.init]
    seen = {task.init}
    depth = 0
    while frontier and len(seen) <= max_states:
        depth += 1
        nxt = []
        for state in frontier:
            for succ, _ in zip(*_successors(task, state)):
                if succ in seen:
                    continue
                if task.is_goal(succ):
                    return depth
                seen.add(succ)
                nxt.append(succ)
        frontier = nxt
    return None


# ---------------------------------------------------------------- plan files

class PlanParseError(ValueError):
    def __init__(self, lineno: int, line: str, reason: str):
        super().__init__(f"line {lineno}: {reason}: {line!r}")
        self.lineno = lineno


_PLAN_RE = re.compile(r"^\(\s*([^\s()]+)((?:\s+[^\s()]+)*)\s*\)$")
_OBJ_RE = re.compile(r"^o(\d+)$")


def parse_plan(text: str, n_objects: int | None = None) -> list[ActionSpec]:
    """Parse ``(pick-place_d<i>_d<j>[_suffix] o<a> [o<b>])`` lines; ';' starts a comment."""
    plan = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith(";"):
            continue
        m = _PLAN_RE.match(line)
        if not m:
            raise PlanParseError(lineno, raw, "expected one parenthesized action")
        name = m.group(1).lower()
        nm = _NAME_RE.match(name)
        if not nm:
            raise PlanParseError(lineno, raw, f"unknown action {name!r}")
        args = m.group(2).split()
        if len(args) not in (1, 2):
            raise PlanParseError(lineno, raw, "expected one or two object arguments")
        idx = []
        for a in args:
            om = _OBJ_RE.match(a.lower())
            if not om:
                raise PlanParseError(lineno, raw, f"bad object name {a!r}")
            idx.append(int(om.group(1)))
        if n_objects is not None and any(i >= n_objects for i in idx):
            raise PlanParseError(lineno, raw, f"object index out of range for {n_objects} objects")
        pick = idx[0]
        place = idx[-1]
        plan.append(ActionSpec(pick, _offset_value(nm.group(1)), place, _offset_value(nm.group(2))))
    return plan


def format_plan(plan: Iterable[ActionSpec]) -> str:
    tag = lambda d: "m1" if d < 0 else str(d)
    return "".join(
        f"(pick-place_d{tag(a.pick_offset)}_d{tag(a.place_offset)} {object_name(a.pick)} {object_name(a.place)})\n"
        for a in plan
    )


# ---------------------------------------------------------------- external planner

@dataclass(frozen=True)
class ExternalPlanner:
    """Runs a classical planner as a subprocess in a private temporary directory.

    ``command`` is a shell-style template with ``{domain}``, ``{problem}`` and
    ``{plan}`` placeholders, e.g.
    ``"fast-downward.py --plan-file {plan} {domain} {problem} --search 'lazy_greedy([add()])'"``.
    """

    command: str
    timeout: float = 60.0

    def solve(self, domain_text: str, problem_text: str, n_objects: int) -> list[ActionSpec] | None:
        with tempfile.TemporaryDirectory(prefix="biplan-") as tmp:
            tmp = Path(tmp)
            paths = {k: tmp / f"{k}.pddl" for k in ("domain", "problem")}
            paths["plan"] = tmp / "plan.txt"
            paths["domain"].write_text(domain_text)
            paths["problem"].write_text(problem_text)
            argv = [a.format(**{k: str(v) for k, v in paths.items()}) for a in shlex.split(self.command)]
            proc = subprocess.run(argv, cwd=tmp, capture_output=True, text=True, timeout=self.timeout)
            if proc.returncode != 0:
                logger.debug("external planner exited %d: %s", proc.returncode, proc.stderr[-500:])
            if not paths["plan"].exists():
                return None
            return parse_plan(paths["plan"].read_text(), n_objects)
