"""Probabilistic symbolic planning, plan verification, continuous weighted A* and the bilevel loop."""
from __future__ import annotations

import enum
import heapq
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from biplan.abstraction import Encoder, SymbolicState
from biplan.dynamics import predict_effect
from biplan.operators import Operator, SampledDomain, deterministic_projection, sample_domains
from biplan.pddl import SOLVED, Grounding, SolveBudget, SolverConfig, solve
from biplan.seeding import derive_seed
from biplan.world import OFFSETS, ActionSpec, ContinuousState, Problem, object_distances


def plan_encoding(actions: Sequence[ActionSpec]) -> str:
    return ";".join(f"{a.pick},{a.pick_offset},{a.place},{a.place_offset}" for a in actions)


@dataclass(frozen=True)
class PlanCandidate:
    actions: tuple
    probability: float
    occurrences: int
    source_domains: tuple

    @property
    def encoding(self) -> str:
        return plan_encoding(self.actions)

    def rank_key(self):
        return (-self.occurrences, len(self.actions), self.encoding)


def probabilistic_plan(
    init: SymbolicState,
    goal: SymbolicState,
    domains: Sequence[SampledDomain],
    encoder: Encoder,
    budget: SolveBudget = SolveBudget(),
    solver: SolverConfig = SolverConfig(),
    negative_goal_heads: Sequence[str] = ("on",),
    stats: dict | None = None,
) -> list[PlanCandidate]:
    """Solve every sampled domain and rank the distinct plans by occurrence.

    A candidate's probability is its occurrence count over the number of
    domains that produced a plan. Domains whose branch choices agree on every
    operator that grounds in this problem yield the same ground task, so each
    distinct task is solved once. ``stats``, if given, receives solver
    counters (``expansions``, ``solves``, ``solved_domains``).
    """
    if not domains:
        raise ValueError("probabilistic_plan needs at least one domain")
    groundings: dict[int, Grounding] = {}
    by_plan: dict[str, list] = {}
    solved_cache: dict[tuple, tuple | None] = {}
    n_solved = 0
    expansions = 0
    for d in domains:
        key_src = id(d.source)
        if key_src not in groundings:
            groundings[key_src] = Grounding(
                d.source, init.n, init, goal, encoder.unary_names, encoder.relation_names, negative_goal_heads
            )
        g = groundings[key_src]
        task_key = (key_src, d.choices[g.relevant_ops()].tobytes())
        if task_key not in solved_cache:
            res = solve(g.domain_task(d), budget, solver)
            expansions += res.expansions
            solved_cache[task_key] = res.plan if res.status == SOLVED else None
        plan = solved_cache[task_key]
        if plan is None:
            continue
        n_solved += 1
        enc = plan_encoding(plan)
        entry = by_plan.setdefault(enc, [plan, []])
        entry[1].append(d.sample_index)
    out = [
        PlanCandidate(tuple(plan), len(src) / n_solved, len(src), tuple(src))
        for plan, src in by_plan.values()
    ]
    out.sort(key=PlanCandidate.rank_key)
    if stats is not None:
        stats.update(expansions=expansions, solves=len(solved_cache), solved_domains=n_solved)
    return out


def deterministic_plan(init, goal, operators: Sequence[Operator], encoder: Encoder, **kwargs) -> list[PlanCandidate]:
    """Baseline: a single domain holding each operator's most probable branch."""
    domain = SampledDomain.from_deterministic(deterministic_projection(operators))
    return probabilistic_plan(init, goal, [domain], encoder, **kwargs)


# ---------------------------------------------------------------- verification

class Verdict(str, enum.Enum):
    VERIFIED = "Verified"
    UNVERIFIED = "Unverified"


@dataclass(frozen=True)
class VerifierVerdict:
    status: Verdict
    predicted_final: ContinuousState
    max_object_distance: float
    predicted_trajectory: tuple

    @property
    def verified(self) -> bool:
        return self.status is Verdict.VERIFIED


def rollout(plan: Sequence[ActionSpec], init: ContinuousState, predictor) -> list[ContinuousState]:
    """States X_0..X_T with X_{t+1} = X_t + predicted effect."""
    states = [init]
    for action in plan:
        cur = states[-1]
        states.append(cur.with_positions(cur.positions + predict_effect(predictor, cur, action)))
    return states


def verify(plan: Sequence[ActionSpec], init: ContinuousState, goal: ContinuousState, predictor, tau: float) -> VerifierVerdict:
    """Verified iff every object of the predicted final state lies within ``tau`` of its goal position."""
    states = rollout(plan, init, predictor)
    dist = float(object_distances(states[-1], goal).max())
    status = Verdict.VERIFIED if dist < tau else Verdict.UNVERIFIED
    return VerifierVerdict(status, states[-1], dist, tuple(states))


# ---------------------------------------------------------------- continuous search

def heuristic(state: ContinuousState, goal: ContinuousState) -> float:
    """Sum over objects of the Euclidean distance to the goal position (meters)."""
    if state.n != goal.n:
        raise ValueError(f"state has {state.n} objects, goal has {goal.n}")
    return float(np.linalg.norm(state.positions - goal.positions, axis=1).sum())


def prune_actions(state: ContinuousState, goal: ContinuousState, threshold: float = 0.05) -> list[ActionSpec]:
    """Goal-directed actions for misplaced objects.

    For each object farther than ``threshold`` from its goal position: the 9
    offset combinations onto the other object currently closest (in xy) to
    that goal position, plus the 9 self-placements.
    """
    dist = object_distances(state, goal)
    out = []
    for i in np.flatnonzero(dist > threshold):
        i = int(i)
        targets = [i]
        others = [m for m in range(state.n) if m != i]
        if others:
            d = np.linalg.norm(state.positions[others, :2] - goal.positions[i, :2], axis=1)
            targets.append(others[int(np.argmin(d))])
        for j in sorted(targets):
            out.extend(ActionSpec(i, di, j, dj) for di in OFFSETS for dj in OFFSETS)
    return out


@dataclass(frozen=True)
class SearchParams:
    w: float = 1.5
    step_cost: float = 0.10
    expansion_cap: int = 10_000
    h_stop: float = 0.05
    quantization: float = 0.01
    misplaced_threshold: float = 0.05

    def __post_init__(self):
        if self.w < 0 or self.step_cost < 0 or self.quantization <= 0 or self.expansion_cap < 0:
            raise ValueError(f"invalid search parameters {self}")


def node_score(g: int, h: float, params: SearchParams) -> float:
    """f = g * step_cost + w * h, in meters."""
    return g * params.step_cost + params.w * h


@dataclass(frozen=True)
class SearchNode:
    state: ContinuousState
    g: int
    plan: tuple
    h: float
    f: float


@dataclass(frozen=True)
class SearchResult:
    plan: tuple | None
    expansions: int
    final: ContinuousState | None = None
    popped_f: tuple = field(default=(), repr=False)

    @property
    def solved(self) -> bool:
        return self.plan is not None


def continuous_search(
    init: ContinuousState,
    goal: ContinuousState,
    predictor,
    params: SearchParams = SearchParams(),
    record_popped: bool = False,
) -> SearchResult:
    """Weighted A* over predicted continuous states.

    Ties on f go to lower h, then to the earlier-inserted node. States whose
    positions round to an already generated 1-cell grid key are dropped.
    """
    popped = []
    h0 = heuristic(init, goal)
    root = SearchNode(init, 0, (), h0, node_score(0, h0, params))
    quant = lambda s: np.round(s.positions / params.quantization).astype(np.int64).tobytes()
    seen = {quant(init)}
    open_list = [(root.f, root.h, 0, root)]
    seq = 0
    expansions = 0
    while open_list:
        _, _, _, node = heapq.heappop(open_list)
        if record_popped:
            popped.append((node.f, node.g, node.h))
        if node.h < params.h_stop:
            return SearchResult(node.plan, expansions, node.state, tuple(popped))
        if expansions >= params.expansion_cap:
            break
        expansions += 1
        actions = prune_actions(node.state, goal, params.misplaced_threshold)
        if not actions:
            continue
        effects = np.asarray(predictor.predict_batch(node.state, actions), dtype=np.float64)
        if not np.all(np.isfinite(effects)):
            raise FloatingPointError("predictor produced a non-finite effect")
        new_pos = node.state.positions[None] + effects
        hs = np.linalg.norm(new_pos - goal.positions[None], axis=2).sum(axis=1)
        keys = np.round(new_pos / params.quantization).astype(np.int64)
        g = node.g + 1
        for a, action in enumerate(actions):
            key = keys[a].tobytes()
            if key in seen:
                continue
            seen.add(key)
            h = float(hs[a])
            child = SearchNode(node.state.with_positions(new_pos[a]), g, node.plan + (action,), h, node_score(g, h, params))
            seq += 1
            heapq.heappush(open_list, (child.f, child.h, seq, child))
    return SearchResult(None, expansions, None, tuple(popped))


# ---------------------------------------------------------------- bilevel

class Level(str, enum.Enum):
    SYMBOLIC = "Symbolic"
    CONTINUOUS = "Continuous"
    FAILED = "Failed"


@dataclass(frozen=True)
class BilevelConfig:
    n_domains: int = 100
    tau: float = 0.07
    search: SearchParams = SearchParams()
    budget: SolveBudget = SolveBudget()
    solver: SolverConfig = SolverConfig()
    negative_goal_heads: tuple = ("on",)

    def __post_init__(self):
        if self.n_domains < 1:
            raise ValueError("n_domains must be at least 1")
        if self.tau < 0:
            raise ValueError("tau must be non-negative")


@dataclass(frozen=True)
class BilevelOutcome:
    plan: tuple | None
    level: Level
    candidates_considered: int
    verifier_calls: int
    expansions: int
    candidates: tuple = ()
    verdicts: tuple = ()
    timings: dict = field(default_factory=dict, compare=False)


def symbolic_candidates(
    problem: Problem, operators: Sequence[Operator], encoder: Encoder, config: BilevelConfig, seed: int,
    stats: dict | None = None,
) -> list[PlanCandidate]:
    """Level-1 candidates from ``config.n_domains`` determinizations seeded by ``seed``."""
    init, goal = encoder.encode(problem.init), encoder.encode(problem.goal)
    domains = sample_domains(operators, config.n_domains, derive_seed(seed, "domains"))
    return probabilistic_plan(init, goal, domains, encoder, config.budget, config.solver, config.negative_goal_heads, stats)


def deterministic_candidates(
    problem: Problem, operators: Sequence[Operator], encoder: Encoder, config: BilevelConfig,
    stats: dict | None = None,
) -> list[PlanCandidate]:
    init, goal = encoder.encode(problem.init), encoder.encode(problem.goal)
    return deterministic_plan(
        init, goal, operators, encoder, budget=config.budget, solver=config.solver,
        negative_goal_heads=config.negative_goal_heads, stats=stats,
    )


def bilevel_plan(
    problem: Problem,
    operators: Sequence[Operator],
    predictor,
    encoder: Encoder,
    config: BilevelConfig = BilevelConfig(),
    seed: int = 0,
    candidates: Sequence[PlanCandidate] | None = None,
    fallback: SearchResult | None = None,
) -> BilevelOutcome:
    """Verify ranked symbolic candidates and return the first Verified one, else search continuously.

    ``candidates`` and ``fallback`` accept results already computed for the
    same inputs (the benchmark shares them across methods); both are pure
    functions of the arguments, so passing them does not change the outcome.
    """
    t0 = time.perf_counter()
    if candidates is None:
        candidates = symbolic_candidates(problem, operators, encoder, config, seed)
    t1 = time.perf_counter()
    verdicts = []
    for cand in candidates:
        verdict = verify(cand.actions, problem.init, problem.goal, predictor, config.tau)
        verdicts.append(verdict.status)
        if verdict.verified:
            return BilevelOutcome(
                cand.actions, Level.SYMBOLIC, len(candidates), len(verdicts), 0, tuple(candidates), tuple(verdicts),
                {"symbolic": t1 - t0, "verify": time.perf_counter() - t1},
            )
    t2 = time.perf_counter()
    result = fallback if fallback is not None else continuous_search(problem.init, problem.goal, predictor, config.search)
    timings = {"symbolic": t1 - t0, "verify": t2 - t1, "search": time.perf_counter() - t2}
    level = Level.CONTINUOUS if result.solved else Level.FAILED
    return BilevelOutcome(
        result.plan, level, len(candidates), len(verdicts), result.expansions, tuple(candidates), tuple(verdicts), timings
    )
