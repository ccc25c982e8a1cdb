"""Paired method comparison over a problem grid, verifier confusion analysis and the tau sweep."""
from __future__ import annotations

import csv
import io
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from biplan.config import METHODS, RunConfig
from biplan.dynamics import fit
from biplan.operators import mine, symbolize
from biplan.planning import (
    Level,
    bilevel_plan,
    continuous_search,
    deterministic_candidates,
    plan_encoding,
    symbolic_candidates,
    verify,
)
from biplan.seeding import derive_seed, rng_for
from biplan.world import Problem, collect_dataset, execute, generate_suite, is_success, object_distances

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CellResult:
    n: int
    k: int
    method: str
    successes: int
    trials: int
    mean_wall_time: float = field(compare=False)
    mean_expansions: float = 0.0

    def __post_init__(self):
        if not 0 <= self.successes <= self.trials:
            raise ValueError(f"successes {self.successes} outside [0, {self.trials}]")

    @property
    def rate(self) -> float:
        return self.successes / self.trials


@dataclass(frozen=True)
class ConfusionRecord:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @property
    def accuracy(self) -> float | None:
        return (self.tp + self.tn) / self.total if self.total else None

    @property
    def f1(self) -> float | None:
        denom = 2 * self.tp + self.fp + self.fn
        return 2 * self.tp / denom if denom else None


@dataclass(frozen=True)
class LabeledPlan:
    """A symbolic candidate paired with its true execution outcome."""

    n: int
    k: int
    problem_index: int
    actions: tuple
    success: bool
    predicted_distance: float | None = None


@dataclass(frozen=True)
class Models:
    operators: tuple
    predictor: object
    dataset_size: int


def build_models(config: RunConfig, model_seed: int | None = None) -> Models:
    """Collect the training corpus, mine operators and fit the predictor.

    ``model_seed`` replaces the master seed for the corpus only, so repeated
    model instances can be evaluated on the same problems.
    """
    physics = config.physics_config()
    d = config.dynamics
    seed = config.run.seed if model_seed is None else model_seed
    data = collect_dataset(
        d.train_size, d.train_n, derive_seed(seed, "collect"), physics, d.episode_length, config.run.jobs
    )
    encoder = config.encoder()
    ops = mine(symbolize(data, encoder), encoder, config.operators.min_support, config.operators.min_fraction)
    predictor = fit(data, d.predictor, d.k, physics)
    return Models(tuple(ops), predictor, len(data))


# ---------------------------------------------------------------- per-problem evaluation

def _execute_outcome(config: RunConfig, problem: Problem, plan, n, k, p) -> tuple[bool, float]:
    if plan is None:
        return False, float("nan")
    rng = rng_for(config.run.seed, "execute", n, k, p)
    final = execute(problem.init, plan, rng, config.physics_config())
    return is_success(final, problem.goal, problem.epsilon), float(object_distances(final, problem.goal).max())


def evaluate_problem(config: RunConfig, models: Models, methods: Sequence[str], n: int, k: int, p: int, problem: Problem):
    """Run every method on one problem; execution noise is the same stream for each method.

    Stages shared between methods (probabilistic candidates, continuous
    search) run once; their wall time is charged to the first method using them.
    """
    encoder = config.encoder()
    bcfg = config.bilevel_config()
    seed = derive_seed(config.run.seed, "plan", n, k, p)
    records, timings, labeled = [], {}, []
    cache: dict[str, object] = {}

    def prob_cands():
        if "prob" not in cache:
            stats: dict = {}
            t = time.perf_counter()
            cache["prob"] = (symbolic_candidates(problem, models.operators, encoder, bcfg, seed, stats), stats, time.perf_counter() - t)
        return cache["prob"]

    def search():
        if "search" not in cache:
            t = time.perf_counter()
            cache["search"] = (continuous_search(problem.init, problem.goal, models.predictor, bcfg.search), time.perf_counter() - t)
        return cache["search"]

    for method in methods:
        t0 = time.perf_counter()
        extra: dict = {}
        if method == "deterministic":
            stats: dict = {}
            cands = deterministic_candidates(problem, models.operators, encoder, bcfg, stats)
            cache["det"] = cands
            plan = cands[0].actions if cands else None
            level, expansions = (Level.SYMBOLIC if cands else Level.FAILED), stats["expansions"]
            extra["candidates"] = len(cands)
        elif method == "probabilistic":
            cands, stats, _ = prob_cands()
            plan = cands[0].actions if cands else None
            level, expansions = (Level.SYMBOLIC if cands else Level.FAILED), stats["expansions"]
            extra["candidates"] = len(cands)
            extra["top_probability"] = round(cands[0].probability, 12) if cands else None
        elif method == "continuous":
            res, _ = search()
            plan = res.plan
            level, expansions = (Level.CONTINUOUS if res.solved else Level.FAILED), res.expansions
        elif method == "bilevel":
            cands, _, _ = prob_cands()
            outcome = bilevel_plan(problem, models.operators, models.predictor, encoder, bcfg, seed, candidates=cands,
                                   fallback=_LazySearch(search))
            plan, level, expansions = outcome.plan, outcome.level, outcome.expansions
            extra["candidates"] = outcome.candidates_considered
            extra["verifier_calls"] = outcome.verifier_calls
        else:
            raise ValueError(f"unknown method {method!r}")
        timings[method] = time.perf_counter() - t0
        success, dist = _execute_outcome(config, problem, plan, n, k, p)
        records.append({
            "n": n, "k": k, "problem": p, "method": method,
            "plan": plan_encoding(plan) if plan is not None else None,
            "level": level.value, "success": success,
            "final_max_distance": None if np.isnan(dist) else round(dist, 9),
            "expansions": int(expansions), **extra,
        })
    # verifier evaluation pool: every symbolic candidate produced above
    pool = {}
    for c in list(cache.get("det", [])) + list(cache["prob"][0] if "prob" in cache else []):
        pool.setdefault(c.encoding, c.actions)
    for enc in sorted(pool):
        success, _ = _execute_outcome(config, problem, pool[enc], n, k, p)
        dist = verify(pool[enc], problem.init, problem.goal, models.predictor, bcfg.tau).max_object_distance
        labeled.append(LabeledPlan(n, k, p, pool[enc], success, dist))
    return records, timings, labeled


class _LazySearch:
    """Defers the continuous search until the bilevel loop actually falls back."""

    def __init__(self, thunk):
        self._thunk = thunk

    def __getattr__(self, name):
        return getattr(self._thunk()[0], name)


# ---------------------------------------------------------------- suite

@dataclass
class SuiteResult:
    cells: list
    records: list
    labeled: list
    timings: list = field(default_factory=list)


def grid(config: RunConfig, full: bool = False):
    b = config.bench
    return (b.full_n, b.full_k, b.full_trials) if full else (b.n, b.k, b.trials)


def _worker_init(config, models):
    global _WORKER
    _WORKER = (config, models)


def _worker_run(args):
    config, models = _WORKER
    return evaluate_problem(config, models, *args)


def run_suite(config: RunConfig, models: Models | None = None, full: bool = False, methods: Sequence[str] | None = None) -> SuiteResult:
    """Evaluate every method on identical problems for every (n, k) cell."""
    ns, ks, trials = grid(config, full)
    if trials < 1:
        raise ValueError("trials per cell must be at least 1")
    methods = tuple(methods or config.bench.methods)
    bad = [m for m in methods if m not in METHODS]
    if bad:
        raise ValueError(f"unknown methods {bad}")
    models = models or build_models(config)
    physics = config.physics_config()
    problems = generate_suite(ns, ks, trials, config.run.seed, physics, config.planning.epsilon)
    jobs = [(methods, n, k, p, problems[(n, k)][p]) for n in ns for k in ks for p in range(trials)]
    if config.run.jobs > 1:
        with ProcessPoolExecutor(config.run.jobs, initializer=_worker_init, initargs=(config, models)) as ex:
            results = list(ex.map(_worker_run, jobs, chunksize=4))
    else:
        results = [evaluate_problem(config, models, *job) for job in jobs]
    records, labeled, timing_rows = [], [], []
    for (_, n, k, p, _), (recs, times, lab) in zip(jobs, results):
        records.extend(recs)
        labeled.extend(lab)
        timing_rows.extend({"n": n, "k": k, "problem": p, "method": m, "seconds": s} for m, s in times.items())
    cells = []
    for n in ns:
        for k in ks:
            for m in methods:
                rs = [r for r in records if r["n"] == n and r["k"] == k and r["method"] == m]
                ts = [t["seconds"] for t in timing_rows if t["n"] == n and t["k"] == k and t["method"] == m]
                cells.append(CellResult(
                    n, k, m, sum(r["success"] for r in rs), len(rs),
                    float(np.mean(ts)), float(np.mean([r["expansions"] for r in rs])),
                ))
    return SuiteResult(cells, records, labeled, timing_rows)


# ---------------------------------------------------------------- verifier analysis

def confusion_from(verified: Sequence[bool], success: Sequence[bool]) -> ConfusionRecord:
    v = np.asarray(verified, dtype=bool)
    s = np.asarray(success, dtype=bool)
    return ConfusionRecord(int((v & s).sum()), int((v & ~s).sum()), int((~v & ~s).sum()), int((~v & s).sum()))


def _distances(problems, candidates: Sequence[LabeledPlan], predictor, tau_hint: float) -> np.ndarray:
    out = []
    for c in candidates:
        if predictor is None:
            if c.predicted_distance is None:
                raise ValueError("candidate has no stored distance and no predictor was given")
            out.append(c.predicted_distance)
        else:
            prob = problems[(c.n, c.k)][c.problem_index]
            out.append(verify(c.actions, prob.init, prob.goal, predictor, tau_hint).max_object_distance)
    return np.asarray(out)


def verifier_confusion(problems, candidates: Sequence[LabeledPlan], predictor, tau: float) -> ConfusionRecord:
    """TP = Verified and successful, FP = Verified and failed, and so on.

    ``problems`` maps (n, k) to the cell's problem list. With ``predictor``
    None the distances stored on the candidates are used.
    """
    if not candidates:
        raise ValueError("verifier_confusion needs at least one candidate")
    dist = _distances(problems, candidates, predictor, tau)
    return confusion_from(dist < tau, [c.success for c in candidates])


def sweep_tau(problems, candidates: Sequence[LabeledPlan], predictor, taus: Sequence[float]):
    """Confusion per (tau, n) from one rollout per candidate."""
    if len(taus) < 2:
        raise ValueError("a sweep needs at least two tau values")
    if not candidates:
        raise ValueError("sweep_tau needs at least one candidate")
    dist = _distances(problems, candidates, predictor, max(taus))
    ns = np.array([c.n for c in candidates])
    success = np.array([c.success for c in candidates])
    out = []
    for tau in taus:
        per_n = {int(n): confusion_from(dist[ns == n] < tau, success[ns == n]) for n in sorted(set(ns.tolist()))}
        per_n["all"] = confusion_from(dist < tau, success)
        out.append((float(tau), per_n))
    return out


# ---------------------------------------------------------------- output

def _fmt(x) -> str:
    return "" if x is None else f"{x:.6f}"


def _csv(rows: list[list], header: list[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def render_summary(cells: Sequence[CellResult], confusion: ConfusionRecord | None, sweep, tau: float) -> str:
    keys = sorted({(c.n, c.k) for c in cells})
    methods = list(dict.fromkeys(c.method for c in cells))
    lines = ["# Success rate by cell", "", "| method | " + " | ".join(f"n={n} k={k}" for n, k in keys) + " | all |",
             "|---" * (len(keys) + 2) + "|"]
    for m in methods:
        row = {(c.n, c.k): c for c in cells if c.method == m}
        tot = sum(c.successes for c in row.values()) / sum(c.trials for c in row.values())
        lines.append(f"| {m} | " + " | ".join(f"{row[key].rate:.2f}" for key in keys) + f" | {tot:.3f} |")
    if confusion is not None:
        acc, f1 = confusion.accuracy, confusion.f1
        lines += ["", f"# Verifier at tau = {tau * 100:.0f} cm", "",
                  f"tp={confusion.tp} fp={confusion.fp} tn={confusion.tn} fn={confusion.fn} "
                  f"accuracy={_fmt(acc) or 'n/a'} f1={_fmt(f1) or 'n/a'}"]
    if sweep:
        lines += ["", "# Tau sweep (all n)", "", "| tau (cm) | accuracy | f1 |", "|---|---|---|"]
        for t, per_n in sweep:
            c = per_n["all"]
            lines.append(f"| {t * 100:.0f} | {_fmt(c.accuracy) or 'n/a'} | {_fmt(c.f1) or 'n/a'} |")
    return "\n".join(lines) + "\n"


def write_outputs(out_dir, config: RunConfig, result: SuiteResult, timings: bool = False) -> dict:
    """Write records, cell CSV, paired outcomes, candidate labels, confusion, sweep and summary.

    Wall-clock timings go to ``timings.csv`` only when ``timings`` is set, so
    the default output set is a pure function of the configuration.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {}

    def put(name, text):
        (out / name).write_text(text)
        files[name] = name

    put("records.jsonl", "".join(json.dumps(r, sort_keys=True) + "\n" for r in result.records))
    put("cells.csv", _csv(
        [[c.n, c.k, c.method, c.successes, c.trials, f"{c.rate:.6f}", f"{c.mean_expansions:.3f}"] for c in result.cells],
        ["n", "k", "method", "successes", "trials", "success_rate", "mean_expansions"],
    ))
    methods = list(dict.fromkeys(r["method"] for r in result.records))
    paired: dict[tuple, dict] = {}
    for r in result.records:
        paired.setdefault((r["n"], r["k"], r["problem"]), {})[r["method"]] = int(r["success"])
    put("paired.csv", _csv([[*key, *(v.get(m, "") for m in methods)] for key, v in paired.items()], ["n", "k", "problem", *methods]))
    tau = config.planning.tau
    confusion = sweep = None
    if result.labeled:
        put("candidates.csv", _csv(
            [[c.n, c.k, c.problem_index, plan_encoding(c.actions), int(c.success), f"{c.predicted_distance:.9f}"] for c in result.labeled],
            ["n", "k", "problem", "plan", "success", "predicted_max_distance"],
        ))
        confusion = verifier_confusion(None, result.labeled, None, tau)
        sweep = sweep_tau(None, result.labeled, None, config.bench.tau_sweep)
        put("confusion.csv", _csv(
            [[tau, confusion.tp, confusion.fp, confusion.tn, confusion.fn, _fmt(confusion.accuracy), _fmt(confusion.f1)]],
            ["tau", "tp", "fp", "tn", "fn", "accuracy", "f1"],
        ))
        put("tau_sweep.csv", _csv(
            [[t, n, c.tp, c.fp, c.tn, c.fn, _fmt(c.accuracy), _fmt(c.f1)] for t, per_n in sweep for n, c in per_n.items()],
            ["tau", "n", "tp", "fp", "tn", "fn", "accuracy", "f1"],
        ))
    put("summary.md", render_summary(result.cells, confusion, sweep, tau))
    if timings:
        put("timings.csv", _csv(
            [[t["n"], t["k"], t["problem"], t["method"], f"{t['seconds']:.6f}"] for t in result.timings],
            ["n", "k", "problem", "method", "seconds"],
        ))
    return files
