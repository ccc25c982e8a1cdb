"""Run configuration: INI sections of flat key = value pairs, validated against dataclass fields."""
from __future__ import annotations

import configparser
import dataclasses
import hashlib
import io
from dataclasses import dataclass, field, fields
from typing import Any

from biplan.abstraction import ReferenceEncoder
from biplan.pddl import SolveBudget, SolverConfig
from biplan.planning import BilevelConfig, SearchParams
from biplan.world import PhysicsConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunSection:
    seed: int = 0
    jobs: int = 1


@dataclass(frozen=True)
class PhysicsSection:
    noise_sigma: float = 0.01
    offset_unit: float = 0.02
    support_fraction: float = 0.5
    topple_large_on_small: bool = True


@dataclass(frozen=True)
class AbstractionSection:
    z_tol: float = 0.005
    near_factor: float = 2.0


@dataclass(frozen=True)
class DynamicsSection:
    predictor: str = "knn"
    k: int = 5
    train_size: int = 50_000
    train_n: tuple = (2, 3, 4)
    episode_length: int = 8


@dataclass(frozen=True)
class OperatorsSection:
    min_support: int = 5
    min_fraction: float = 0.01


@dataclass(frozen=True)
class PlanningSection:
    n_domains: int = 100
    tau: float = 0.07
    epsilon: float = 0.05
    w: float = 1.5
    step_cost: float = 0.10
    expansion_cap: int = 10_000
    h_stop: float = 0.05
    quantization: float = 0.01
    solver_search: str = "gbfs"
    solver_heuristic: str = "hadd"
    solve_max_expansions: int = 100_000
    solve_max_seconds: float = 5.0


@dataclass(frozen=True)
class BenchSection:
    n: tuple = (2, 3)
    k: tuple = (1, 2, 3)
    trials: int = 50
    full_n: tuple = (2, 3, 4)
    full_k: tuple = (1, 2, 3, 4, 5)
    full_trials: int = 100
    methods: tuple = ("deterministic", "probabilistic", "continuous", "bilevel")
    tau_sweep: tuple = (0.03, 0.05, 0.07, 0.09, 0.11, 0.13, 0.15)


METHODS = ("deterministic", "probabilistic", "continuous", "bilevel")


@dataclass(frozen=True)
class RunConfig:
    run: RunSection = field(default_factory=RunSection)
    physics: PhysicsSection = field(default_factory=PhysicsSection)
    abstraction: AbstractionSection = field(default_factory=AbstractionSection)
    dynamics: DynamicsSection = field(default_factory=DynamicsSection)
    operators: OperatorsSection = field(default_factory=OperatorsSection)
    planning: PlanningSection = field(default_factory=PlanningSection)
    bench: BenchSection = field(default_factory=BenchSection)

    def __post_init__(self):
        problems = []
        if self.run.jobs < 1:
            problems.append("run.jobs must be >= 1")
        if self.physics.noise_sigma < 0:
            problems.append("physics.noise_sigma must be >= 0")
        if self.dynamics.predictor not in ("knn", "oracle"):
            problems.append("dynamics.predictor must be knn or oracle")
        if self.dynamics.k < 1:
            problems.append("dynamics.k must be >= 1")
        if self.planning.n_domains < 1:
            problems.append("planning.n_domains must be >= 1")
        if self.planning.solver_search not in ("gbfs", "astar"):
            problems.append("planning.solver_search must be gbfs or astar")
        if self.planning.solver_heuristic not in ("hadd", "hmax", "blind"):
            problems.append("planning.solver_heuristic must be hadd, hmax or blind")
        if self.bench.trials < 1 or self.bench.full_trials < 1:
            problems.append("bench trials must be >= 1")
        bad = [m for m in self.bench.methods if m not in METHODS]
        if bad:
            problems.append(f"bench.methods has unknown entries {bad}")
        if problems:
            raise ConfigError("; ".join(problems))

    # -- derived objects

    def physics_config(self) -> PhysicsConfig:
        p = self.physics
        return PhysicsConfig(p.noise_sigma, p.offset_unit, p.support_fraction, p.topple_large_on_small)

    def encoder(self) -> ReferenceEncoder:
        return ReferenceEncoder(self.abstraction.z_tol, self.abstraction.near_factor)

    def search_params(self) -> SearchParams:
        p = self.planning
        return SearchParams(p.w, p.step_cost, p.expansion_cap, p.h_stop, p.quantization, p.epsilon)

    def bilevel_config(self) -> BilevelConfig:
        p = self.planning
        return BilevelConfig(
            p.n_domains, p.tau, self.search_params(),
            SolveBudget(p.solve_max_expansions, p.solve_max_seconds),
            SolverConfig(p.solver_search, p.solver_heuristic),
        )

    # -- text form

    def to_ini(self) -> str:
        parser = configparser.ConfigParser()
        for sec in fields(self):
            section = getattr(self, sec.name)
            parser[sec.name] = {f.name: _format(getattr(section, f.name)) for f in fields(section)}
        buf = io.StringIO()
        parser.write(buf)
        return buf.getvalue()

    def digest(self) -> str:
        return hashlib.sha256(self.to_ini().encode()).hexdigest()

    def replace(self, **overrides: Any) -> "RunConfig":
        """Override keys given as ``section__key=value``; values may be strings."""
        updates: dict[str, dict] = {}
        for dotted, value in overrides.items():
            sec, _, key = dotted.partition("__")
            updates.setdefault(sec, {})[key] = value
        return _build(updates, base=self)


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(_format(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


def _coerce(raw, default):
    if not isinstance(raw, str):
        return tuple(raw) if isinstance(default, tuple) else type(default)(raw)
    raw = raw.strip()
    if isinstance(default, bool):
        low = raw.lower()
        if low in ("true", "yes", "1", "on"):
            return True
        if low in ("false", "no", "0", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if isinstance(default, tuple):
        items = [s.strip() for s in raw.split(",") if s.strip()]
        if default and isinstance(default[0], str):
            return tuple(items)
        if default and isinstance(default[0], float):
            return tuple(float(s) for s in items)
        return tuple(int(s) for s in items)
    return type(default)(raw)


def _build(sections: dict[str, dict], base: RunConfig | None = None) -> RunConfig:
    base = base or RunConfig()
    errors = []
    known = {f.name for f in fields(RunConfig)}
    for sec in sections:
        if sec not in known:
            errors.append(f"unknown section [{sec}]")
    out = {}
    for sec in fields(RunConfig):
        current = getattr(base, sec.name)
        values = dict(sections.get(sec.name, {}))
        names = {f.name for f in fields(current)}
        for key in values:
            if key not in names:
                errors.append(f"unknown key {sec.name}.{key}")
        kwargs = {}
        for f in fields(current):
            if f.name in values:
                try:
                    kwargs[f.name] = _coerce(values[f.name], getattr(current, f.name))
                except ValueError as exc:
                    errors.append(f"{sec.name}.{f.name}: {exc}")
        out[sec.name] = dataclasses.replace(current, **kwargs)
    if errors:
        raise ConfigError("; ".join(errors))
    return RunConfig(**out)


def parse_config(text: str) -> RunConfig:
    parser = configparser.ConfigParser()
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    return _build({s: dict(parser[s]) for s in parser.sections()})


def load_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            return parse_config(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
