"""Tabletop block world: state, pick-place physics, exploration data and problems.

Blocks are axis-aligned cubes (large 6 cm, small 3 cm) on a 1 m x 1 m table.
An action ``(pick, pick_offset, place, place_offset)`` grasps ``pick`` at a
lateral offset of ``pick_offset * 2 cm`` along x and releases it above the
stack at ``place`` with gripper offset ``place_offset * 2 cm``, so the block's
centre lands at ``place.xy + (place_offset - pick_offset) * 2 cm``.
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from biplan.seeding import derive_seed, rng_for

logger = logging.getLogger(__name__)

LARGE, SMALL = 0, 1
EDGE = np.array([0.06, 0.03])
TABLE_MIN, TABLE_MAX = 0.0, 1.0
SPAWN_MIN, SPAWN_MAX = 0.35, 0.65
SPAWN_CLEARANCE = 0.01
FALL_GAP = 0.005
FALL_STEP = 0.005
AREA_EPS = 1e-12
OFFSETS = (-1, 0, 1)


class ProblemGenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class PhysicsConfig:
    noise_sigma: float = 0.0
    offset_unit: float = 0.02
    support_fraction: float = 0.5
    topple_large_on_small: bool = True

    @property
    def stochastic(self) -> bool:
        return self.noise_sigma > 0.0


NOISE_FREE = PhysicsConfig()


class ActionSpec(NamedTuple):
    pick: int
    pick_offset: int
    place: int
    place_offset: int

    def is_self(self) -> bool:
        return self.pick == self.place


@dataclass(frozen=True, eq=False)
class ContinuousState:
    """Ordered object features: ``positions`` (n, 3) in metres, ``types`` (n,) LARGE/SMALL."""

    positions: np.ndarray
    types: np.ndarray

    def __post_init__(self):
        pos = np.array(self.positions, dtype=np.float64).reshape(-1, 3)
        typ = np.array(self.types, dtype=np.int8).reshape(-1)
        if pos.shape[0] != typ.shape[0]:
            raise ValueError(f"{pos.shape[0]} positions but {typ.shape[0]} types")
        if not np.isin(typ, (LARGE, SMALL)).all():
            raise ValueError("object types must be LARGE (0) or SMALL (1)")
        pos.setflags(write=False)
        typ.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "types", typ)

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    @property
    def half(self) -> np.ndarray:
        return EDGE[self.types] / 2.0

    @property
    def onehot(self) -> np.ndarray:
        out = np.zeros((self.n, 2), dtype=np.int8)
        out[np.arange(self.n), self.types] = 1
        return out

    def features(self) -> np.ndarray:
        """The (n, 5) feature matrix: xyz followed by the type one-hot."""
        return np.hstack([self.positions, self.onehot.astype(np.float64)])

    def with_positions(self, positions: np.ndarray) -> "ContinuousState":
        return ContinuousState(positions, self.types)

    def translated(self, offset: Sequence[float]) -> "ContinuousState":
        return ContinuousState(self.positions + np.asarray(offset, dtype=float), self.types)

    def permuted(self, order: Sequence[int]) -> "ContinuousState":
        order = list(order)
        return ContinuousState(self.positions[order], self.types[order])

    def to_flat(self) -> list[float]:
        return [float(v) for v in self.features().ravel()]

    @classmethod
    def from_flat(cls, flat: Sequence[float]) -> "ContinuousState":
        arr = np.asarray(flat, dtype=np.float64).reshape(-1, 5)
        onehot = arr[:, 3:5]
        if not np.all(onehot.sum(axis=1) == 1.0):
            raise ValueError("type one-hot must have exactly one bit set")
        return cls(arr[:, :3], np.argmax(onehot, axis=1))

    def __eq__(self, other):
        if not isinstance(other, ContinuousState):
            return NotImplemented
        return np.array_equal(self.types, other.types) and np.array_equal(self.positions, other.positions)

    def __hash__(self):
        return hash((self.types.tobytes(), self.positions.tobytes()))

    def __repr__(self):
        rows = ", ".join(
            f"{'L' if t == LARGE else 'S'}({p[0]:.3f},{p[1]:.3f},{p[2]:.3f})"
            for p, t in zip(self.positions, self.types)
        )
        return f"ContinuousState[{rows}]"


@dataclass(frozen=True, eq=False)
class Transition:
    pre: ContinuousState
    action: ActionSpec
    post: ContinuousState
    effect: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.pre.n != self.post.n:
            raise ValueError("pre and post must hold the same objects")
        if self.effect is None:
            eff = self.post.positions - self.pre.positions
        else:
            eff = np.array(self.effect, dtype=np.float64).reshape(-1, 3)
        eff.setflags(write=False)
        object.__setattr__(self, "effect", eff)

    def to_record(self) -> dict:
        return {
            "pre": self.pre.to_flat(),
            "action": list(map(int, self.action)),
            "post": self.post.to_flat(),
            "effect": [float(v) for v in self.effect.ravel()],
        }

    @classmethod
    def from_record(cls, rec: dict) -> "Transition":
        return cls(
            ContinuousState.from_flat(rec["pre"]),
            ActionSpec(*map(int, rec["action"])),
            ContinuousState.from_flat(rec["post"]),
            np.asarray(rec["effect"], dtype=np.float64),
        )

    def __eq__(self, other):
        if not isinstance(other, Transition):
            return NotImplemented
        return (
            self.pre == other.pre
            and self.action == other.action
            and self.post == other.post
            and np.array_equal(self.effect, other.effect)
        )


@dataclass(frozen=True)
class Problem:
    init: ContinuousState
    goal: ContinuousState
    epsilon: float = 0.05
    provenance: tuple = ()

    def __post_init__(self):
        if self.init.n != self.goal.n:
            raise ValueError("init and goal must hold the same objects")

    @property
    def n(self) -> int:
        return self.init.n

    def to_record(self) -> dict:
        return {
            "init": self.init.to_flat(),
            "goal": self.goal.to_flat(),
            "epsilon": self.epsilon,
            "provenance": list(self.provenance),
        }

    @classmethod
    def from_record(cls, rec: dict) -> "Problem":
        return cls(
            ContinuousState.from_flat(rec["init"]),
            ContinuousState.from_flat(rec["goal"]),
            float(rec.get("epsilon", 0.05)),
            tuple(rec.get("provenance", ())),
        )


# ---------------------------------------------------------------- geometry

def overlap_area(center_a, half_a, center_b, half_b) -> float:
    """Intersection area of two axis-aligned square footprints."""
    dx = min(center_a[0] + half_a, center_b[0] + half_b) - max(center_a[0] - half_a, center_b[0] - half_b)
    if dx <= 0.0:
        return 0.0
    dy = min(center_a[1] + half_a, center_b[1] + half_b) - max(center_a[1] - half_a, center_b[1] - half_b)
    if dy <= 0.0:
        return 0.0
    return dx * dy


def overlap_matrix(positions: np.ndarray, half: np.ndarray) -> np.ndarray:
    """Pairwise footprint overlap areas, zero on the diagonal."""
    lo = positions[:, :2] - half[:, None]
    hi = positions[:, :2] + half[:, None]
    ext = np.minimum(hi[:, None, :], hi[None, :, :]) - np.maximum(lo[:, None, :], lo[None, :, :])
    area = np.clip(ext[..., 0], 0.0, None) * np.clip(ext[..., 1], 0.0, None)
    np.fill_diagonal(area, 0.0)
    return area


def clear_mask(positions: np.ndarray, half: np.ndarray) -> np.ndarray:
    """True for blocks with nothing resting above their top face."""
    above = (overlap_matrix(positions, half) > AREA_EPS) & (positions[None, :, 2] > positions[:, None, 2] + 1e-6)
    return ~above.any(axis=1)


def column_height(positions: np.ndarray, half: np.ndarray, index: int) -> float:
    """Height of the highest surface stacked over ``index`` above its own top face."""
    area = overlap_matrix(positions, half)[index]
    top = positions[index, 2] + half[index]
    tops = positions[:, 2] + half
    over = (area > AREA_EPS) & (tops > top + 1e-6)
    if not over.any():
        return 0.0
    return float(tops[over].max() - top)


# ---------------------------------------------------------------- physics

def grasp_feasible(state: ContinuousState, action: ActionSpec, physics: PhysicsConfig = NOISE_FREE) -> bool:
    i = action.pick
    if abs(action.pick_offset * physics.offset_unit) > state.half[i] + 1e-12:
        return False
    return bool(clear_mask(state.positions, state.half)[i])


def _fall_position(pos, half, i, support, release_xy):
    direction = np.sign(release_xy[0] - pos[support, 0]) or 1.0
    y = release_xy[1]
    others = [k for k in range(pos.shape[0]) if k != i]

    def free(x):
        if x - half[i] < TABLE_MIN - 1e-12 or x + half[i] > TABLE_MAX + 1e-12:
            return False
        return all(overlap_area((x, y), half[i], pos[k], half[k]) <= AREA_EPS for k in others)

    lo, hi = TABLE_MIN + half[i], TABLE_MAX - half[i]
    for d in (direction, -direction):
        x = min(max(pos[support, 0] + d * (half[support] + half[i] + FALL_GAP), lo), hi)
        while lo <= x <= hi:
            if free(x):
                return np.array([x, y, half[i]])
            x += d * FALL_STEP
    raise RuntimeError("no free table position for a falling block")


def _apply(state: ContinuousState, action: ActionSpec, physics: PhysicsConfig, noise_xy, clear=None) -> np.ndarray | None:
    pos, half, types = state.positions, state.half, state.types
    i, di, j, dj = action
    if clear is None:
        feasible = grasp_feasible(state, action, physics)
    else:
        feasible = abs(di * physics.offset_unit) <= half[i] + 1e-12 and bool(clear[i])
    if not feasible:
        return None
    release = np.array([pos[j, 0] + (dj - di) * physics.offset_unit, pos[j, 1]])
    if noise_xy is not None:
        release = release + noise_xy
    # the footprint never leaves the table
    release = np.clip(release, TABLE_MIN + half[i], TABLE_MAX - half[i])
    support, best_top, best_area = -1, -np.inf, 0.0
    for k in range(state.n):
        if k == i:
            continue
        area = overlap_area(release, half[i], pos[k], half[k])
        if area <= AREA_EPS:
            continue
        top = pos[k, 2] + half[k]
        if top > best_top + 1e-9 or (abs(top - best_top) <= 1e-9 and area > best_area):
            support, best_top, best_area = k, top, area
    new = pos.copy()
    if support < 0:
        new[i] = (release[0], release[1], half[i])
        return new
    frac = best_area / (2.0 * half[i]) ** 2
    topples = physics.topple_large_on_small and types[i] == LARGE and types[support] == SMALL
    if frac >= physics.support_fraction - 1e-12 and not topples:
        new[i] = (release[0], release[1], best_top + half[i])
    else:
        new[i] = _fall_position(pos, half, i, support, release)
    return new


def step(
    state: ContinuousState,
    action: ActionSpec,
    rng: np.random.Generator | None = None,
    physics: PhysicsConfig = NOISE_FREE,
) -> ContinuousState:
    """Successor state of one pick-place.

    Infeasible grasps (covered block, or an offset wider than the block's
    half-width) return ``state`` unchanged. With ``physics.noise_sigma > 0`` a
    2-D Gaussian release perturbation is drawn from ``rng`` on every call,
    feasible or not, so paired runs consume their streams identically.
    """
    n = state.n
    if not (0 <= action.pick < n and 0 <= action.place < n):
        raise IndexError(f"{action} is out of range for {n} objects")
    if action.pick_offset not in OFFSETS or action.place_offset not in OFFSETS:
        raise ValueError(f"offsets of {action} must be in {OFFSETS}")
    noise = None
    if physics.stochastic:
        if rng is None:
            raise ValueError("stochastic physics needs a random stream")
        noise = rng.normal(0.0, physics.noise_sigma, size=2)
    new = _apply(state, action, physics, noise)
    if new is None:
        return state
    return state.with_positions(new)


def execute(
    state: ContinuousState,
    plan: Iterable[ActionSpec],
    rng: np.random.Generator | None = None,
    physics: PhysicsConfig = NOISE_FREE,
) -> ContinuousState:
    for action in plan:
        state = step(state, action, rng, physics)
    return state


def legal_actions(state_or_n) -> list[ActionSpec]:
    """All 9 n^2 pick-place tuples, self-placement included."""
    n = state_or_n if isinstance(state_or_n, (int, np.integer)) else state_or_n.n
    return [
        ActionSpec(i, di, j, dj)
        for i in range(n)
        for di in OFFSETS
        for j in range(n)
        for dj in OFFSETS
    ]


# ---------------------------------------------------------------- sampling

def sample_scene(n: int, rng: np.random.Generator, max_tries: int = 10000) -> ContinuousState:
    """Random types and non-overlapping table positions inside the spawn square."""
    if n < 1:
        raise ValueError("need at least one object")
    types = rng.integers(0, 2, size=n)
    half = EDGE[types] / 2.0
    pos = np.zeros((n, 3))
    for i in range(n):
        for _ in range(max_tries):
            xy = rng.uniform(SPAWN_MIN, SPAWN_MAX, size=2)
            sep = np.abs(pos[:i, :2] - xy).max(axis=1) if i else np.zeros(0)
            if np.all(sep >= half[:i] + half[i] + SPAWN_CLEARANCE):
                pos[i] = (xy[0], xy[1], half[i])
                break
        else:
            raise ProblemGenerationError(f"could not place {n} blocks without overlap")
    return ContinuousState(pos, types)


def _episode(seed: int, index: int, n_range: Sequence[int], length: int, physics: PhysicsConfig):
    rng = rng_for(seed, "episode", index)
    n = int(rng.choice(np.asarray(sorted(n_range))))
    state = sample_scene(n, rng)
    actions = legal_actions(n)
    out = []
    for _ in range(length):
        action = actions[int(rng.integers(len(actions)))]
        post = step(state, action, rng, physics)
        out.append(Transition(state, action, post))
        state = post
    return out


def collect_dataset(
    num_samples: int,
    n_range: Sequence[int] = (2, 3, 4),
    seed: int = 0,
    physics: PhysicsConfig = NOISE_FREE,
    episode_length: int = 8,
    jobs: int = 1,
) -> list[Transition]:
    """Random-exploration transitions.

    Episode ``e`` draws its object count, scene and uniformly random actions
    from ``derive_seed(seed, "episode", e)``; episodes are concatenated in index
    order and the last one truncated, so the result does not depend on ``jobs``.
    """
    if num_samples <= 0:
        raise ValueError("num_samples must be positive")
    if not n_range or min(n_range) < 1:
        raise ValueError("n_range must hold positive object counts")
    if episode_length <= 0:
        raise ValueError("episode_length must be positive")
    n_episodes = -(-num_samples // episode_length)
    args = [(seed, e, tuple(n_range), episode_length, physics) for e in range(n_episodes)]
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            episodes = list(pool.map(_episode, *zip(*args), chunksize=64))
    else:
        episodes = [_episode(*a) for a in args]
    data = [t for ep in episodes for t in ep]
    return data[:num_samples]


def max_displacement(a: ContinuousState, b: ContinuousState) -> float:
    return float(np.linalg.norm(a.positions - b.positions, axis=1).max())


def generate_problem(
    n: int,
    k: int,
    seed: int,
    physics: PhysicsConfig = NOISE_FREE,
    epsilon: float = 0.05,
    max_attempts: int = 1000,
    min_displacement: float = 0.01,
) -> Problem:
    """Random initial scene, goal = state after ``k`` random displacing actions.

    Each goal-building action must move some block by more than
    ``min_displacement``; the whole attempt is redrawn unless some block ends
    more than ``epsilon`` away from its initial position.
    """
    if n < 1 or k < 1:
        raise ValueError("n and k must be positive")
    rng = rng_for(seed, "problem", n, k)
    actions = legal_actions(n)
    for _ in range(max_attempts):
        init = sample_scene(n, rng)
        state = init
        ok = True
        for _ in range(k):
            for _ in range(200):
                action = actions[int(rng.integers(len(actions)))]
                nxt = step(state, action, rng, physics)
                if max_displacement(state, nxt) > min_displacement:
                    state = nxt
                    break
            else:
                ok = False
                break
        if ok and max_displacement(init, state) > epsilon:
            return Problem(init, state, epsilon, (n, k, seed))
    raise ProblemGenerationError(f"no valid problem for n={n}, k={k}, seed={seed} in {max_attempts} attempts")


def generate_suite(
    n_values: Iterable[int],
    k_values: Iterable[int],
    per_cell: int,
    seed: int,
    physics: PhysicsConfig = NOISE_FREE,
    epsilon: float = 0.05,
) -> dict[tuple[int, int], list[Problem]]:
    suite = {}
    for n in n_values:
        for k in k_values:
            suite[(n, k)] = [
                generate_problem(n, k, derive_seed(seed, "suite", n, k, p), physics, epsilon)
                for p in range(per_cell)
            ]
    return suite


def object_distances(final: ContinuousState, goal: ContinuousState) -> np.ndarray:
    if final.n != goal.n:
        raise ValueError(f"state has {final.n} objects, goal has {goal.n}")
    return np.linalg.norm(final.positions - goal.positions, axis=1)


def is_success(final: ContinuousState, goal: ContinuousState, epsilon: float = 0.05, metric: str = "per_object") -> bool:
    """Goal test with strict inequality.

    ``per_object``: every block within ``epsilon`` of its goal position.
    ``whole_state``: the stacked position difference has norm below ``epsilon``.
    """
    if metric == "per_object":
        return bool(np.all(object_distances(final, goal) < epsilon))
    if metric == "whole_state":
        if final.n != goal.n:
            raise ValueError(f"state has {final.n} objects, goal has {goal.n}")
        return bool(np.linalg.norm(final.positions - goal.positions) < epsilon)
    raise ValueError(f"unknown success metric {metric!r}")


# ---------------------------------------------------------------- dataset files

DATASET_SCHEMA = "biplan.dataset"
DATASET_VERSION = 1


def write_dataset(path, transitions: Sequence[Transition], header: dict | None = None, encoder=None) -> None:
    """Line-delimited JSON: one header object, then one transition per line.

    With an ``encoder``, each record also carries ``sigma_pre``/``sigma_post``
    bit strings (unary bits row-major, then relational bits head-major).
    """
    head = {"schema": DATASET_SCHEMA, "version": DATASET_VERSION, "samples": len(transitions)}
    head.update(header or {})
    if encoder is not None:
        head["symbolic_encoding"] = {
            "layout": "unary n x d_z row-major, then relational K x n x n head-major",
            "unary": list(encoder.unary_names),
            "relations": list(encoder.relation_names),
        }
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(head, sort_keys=True) + "\n")
        for t in transitions:
            rec = t.to_record()
            if encoder is not None:
                rec["sigma_pre"] = encoder.encode(t.pre).to_bits()
                rec["sigma_post"] = encoder.encode(t.post).to_bits()
            fh.write(json.dumps(rec) + "\n")


def read_dataset(path) -> tuple[dict, list[Transition]]:
    with open(path, encoding="utf-8") as fh:
        header = json.loads(fh.readline())
        if header.get("schema") != DATASET_SCHEMA:
            raise ValueError(f"{path} is not a {DATASET_SCHEMA} file")
        if header.get("version") != DATASET_VERSION:
            raise ValueError(f"unsupported dataset version {header.get('version')}")
        data = [Transition.from_record(json.loads(line)) for line in fh if line.strip()]
    return header, data


def physics_record(physics: PhysicsConfig) -> dict:
    return asdict(physics)


def write_problems(path, problems: Sequence[Problem]) -> None:
    Path(path).write_text("".join(json.dumps(p.to_record()) + "\n" for p in problems), encoding="utf-8")


def read_problems(path) -> list[Problem]:
    text = Path(path).read_text(encoding="utf-8")
    return [Problem.from_record(json.loads(line)) for line in text.splitlines() if line.strip()]
