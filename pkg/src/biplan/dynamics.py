"""Continuous effect predictors: a noise-free simulator oracle and a k-NN regressor."""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Protocol, Sequence

import numpy as np

from biplan.kernels import knn_regress
from biplan.world import (
    AREA_EPS,
    EDGE,
    NOISE_FREE,
    ActionSpec,
    ContinuousState,
    PhysicsConfig,
    Transition,
    _apply,
    clear_mask,
    step,
)

MODEL_FORMAT = "biplan.knn"
MODEL_VERSION = 1
N_FEATURES = 7

# mixed-radix bucket key: role, self, pick offset, place offset, picked type,
# target type, own type, picked clear, target clear
_RADIX = (3, 2, 3, 3, 2, 2, 2, 2, 2)
N_BUCKETS = int(np.prod(_RADIX))
ROLE_PICKED, ROLE_TARGET, ROLE_BYSTANDER = 0, 1, 2
FRAME_ABSOLUTE, FRAME_TARGET = 0, 1


class Predictor(Protocol):
    name: str

    def predict(self, state: ContinuousState, action: ActionSpec) -> np.ndarray: ...

    def predict_batch(self, state: ContinuousState, actions: Sequence[ActionSpec]) -> np.ndarray: ...


@dataclass(frozen=True)
class OraclePredictor:
    """Returns the noise-free simulator delta; needs no data."""

    physics: PhysicsConfig = NOISE_FREE
    name: str = "oracle"

    def __post_init__(self):
        if self.physics.stochastic:
            object.__setattr__(self, "physics", replace(self.physics, noise_sigma=0.0))

    def predict(self, state, action):
        return step(state, action, None, self.physics).positions - state.positions

    def predict_batch(self, state, actions):
        out = np.zeros((len(actions), state.n, 3))
        clear = clear_mask(state.positions, state.half)
        for a, action in enumerate(actions):
            new = _apply(state, ActionSpec(*action), self.physics, None, clear)
            if new is not None:
                out[a] = new - state.positions
        return out


def _encode_key(parts: np.ndarray) -> np.ndarray:
    key = np.zeros(parts.shape[:-1], dtype=np.int64)
    for d, r in enumerate(_RADIX):
        key = key * r + parts[..., d]
    return key


def _batch_geometry(pos: np.ndarray, half: np.ndarray):
    """Clear flags (T, n) and column heights (T, n) for a batch of same-size scenes."""
    lo = pos[..., :2] - half[..., None]
    hi = pos[..., :2] + half[..., None]
    ext = np.minimum(hi[:, :, None], hi[:, None]) - np.maximum(lo[:, :, None], lo[:, None])
    area = np.clip(ext[..., 0], 0.0, None) * np.clip(ext[..., 1], 0.0, None)
    n = pos.shape[1]
    area[:, np.arange(n), np.arange(n)] = 0.0
    overlaps = area > AREA_EPS
    clear = ~(overlaps & (pos[:, None, :, 2] > pos[:, :, None, 2] + 1e-6)).any(axis=2)
    top = pos[..., 2] + half
    higher = overlaps & (top[:, None, :] > top[:, :, None] + 1e-6)
    colh = np.where(higher, top[:, None, :] - top[:, :, None], 0.0).max(axis=2)
    return clear.astype(np.int64), colh


def _query_arrays(pos: np.ndarray, types: np.ndarray, acts: np.ndarray):
    """Features (T, A, n, 7) and keys (T, A, n) for T scenes under A actions each."""
    half = EDGE[types] / 2.0
    types = types.astype(np.int64)
    clear, colh = _batch_geometry(pos, half)
    T, A = acts.shape[:2]
    n = pos.shape[1]
    pick, place = acts[..., 0], acts[..., 2]
    take = lambda arr, idx: np.take_along_axis(arr, idx, axis=1)
    pick_pos = np.take_along_axis(pos, pick[..., None].repeat(3, axis=-1), axis=1)
    place_pos = np.take_along_axis(pos, place[..., None].repeat(3, axis=-1), axis=1)
    feats = np.empty((T, A, n, N_FEATURES))
    feats[..., 0:3] = pos[:, None] - pick_pos[:, :, None]
    feats[..., 3:6] = pos[:, None] - place_pos[:, :, None]
    feats[..., 6] = take(colh, place)[..., None]
    m = np.arange(n)
    is_self = (pick == place)[..., None]
    role = np.where(
        m == pick[..., None], ROLE_PICKED,
        np.where((m == place[..., None]) & ~is_self, ROLE_TARGET, ROLE_BYSTANDER),
    )
    shape = role.shape
    per_action = lambda v: np.broadcast_to(v[..., None], shape)
    parts = np.stack(
        [
            role,
            np.broadcast_to(is_self, shape),
            per_action(acts[..., 1] + 1),
            per_action(acts[..., 3] + 1),
            per_action(take(types, pick)),
            per_action(take(types, place)),
            np.broadcast_to(types[:, None, :], shape),
            per_action(take(clear, pick)),
            per_action(take(clear, place)),
        ],
        axis=-1,
    ).astype(np.int64)
    return feats, _encode_key(parts)


def query_table(state: ContinuousState, actions: Sequence[ActionSpec]):
    """Features (A, n, 7) and bucket keys (A, n) for every object under every action."""
    acts = np.asarray(actions, dtype=np.int64).reshape(1, -1, 4)
    feats, keys = _query_arrays(state.positions[None], state.types[None], acts)
    return feats[0], keys[0]


@dataclass(frozen=True, eq=False)
class KnnPredictor:
    """Per-object k-NN effect regressor.

    Training rows are sorted by bucket key so each bucket is a contiguous slice
    of ``train_x``. Per bucket the regression target is either the raw effect
    or the landing position relative to the target object's pre-action
    position, whichever has lower variance on the training rows.
    """

    train_x: np.ndarray
    train_y: np.ndarray
    starts: np.ndarray
    stops: np.ndarray
    frames: np.ndarray
    k: int = 5
    name: str = "knn"

    def __post_init__(self):
        for arr in (self.train_x, self.train_y, self.starts, self.stops, self.frames):
            arr.setflags(write=False)

    @property
    def size(self) -> int:
        return self.train_x.shape[0]

    def predict_batch(self, state, actions):
        if len(actions) == 0:
            return np.zeros((0, state.n, 3))
        feats, keys = query_table(state, actions)
        shape = keys.shape
        raw = knn_regress(
            self.train_x, self.train_y, self.starts, self.stops,
            feats.reshape(-1, N_FEATURES), keys.ravel(), self.k,
        ).reshape(shape + (3,))
        frame = self.frames[keys]
        place = np.asarray(actions, dtype=np.int64).reshape(-1, 4)[:, 2]
        pos = state.positions
        landing = raw + pos[place][:, None, :] - pos[None, :, :]
        return np.where((frame == FRAME_TARGET)[..., None], landing, raw)

    def predict(self, state, action):
        return self.predict_batch(state, [action])[0]

    def save(self, path) -> None:
        np.savez_compressed(
            path,
            format=np.array(MODEL_FORMAT),
            version=np.array(MODEL_VERSION),
            k=np.array(self.k),
            train_x=self.train_x,
            train_y=self.train_y,
            starts=self.starts,
            stops=self.stops,
            frames=self.frames,
        )

    @classmethod
    def load(cls, path) -> "KnnPredictor":
        with np.load(path, allow_pickle=False) as z:
            if str(z["format"]) != MODEL_FORMAT:
                raise ValueError(f"{path} is not a {MODEL_FORMAT} model")
            if int(z["version"]) != MODEL_VERSION:
                raise ValueError(f"unsupported model version {int(z['version'])}")
            return cls(
                z["train_x"].copy(), z["train_y"].copy(), z["starts"].copy(),
                z["stops"].copy(), z["frames"].copy(), int(z["k"]),
            )


def _training_rows(dataset: Sequence[Transition]):
    by_n: dict[int, list[int]] = {}
    for idx, t in enumerate(dataset):
        by_n.setdefault(t.pre.n, []).append(idx)
    feats, keys, effects, landing, order = [], [], [], [], []
    for n in sorted(by_n):
        idx = by_n[n]
        pre = np.stack([dataset[i].pre.positions for i in idx])
        post = np.stack([dataset[i].post.positions for i in idx])
        types = np.stack([dataset[i].pre.types for i in idx])
        acts = np.array([dataset[i].action for i in idx], dtype=np.int64)[:, None, :]
        f, key = _query_arrays(pre, types, acts)
        feats.append(f[:, 0].reshape(-1, N_FEATURES))
        keys.append(key[:, 0].ravel())
        effects.append(np.stack([dataset[i].effect for i in idx]).reshape(-1, 3))
        place = pre[np.arange(len(idx)), acts[:, 0, 2]]
        landing.append((post - place[:, None, :]).reshape(-1, 3))
        # original (transition, object) order so ties inside a bucket follow the dataset
        order.append((np.asarray(idx)[:, None] * 64 + np.arange(n)[None, :]).ravel())
    order = np.argsort(np.concatenate(order), kind="stable")
    return (
        np.concatenate(feats)[order], np.concatenate(keys)[order],
        np.concatenate(effects)[order], np.concatenate(landing)[order],
    )


def fit_knn(dataset: Sequence[Transition], k: int = 5) -> KnnPredictor:
    if len(dataset) == 0:
        raise ValueError("cannot fit a predictor on an empty dataset")
    if k < 1:
        raise ValueError("k must be at least 1")
    x, keys, effect, landing = _training_rows(dataset)
    order = np.argsort(keys, kind="stable")
    x, keys, effect, landing = x[order], keys[order], effect[order], landing[order]
    starts = np.searchsorted(keys, np.arange(N_BUCKETS), side="left").astype(np.int64)
    stops = np.searchsorted(keys, np.arange(N_BUCKETS), side="right").astype(np.int64)
    frames = np.zeros(N_BUCKETS, dtype=np.int8)
    y = effect.copy()
    for b in np.flatnonzero(stops > starts):
        s, e = starts[b], stops[b]
        if landing[s:e].var(axis=0).sum() < effect[s:e].var(axis=0).sum():
            frames[b] = FRAME_TARGET
            y[s:e] = landing[s:e]
    return KnnPredictor(np.ascontiguousarray(x), np.ascontiguousarray(y), starts, stops, frames, k)


def fit(dataset: Sequence[Transition], kind: str = "knn", k: int = 5, physics: PhysicsConfig = NOISE_FREE):
    """Build a predictor. ``oracle`` ignores the dataset; ``knn`` requires a non-empty one."""
    if kind == "oracle":
        return OraclePredictor(physics)
    if kind == "knn":
        return fit_knn(dataset, k)
    raise ValueError(f"unknown predictor kind {kind!r}")


def predict_effect(predictor, state: ContinuousState, action: ActionSpec) -> np.ndarray:
    effect = np.asarray(predictor.predict(state, action), dtype=np.float64)
    if not np.all(np.isfinite(effect)):
        raise FloatingPointError("predictor produced a non-finite effect")
    return effect


def mean_effect_error(predictor, dataset: Sequence[Transition]) -> float:
    """Mean Euclidean per-object error of predicted versus recorded effects."""
    errs = [np.linalg.norm(predictor.predict(t.pre, t.action) - t.effect, axis=1) for t in dataset]
    return float(np.concatenate(errs).mean())


def load_predictor(path, physics: PhysicsConfig = NOISE_FREE):
    if str(path) == "oracle":
        return OraclePredictor(physics)
    return KnnPredictor.load(path)
