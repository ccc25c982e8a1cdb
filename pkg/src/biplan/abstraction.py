"""Continuous-to-symbolic state mapping.

:class:`Encoder` is the pluggable interface (a learned model only needs to
declare its unary and relational predicate names and implement ``encode``).
:class:`ReferenceEncoder` is a geometric discretizer with three unary bits
``is_large, on_table, clear`` and two relation heads ``on, near``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np

from biplan.world import EDGE, LARGE, ContinuousState, Problem, clear_mask


@dataclass(frozen=True, eq=False)
class SymbolicState:
    """Unary bits (n, d_z) and relational bits (K, n, n), all uint8 in {0, 1}."""

    unary: np.ndarray
    relational: np.ndarray

    def __post_init__(self):
        u = np.array(self.unary, dtype=np.uint8)
        r = np.array(self.relational, dtype=np.uint8)
        if u.ndim != 2 or r.ndim != 3 or r.shape[1:] != (u.shape[0], u.shape[0]):
            raise ValueError(f"inconsistent symbolic shapes {u.shape} / {r.shape}")
        if u.size and u.max() > 1 or r.size and r.max() > 1:
            raise ValueError("symbolic entries must be 0 or 1")
        u.setflags(write=False)
        r.setflags(write=False)
        object.__setattr__(self, "unary", u)
        object.__setattr__(self, "relational", r)

    @property
    def n(self) -> int:
        return self.unary.shape[0]

    @property
    def d_z(self) -> int:
        return self.unary.shape[1]

    @property
    def heads(self) -> int:
        return self.relational.shape[0]

    def to_bits(self) -> str:
        return "".join(map(str, self.unary.ravel())) + "".join(map(str, self.relational.ravel()))

    @classmethod
    def from_bits(cls, bits: str, n: int, d_z: int, heads: int) -> "SymbolicState":
        vals = np.frombuffer(bits.encode("ascii"), dtype=np.uint8) - ord("0")
        if vals.size != n * d_z + heads * n * n:
            raise ValueError("bit string length does not match the declared dimensions")
        return cls(vals[: n * d_z].reshape(n, d_z), vals[n * d_z:].reshape(heads, n, n))

    def permuted(self, order: Sequence[int]) -> "SymbolicState":
        order = np.asarray(order)
        return SymbolicState(self.unary[order], self.relational[:, order][:, :, order])

    def __eq__(self, other):
        if not isinstance(other, SymbolicState):
            return NotImplemented
        return np.array_equal(self.unary, other.unary) and np.array_equal(self.relational, other.relational)

    def __hash__(self):
        return hash((self.unary.tobytes(), self.relational.tobytes(), self.unary.shape))


class Encoder(Protocol):
    unary_names: tuple[str, ...]
    relation_names: tuple[str, ...]

    def encode(self, state: ContinuousState) -> SymbolicState: ...


@dataclass(frozen=True)
class ReferenceEncoder:
    """Threshold discretizer standing in for a learned symbol encoder.

    ``on_table``: z within ``z_tol`` of the half height. ``clear``: no block
    footprint overlaps the top face from above. ``on(i, j)``: xy distance below
    j's half width and i's base within ``z_tol`` of j's top. ``near(i, j)``: xy
    distance below ``near_factor`` times the large-block width (symmetric).
    Diagonal relational entries are always 0.
    """

    z_tol: float = 0.005
    near_factor: float = 2.0

    unary_names = ("is_large", "on_table", "clear")
    relation_names = ("on", "near")

    @property
    def d_z(self) -> int:
        return len(self.unary_names)

    @property
    def heads(self) -> int:
        return len(self.relation_names)

    def encode(self, state: ContinuousState) -> SymbolicState:
        pos, half = state.positions, state.half
        n = state.n
        unary = np.zeros((n, 3), dtype=np.uint8)
        unary[:, 0] = state.types == LARGE
        unary[:, 1] = np.abs(pos[:, 2] - half) < self.z_tol
        unary[:, 2] = clear_mask(pos, half)
        dxy = np.linalg.norm(pos[:, None, :2] - pos[None, :, :2], axis=-1)
        base = pos[:, 2] - half
        top = pos[:, 2] + half
        on = (dxy < half[None, :]) & (np.abs(base[:, None] - top[None, :]) < self.z_tol)
        near = dxy < self.near_factor * EDGE[LARGE]
        rel = np.stack([on, near]).astype(np.uint8)
        rel[:, np.arange(n), np.arange(n)] = 0
        return SymbolicState(unary, rel)

    def encode_problem(self, problem: Problem) -> tuple[SymbolicState, SymbolicState]:
        return encode_problem(problem, self)


def encode_problem(problem: Problem, encoder: Encoder) -> tuple[SymbolicState, SymbolicState]:
    return encoder.encode(problem.init), encoder.encode(problem.goal)


def check_dimensions(sym: SymbolicState, encoder: Encoder) -> None:
    if sym.d_z != len(encoder.unary_names) or sym.heads != len(encoder.relation_names):
        raise ValueError(
            f"symbolic state has (d_z={sym.d_z}, K={sym.heads}), encoder declares "
            f"({len(encoder.unary_names)}, {len(encoder.relation_names)})"
        )
