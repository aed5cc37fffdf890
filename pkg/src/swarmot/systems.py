"""Core value types: linear systems, state layouts, and quadratic costs.

All types are immutable after construction and safe to share across
threads or processes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, InvalidParameter

TOL_SYM = 1e-10


@dataclass(frozen=True)
class StateLayout:
    """Named slices into a state vector, with the position slice singled out.

    ``slices`` maps a name (e.g. "position", "velocity") to a (start, stop)
    pair.  Slice bounds must partition [0, dim).
    """

    dim: int
    slices: dict[str, tuple[int, int]]

    def __post_init__(self):
        bounds = sorted(self.slices.values())
        cursor = 0
        for lo, hi in bounds:
            if lo != cursor or hi <= lo:
                raise InvalidParameter(
                    f"layout slices {self.slices} do not partition [0, {self.dim})"
                )
            cursor = hi
        if cursor != self.dim:
            raise InvalidParameter(
                f"layout slices {self.slices} do not cover [0, {self.dim})"
            )

    def extract(self, name: str, x: np.ndarray) -> np.ndarray:
        lo, hi = self.slices[name]
        return np.asarray(x)[..., lo:hi]

    def position(self, x: np.ndarray) -> np.ndarray:
        return self.extract("position", x)


@dataclass(frozen=True)
class LinearSystem:
    """Affine time-invariant dynamics  dx/dt = drift @ x + input @ u + offset.

    ``input_dim == 0`` denotes an autonomous system (e.g. a closed-loop
    target); ``input`` is then a d x 0 matrix.
    """

    drift: np.ndarray
    input: np.ndarray
    offset: np.ndarray
    layout: StateLayout | None = None

    def __post_init__(self):
        drift = np.atleast_2d(np.asarray(self.drift, dtype=float))
        d = drift.shape[0]
        if drift.shape != (d, d):
            raise DimensionMismatch(f"drift must be square, got {drift.shape}")
        inp = np.asarray(self.input, dtype=float).reshape(d, -1)
        off = np.asarray(self.offset, dtype=float).reshape(-1)
        if off.shape != (d,):
            raise DimensionMismatch(f"offset must have {d} entries, got {off.shape}")
        if self.layout is not None and self.layout.dim != d:
            raise DimensionMismatch("layout dimension does not match drift")
        for name, arr in (("drift", drift), ("input", inp), ("offset", off)):
            arr.setflags(write=False)
        object.__setattr__(self, "drift", drift)
        object.__setattr__(self, "input", inp)
        object.__setattr__(self, "offset", off)

    @property
    def state_dim(self) -> int:
        return self.drift.shape[0]

    @property
    def input_dim(self) -> int:
        return self.input.shape[1]

    @property
    def is_autonomous(self) -> bool:
        return self.input_dim == 0

    def rhs(self, x: np.ndarray, u: np.ndarray | None = None) -> np.ndarray:
        dx = self.drift @ x + self.offset
        if self.input_dim and u is not None:
            dx = dx + self.input @ u
        return dx

    def cache_key(self) -> bytes:
        return self.drift.tobytes() + self.input.tobytes() + self.offset.tobytes()


@dataclass(frozen=True)
class QuadraticCost:
    """Stage-cost weights: symmetric PSD state weight Q, symmetric PD control weight R."""

    state_weight: np.ndarray
    control_weight: np.ndarray

    def __post_init__(self):
        Q = np.atleast_2d(np.asarray(self.state_weight, dtype=float))
        R = np.atleast_2d(np.asarray(self.control_weight, dtype=float))
        if not np.allclose(Q, Q.T, atol=TOL_SYM * (1 + np.abs(Q).max())):
            raise InvalidParameter("state weight must be symmetric")
        if not np.allclose(R, R.T, atol=TOL_SYM * (1 + np.abs(R).max())):
            raise InvalidParameter("control weight must be symmetric")
        scale = max(1.0, float(np.abs(Q).max()))
        if np.linalg.eigvalsh(Q).min() < -TOL_SYM * scale:
            raise InvalidParameter("state weight must be positive semidefinite")
        if np.linalg.eigvalsh(R).min() <= 0:
            raise InvalidParameter("control weight must be positive definite")
        Q = 0.5 * (Q + Q.T)
        R = 0.5 * (R + R.T)
        Q.setflags(write=False)
        R.setflags(write=False)
        object.__setattr__(self, "state_weight", Q)
        object.__setattr__(self, "control_weight", R)

    def cache_key(self) -> bytes:
        return self.state_weight.tobytes() + self.control_weight.tobytes()

    def stage(self, e: np.ndarray, u: np.ndarray) -> float:
        """Quadratic form e'Qe + u'Ru (no steady-state offset)."""
        val = float(e @ self.state_weight @ e)
        if u is not None and u.size:
            val += float(u @ self.control_weight @ u)
        return val
