"""Reproducible randomness: refinable Brownian increments and impulse draws.

Every draw is counter-based: a pure function of (seed, trajectory, stream,
slot), realized with a Philox generator keyed by seed and trajectory/stream
and with normal variates produced by inverse-CDF of the raw 64-bit counter
output.  No rejection sampling anywhere, so trajectories can be generated in
any order, in parallel, or regenerated from scratch and always agree bitwise.

Two independent streams are kept per trajectory: one for Brownian-motion
increments on the finest grid (refinable by dyadic coarsening for
convergence studies) and one for the impulse draws consumed at jump times.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri

from .errors import GridMismatch

_BROWNIAN_STREAM = 0
_IMPULSE_STREAM = 1

_GRID_RTOL = 1e-9


def _standard_normals(seed: int, trajectory: int, stream: int, count: int, width: int) -> np.ndarray:
    """Raw N(0,1) draws for slots [0, count) of one (trajectory, stream) pair."""
    key = np.array(
        [np.uint64(seed), (np.uint64(trajectory) << np.uint64(1)) | np.uint64(stream)],
        dtype=np.uint64,
    )
    gen = np.random.Generator(np.random.Philox(key=key))
    words = gen.integers(1 << 64, size=(count, width), dtype=np.uint64)
    # map to the open interval (0, 1); the half-step keeps 0 and 1 unreachable
    u = ((words >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53
    return ndtri(u)


@dataclass
class NoisePlan:
    """Deterministic, refinable source of Brownian increments and impulse draws.

    Parameters
    ----------
    seed, trajectory : int
        Stream family and member; equal parameters give bitwise-equal draws.
    noise_dim : int
        Number of independent Brownian coordinates m.
    delta : float
        Finest-level grid stepsize; level ell uses stepsize delta * 2**ell.
    horizon : float
        Total covered time T; delta must divide T within roundoff.
    """

    seed: int
    trajectory: int
    noise_dim: int
    delta: float
    horizon: float
    _brownian: np.ndarray | None = field(default=None, init=False, repr=False)
    _impulse: np.ndarray | None = field(default=None, init=False, repr=False)

    def __post_init__(self):
        if self.noise_dim < 0:
            raise ValueError("noise_dim must be nonnegative")
        if self.delta <= 0:
            raise ValueError("delta must be positive")
        if self.horizon <= 0:
            raise ValueError("horizon must be positive")
        steps = int(round(self.horizon / self.delta))
        if steps < 1 or abs(steps * self.delta - self.horizon) > _GRID_RTOL * max(1.0, self.horizon):
            raise GridMismatch(
                f"delta={self.delta!r} does not divide horizon={self.horizon!r}"
            )

    @property
    def finest_steps(self) -> int:
        return int(round(self.horizon / self.delta))

    def _cached(self, stream: int, count: int) -> np.ndarray:
        attr = "_brownian" if stream == _BROWNIAN_STREAM else "_impulse"
        cache = getattr(self, attr)
        if cache is None or cache.shape[0] < count:
            size = 64
            while size < count:
                size *= 2
            cache = _standard_normals(self.seed, self.trajectory, stream, size, self.noise_dim)
            setattr(self, attr, cache)
        return cache

    def standard_normals(self, count: int) -> np.ndarray:
        """Raw N(0,1) draws from the Brownian stream, shape (count, m)."""
        if count < 0:
            raise ValueError("count must be nonnegative")
        return self._cached(_BROWNIAN_STREAM, count)[:count]

    def level_steps(self, level: int) -> int:
        """Number of increments at level `level`; GridMismatch if not nested."""
        if level < 0:
            raise ValueError("level must be nonnegative")
        steps = self.finest_steps
        factor = 1 << level
        if steps % factor != 0:
            raise GridMismatch(
                f"level {level} stepsize does not divide the horizon: "
                f"{steps} finest steps are not a multiple of {factor}"
            )
        return steps // factor

    def level_for(self, dt: float) -> int:
        """Level whose stepsize equals dt within roundoff."""
        ratio = dt / self.delta
        level = int(round(np.log2(ratio))) if ratio > 0 else -1
        if level < 0 or abs(self.delta * (1 << level) - dt) > _GRID_RTOL * max(dt, 1.0):
            raise GridMismatch(f"dt={dt!r} is not delta * 2**level for this plan")
        self.level_steps(level)
        return level

    def increments(self, level: int = 0) -> np.ndarray:
        """Brownian increments at level `level`, shape (steps, m).

        Finest-level increments are i.i.d. Normal(0, delta); each coarser
        increment is the exact pairwise sum of its two children, so refined
        grids are consistent by construction.
        """
        steps = self.level_steps(level)
        out = self.standard_normals(self.finest_steps) * np.sqrt(self.delta)
        for _ in range(level):
            out = out[0::2] + out[1::2]
        assert out.shape[0] == steps
        return out

    def brownian_path(self, level: int = 0) -> tuple[np.ndarray, np.ndarray]:
        """Grid times and Brownian values B(t) at level `level`, B(0) = 0."""
        inc = self.increments(level)
        dt = self.delta * (1 << level)
        times = np.arange(inc.shape[0] + 1) * dt
        values = np.vstack([np.zeros((1, self.noise_dim)), np.cumsum(inc, axis=0)])
        return times, values

    def xi(self, k: int) -> np.ndarray:
        """Impulse draw for jump k >= 1, an m-vector of standard normals.

        Lives in a stream disjoint from the Brownian slots, so impulse draws
        never perturb (and are independent of) the Brownian increments.
        """
        if k < 1:
            raise ValueError("impulse index k starts at 1")
        return self._cached(_IMPULSE_STREAM, k)[k - 1].copy()

    def xi_block(self, count: int) -> np.ndarray:
        """Rows xi(1) .. xi(count), shape (count, m)."""
        if count < 0:
            raise ValueError("count must be nonnegative")
        return self._cached(_IMPULSE_STREAM, count)[:count].copy()
