"""System descriptions: linear and general SDEs, impulse maps, full impulsive
hybrid systems, and the construction coupling an SDE with its explicit
discretization into one hybrid (cyber-physical) system.

All descriptions are immutable after construction and safe to share across
threads.  User-supplied evaluators must be pure and reentrant, must vanish at
the origin, and must honor the declared Lipschitz constants; `validate` spot
checks those contracts on sampled points.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import NotPositiveDefinite, ValidationFailed
from .matrix_kernels import as_square, as_symmetric, is_positive_definite


def _as_vector(x, dim: int | None = None, name: str = "x") -> np.ndarray:
    v = np.atleast_1d(np.asarray(x, dtype=float))
    if v.ndim != 1:
        raise ValueError(f"{name} must be a vector, got shape {v.shape}")
    if dim is not None and v.shape[0] != dim:
        raise ValueError(f"{name} must have length {dim}, got {v.shape[0]}")
    return v


@dataclass(frozen=True)
class LinearSde:
    """Linear SDE dx = F x dt + sum_j Gj x dBj.

    `drift_matrix` is F (n x n); `noise_matrices` holds G_1 .. G_m, all n x n.
    """

    drift_matrix: np.ndarray
    noise_matrices: tuple[np.ndarray, ...] = ()

    def __post_init__(self):
        f = as_square(self.drift_matrix, "drift_matrix")
        object.__setattr__(self, "drift_matrix", f)
        gs = tuple(as_square(g, "noise matrix") for g in self.noise_matrices)
        for g in gs:
            if g.shape != f.shape:
                raise ValueError("noise matrices must match the drift dimension")
        object.__setattr__(self, "noise_matrices", gs)

    @staticmethod
    def scalar(lam: float, mu: float = 0.0) -> "LinearSde":
        """1-d system dx = lam x dt + mu x dB."""
        return LinearSde(np.array([[float(lam)]]), (np.array([[float(mu)]]),))

    @property
    def dim(self) -> int:
        return self.drift_matrix.shape[0]

    @property
    def noise_dim(self) -> int:
        return len(self.noise_matrices)

    @property
    def lipschitz(self) -> float:
        """Global Lipschitz constant of (drift, diffusion) in the Frobenius sense."""
        f_norm = float(np.linalg.norm(self.drift_matrix, 2))
        g_norm = math.sqrt(
            sum(float(np.linalg.norm(g, 2)) ** 2 for g in self.noise_matrices)
        )
        return max(f_norm, g_norm)

    def drift(self, x, t: float = 0.0) -> np.ndarray:
        return self.drift_matrix @ _as_vector(x, self.dim)

    def diffusion(self, x, t: float = 0.0) -> np.ndarray:
        x = _as_vector(x, self.dim)
        if not self.noise_matrices:
            return np.zeros((self.dim, 0))
        return np.column_stack([g @ x for g in self.noise_matrices])


@dataclass(frozen=True)
class VectorFieldSde:
    """General SDE dx = f(x, t) dt + g(x, t) dB with a declared Lipschitz bound.

    `drift_fn(x, t)` returns an n-vector, `diffusion_fn(x, t)` an n x m matrix.
    Both must vanish at the origin; the constructor probes that, `validate`
    spot checks the Lipschitz declaration.
    """

    dim: int
    noise_dim: int
    drift_fn: Callable[[np.ndarray, float], np.ndarray]
    diffusion_fn: Callable[[np.ndarray, float], np.ndarray]
    lipschitz: float

    def __post_init__(self):
        if self.dim < 1 or self.noise_dim < 0:
            raise ValueError("dim must be >= 1 and noise_dim >= 0")
        if self.lipschitz <= 0:
            raise ValueError("lipschitz must be positive")
        origin = np.zeros(self.dim)
        for t in (0.0, 1.0):
            if np.abs(self.drift(origin, t)).max(initial=0.0) > 0.0:
                raise ValidationFailed("drift does not vanish at the origin")
            if np.abs(self.diffusion(origin, t)).max(initial=0.0) > 0.0:
                raise ValidationFailed("diffusion does not vanish at the origin")

    def drift(self, x, t: float = 0.0) -> np.ndarray:
        return _as_vector(self.drift_fn(_as_vector(x, self.dim), t), self.dim, "drift value")

    def diffusion(self, x, t: float = 0.0) -> np.ndarray:
        g = np.asarray(self.diffusion_fn(_as_vector(x, self.dim), t), dtype=float)
        g = g.reshape(self.dim, self.noise_dim)
        return g


Sde = LinearSde | VectorFieldSde


def _zero_jump(dim: int, width: int):
    base = np.zeros(dim)
    gain = np.zeros((dim, width))

    def jump(*args):
        return base.copy()

    def jump_gain(*args):
        return gain.copy()

    return jump, jump_gain


@dataclass(frozen=True)
class ImpulseMaps:
    """Jump maps applied at impulse times.

    State jumps are `deterministic part + gain @ xi(k)` with xi(k) a standard
    normal m-vector:

    - ``jump_x(x, k)`` -> n-vector, ``jump_x_gain(x, k)`` -> n x m,
    - ``jump_y(x, y, k)`` -> q-vector, ``jump_y_gain(x, y, k)`` -> q x m.

    All maps must vanish at origin arguments so zero stays an equilibrium.
    """

    jump_x: Callable[[np.ndarray, int], np.ndarray]
    jump_x_gain: Callable[[np.ndarray, int], np.ndarray]
    jump_y: Callable[[np.ndarray, np.ndarray, int], np.ndarray]
    jump_y_gain: Callable[[np.ndarray, np.ndarray, int], np.ndarray]

    @staticmethod
    def zero(n: int, q: int, m: int) -> "ImpulseMaps":
        jx, jxg = _zero_jump(n, m)
        jy, jyg = _zero_jump(q, m)
        return ImpulseMaps(jx, jxg, lambda x, y, k: jy(), lambda x, y, k: jyg())


@dataclass(frozen=True)
class ImpulseSchedule:
    """Strictly increasing impulse times t_0 = 0 < t_1 < ..., generated lazily.

    `time_fn(k)` returns t_k; `dt_under` and `dt_over` are the infimum and
    supremum of the gaps, with 0 < dt_under <= dt_over < inf so the schedule
    is unbounded without ever being stored.
    """

    time_fn: Callable[[int], float]
    dt_under: float
    dt_over: float

    def __post_init__(self):
        if not (0.0 < self.dt_under <= self.dt_over < math.inf):
            raise ValueError("need 0 < dt_under <= dt_over < inf")
        if abs(self.time_fn(0)) > 1e-12:
            raise ValueError("schedule must start at t_0 = 0")

    @staticmethod
    def equal_gaps(dt: float) -> "ImpulseSchedule":
        if dt <= 0:
            raise ValueError("dt must be positive")
        return ImpulseSchedule(lambda k: k * dt, dt, dt)

    def time(self, k: int) -> float:
        if k < 0:
            raise ValueError("impulse index must be nonnegative")
        return float(self.time_fn(k))


@dataclass(frozen=True)
class SideSystem:
    """Full hybrid system: continuous flow of (x, y) plus scheduled jumps.

    Between impulses
        dx = drift_x(x, t) dt + diffusion_x(x, t) dB,
        dy = drift_y(x, y, t) dt + diffusion_y(x, y, t) dB,
    and at each impulse time both states jump through `jumps` driven by a
    fresh standard-normal draw.  `lipschitz_x` / `lipschitz_y` declare the
    global Lipschitz constants of the x-maps and the coupled (x, y)-maps.
    """

    n: int
    q: int
    noise_dim: int
    drift_x: Callable[[np.ndarray, float], np.ndarray]
    diffusion_x: Callable[[np.ndarray, float], np.ndarray]
    drift_y: Callable[[np.ndarray, np.ndarray, float], np.ndarray]
    diffusion_y: Callable[[np.ndarray, np.ndarray, float], np.ndarray]
    jumps: ImpulseMaps
    schedule: ImpulseSchedule
    lipschitz_x: float
    lipschitz_y: float

    def __post_init__(self):
        if self.n < 1 or self.q < 0 or self.noise_dim < 0:
            raise ValueError("need n >= 1, q >= 0, noise_dim >= 0")

    @property
    def dim(self) -> int:
        return self.n + self.q

    def split(self, z) -> tuple[np.ndarray, np.ndarray]:
        z = _as_vector(z, self.dim, "z")
        return z[: self.n], z[self.n :]


@dataclass(frozen=True)
class CpsSystem:
    """An SDE paired with the stepsize of its explicit discretization.

    The coupled hybrid system it induces (difference process jumping at
    t_k = k * stepsize) is materialized by `make_cps`.
    """

    base: Sde
    stepsize: float

    def __post_init__(self):
        if self.stepsize <= 0:
            raise ValueError("stepsize must be positive")

    def to_side(self) -> SideSystem:
        return make_cps(self.base, self.stepsize)


@dataclass(frozen=True)
class QuadraticLyapunov:
    """Quadratic certificate V(x) = x^T P x with P > 0 enforced at construction."""

    p: np.ndarray

    def __post_init__(self):
        p = as_symmetric(self.p, "p")
        report = is_positive_definite(p)
        if not report:
            raise NotPositiveDefinite(
                f"P is not positive definite (lambda_min={report.lambda_min:.6g})"
            )
        object.__setattr__(self, "p", p)

    def value(self, x) -> float:
        x = _as_vector(x, self.p.shape[0])
        return float(x @ self.p @ x)

    @property
    def lower(self) -> float:
        """c1 with c1 |x|^2 <= V(x)."""
        return float(np.linalg.eigvalsh(self.p)[0])

    @property
    def upper(self) -> float:
        """c2 with V(x) <= c2 |x|^2."""
        return float(np.linalg.eigvalsh(self.p)[-1])


def make_cps(sde: Sde, dt: float) -> SideSystem:
    """Couple an SDE with its explicit one-step discretization.

    The second block y tracks the difference between the exact solution and
    the step-process numerical solution: it copies the x-dynamics between
    impulses, and at t_{k+1} = (k+1) dt jumps by
        -f(x - y) dt - g(x - y) sqrt(dt) xi(k+1),
    so x - y stays piecewise constant and reproduces the one-step recursion.
    The x-block has no impulses.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    n, m = sde.dim, sde.noise_dim
    sqrt_dt = math.sqrt(dt)

    def drift_y(x, y, t):
        return sde.drift(x, t)

    def diffusion_y(x, y, t):
        return sde.diffusion(x, t)

    def jump_y(x, y, k):
        return -dt * sde.drift(x - y, 0.0)

    def jump_y_gain(x, y, k):
        return -sqrt_dt * sde.diffusion(x - y, 0.0)

    zero_x, zero_x_gain = _zero_jump(n, m)
    jumps = ImpulseMaps(
        jump_x=lambda x, k: zero_x(),
        jump_x_gain=lambda x, k: zero_x_gain(),
        jump_y=jump_y,
        jump_y_gain=jump_y_gain,
    )
    return SideSystem(
        n=n,
        q=n,
        noise_dim=m,
        drift_x=sde.drift,
        diffusion_x=sde.diffusion,
        drift_y=drift_y,
        diffusion_y=diffusion_y,
        jumps=jumps,
        schedule=ImpulseSchedule.equal_gaps(dt),
        lipschitz_x=sde.lipschitz,
        lipschitz_y=sde.lipschitz,
    )


@dataclass(frozen=True)
class CompactForm:
    """Stacked evaluators for the joint state z = (x, y).

    F and G drive dz = F(z, t) dt + G(z, t) dB between impulses; H_F and H_G
    give the jump `H_F(z, k) + H_G(z, k) @ xi(k)`.  `select_x` and `select_y`
    are the coordinate selectors x = C z, y = D z.
    """

    side: SideSystem

    @property
    def dim(self) -> int:
        return self.side.dim

    def select_x(self, z) -> np.ndarray:
        return self.side.split(z)[0]

    def select_y(self, z) -> np.ndarray:
        return self.side.split(z)[1]

    def drift(self, z, t: float = 0.0) -> np.ndarray:
        x, y = self.side.split(z)
        return np.concatenate([self.side.drift_x(x, t), self.side.drift_y(x, y, t)])

    def diffusion(self, z, t: float = 0.0) -> np.ndarray:
        x, y = self.side.split(z)
        gx = np.asarray(self.side.diffusion_x(x, t), dtype=float)
        gy = np.asarray(self.side.diffusion_y(x, y, t), dtype=float)
        return np.vstack([gx.reshape(self.side.n, -1), gy.reshape(self.side.q, -1)])

    def jump(self, z, k: int) -> np.ndarray:
        x, y = self.side.split(z)
        return np.concatenate(
            [self.side.jumps.jump_x(x, k), self.side.jumps.jump_y(x, y, k)]
        )

    def jump_gain(self, z, k: int) -> np.ndarray:
        x, y = self.side.split(z)
        gx = np.asarray(self.side.jumps.jump_x_gain(x, k), dtype=float)
        gy = np.asarray(self.side.jumps.jump_y_gain(x, y, k), dtype=float)
        return np.vstack([gx.reshape(self.side.n, -1), gy.reshape(self.side.q, -1)])


def compact_form(side: SideSystem) -> CompactForm:
    """Assemble the stacked z = (x, y) evaluators of a hybrid system."""
    return CompactForm(side)


@dataclass(frozen=True)
class ValidationReport:
    """Spot-check evidence: worst Lipschitz ratios and origin values seen."""

    max_ratio: dict[str, float]
    origin_norm: dict[str, float]
    declared: dict[str, float]
    pairs: int

    def worst(self) -> str:
        items = ", ".join(f"{k}={v:.6g}" for k, v in self.max_ratio.items())
        return f"max sampled Lipschitz ratios over {self.pairs} pairs: {items}"


def _pair_ratio(delta_val: np.ndarray, delta_arg: float) -> float:
    if delta_arg == 0.0:
        return 0.0
    return float(np.linalg.norm(delta_val) / delta_arg)


def validate(
    system: Sde | SideSystem,
    *,
    box: float = 10.0,
    pairs: int = 1000,
    seed: int = 0,
    slack: float = 1e-6,
) -> ValidationReport:
    """Spot check Lipschitz declarations and the origin equilibrium.

    Samples `pairs` point pairs uniformly on [-box, box]^dim and compares the
    observed increment ratios against the declared constants (with relative
    `slack`), and probes every evaluator at the origin.  Raises
    ValidationFailed naming the offending evaluator and sample pair; returns
    the report when everything passes.  The check is probabilistic: it
    catches gross misconfiguration, it does not prove the global property.
    """
    rng = np.random.default_rng(seed)
    max_ratio: dict[str, float] = {}
    origin_norm: dict[str, float] = {}
    declared: dict[str, float] = {}

    def check_origin(name, value):
        norm = float(np.abs(np.asarray(value, dtype=float)).max(initial=0.0))
        origin_norm[name] = norm
        if norm > 0.0:
            raise ValidationFailed(f"{name}(0) = {norm:.6g} != 0: origin is not an equilibrium")

    def check_ratio(name, bound, ratio, a, b):
        max_ratio[name] = max(max_ratio.get(name, 0.0), ratio)
        declared[name] = bound
        if ratio > bound * (1.0 + slack):
            raise ValidationFailed(
                f"{name} violates its Lipschitz declaration: ratio {ratio:.6g} > {bound:.6g} "
                f"between {np.asarray(a).tolist()} and {np.asarray(b).tolist()}"
            )

    if isinstance(system, SideSystem):
        n, q, side = system.n, system.q, system
        zeros_x, zeros_y = np.zeros(n), np.zeros(q)
        check_origin("drift_x", side.drift_x(zeros_x, 0.0))
        check_origin("diffusion_x", side.diffusion_x(zeros_x, 0.0))
        check_origin("drift_y", side.drift_y(zeros_x, zeros_y, 0.0))
        check_origin("diffusion_y", side.diffusion_y(zeros_x, zeros_y, 0.0))
        check_origin("jump_x", side.jumps.jump_x(zeros_x, 1))
        check_origin("jump_x_gain", side.jumps.jump_x_gain(zeros_x, 1))
        check_origin("jump_y", side.jumps.jump_y(zeros_x, zeros_y, 1))
        check_origin("jump_y_gain", side.jumps.jump_y_gain(zeros_x, zeros_y, 1))
        for _ in range(pairs):
            xa, xb = rng.uniform(-box, box, (2, n))
            ya, yb = rng.uniform(-box, box, (2, max(q, 1)))[:, :q]
            t = rng.uniform(0.0, 10.0)
            k = int(rng.integers(1, 10))
            dx = float(np.linalg.norm(xa - xb))
            dxy = max(dx, float(np.linalg.norm(ya - yb)))
            for name, val in (
                ("drift_x", side.drift_x(xa, t) - side.drift_x(xb, t)),
                ("diffusion_x", side.diffusion_x(xa, t) - side.diffusion_x(xb, t)),
                ("jump_x", side.jumps.jump_x(xa, k) - side.jumps.jump_x(xb, k)),
                ("jump_x_gain", side.jumps.jump_x_gain(xa, k) - side.jumps.jump_x_gain(xb, k)),
            ):
                check_ratio(name, side.lipschitz_x, _pair_ratio(val, dx), xa, xb)
            for name, val in (
                ("drift_y", side.drift_y(xa, ya, t) - side.drift_y(xb, yb, t)),
                ("diffusion_y", side.diffusion_y(xa, ya, t) - side.diffusion_y(xb, yb, t)),
                ("jump_y", side.jumps.jump_y(xa, ya, k) - side.jumps.jump_y(xb, yb, k)),
                ("jump_y_gain", side.jumps.jump_y_gain(xa, ya, k) - side.jumps.jump_y_gain(xb, yb, k)),
            ):
                check_ratio(name, side.lipschitz_y, _pair_ratio(val, dxy), (xa, ya), (xb, yb))
    else:
        sde = system
        zeros = np.zeros(sde.dim)
        check_origin("drift", sde.drift(zeros, 0.0))
        check_origin("diffusion", sde.diffusion(zeros, 0.0))
        bound = sde.lipschitz
        for _ in range(pairs):
            a, b = rng.uniform(-box, box, (2, sde.dim))
            t = rng.uniform(0.0, 10.0)
            d = float(np.linalg.norm(a - b))
            check_ratio("drift", bound, _pair_ratio(sde.drift(a, t) - sde.drift(b, t), d), a, b)
            check_ratio(
                "diffusion", bound, _pair_ratio(sde.diffusion(a, t) - sde.diffusion(b, t), d), a, b
            )

    return ValidationReport(max_ratio, origin_norm, declared, pairs)
