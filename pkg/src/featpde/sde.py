"""Controlled stochastic systems and Euler-Maruyama simulation.

Full systems follow ``dx = f(x) dt + sigma(x) (u dt + dW)``; reduced feature
systems follow per-coordinate ``dxi_i = alpha_i(xi) beta_i(xi) dt +
sqrt(alpha_i(xi)) dB_i``.

Drift, diffusion, alpha and beta callables are vectorized: they accept a
batch of states shaped (N, d) and return (N, d), (N, d, m) (or a constant
(d, m) matrix), and (N,) respectively.  A plain (d,) vector works too.

Randomness is counter-based: the Gaussian increments for step ``s`` of a run
come from ``Philox(key=(seed, s))``, and path ``i`` reads row ``i`` of that
step's (N, m) draw.  Consequences used elsewhere in the package:

* path ``i``'s noise sequence is a pure function of (seed, i) -- independent
  across paths, reproducible, and unchanged when N grows or shrinks;
* extending the horizon appends steps without disturbing earlier ones, so
  survival indicators are comparable path-by-path across horizons;
* simulating with a different control policy under the same seed reuses the
  identical increments (Girsanov-style reuse for importance sampling).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import DomainError, SimulationError, UsageError

__all__ = [
    "StochasticSystem",
    "ControlPolicy",
    "ZeroPolicy",
    "SimConfig",
    "TrajectoryBatch",
    "simulate",
    "simulate_reduced",
    "step_noise",
]


@dataclass
class StochasticSystem:
    """Drift/diffusion description of a controlled diffusion.

    ``drift``: states (N, n) -> (N, n).  ``diffusion``: states (N, n) ->
    (N, n, m), or a constant (n, m) array for state-independent noise (set
    ``diffusion_const`` instead for the fast path).
    """

    state_dim: int
    control_dim: int
    drift: Callable[[np.ndarray], np.ndarray]
    diffusion: Optional[Callable[[np.ndarray], np.ndarray]] = None
    diffusion_const: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.state_dim <= 0 or self.control_dim <= 0:
            raise UsageError("state_dim and control_dim must be positive")
        if (self.diffusion is None) == (self.diffusion_const is None):
            raise UsageError(
                "exactly one of diffusion / diffusion_const is required"
            )
        if self.diffusion_const is not None:
            self.diffusion_const = np.asarray(
                self.diffusion_const, dtype=np.float64
            )
            if self.diffusion_const.shape != (self.state_dim, self.control_dim):
                raise UsageError(
                    f"diffusion_const must be (n, m) = "
                    f"({self.state_dim}, {self.control_dim})"
                )

    def sigma_at(self, x: np.ndarray) -> np.ndarray:
        """Diffusion matrix batch (N, n, m) at states (N, n)."""
        if self.diffusion_const is not None:
            return np.broadcast_to(
                self.diffusion_const,
                (x.shape[0], self.state_dim, self.control_dim),
            )
        out = np.asarray(self.diffusion(x), dtype=np.float64)
        if out.shape != (x.shape[0], self.state_dim, self.control_dim):
            raise SimulationError(
                f"diffusion returned shape {out.shape}, expected "
                f"({x.shape[0]}, {self.state_dim}, {self.control_dim})"
            )
        return out


class ControlPolicy:
    """State-feedback control u(x, t): (N, n), t -> (N, m)."""

    def __init__(self, policy: Callable[[np.ndarray, float], np.ndarray]):
        self._policy = policy

    def __call__(self, x: np.ndarray, t: float) -> np.ndarray:
        return np.asarray(self._policy(x, t), dtype=np.float64)


class ZeroPolicy(ControlPolicy):
    """The uncontrolled policy u == 0 (sampling measure for path integrals)."""

    def __init__(self, control_dim: int):
        self.control_dim = control_dim
        super().__init__(lambda x, t: np.zeros((x.shape[0], control_dim)))


@dataclass(frozen=True)
class SimConfig:
    """Time step, horizon, seed and path count for one simulation run."""

    dt: float
    horizon: float
    seed: int
    n_paths: int

    def __post_init__(self):
        if self.dt <= 0 or self.horizon <= 0:
            raise UsageError("dt and horizon must be positive")
        if self.n_paths <= 0:
            raise UsageError("n_paths must be positive")
        if not 0 <= int(self.seed) < 2**64:
            raise UsageError("seed must fit in 64 unsigned bits")
        steps = round(self.horizon / self.dt)
        if steps < 1 or abs(steps * self.dt - self.horizon) > 1e-9 * self.horizon:
            raise UsageError(
                f"horizon {self.horizon} is not an integer number of steps "
                f"of dt={self.dt} (within 1e-9 relative)"
            )

    @property
    def steps(self) -> int:
        return round(self.horizon / self.dt)


@dataclass
class TrajectoryBatch:
    """N paths on a shared uniform time grid; states is (N, steps+1, d)."""

    times: np.ndarray
    states: np.ndarray
    seed_used: int

    @property
    def n_paths(self) -> int:
        return self.states.shape[0]

    def to_csv(self, path: str):
        """Rows `path,t,x1,...,xd`, path-major then time."""
        n, s, d = self.states.shape
        header = "path,t," + ",".join(f"x{i + 1}" for i in range(d))
        idx = np.repeat(np.arange(n), s)
        tt = np.tile(self.times, n)
        flat = self.states.reshape(n * s, d)
        body = np.column_stack([idx, tt, flat])
        fmt = ["%d", "%.17g"] + ["%.17g"] * d
        np.savetxt(path, body, delimiter=",", header=header, comments="",
                   fmt=fmt)


def step_noise(seed: int, step: int, n: int, m: int) -> np.ndarray:
    """Standard-normal increments (n, m) for one step; pure in (seed, step)."""
    bitgen = np.random.Philox(key=np.array([seed, step], dtype=np.uint64))
    return np.random.Generator(bitgen).standard_normal((n, m))


def _check_finite(x: np.ndarray, step: int, what: str):
    rowsum = x.reshape(x.shape[0], -1).sum(axis=1)
    bad = ~np.isfinite(rowsum)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise SimulationError(
            f"non-finite {what} on path {i} at step {step}: "
            f"state/value row {np.asarray(x[i]).ravel()[:8]}"
        )


def _run_full(system, policy, x0, cfg, t0, observer):
    """March the full system, calling observer(step, t, x, z) each step.

    ``observer`` is called once with (0, t0, x, None) for the initial state,
    then after every Euler-Maruyama update with the post-step state and the
    standard-normal draw that produced it.
    """
    n = cfg.n_paths
    x0 = np.asarray(x0, dtype=np.float64)
    if x0.shape != (system.state_dim,):
        raise UsageError(
            f"x0 must have length {system.state_dim}, got shape {x0.shape}"
        )
    x = np.tile(x0, (n, 1))
    dt = cfg.dt
    sq = np.sqrt(dt)
    const_diag = None
    if system.diffusion_const is not None and system.state_dim == system.control_dim:
        d = np.diagonal(system.diffusion_const)
        if np.array_equal(system.diffusion_const, np.diag(d)):
            const_diag = d.copy()
    observer(0, t0, x, None)
    for s in range(cfg.steps):
        t = t0 + s * dt
        z = step_noise(cfg.seed, s, n, system.control_dim)
        f = np.asarray(system.drift(x), dtype=np.float64)
        _check_finite(f, s, "drift")
        u = policy(x, t)
        du = u * dt + z * sq
        if const_diag is not None:
            noise = du * const_diag
        elif system.diffusion_const is not None:
            noise = du @ system.diffusion_const.T
        else:
            sig = system.sigma_at(x)
            _check_finite(sig, s, "diffusion")
            noise = np.einsum("nij,nj->ni", sig, du)
        x = x + f * dt + noise
        observer(s + 1, t + dt, x, z)
    return x


def _run_reduced(reduced, xi0, cfg, t0, observer):
    """March the reduced feature SDE (diagonal, per-coordinate alpha/beta)."""
    k = reduced.k
    xi0 = np.asarray(xi0, dtype=np.float64)
    if xi0.shape != (k,):
        raise UsageError(f"xi0 must have length {k}, got shape {xi0.shape}")
    n = cfg.n_paths
    xi = np.tile(xi0, (n, 1))
    dt = cfg.dt
    sq = np.sqrt(dt)
    observer(0, t0, xi, None)
    for s in range(cfg.steps):
        z = step_noise(cfg.seed, s, n, k)
        drift = np.empty_like(xi)
        diff = np.empty_like(xi)
        for i in range(k):
            a = np.asarray(reduced.alpha[i](xi[:, i]), dtype=np.float64)
            bad = ~(a > 0)
            if bad.any():
                j = int(np.flatnonzero(bad)[0])
                raise DomainError(
                    f"alpha_{i + 1} <= 0 at xi_{i + 1} = {xi[j, i]:.6g} "
                    f"(path {j}, step {s})"
                )
            b = np.asarray(reduced.beta[i](xi[:, i]), dtype=np.float64)
            drift[:, i] = a * b
            diff[:, i] = np.sqrt(a)
        _check_finite(drift, s, "reduced drift")
        xi = xi + drift * dt + diff * z * sq
        observer(s + 1, t0 + (s + 1) * dt, xi, z)
    return xi


def simulate(
    system: StochasticSystem,
    policy: ControlPolicy,
    x0,
    cfg: SimConfig,
    t0: float = 0.0,
) -> TrajectoryBatch:
    """Euler-Maruyama paths of the full system; materializes all states."""
    times = t0 + cfg.dt * np.arange(cfg.steps + 1)
    states = np.empty((cfg.n_paths, cfg.steps + 1, system.state_dim))

    def observer(s, t, x, z):
        states[:, s, :] = x

    _run_full(system, policy, x0, cfg, t0, observer)
    return TrajectoryBatch(times=times, states=states, seed_used=cfg.seed)


def simulate_reduced(reduced, xi0, cfg: SimConfig, t0: float = 0.0) -> TrajectoryBatch:
    """Euler-Maruyama paths of a reduced feature SDE."""
    times = t0 + cfg.dt * np.arange(cfg.steps + 1)
    states = np.empty((cfg.n_paths, cfg.steps + 1, reduced.k))

    def observer(s, t, xi, z):
        states[:, s, :] = xi

    _run_reduced(reduced, xi0, cfg, t0, observer)
    return TrajectoryBatch(times=times, states=states, seed_used=cfg.seed)
