"""Reduced value/safety PDEs, the finite-difference reference solver, PDE
residual evaluation, and the Riccati oracle for linear-quadratic presets.

Both PDE kinds march the same parabolic form forward in an internal time s:

    value   (s = T - t):  u_s = drift . grad u + 1/2 diag . hess u - r u
    safety  (s = t):      u_s = drift . grad u + 1/2 diag . hess u

with data at s = 0 (terminal data for value problems, the safe-set indicator
for safety problems).  The solver is Crank-Nicolson (Peaceman-Rachford ADI
for k = 2) with the reaction term handled by symmetric Strang factors
exp(-r dt / 2), per-node first-order upwinding of the drift wherever the
cell Peclet number exceeds 2, and two implicit startup steps (Rannacher
smoothing) for the discontinuous safety initial data.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.linalg import solve_banded

from .errors import DomainError, RiccatiBlowupError, UsageError

__all__ = [
    "PdeProblem",
    "FdSolution",
    "LqSpec",
    "assemble_value_pde",
    "assemble_safety_pde",
    "solve_fd",
    "residual",
    "riccati_solution",
    "riccati_value",
]


@dataclass
class PdeProblem:
    """Parabolic problem on a hyper-rectangle.

    ``drift``, ``diffusion_diag``: (N, k) -> (N, k); ``reaction``, ``data``:
    (N, k) -> (N,).  ``data`` is terminal data for kind="value" (backward
    problem) and initial data for kind="safety" (forward problem).
    ``boundary`` is "dirichlet-data" (far field pinned to the data function)
    or "reflect" (mirror/Neumann faces).  ``barrier`` defines the safe set
    {barrier >= 0} for safety problems; nodes outside are pinned to zero.
    """

    kind: str
    k: int
    drift: Callable
    diffusion_diag: Callable
    reaction: Callable
    data: Callable
    domain: Sequence[tuple]
    horizon: float
    boundary: str = "dirichlet-data"
    barrier: Optional[Callable] = None

    def __post_init__(self):
        if self.kind not in ("value", "safety"):
            raise UsageError(f"unknown problem kind {self.kind!r}")
        if self.boundary not in ("dirichlet-data", "reflect"):
            raise UsageError(f"unknown boundary treatment {self.boundary!r}")
        self.domain = [tuple(map(float, ab)) for ab in self.domain]
        if len(self.domain) != self.k:
            raise UsageError("domain must list one interval per coordinate")
        for lo, hi in self.domain:
            if not lo < hi:
                raise UsageError(f"empty domain interval ({lo}, {hi})")
        if self.horizon <= 0:
            raise UsageError("horizon must be positive")
        if self.kind == "safety" and self.barrier is None:
            raise UsageError("safety problems need a barrier function")

    @property
    def time_direction(self) -> str:
        return "backward" if self.kind == "value" else "forward"


def assemble_value_pde(reduced, r, terminal_weight, domain, horizon) -> PdeProblem:
    """Backward problem r*u - u_t - drift.grad u - 1/2 diag.hess u = 0 with
    terminal data exp(-terminal_weight * r(xi))."""
    k = reduced.k
    alpha = list(reduced.alpha)
    beta = list(reduced.beta)

    def drift(xi):
        xi = np.atleast_2d(xi)
        return np.column_stack(
            [np.asarray(alpha[i](xi[:, i])) * np.asarray(beta[i](xi[:, i]))
             for i in range(k)]
        )

    def diffusion_diag(xi):
        xi = np.atleast_2d(xi)
        return np.column_stack(
            [np.broadcast_to(np.asarray(alpha[i](xi[:, i]), dtype=np.float64),
                             (xi.shape[0],))
             for i in range(k)]
        )

    w = float(terminal_weight)

    def data(xi):
        return np.exp(-w * np.asarray(r(np.atleast_2d(xi)), dtype=np.float64))

    problem = PdeProblem(
        kind="value",
        k=k,
        drift=drift,
        diffusion_diag=diffusion_diag,
        reaction=lambda xi: np.asarray(r(np.atleast_2d(xi)), dtype=np.float64),
        data=data,
        domain=list(domain),
        horizon=float(horizon),
        boundary="dirichlet-data",
    )
    _validate_diffusion_positive(problem)
    return problem


def assemble_safety_pde(reduced, r, domain, horizon) -> PdeProblem:
    """Forward exit problem: F = 1 on the safe set {r >= 0} initially, F
    pinned to 0 outside it, reflecting far-field faces."""
    k = reduced.k
    alpha = list(reduced.alpha)
    beta = list(reduced.beta)

    def drift(xi):
        xi = np.atleast_2d(xi)
        return np.column_stack(
            [np.asarray(alpha[i](xi[:, i])) * np.asarray(beta[i](xi[:, i]))
             for i in range(k)]
        )

    def diffusion_diag(xi):
        xi = np.atleast_2d(xi)
        return np.column_stack(
            [np.broadcast_to(np.asarray(alpha[i](xi[:, i]), dtype=np.float64),
                             (xi.shape[0],))
             for i in range(k)]
        )

    def barrier(xi):
        return np.asarray(r(np.atleast_2d(xi)), dtype=np.float64)

    problem = PdeProblem(
        kind="safety",
        k=k,
        drift=drift,
        diffusion_diag=diffusion_diag,
        reaction=lambda xi: np.zeros(np.atleast_2d(xi).shape[0]),
        data=lambda xi: (barrier(xi) > 0).astype(np.float64),
        domain=list(domain),
        horizon=float(horizon),
        boundary="reflect",
        barrier=barrier,
    )
    _validate_diffusion_positive(problem)
    probe = _coarse_mesh(problem.domain, 21)
    if not (barrier(probe) > 0).any():
        raise DomainError("safe set {r >= 0} has empty interior on the domain")
    return problem


def _coarse_mesh(domain, n_per_axis):
    axes = [np.linspace(lo, hi, n_per_axis) for lo, hi in domain]
    grids = np.meshgrid(*axes, indexing="ij")
    return np.column_stack([g.ravel() for g in grids])


def _validate_diffusion_positive(problem: PdeProblem):
    probe = _coarse_mesh(problem.domain, 21)
    diag = np.asarray(problem.diffusion_diag(probe), dtype=np.float64)
    if not np.all(diag > 0):
        j = int(np.flatnonzero(~(diag > 0).all(axis=1))[0])
        raise DomainError(
            f"diffusion diagonal is not positive at xi = {probe[j]}"
        )


# ---------------------------------------------------------------------------
# finite-difference engine


def _axis_nodes(lo, hi, h):
    n = round((hi - lo) / h)
    if n < 2 or abs(n * h - (hi - lo)) > 1e-9 * (hi - lo):
        raise UsageError(
            f"spacing {h} does not resolve [{lo}, {hi}] into whole cells"
        )
    return lo + h * np.arange(n + 1)


class _FdEngine:
    """Precomputed stencils + step routine for one problem/grid pair."""

    def __init__(self, problem: PdeProblem, d_xi, dt):
        self.problem = problem
        k = problem.k
        if k not in (1, 2):
            raise UsageError("the finite-difference oracle supports k <= 2")
        d_xi = [float(h) for h in np.atleast_1d(d_xi)]
        if len(d_xi) == 1 and k > 1:
            d_xi = d_xi * k
        if len(d_xi) != k:
            raise UsageError("d_xi must supply one spacing per coordinate")
        self.d_xi = d_xi
        self.dt = float(dt)
        if self.dt <= 0:
            raise UsageError("dt must be positive")
        self.n_steps = round(problem.horizon / self.dt)
        if (
            self.n_steps < 1
            or abs(self.n_steps * self.dt - problem.horizon)
            > 1e-9 * problem.horizon
        ):
            raise UsageError("dt does not resolve the horizon into whole steps")

        self.axes = [
            _axis_nodes(lo, hi, h) for (lo, hi), h in zip(problem.domain, d_xi)
        ]
        self.shape = tuple(len(ax) for ax in self.axes)
        grids = np.meshgrid(*self.axes, indexing="ij")
        mesh = np.column_stack([g.ravel() for g in grids])

        drift = np.asarray(problem.drift(mesh), dtype=np.float64)
        diag = np.asarray(problem.diffusion_diag(mesh), dtype=np.float64)
        react = np.asarray(problem.reaction(mesh), dtype=np.float64)
        self.g_mesh = np.asarray(problem.data(mesh), dtype=np.float64).reshape(
            self.shape
        )
        self.react_half = np.exp(-0.5 * self.dt * react.reshape(self.shape))
        self.has_reaction = bool(np.any(react != 0.0))

        if problem.kind == "safety":
            # strict interior: the barrier zero level set is Dirichlet 0
            self.inside = (
                np.asarray(problem.barrier(mesh), dtype=np.float64) > 0
            ).reshape(self.shape)
            self.rannacher_steps = 2
            self.max_clip = 0.0  # largest probability-range trim applied
        else:
            self.inside = None
            self.rannacher_steps = 0

        self.upwind_fraction = []
        self.stencils = []  # per axis: (lo, di, up) arrays of grid shape
        for ax in range(k):
            v = drift[:, ax].reshape(self.shape)
            dd = 0.5 * diag[:, ax].reshape(self.shape)
            h = d_xi[ax]
            pe = np.abs(v) * h / dd
            upw = pe > 2.0
            self.upwind_fraction.append(float(upw.mean()))

            lo_c = dd / h**2 - v / (2 * h)
            up_c = dd / h**2 + v / (2 * h)
            di_c = -2 * dd / h**2
            # first-order upwinding where central weights lose positivity
            vp = np.maximum(v, 0.0)
            vm = np.minimum(v, 0.0)
            lo_u = dd / h**2 - vm / h
            up_u = dd / h**2 + vp / h
            di_u = -2 * dd / h**2 - (vp - vm) / h
            lo = np.where(upw, lo_u, lo_c)
            up = np.where(upw, up_u, up_c)
            di = np.where(upw, di_u, di_c)

            first = [slice(None)] * k
            last = [slice(None)] * k
            first[ax] = 0
            last[ax] = -1
            first, last = tuple(first), tuple(last)
            if problem.boundary == "reflect":
                # mirror ghost: u'' -> 2(u_in - u_edge)/h^2, drift one-sided
                absv = np.abs(v)
                up[first] = 2 * dd[first] / h**2 + absv[first] / h
                di[first] = -2 * dd[first] / h**2 - absv[first] / h
                lo[last] = 2 * dd[last] / h**2 + absv[last] / h
                di[last] = -2 * dd[last] / h**2 - absv[last] / h
                lo[first] = 0.0
                up[last] = 0.0
            else:
                # Dirichlet rows act as identity; values clamped to data
                for edge in (first, last):
                    lo[edge] = 0.0
                    di[edge] = 0.0
                    up[edge] = 0.0
            if self.inside is not None:
                outside = ~self.inside
                lo[outside] = 0.0
                di[outside] = 0.0
                up[outside] = 0.0
            self.stencils.append((lo, di, up))

        if any(f > 0 for f in self.upwind_fraction):
            pct = ", ".join(
                f"axis {i + 1}: {100 * f:.1f}%"
                for i, f in enumerate(self.upwind_fraction)
                if f > 0
            )
            warnings.warn(
                f"cell Peclet number exceeds 2 ({pct}); "
                "first-order upwinding engaged at those nodes"
            )

        self._edge_mask = np.zeros(self.shape, dtype=bool)
        for ax in range(k):
            sl = [slice(None)] * k
            sl[ax] = 0
            self._edge_mask[tuple(sl)] = True
            sl[ax] = -1
            self._edge_mask[tuple(sl)] = True

    # -- one-dimensional building blocks (axis 0 of the passed array) -------

    @staticmethod
    def _apply_axis0(stencil, u):
        lo, di, up = stencil
        out = di * u
        out[1:] += lo[1:] * u[:-1]
        out[:-1] += up[:-1] * u[1:]
        return out

    @staticmethod
    def _solve_axis0(stencil, c, rhs):
        """Thomas solve of (I - c*A) x = rhs down axis 0, vectorized over
        the remaining axes."""
        lo, di, up = stencil
        a = -c * lo
        b = 1.0 - c * di
        cc = -c * up
        n = rhs.shape[0]
        cp = np.empty_like(rhs)
        dp = np.empty_like(rhs)
        cp[0] = cc[0] / b[0]
        dp[0] = rhs[0] / b[0]
        for i in range(1, n):
            m = b[i] - a[i] * cp[i - 1]
            cp[i] = cc[i] / m
            dp[i] = (rhs[i] - a[i] * dp[i - 1]) / m
        x = np.empty_like(rhs)
        x[-1] = dp[-1]
        for i in range(n - 2, -1, -1):
            x[i] = dp[i] - cp[i] * x[i + 1]
        return x

    def _apply(self, ax, u):
        if ax == 0:
            return self._apply_axis0(self.stencils[0], u)
        st = tuple(s.T for s in self.stencils[1])
        return self._apply_axis0(st, u.T).T

    def _solve(self, ax, c, rhs):
        if self.problem.k == 1:
            lo, di, up = self.stencils[0]
            ab = np.zeros((3, rhs.shape[0]))
            ab[0, 1:] = -c * up[:-1]
            ab[1, :] = 1.0 - c * di
            ab[2, :-1] = -c * lo[1:]
            return solve_banded((1, 1), ab, rhs)
        if ax == 0:
            return self._solve_axis0(self.stencils[0], c, rhs)
        st = tuple(s.T for s in self.stencils[1])
        return np.ascontiguousarray(self._solve_axis0(st, c, rhs.T).T)

    def _clamp(self, u):
        if self.problem.boundary == "dirichlet-data":
            u[self._edge_mask] = self.g_mesh[self._edge_mask]
        if self.inside is not None:
            u[~self.inside] = 0.0
            # probabilities live in [0,1]; trim roundoff drift and record the
            # largest trim so tests can confirm nothing real was masked
            excess = max(float(-u.min()), float(u.max() - 1.0), 0.0)
            if excess > self.max_clip:
                self.max_clip = excess
            np.clip(u, 0.0, 1.0, out=u)
        return u

    def step(self, u, step_index):
        """Advance one dt from step_index; pure given (u, step_index)."""
        half = 0.5 * self.dt
        if self.has_reaction:
            u = u * self.react_half
        if step_index < self.rannacher_steps:
            # damped startup: each dt is two implicit-Euler half-steps
            for _ in range(2):
                u = self._solve(0, half, u)
                if self.problem.k == 2:
                    u = self._clamp(u)
                    u = self._solve(1, half, u)
                u = self._clamp(u)
        elif self.problem.k == 1:
            u = self._solve(0, half, u + half * self._apply(0, u))
        else:
            u = u + half * self._apply(1, u)
            u = self._solve(0, half, u)
            u = self._clamp(u)
            u = u + half * self._apply(0, u)
            u = self._solve(1, half, u)
        if self.has_reaction:
            u = u * self.react_half
        return self._clamp(u)

    def initial(self):
        return self._clamp(self.g_mesh.copy())


@dataclass
class FdSolution:
    """Saved space-time slices of a finite-difference solve.

    ``times`` ascend in physical time t; ``values`` has shape
    (len(times), *grid).  Slices are saved every ``save_every`` steps (plus
    the final step); ``verify`` re-marches between consecutive saved slices
    and confirms the stored values reproduce the scheme exactly.
    """

    problem: PdeProblem
    axes: list
    times: np.ndarray
    values: np.ndarray
    d_xi: list
    dt: float
    metadata: dict
    saved_steps: list
    _engine: _FdEngine = field(repr=False, default=None)

    def interpolate(self, xi, t):
        xi = np.atleast_2d(np.asarray(xi, dtype=np.float64))
        tt = np.broadcast_to(np.asarray(t, dtype=np.float64), (xi.shape[0],))
        scalar = np.isscalar(t) and xi.shape[0] == 1
        grids = [self.times] + list(self.axes)
        pts = np.column_stack([tt, xi])
        idx, wts = [], []
        for d, ax in enumerate(grids):
            p = pts[:, d]
            if (p < ax[0] - 1e-12).any() or (p > ax[-1] + 1e-12).any():
                bad = p[(p < ax[0] - 1e-12) | (p > ax[-1] + 1e-12)][0]
                what = "t" if d == 0 else f"xi{d}"
                raise DomainError(
                    f"{what} = {bad:.6g} outside the solved grid "
                    f"[{ax[0]:.6g}, {ax[-1]:.6g}]"
                )
            i = np.clip(np.searchsorted(ax, p, side="right") - 1, 0,
                        len(ax) - 2)
            w = (p - ax[i]) / (ax[i + 1] - ax[i])
            idx.append(i)
            wts.append(np.clip(w, 0.0, 1.0))
        out = np.zeros(xi.shape[0])
        ndim = len(grids)
        for corner in range(2**ndim):
            sel = []
            weight = np.ones(xi.shape[0])
            for d in range(ndim):
                hi = (corner >> d) & 1
                sel.append(idx[d] + hi)
                weight = weight * (wts[d] if hi else 1.0 - wts[d])
            out += weight * self.values[tuple(sel)]
        return float(out[0]) if scalar else out

    def to_csv(self, path):
        """Rows `xi1,...,xik,t,value`, ascending t then lexicographic nodes."""
        k = self.problem.k
        grids = np.meshgrid(*self.axes, indexing="ij")
        nodes = np.column_stack([g.ravel() for g in grids])
        blocks = []
        for j, t in enumerate(self.times):
            tcol = np.full((nodes.shape[0], 1), t)
            blocks.append(
                np.hstack([nodes, tcol, self.values[j].reshape(-1, 1)])
            )
        body = np.vstack(blocks)
        header = ",".join(f"xi{i + 1}" for i in range(k)) + ",t,value"
        np.savetxt(path, body, delimiter=",", header=header, comments="",
                   fmt="%.17g")

    def verify(self, n_pairs=None):
        """Re-march between saved slices; True iff stored values reproduce."""
        kind = self.problem.kind
        order = np.arange(len(self.times))
        if kind == "value":  # marching order is descending physical time
            order = order[::-1]
        pairs = list(zip(order[:-1], order[1:]))
        if n_pairs is not None:
            pairs = pairs[: int(n_pairs)]
        for j0, j1 in pairs:
            u = self.values[j0].copy()
            s0 = self.saved_steps[list(order).index(j0)]
            s1 = self.saved_steps[list(order).index(j1)]
            for s in range(s0, s1):
                u = self._engine.step(u, s)
            if not np.array_equal(u, self.values[j1]):
                return False
        return True


def solve_fd(problem: PdeProblem, d_xi, dt, save_every: int = 1) -> FdSolution:
    """March the problem over its horizon, saving every save_every-th slice."""
    engine = _FdEngine(problem, d_xi, dt)
    if save_every < 1:
        raise UsageError("save_every must be >= 1")
    u = engine.initial()
    slices = [u.copy()]
    steps_saved = [0]
    for s in range(engine.n_steps):
        u = engine.step(u, s)
        if (s + 1) % save_every == 0 or s + 1 == engine.n_steps:
            slices.append(u.copy())
            steps_saved.append(s + 1)
    s_times = dt * np.asarray(steps_saved, dtype=np.float64)
    vals = np.stack(slices)
    if problem.kind == "value":
        times = problem.horizon - s_times[::-1]
        vals = vals[::-1]
        saved = steps_saved  # kept in marching order for verify()
    else:
        times = s_times
        saved = steps_saved
    metadata = {
        "scheme": "crank-nicolson" if problem.k == 1 else
        "crank-nicolson-adi",
        "upwind_fraction": engine.upwind_fraction,
        "rannacher_steps": engine.rannacher_steps,
        "save_every": save_every,
        "n_steps": engine.n_steps,
    }
    if problem.kind == "safety":
        metadata["max_clip_correction"] = engine.max_clip
    return FdSolution(
        problem=problem,
        axes=engine.axes,
        times=np.ascontiguousarray(times),
        values=np.ascontiguousarray(vals),
        d_xi=engine.d_xi,
        dt=engine.dt,
        metadata=metadata,
        saved_steps=saved,
        _engine=engine,
    )


def residual(problem: PdeProblem, candidate, xi, t):
    """Signed PDE residual of a candidate solution at (xi, t).

    ``candidate(xi, t)`` must return (u, u_t, grad, hess_diag) with shapes
    (N,), (N,), (N, k), (N, k); u_t is the physical time derivative.  For
    value problems the residual is r u - u_t - drift.grad - 1/2 diag.hess;
    for safety problems it is u_t - drift.grad - 1/2 diag.hess.
    """
    xi = np.atleast_2d(np.asarray(xi, dtype=np.float64))
    tt = np.broadcast_to(np.asarray(t, dtype=np.float64), (xi.shape[0],))
    scalar = np.isscalar(t) and xi.shape[0] == 1
    u, u_t, grad, hess = candidate(xi, tt)
    u = np.asarray(u, dtype=np.float64).reshape(xi.shape[0])
    u_t = np.asarray(u_t, dtype=np.float64).reshape(xi.shape[0])
    grad = np.asarray(grad, dtype=np.float64).reshape(xi.shape)
    hess = np.asarray(hess, dtype=np.float64).reshape(xi.shape)
    drift = np.asarray(problem.drift(xi), dtype=np.float64)
    diag = np.asarray(problem.diffusion_diag(xi), dtype=np.float64)
    transport = (drift * grad).sum(axis=1) + 0.5 * (diag * hess).sum(axis=1)
    if problem.kind == "value":
        r = np.asarray(problem.reaction(xi), dtype=np.float64)
        w = r * u - u_t - transport
    else:
        w = u_t - transport
    return float(w[0]) if scalar else w


# ---------------------------------------------------------------------------
# Riccati oracle


@dataclass
class LqSpec:
    """Linear-quadratic reduced preset: d xi = M xi dt + Sigma^{1/2} dB,
    running cost xi^T R xi, terminal data exp(-xi^T R_T xi)."""

    M: np.ndarray
    Sigma: np.ndarray
    R: np.ndarray
    R_T: np.ndarray
    horizon: float

    def __post_init__(self):
        self.M = np.atleast_2d(np.asarray(self.M, dtype=np.float64))
        self.Sigma = np.atleast_2d(np.asarray(self.Sigma, dtype=np.float64))
        self.R = np.atleast_2d(np.asarray(self.R, dtype=np.float64))
        self.R_T = np.atleast_2d(np.asarray(self.R_T, dtype=np.float64))
        k = self.M.shape[0]
        for name, mat in (("M", self.M), ("Sigma", self.Sigma),
                          ("R", self.R), ("R_T", self.R_T)):
            if mat.shape != (k, k):
                raise UsageError(f"{name} must be {k}x{k}")
        if self.horizon <= 0:
            raise UsageError("horizon must be positive")

    @property
    def k(self):
        return self.M.shape[0]


def riccati_solution(lq: LqSpec, t: float, step: float = 1e-4):
    """Integrate P' = M^T P + P M - 2 P Sigma P + R and q' = Tr(Sigma P)
    in time-to-go from (R_T, 0); returns (P(t), q(t)).

    exp(-xi^T P xi - q) then matches the Feynman-Kac expectation; q is the
    log-partition correction from the diffusion acting on the quadratic.
    """
    if not 0.0 <= t <= lq.horizon + 1e-12:
        raise UsageError(f"t = {t} outside [0, {lq.horizon}]")
    tau_end = lq.horizon - t
    M, Sigma, R = lq.M, lq.Sigma, lq.R

    def rhs(P):
        return M.T @ P + P @ M - 2.0 * P @ Sigma @ P + R

    P = lq.R_T.copy()
    q = 0.0
    n_full, rem = divmod(tau_end, step)
    hs = [step] * int(n_full)
    if rem > 1e-14:
        hs.append(rem)
    tau = 0.0
    for h in hs:
        k1 = rhs(P)
        p2 = P + 0.5 * h * k1
        k2 = rhs(p2)
        p3 = P + 0.5 * h * k2
        k3 = rhs(p3)
        p4 = P + h * k3
        k4 = rhs(p4)
        q = q + (h / 6.0) * (
            np.trace(Sigma @ P)
            + 2 * np.trace(Sigma @ p2)
            + 2 * np.trace(Sigma @ p3)
            + np.trace(Sigma @ p4)
        )
        P = P + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        tau += h
        if not np.all(np.isfinite(P)) or np.abs(P).max() > 1e8:
            raise RiccatiBlowupError(
                f"Riccati solution blew up at time-to-go {tau:.6g} "
                f"(horizon too long for this preset)"
            )
    return P, q


def riccati_value(lq: LqSpec, xi, t: float, step: float = 1e-4):
    """exp(-V(xi, t)) with V = xi^T P(t) xi + q(t) from the Riccati system."""
    P, q = riccati_solution(lq, t, step)
    xi = np.atleast_2d(np.asarray(xi, dtype=np.float64))
    if xi.shape[1] != lq.k:
        raise UsageError(f"xi must have {lq.k} coordinates")
    V = np.einsum("ni,ij,nj->n", xi, P, xi) + q
    out = np.exp(-V)
    return float(out[0]) if out.shape[0] == 1 and np.ndim(t) == 0 else out
