"""Physics-informed training of dense networks against a PdeProblem.

The network maps (xi_1 .. xi_k, t) to a scalar.  Training minimizes

    omega_p * mean(residual^2 over collocation points)
  + omega_d * mean((prediction - target)^2 over data points)

with full-batch Adam.  The residual is the same expression `pde.residual`
evaluates; during training it is rebuilt from taped operations so the
parameter gradient flows through the network's input derivatives as well.
Terminal/initial conditions are not a separate loss term: they enter through
data rows on the corresponding time face.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigError, TrainingError, UsageError
from .neural import (
    AdamState,
    DenseNetwork,
    adam_step,
    derivatives_batch,
    forward,
    param_count,
)
from .pde import PdeProblem, residual as pde_residual
from .tape import grad, value_of, vmean

__all__ = [
    "PinnConfig",
    "TrainingDataset",
    "CollocationSet",
    "TrainResult",
    "physics_loss",
    "data_loss",
    "train",
    "predict_grid",
    "PredictionGrid",
]


@dataclass
class PinnConfig:
    """Loss weights, collocation budget and optimizer settings."""

    omega_p: float = 1.0
    omega_d: float = 1.0
    n_domain: int = 600
    epochs: int = 20000
    lr: float = 1e-3
    seed: int = 0
    widths: tuple = (32, 32, 32)
    batch_size: Optional[int] = None
    log_every: int = 100
    resample_collocation: bool = False

    def __post_init__(self):
        if self.omega_p < 0 or self.omega_d < 0:
            raise ConfigError("loss weights must be nonnegative")
        if self.omega_p + self.omega_d <= 0:
            raise ConfigError("at least one loss weight must be positive")
        if self.omega_p > 0 and self.n_domain < 1:
            raise ConfigError("n_domain must be >= 1 when omega_p > 0")
        if self.n_domain < 0:
            raise ConfigError("n_domain must be nonnegative")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if not self.widths:
            raise ConfigError("need at least one hidden width")
        if self.batch_size is not None and self.batch_size < 1:
            raise ConfigError("batch_size must be positive when set")
        if self.log_every < 1:
            raise ConfigError("log_every must be >= 1")


@dataclass
class TrainingDataset:
    """Supervised rows (xi, t) -> target with a provenance tag."""

    xi: np.ndarray
    t: np.ndarray
    target: np.ndarray
    provenance: str = "file"

    def __post_init__(self):
        self.xi = np.atleast_2d(np.asarray(self.xi, dtype=np.float64))
        self.t = np.asarray(self.t, dtype=np.float64).reshape(-1)
        self.target = np.asarray(self.target, dtype=np.float64).reshape(-1)
        if not (self.xi.shape[0] == self.t.size == self.target.size):
            raise UsageError(
                f"inconsistent dataset sizes: {self.xi.shape[0]} points, "
                f"{self.t.size} times, {self.target.size} targets"
            )
        if self.provenance not in ("MC", "FD", "file"):
            raise UsageError(f"unknown provenance {self.provenance!r}")
        if self.target.size and not np.all(np.isfinite(self.target)):
            raise UsageError("dataset targets must be finite")

    def __len__(self):
        return self.target.size

    @classmethod
    def from_grid(cls, axes, times, values, provenance="FD"):
        """Tensor grid -> rows.  values shaped (len(times), *grid)."""
        axes = [np.asarray(a, dtype=np.float64) for a in axes]
        times = np.asarray(times, dtype=np.float64)
        values = np.asarray(values, dtype=np.float64)
        grids = np.meshgrid(*axes, indexing="ij")
        nodes = np.column_stack([g.ravel() for g in grids])
        xi = np.tile(nodes, (times.size, 1))
        tt = np.repeat(times, nodes.shape[0])
        return cls(xi=xi, t=tt, target=values.reshape(-1),
                   provenance=provenance)

    def inputs(self) -> np.ndarray:
        return np.column_stack([self.xi, self.t])


@dataclass
class CollocationSet:
    """Unsupervised (xi, t) points where the PDE residual is penalized."""

    xi: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        self.xi = np.atleast_2d(np.asarray(self.xi, dtype=np.float64))
        self.t = np.asarray(self.t, dtype=np.float64).reshape(-1)
        if self.xi.shape[0] != self.t.size:
            raise UsageError("collocation xi/t length mismatch")

    def __len__(self):
        return self.t.size

    @classmethod
    def sample(cls, domain, horizon, n, seed):
        """n i.i.d. uniform draws over the space-time box."""
        gen = np.random.Generator(
            np.random.Philox(key=np.array([seed, 0xC0110C], dtype=np.uint64))
        )
        lo = np.array([ab[0] for ab in domain] + [0.0])
        hi = np.array([ab[1] for ab in domain] + [float(horizon)])
        pts = gen.uniform(lo, hi, size=(int(n), len(lo)))
        return cls(xi=pts[:, :-1], t=pts[:, -1])

    def inputs(self) -> np.ndarray:
        return np.column_stack([self.xi, self.t])


def _check_inside(problem: PdeProblem, xi, t, what):
    lo = np.array([ab[0] for ab in problem.domain])
    hi = np.array([ab[1] for ab in problem.domain])
    eps = 1e-9
    if (xi < lo - eps).any() or (xi > hi + eps).any():
        raise UsageError(f"{what} points fall outside the problem domain")
    if (t < -eps).any() or (t > problem.horizon + eps).any():
        raise UsageError(f"{what} times fall outside [0, {problem.horizon}]")


def physics_loss(net: DenseNetwork, problem: PdeProblem,
                 colloc: CollocationSet) -> float:
    """Mean squared PDE residual of the network over the collocation set."""
    if net.d_in != problem.k + 1:
        raise UsageError(
            f"network input width {net.d_in} != k + 1 = {problem.k + 1}"
        )
    if len(colloc) == 0:
        raise ConfigError("collocation set is empty")
    k = problem.k

    def candidate(xi, tt):
        u, jac, hess = derivatives_batch(net, np.column_stack([xi, tt]))
        return (u[:, 0], jac[:, k, 0], jac[:, :k, 0], hess[:, :k, 0])

    res = pde_residual(problem, candidate, colloc.xi, colloc.t)
    res = np.atleast_1d(res)
    return float(np.mean(res * res))


def data_loss(net: DenseNetwork, data: TrainingDataset) -> float:
    """Mean squared prediction error over the dataset."""
    if len(data) == 0:
        raise ConfigError("training dataset is empty")
    pred = forward(net, data.inputs())[:, 0]
    return float(np.mean((pred - data.target) ** 2))


def _taped_losses(net, params, problem, colloc_inputs, coeffs, data_inputs,
                  targets):
    """(L_p, L_d) as tape Vars sharing one parameter set."""
    k = problem.k
    lp = None
    if colloc_inputs is not None:
        u, jac, hess = derivatives_batch(net, colloc_inputs, params)
        drift, diag, react = coeffs
        u_flat = u[:, 0]
        u_t = jac[:, k, 0]
        transport = None
        for i in range(k):
            term = drift[:, i] * jac[:, i, 0] + 0.5 * diag[:, i] * hess[:, i, 0]
            transport = term if transport is None else transport + term
        if problem.kind == "value":
            res = react * u_flat - u_t - transport
        else:
            res = u_t - transport
        lp = vmean(res * res)
    ld = None
    if data_inputs is not None:
        pred = forward(net, data_inputs, params)[:, 0]
        diff = pred - targets
        ld = vmean(diff * diff)
    return lp, ld


@dataclass
class TrainResult:
    """Trained network plus the (epoch, L_p, L_d) log.

    ``aborted_epoch`` is set when a non-finite loss or gradient stopped
    training early; ``net`` then holds the last finite checkpoint.
    """

    net: DenseNetwork
    log: list
    collocation: CollocationSet
    aborted_epoch: Optional[int] = None

    def log_to_csv(self, path: str):
        arr = np.asarray(self.log, dtype=np.float64)
        np.savetxt(path, arr, delimiter=",",
                   header="epoch,loss_physics,loss_data", comments="",
                   fmt=("%d", "%.17g", "%.17g"))


def train(problem: PdeProblem, data: Optional[TrainingDataset],
          cfg: PinnConfig) -> TrainResult:
    """Full-batch Adam on omega_p * L_p + omega_d * L_d.

    Collocation points are drawn once from the uniform distribution on
    Omega x [0, horizon] under cfg.seed (resampled each epoch only when
    cfg.resample_collocation is set).  The log records (epoch, L_p, L_d)
    every cfg.log_every epochs plus the final epoch; parameters are
    checkpointed at each logged epoch and restored if the loss or gradient
    turns non-finite.
    """
    k = problem.k
    use_data = cfg.omega_d > 0
    use_phys = cfg.omega_p > 0
    if use_data and (data is None or len(data) == 0):
        raise ConfigError("omega_d > 0 requires a non-empty dataset")
    if data is not None and len(data):
        if data.xi.shape[1] != k:
            raise UsageError(
                f"dataset has {data.xi.shape[1]} features, problem has {k}"
            )
        _check_inside(problem, data.xi, data.t, "dataset")

    colloc = CollocationSet.sample(problem.domain, problem.horizon,
                                   max(cfg.n_domain, 1), cfg.seed)
    net = DenseNetwork.init((k + 1, *cfg.widths, 1), cfg.seed)
    adam = AdamState.init(param_count(net.widths))

    def coeffs_at(cset):
        return (
            np.asarray(problem.drift(cset.xi), dtype=np.float64),
            np.asarray(problem.diffusion_diag(cset.xi), dtype=np.float64),
            np.asarray(problem.reaction(cset.xi), dtype=np.float64),
        )

    colloc_inputs = colloc.inputs() if use_phys else None
    coeffs = coeffs_at(colloc) if use_phys else None
    full_data_inputs = data.inputs() if use_data else None
    full_targets = data.target if use_data else None

    batch_gen = None
    if use_data and cfg.batch_size is not None and cfg.batch_size < len(data):
        batch_gen = np.random.Generator(
            np.random.Philox(key=np.array([cfg.seed, 0xBA7C4], dtype=np.uint64))
        )

    log = []
    checkpoint = net.theta.copy()
    checkpoint_epoch = 0
    aborted = None

    for epoch in range(cfg.epochs):
        if cfg.resample_collocation and use_phys and epoch > 0:
            colloc = CollocationSet.sample(
                problem.domain, problem.horizon, max(cfg.n_domain, 1),
                cfg.seed + epoch
            )
            colloc_inputs = colloc.inputs()
            coeffs = coeffs_at(colloc)
        if batch_gen is not None:
            idx = batch_gen.choice(len(data), size=cfg.batch_size,
                                   replace=False)
            data_inputs = full_data_inputs[idx]
            targets = full_targets[idx]
        else:
            data_inputs, targets = full_data_inputs, full_targets

        params = net.params_as_vars()
        lp_v, ld_v = _taped_losses(
            net, params, problem,
            colloc_inputs if use_phys else None, coeffs,
            data_inputs if use_data else None, targets,
        )
        total = None
        if lp_v is not None:
            total = cfg.omega_p * lp_v
        if ld_v is not None:
            total = cfg.omega_d * ld_v if total is None else (
                total + cfg.omega_d * ld_v
            )
        lp = float(value_of(lp_v)) if lp_v is not None else 0.0
        ld = float(value_of(ld_v)) if ld_v is not None else 0.0

        if not np.isfinite(float(value_of(total))):
            net.theta = checkpoint
            aborted = epoch
            break
        leaves = [v for pair in params for v in pair]
        gs = grad(total, leaves)
        pairs = [(gs[2 * i], gs[2 * i + 1]) for i in range(len(params))]
        g = DenseNetwork.pack(pairs)
        if epoch % cfg.log_every == 0:
            log.append((epoch, lp, ld))
            checkpoint = net.theta.copy()
            checkpoint_epoch = epoch
        try:
            adam, theta = adam_step(adam, net.theta, g, cfg.lr)
        except TrainingError:
            net.theta = checkpoint
            aborted = epoch
            break
        net.theta = theta

    # closing log entry: final losses, or the restored checkpoint's losses
    lp_v, ld_v = _taped_losses(
        net, net.layer_views(), problem,
        colloc_inputs if use_phys else None, coeffs,
        full_data_inputs if use_data else None, full_targets,
    )
    lp = float(value_of(lp_v)) if lp_v is not None else 0.0
    ld = float(value_of(ld_v)) if ld_v is not None else 0.0
    closing = cfg.epochs if aborted is None else checkpoint_epoch
    if not log or log[-1][0] != closing:
        log.append((closing, lp, ld))
    return TrainResult(net=net, log=log, collocation=colloc,
                       aborted_epoch=aborted)


@dataclass
class PredictionGrid:
    """Network values on a tensor grid; mirrors the FD solution layout."""

    axes: list
    times: np.ndarray
    values: np.ndarray  # (len(times), *grid shape)

    def to_csv(self, path: str):
        k = len(self.axes)
        grids = np.meshgrid(*self.axes, indexing="ij")
        nodes = np.column_stack([g.ravel() for g in grids])
        blocks = []
        for j, t in enumerate(self.times):
            tcol = np.full((nodes.shape[0], 1), t)
            blocks.append(np.hstack([nodes, tcol,
                                     self.values[j].reshape(-1, 1)]))
        header = ",".join(f"xi{i + 1}" for i in range(k)) + ",t,value"
        np.savetxt(path, np.vstack(blocks), delimiter=",", header=header,
                   comments="", fmt="%.17g")


def predict_grid(net: DenseNetwork, axes, times) -> PredictionGrid:
    """Evaluate the network on a tensor grid of feature axes and times."""
    axes = [np.asarray(a, dtype=np.float64) for a in axes]
    times = np.atleast_1d(np.asarray(times, dtype=np.float64))
    if net.d_in != len(axes) + 1:
        raise UsageError(
            f"network input width {net.d_in} != len(axes) + 1 = "
            f"{len(axes) + 1}"
        )
    grids = np.meshgrid(*axes, indexing="ij")
    nodes = np.column_stack([g.ravel() for g in grids])
    shape = tuple(len(a) for a in axes)
    out = np.empty((times.size, *shape))
    for j, t in enumerate(times):
        x = np.column_stack([nodes, np.full(nodes.shape[0], t)])
        out[j] = forward(net, x)[:, 0].reshape(shape)
    return PredictionGrid(axes=axes, times=times, values=out)
