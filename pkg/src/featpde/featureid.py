"""Automatic feature identification with an encoder/decoder pair.

The encoder maps states to k scalar features, the decoder reconstructs the
running cost (or barrier) from the features alone.  Training minimizes

    w_rc * mean((c(x) - decoder(encoder(x)))^2)
  + w_ct * comparison-theorem penalty

where the second term drives the level coefficients a_i(x) = Dp_i S Dp_i^T
(S = sigma sigma^T) and b_i(x) = A p_i(x) / a_i(x) toward constancy on each
preimage bucket {x : p_i(x) ~ xi}.  Constant-on-level-sets coefficients are
exactly the condition under which module `reduction` can replace the full
dynamics with k scalar SDEs, so a small penalty certifies the learned
features, not just the reconstruction.

The penalty differentiates a_i and b_i in the STATE by central differences
(step 1e-4 * (1 + |x_j|) per coordinate); the probe evaluations themselves
run through the taped network derivatives, so parameter gradients stay
exact.  Nested exact third derivatives of the encoder are deliberately
avoided.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import (
    ConfigError,
    DegenerateThresholdError,
    TrainingError,
    UsageError,
)
from .neural import (
    AdamState,
    DenseNetwork,
    adam_step,
    derivatives_batch,
    forward,
    load_checkpoint,
    save_checkpoint,
)
from .sde import StochasticSystem
from .tape import clip_min, grad, tanh, value_of, vmean, vsum

__all__ = [
    "AutoencoderNet",
    "PreimageIndex",
    "AeTrainConfig",
    "AeTrainResult",
    "epsilon_default",
    "build_preimage",
    "loss_rc",
    "loss_ct",
    "train_autoencoder",
]

# floor for the level diffusion inside b_i = A p_i / a_i: probing a feature
# with vanishing gradient would otherwise divide by zero.  The clamp keeps
# the barrier finite but large, and clamped probes are counted in the log.
CT_CLAMP_FLOOR = 1e-8
CT_FD_STEP = 1e-4

_BATCH_TAG = 0xFEA7


@dataclass
class AutoencoderNet:
    """Encoder (states -> features) and scalar decoder (features -> cost)."""

    encoder: DenseNetwork
    decoder: DenseNetwork

    def __post_init__(self):
        if self.encoder.d_out != self.decoder.d_in:
            raise UsageError(
                f"encoder produces {self.encoder.d_out} features, decoder "
                f"expects {self.decoder.d_in}"
            )
        if self.decoder.d_out != 1:
            raise UsageError("decoder must output a single reconstruction")

    @property
    def n(self) -> int:
        return self.encoder.d_in

    @property
    def k(self) -> int:
        return self.encoder.d_out

    @classmethod
    def init(cls, n: int, k: int, hidden: Sequence[int] = (100, 10),
             seed: int = 0) -> "AutoencoderNet":
        """Glorot-initialized pair; the decoder mirrors the encoder's
        hidden stack in reverse."""
        hidden = tuple(int(h) for h in hidden)
        if not hidden:
            raise ConfigError("need at least one hidden width")
        enc = DenseNetwork.init((n, *hidden, k), seed)
        dec = DenseNetwork.init((k, *hidden[::-1], 1), seed + 1)
        return cls(encoder=enc, decoder=dec)

    def encode(self, states) -> np.ndarray:
        return np.atleast_2d(forward(self.encoder,
                                     np.atleast_2d(np.asarray(states, float))))

    def reconstruct(self, states) -> np.ndarray:
        feats = self.encode(states)
        return np.atleast_2d(forward(self.decoder, feats))[:, 0]

    def save(self, encoder_path: str, decoder_path: str, seed=None):
        save_checkpoint(self.encoder, encoder_path, seed=seed)
        save_checkpoint(self.decoder, decoder_path, seed=seed)

    @classmethod
    def load(cls, encoder_path: str, decoder_path: str) -> "AutoencoderNet":
        enc, _ = load_checkpoint(encoder_path)
        dec, _ = load_checkpoint(decoder_path)
        return cls(encoder=enc, decoder=dec)


def epsilon_default(samples) -> float:
    """Bucket threshold: one fifth of the mean consecutive gap of the sorted
    feature samples, i.e. (max - min) / (5 (N - 1))."""
    v = np.asarray(samples, dtype=np.float64).reshape(-1)
    if v.size < 2:
        raise UsageError("threshold needs at least two feature samples")
    eps = float(np.mean(np.abs(np.diff(np.sort(v)))) / 5.0)
    if eps == 0.0:
        raise DegenerateThresholdError(
            "all feature samples identical: threshold collapsed to zero"
        )
    return eps


@dataclass
class PreimageIndex:
    """Single-linkage buckets of states by feature value, one set per feature.

    ``keys[i]`` holds the bucket representatives (cluster means) of feature
    i; ``members[i][j]`` the state indices of bucket j.  Two states share a
    bucket exactly when their feature values are chain-connected by gaps
    strictly below ``epsilons[i]``.
    """

    states: np.ndarray
    feats: np.ndarray
    epsilons: np.ndarray
    keys: list
    members: list

    @property
    def k(self) -> int:
        return len(self.keys)

    def n_buckets(self, i: int) -> int:
        return len(self.keys[i])

    @property
    def ranges(self) -> list:
        return self.keys

    def bucket_map(self, i: int) -> dict:
        return dict(zip(self.keys[i].tolist(), self.members[i]))


def build_preimage(states, encoder: DenseNetwork, epsilons) -> PreimageIndex:
    states = np.atleast_2d(np.asarray(states, dtype=np.float64))
    feats = np.atleast_2d(forward(encoder, states))
    k = feats.shape[1]
    eps = np.asarray(epsilons, dtype=np.float64)
    if eps.ndim == 0:
        eps = np.full(k, float(eps))
    eps = eps.reshape(-1)
    if eps.size != k:
        raise UsageError(f"{eps.size} thresholds for {k} features")
    if np.any(eps <= 0):
        raise UsageError("thresholds must be positive")
    keys, members = [], []
    for i in range(k):
        order = np.argsort(feats[:, i], kind="stable")
        gaps = np.diff(feats[order, i])
        cuts = np.flatnonzero(gaps >= eps[i]) + 1
        groups = np.split(order, cuts)
        keys.append(np.array([feats[g, i].mean() for g in groups]))
        members.append([np.sort(g) for g in groups])
    return PreimageIndex(states=states, feats=feats, epsilons=eps,
                         keys=keys, members=members)


def _net_apply(layers, h):
    """Forward chain that accepts taped feature matrices as input."""
    for w, b in layers[:-1]:
        h = tanh(h @ w + b)
    w, b = layers[-1]
    return h @ w + b


def _taped_rc(net: AutoencoderNet, states, cvals, penc, pdec):
    feats = forward(net.encoder, states, penc)
    recon = _net_apply(pdec, feats)[:, 0]
    diff = recon - cvals
    return vmean(diff * diff)


def loss_rc(net: AutoencoderNet, states, cost: Callable) -> float:
    """Mean squared cost-reconstruction error over the batch."""
    states = np.atleast_2d(np.asarray(states, dtype=np.float64))
    cvals = np.asarray(cost(states), dtype=np.float64).reshape(-1)
    diff = net.reconstruct(states) - cvals
    return float(np.mean(diff * diff))


def _ct_probes(states):
    """Central-difference probe rows, blocked [+e_j; -e_j] per coordinate."""
    m, n = states.shape
    probes = np.empty((2 * n * m, n))
    steps = np.empty((n, m))
    for j in range(n):
        h = CT_FD_STEP * (1.0 + np.abs(states[:, j]))
        steps[j] = h
        plus = states.copy()
        plus[:, j] += h
        minus = states.copy()
        minus[:, j] -= h
        probes[2 * j * m:(2 * j + 1) * m] = plus
        probes[(2 * j + 1) * m:(2 * j + 2) * m] = minus
    return probes, steps


def _diffusion_diagonal(system: StochasticSystem, probes):
    sig = system.sigma_at(probes)
    ss_diag = np.einsum("plc,plc->pl", sig, sig)
    # the Ito term below contracts the feature Hessian DIAGONAL against
    # sigma sigma^T, which is only the full trace when S is diagonal
    n = probes.shape[1]
    sub = sig[: min(len(sig), 16)]
    full = np.einsum("plc,pqc->plq", sub, sub)
    off = full - full * np.eye(n)
    if np.max(np.abs(off)) > 1e-12 * (1.0 + np.abs(full).max()):
        raise UsageError(
            "comparison-theorem loss requires diagonal sigma sigma^T"
        )
    return ss_diag


def _taped_ct(encoder: DenseNetwork, system: StochasticSystem,
              preimage: PreimageIndex, penc):
    """(penalty, clamped probe count); penalty is taped when penc is."""
    states = preimage.states
    m, n = states.shape
    k = encoder.d_out
    if encoder.d_in != n:
        raise UsageError(
            f"encoder expects {encoder.d_in}-dimensional states, got {n}"
        )
    if preimage.k != k:
        raise UsageError("preimage was built for a different feature count")
    probes, steps = _ct_probes(states)
    _, jac, hess = derivatives_batch(encoder, probes, penc)
    f = np.asarray(system.drift(probes), dtype=np.float64)
    ss_diag = _diffusion_diagonal(system, probes)

    total = None
    n_clamped = 0
    for i in range(k):
        a = None
        ap = None
        for l in range(n):
            g_l = jac[:, l, i]
            a_term = ss_diag[:, l] * (g_l * g_l)
            ap_term = f[:, l] * g_l + 0.5 * ss_diag[:, l] * hess[:, l, i]
            a = a_term if a is None else a + a_term
            ap = ap_term if ap is None else ap + ap_term
        n_clamped += int(np.count_nonzero(value_of(a) < CT_CLAMP_FLOOR))
        b = ap / clip_min(a, CT_CLAMP_FLOOR)

        pen = None
        for j in range(n):
            lo, mid, hi = 2 * j * m, (2 * j + 1) * m, (2 * j + 2) * m
            ga = (a[lo:mid] - a[mid:hi]) / (2.0 * steps[j])
            gb = (b[lo:mid] - b[mid:hi]) / (2.0 * steps[j])
            t = ga * ga + gb * gb
            pen = t if pen is None else pen + t

        # two-level average: buckets weigh equally, members within a bucket
        # weigh equally, features weigh 1/k
        w = np.zeros(m)
        buckets = preimage.members[i]
        for idx in buckets:
            w[idx] = 1.0 / (k * len(buckets) * idx.size)
        term = vsum(pen * w)
        total = term if total is None else total + term
    return total, n_clamped


def loss_ct(net: AutoencoderNet, system: StochasticSystem,
            preimage: PreimageIndex) -> float:
    """Mean squared state-gradient of the level coefficients a_i, b_i of the
    learned features, averaged per bucket, per level, per feature."""
    val, _ = _taped_ct(net.encoder, system, preimage,
                       net.encoder.layer_views())
    return float(value_of(val))


@dataclass
class AeTrainConfig:
    """Loss weights, preimage refresh period and optimizer settings."""

    w_rc: float = 1.0
    w_ct: float = 10.0
    k: int = 2
    d: int = 1
    epochs: int = 5
    iterations: int = 100
    batch_size: int = 1000
    lr: float = 1e-3
    seed: int = 0
    encoder_hidden: tuple = (100, 10)
    freeze_encoder: bool = False

    def __post_init__(self):
        if self.w_rc < 0 or self.w_ct < 0:
            raise ConfigError("loss weights must be nonnegative")
        if self.w_rc + self.w_ct <= 0:
            raise ConfigError("at least one loss weight must be positive")
        if self.k < 1:
            raise ConfigError("feature count k must be >= 1")
        if self.d < 1:
            raise ConfigError("preimage refresh period d must be >= 1")
        if self.epochs < 1 or self.iterations < 1:
            raise ConfigError("epochs and iterations must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if not self.encoder_hidden:
            raise ConfigError("need at least one hidden width")


@dataclass
class AeTrainResult:
    """Trained pair plus the per-iteration loss log.

    Log rows are (iteration, loss_rc, loss_ct, clamped_probes); ``preimage``
    and ``epsilons`` reflect the last refresh.
    """

    net: AutoencoderNet
    log: list
    preimage: Optional[PreimageIndex] = None
    epsilons: Optional[np.ndarray] = None

    def log_to_csv(self, path: str):
        arr = np.asarray([(it, rc, ct, cl) for it, rc, ct, cl in self.log],
                         dtype=np.float64)
        np.savetxt(path, arr, delimiter=",",
                   header="iteration,loss_rc,loss_ct,clamped_probes",
                   comments="", fmt=("%d", "%.17g", "%.17g", "%d"))


def train_autoencoder(system: StochasticSystem, cost: Callable, states,
                      cfg: AeTrainConfig,
                      init_net: Optional[AutoencoderNet] = None
                      ) -> AeTrainResult:
    """Joint Adam training of encoder and decoder.

    Each iteration draws a fresh uniform batch; the preimage (and its
    thresholds) is rebuilt from the current batch every cfg.d iterations and
    reused in between, so the comparison-theorem penalty tracks a slightly
    stale bucket structure exactly as the update period dictates.
    """
    states = np.atleast_2d(np.asarray(states, dtype=np.float64))
    n_states, n = states.shape
    if n != system.state_dim:
        raise UsageError(
            f"states have dimension {n}, system expects {system.state_dim}"
        )
    net = init_net if init_net is not None else AutoencoderNet.init(
        n, cfg.k, cfg.encoder_hidden, cfg.seed
    )
    if net.n != n:
        raise UsageError(
            f"network expects {net.n}-dimensional states, data has {n}"
        )
    use_ct = cfg.w_ct > 0
    use_rc = cfg.w_rc > 0
    gen = np.random.Generator(
        np.random.Philox(key=np.array([cfg.seed, _BATCH_TAG],
                                      dtype=np.uint64))
    )
    ne = net.encoder.theta.size
    adam = AdamState.init(ne + net.decoder.theta.size)
    bs = min(cfg.batch_size, n_states)

    preimage = None
    eps_vec = None
    log = []
    it = 0
    for _ in range(cfg.epochs):
        for _ in range(cfg.iterations):
            idx = gen.choice(n_states, size=bs, replace=False)
            batch = states[idx]
            if use_ct and it % cfg.d == 0:
                feats = net.encode(batch)
                eps_vec = np.array([epsilon_default(feats[:, j])
                                    for j in range(net.k)])
                preimage = build_preimage(batch, net.encoder, eps_vec)

            penc = net.encoder.params_as_vars()
            pdec = net.decoder.params_as_vars()
            lrc_v = None
            if use_rc:
                cvals = np.asarray(cost(batch), dtype=np.float64).reshape(-1)
                lrc_v = _taped_rc(net, batch, cvals, penc, pdec)
            lct_v, clamped = (None, 0)
            if use_ct:
                lct_v, clamped = _taped_ct(net.encoder, system, preimage,
                                           penc)
            total = None
            if lrc_v is not None:
                total = cfg.w_rc * lrc_v
            if lct_v is not None:
                total = cfg.w_ct * lct_v if total is None else (
                    total + cfg.w_ct * lct_v
                )
            lrc = float(value_of(lrc_v)) if lrc_v is not None else 0.0
            lct = float(value_of(lct_v)) if lct_v is not None else 0.0
            if not np.isfinite(float(value_of(total))):
                raise TrainingError(
                    f"non-finite training loss at iteration {it}"
                )
            leaves = [v for pair in penc for v in pair]
            leaves += [v for pair in pdec for v in pair]
            gs = grad(total, leaves)
            half = 2 * len(penc)
            g_enc = DenseNetwork.pack(
                [(gs[2 * i], gs[2 * i + 1]) for i in range(len(penc))]
            )
            g_dec = DenseNetwork.pack(
                [(gs[half + 2 * i], gs[half + 2 * i + 1])
                 for i in range(len(pdec))]
            )
            if cfg.freeze_encoder:
                g_enc[:] = 0.0
            theta = np.concatenate([net.encoder.theta, net.decoder.theta])
            adam, theta = adam_step(adam, theta,
                                    np.concatenate([g_enc, g_dec]), cfg.lr)
            net.encoder.theta = theta[:ne]
            net.decoder.theta = theta[ne:]
            log.append((it, lrc, lct, clamped))
            it += 1
    return AeTrainResult(net=net, log=log, preimage=preimage,
                         epsilons=eps_vec)
