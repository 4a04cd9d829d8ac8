"""Dense feedforward networks with nested derivative access.

The same layer-propagation code runs in two modes:

* plain ndarrays -- fast evaluation of the network and its first/second
  input derivatives;
* :class:`~featpde.tape.Var` parameters -- the whole computation (including
  the input-derivative propagation) lands on the tape, so a loss built from
  network values *and their input derivatives* can be differentiated with
  respect to the parameters by ordinary reverse mode.  That supplies the
  third-order mixed terms a physics-residual loss needs without a separate
  higher-order engine.

Hidden activations are tanh, the output layer is affine.  Parameters live in
one flat float64 vector; per-layer views are provided for inspection.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import TrainingError
from .tape import Var, grad, reshape, tanh as _tanh, value_of

__all__ = [
    "DenseNetwork",
    "DerivativeBundle",
    "AdamState",
    "glorot_init",
    "param_count",
    "forward",
    "forward_with_derivatives",
    "derivatives_batch",
    "grad_params",
    "adam_step",
    "save_checkpoint",
    "load_checkpoint",
]


def param_count(widths) -> int:
    return sum(
        widths[i] * widths[i + 1] + widths[i + 1]
        for i in range(len(widths) - 1)
    )


def glorot_init(widths, seed: int) -> np.ndarray:
    """Flat parameter vector: Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(np.random.Philox(key=np.uint64(seed)))
    chunks = []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        chunks.append(rng.uniform(-bound, bound, size=fan_in * fan_out))
        chunks.append(np.zeros(fan_out))
    return np.concatenate(chunks)


@dataclass
class DenseNetwork:
    """A tanh MLP described by layer widths and a flat parameter vector."""

    widths: tuple
    theta: np.ndarray
    activation: str = "tanh"

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        if len(self.widths) < 2:
            raise ValueError("need at least input and output widths")
        if self.activation != "tanh":
            raise ValueError(f"unsupported activation {self.activation!r}")
        self.theta = np.asarray(self.theta, dtype=np.float64)
        expected = param_count(self.widths)
        if self.theta.shape != (expected,):
            raise ValueError(
                f"theta has {self.theta.size} entries, widths {self.widths} "
                f"need {expected}"
            )

    @classmethod
    def init(cls, widths, seed: int) -> "DenseNetwork":
        return cls(widths=tuple(widths), theta=glorot_init(widths, seed))

    @property
    def d_in(self) -> int:
        return self.widths[0]

    @property
    def d_out(self) -> int:
        return self.widths[-1]

    def layer_views(self, theta=None):
        """List of (W, b) ndarray views into the flat vector."""
        theta = self.theta if theta is None else theta
        out = []
        pos = 0
        for fan_in, fan_out in zip(self.widths[:-1], self.widths[1:]):
            w = theta[pos : pos + fan_in * fan_out].reshape(fan_in, fan_out)
            pos += fan_in * fan_out
            b = theta[pos : pos + fan_out]
            pos += fan_out
            out.append((w, b))
        return out

    def params_as_vars(self):
        """Fresh (Var(W), Var(b)) leaves per layer, copied from theta."""
        return [(Var(w.copy()), Var(b.copy())) for w, b in self.layer_views()]

    @staticmethod
    def pack(param_grads) -> np.ndarray:
        """Flatten per-layer (dW, db) gradients back into theta order."""
        return np.concatenate(
            [np.concatenate([dw.ravel(), db.ravel()]) for dw, db in param_grads]
        )


def _layers(net: DenseNetwork, params):
    return net.layer_views() if params is None else params


def forward(net: DenseNetwork, x, params=None):
    """Evaluate the network.  ``x``: (d_in,) or (B, d_in).

    ``params`` may be per-layer (W, b) pairs of ndarrays or tape Vars; when
    omitted the network's own parameters are used.  The return type follows
    the parameter type (ndarray or Var).
    """
    xv = np.asarray(x, dtype=np.float64)
    single = xv.ndim == 1
    h = xv.reshape(1, -1) if single else xv
    if h.shape[-1] != net.d_in:
        raise ValueError(
            f"input width {h.shape[-1]} does not match network d_in {net.d_in}"
        )
    layers = _layers(net, params)
    for w, b in layers[:-1]:
        h = _tanh(h @ w + b)
    w, b = layers[-1]
    out = h @ w + b
    if single and not isinstance(out, Var):
        return out[0]
    if single and isinstance(out, Var):
        return out.reshape((net.d_out,))
    return out


@dataclass
class DerivativeBundle:
    """Value and input derivatives at one point.

    ``value``: (d_out,); ``input_jacobian``: (d_out, d_in);
    ``input_hessian_diag``: (d_out, d_in) with entries (d^2 out_o / d in_i^2).
    """

    value: np.ndarray
    input_jacobian: np.ndarray
    input_hessian_diag: np.ndarray


def derivatives_batch(net: DenseNetwork, x, params=None):
    """Batched value + input derivatives.

    Returns ``(u, J, H)`` with shapes (B, d_out), (B, d_in, d_out),
    (B, d_in, d_out): ``J[b, i, o] = d out_o / d in_i`` and ``H`` the
    per-input second derivatives.  With Var parameters the whole propagation
    is taped, so losses may consume J and H and still get exact parameter
    gradients.
    """
    xv = np.asarray(x, dtype=np.float64)
    if xv.ndim != 2:
        raise ValueError("derivatives_batch expects (B, d_in) input")
    bsz, d_in = xv.shape
    if d_in != net.d_in:
        raise ValueError(
            f"input width {d_in} does not match network d_in {net.d_in}"
        )
    layers = _layers(net, params)

    h = xv
    jac = None  # None encodes the identity Jacobian of the raw input
    hess = None  # None encodes exactly-zero second derivatives
    for li, (w, b) in enumerate(layers):
        z = h @ w + b
        if jac is None:
            # First affine layer: J = W, broadcast over the batch by the
            # elementwise ops downstream.
            jz = reshape(w, (1, d_in, w.shape[-1]))
            hz = None
        else:
            jz = jac @ w
            hz = None if hess is None else hess @ w
        if li < len(layers) - 1:
            t = _tanh(z)
            one_m_t2 = 1.0 - t * t
            s = _expand_mid(one_m_t2)  # (B, 1, width)
            curv = _expand_mid(t * one_m_t2)
            jsq = jz * jz
            if hz is None:
                hess = -2.0 * curv * jsq
            else:
                hess = s * hz - 2.0 * curv * jsq
            jac = s * jz
            h = t
        else:
            h = z
            jac = jz
            hess = hz
    # A purely affine network never broadcast J/H up to the batch size.
    if value_of(jac).shape[0] != bsz:
        jac = jac * np.ones((bsz, 1, 1))
    if hess is None:
        hess = np.zeros((bsz, d_in, net.d_out))
    elif value_of(hess).shape[0] != bsz:
        hess = hess * np.ones((bsz, 1, 1))
    return h, jac, hess


def _expand_mid(t):
    """(B, w) -> (B, 1, w) for Var or ndarray."""
    if isinstance(t, Var):
        b, w = t.value.shape
        return t.reshape((b, 1, w))
    return t[:, None, :]


def forward_with_derivatives(net: DenseNetwork, x) -> DerivativeBundle:
    """Value, input Jacobian and per-input second derivatives at one point."""
    xv = np.asarray(x, dtype=np.float64)
    if xv.ndim != 1:
        raise ValueError("forward_with_derivatives expects a single vector")
    u, jac, hess = derivatives_batch(net, xv.reshape(1, -1))
    return DerivativeBundle(
        value=u[0],
        input_jacobian=jac[0].T.copy(),
        input_hessian_diag=hess[0].T.copy(),
    )


def grad_params(net: DenseNetwork, loss_closure, fd=False, fd_step=1e-6):
    """Gradient of a scalar loss with respect to the flat parameter vector.

    ``loss_closure(params)`` receives per-layer (W, b) pairs -- tape Vars in
    the exact path, plain ndarrays in the finite-difference fallback -- and
    must return a scalar (Var or float).  The exact path differentiates
    through everything the closure built, including input-derivative
    propagation from :func:`derivatives_batch`.
    """
    if fd:
        theta0 = net.theta.copy()

        def at(theta):
            return float(value_of(loss_closure(net.layer_views(theta))))

        g = np.empty_like(theta0)
        for j in range(theta0.size):
            step = fd_step * (1.0 + abs(theta0[j]))
            tp = theta0.copy()
            tp[j] += step
            tm = theta0.copy()
            tm[j] -= step
            g[j] = (at(tp) - at(tm)) / (2.0 * step)
        return g

    params = net.params_as_vars()
    loss = loss_closure(params)
    if not isinstance(loss, Var):
        raise TypeError(
            "loss closure must return a tape Var; got a plain value "
            "(did the closure bypass the differentiable primitives?)"
        )
    leaves = [v for pair in params for v in pair]
    gs = grad(loss, leaves)
    pairs = [(gs[2 * i], gs[2 * i + 1]) for i in range(len(params))]
    return DenseNetwork.pack(pairs)


@dataclass
class AdamState:
    """Adam moments, bias-corrected; beta1=0.9, beta2=0.999, eps=1e-8."""

    m: np.ndarray
    v: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def init(cls, n_params: int) -> "AdamState":
        return cls(m=np.zeros(n_params), v=np.zeros(n_params))


def adam_step(state: AdamState, theta: np.ndarray, g: np.ndarray, lr: float):
    """One bias-corrected Adam update; returns (state, new_theta)."""
    if not np.all(np.isfinite(g)):
        bad = int(np.flatnonzero(~np.isfinite(g))[0])
        raise TrainingError(
            f"non-finite gradient at parameter index {bad} "
            f"(step {state.step + 1})"
        )
    state.step += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * g
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * g * g
    mhat = state.m / (1.0 - state.beta1 ** state.step)
    vhat = state.v / (1.0 - state.beta2 ** state.step)
    return state, theta - lr * mhat / (np.sqrt(vhat) + state.eps)


def save_checkpoint(net: DenseNetwork, path: str, seed=None, extra=None):
    """Write the network as a JSON container (atomic replace)."""
    payload = {
        "widths": list(net.widths),
        "activation": net.activation,
        "theta": net.theta.tolist(),
        "seed": seed,
    }
    if extra:
        payload["extra"] = extra
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "w") as fh:
        json.dump(payload, fh)
    os.replace(tmp, path)


def load_checkpoint(path: str):
    """Read a checkpoint; returns (DenseNetwork, metadata dict)."""
    with open(path) as fh:
        payload = json.load(fh)
    net = DenseNetwork(
        widths=tuple(payload["widths"]),
        theta=np.asarray(payload["theta"], dtype=np.float64),
        activation=payload.get("activation", "tanh"),
    )
    meta = {k: payload.get(k) for k in ("seed", "extra")}
    return net, meta
