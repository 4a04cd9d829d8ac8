"""Measure PINN accuracy vs the Riccati oracle on the 3-d value problem.

Trains the reference 3x32 tanh network on FD targets over [1,2]^2 x [1,1.5]
(grid spacing 0.1 in space and time, 600 collocation points) and reports the
percentage error at t=0.5 plus the per-time absolute-error profile used by
the generalization probe.  Writes results to /root/notes/pinn_benchmark.json.
"""

import json
import time

import numpy as np

from featpde.pde import LqSpec, assemble_value_pde, riccati_value, solve_fd
from featpde.pinn import PinnConfig, TrainingDataset, train
from featpde.neural import forward
from featpde.reduction import build_reduced_sde


def stable_reduced():
    return build_reduced_sde(
        alpha=[lambda s: np.full_like(np.asarray(s, float), 2.0),
               lambda s: np.ones_like(np.asarray(s, float))],
        beta=[lambda s: -np.asarray(s, float) / 2.0,
              lambda s: -np.asarray(s, float)],
        ranges=[(-6.0, 6.0), (-6.0, 6.0)],
    )


def quad_cost(xi):
    xi = np.atleast_2d(np.asarray(xi, float))
    return 0.5 * (xi[:, 0] ** 2 + xi[:, 1] ** 2)


def main():
    red = stable_reduced()
    lq = LqSpec(M=-np.eye(2), Sigma=np.diag([2.0, 1.0]),
                R=0.5 * np.eye(2), R_T=0.5 * np.eye(2), horizon=1.5)

    t0 = time.time()
    oracle_prob = assemble_value_pde(red, quad_cost, 1.0,
                                     [(-4.5, 6.0), (-3.5, 5.0)], 1.5)
    sol = solve_fd(oracle_prob, [0.05, 0.05], 2.5e-3, save_every=40)
    t_fd = time.time() - t0

    axes = [np.round(np.arange(1.0, 2.0 + 1e-9, 0.1), 10)] * 2
    times = np.round(np.arange(1.0, 1.5 + 1e-9, 0.1), 10)
    vals = np.empty((times.size, axes[0].size, axes[1].size))
    for it, tt in enumerate(times):
        for i, a in enumerate(axes[0]):
            for j, b in enumerate(axes[1]):
                vals[it, i, j] = sol.interpolate([a, b], tt)
    data = TrainingDataset.from_grid(axes, times, vals, provenance="FD")

    prob = assemble_value_pde(red, quad_cost, 1.0, [(1.0, 2.0), (1.0, 2.0)], 1.5)

    g1, g2 = np.meshgrid(axes[0], axes[1], indexing="ij")
    eval_xi = np.column_stack([g1.ravel(), g2.ravel()])

    probe_ts = np.round(np.arange(0.5, 1.5 + 1e-9, 0.1), 10)
    out = {"fd_seconds": t_fd, "runs": {}}
    for epochs in (20000, 50000):
        cfg = PinnConfig(epochs=epochs, n_domain=600, seed=0, lr=1e-3)
        t0 = time.time()
        res = train(prob, data, cfg)
        wall = time.time() - t0
        run = {"wall_seconds": wall, "final_log": list(res.log[-1]),
               "aborted": res.aborted_epoch}
        per_t = {}
        for tt in probe_ts:
            pred = forward(res.net, np.column_stack(
                [eval_xi, np.full(len(eval_xi), tt)]))[:, 0]
            truth = riccati_value(lq, eval_xi, tt)
            abs_err = np.abs(pred - truth)
            per_t[f"{tt:.1f}"] = {
                "mean_abs": float(abs_err.mean()),
                "max_abs": float(abs_err.max()),
                "mean_pct": float(np.mean(abs_err / truth) * 100.0),
                "max_pct": float(np.max(abs_err / truth) * 100.0),
            }
        run["per_t"] = per_t
        run["pct_at_0.5"] = per_t["0.5"]["mean_pct"]
        out["runs"][str(epochs)] = run
        print(f"epochs={epochs}: wall={wall:.1f}s "
              f"pct@0.5 mean={per_t['0.5']['mean_pct']:.3f}% "
              f"max={per_t['0.5']['max_pct']:.3f}% "
              f"abs@0.5 max={per_t['0.5']['max_abs']:.4f}", flush=True)

    with open("/root/notes/pinn_benchmark.json", "w") as fh:
        json.dump(out, fh, indent=2)
    print("written /root/notes/pinn_benchmark.json")


if __name__ == "__main__":
    main()
