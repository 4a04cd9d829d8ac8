"""Feature-learning metrics at the shipped preset's full training budget.

Trains the autoencoder on the 101^3 state grid with the default config
(w_rc=1, w_ct=10, 5 epochs x 100 iterations, batch 1000, lr 1e-3, encoder
hidden (100, 10)) and reports: cost-reconstruction relative-L1 percent error
on the full grid, the |correlation| matrix between learned features and the
true features (x1+x2, x3), raw and sign-aligned feature MSE, and wall time.
"""

import json
import time

import numpy as np

from featpde.featureid import AeTrainConfig, train_autoencoder
from featpde.presets import feature_state_grid, get_preset


def main():
    p = get_preset("feature-ae-3d")
    states = feature_state_grid(p)
    cfg = AeTrainConfig(seed=0)
    t0 = time.time()
    result = train_autoencoder(p.system, p.cost_full, states, cfg)
    wall = time.time() - t0

    c_true = np.asarray(p.cost_full(states), dtype=np.float64)
    c_hat = result.net.reconstruct(states)
    rel_l1_pct = float(
        100.0 * np.abs(c_hat - c_true).sum() / np.abs(c_true).sum()
    )

    feats = result.net.encode(states)
    true_feats = p.features.p(states)
    corr = np.empty((2, 2))
    for i in range(2):
        for j in range(2):
            corr[i, j] = np.corrcoef(feats[:, i], true_feats[:, j])[0, 1]

    mse_raw = [
        float(np.mean((feats[:, i] - true_feats[:, i]) ** 2))
        for i in range(2)
    ]
    mse_signed = [
        min(
            float(np.mean((s * feats[:, i] - true_feats[:, i]) ** 2))
            for s in (1.0, -1.0)
        )
        for i in range(2)
    ]

    out = {
        "wall": wall,
        "recon_rel_l1_pct": rel_l1_pct,
        "corr_matrix_rows_learned_cols_true": corr.tolist(),
        "abs_corr_vs_true1": [abs(corr[0, 0]), abs(corr[1, 0])],
        "mse_raw": mse_raw,
        "mse_sign_aligned": mse_signed,
        "final_losses": result.log[-1],
    }
    print(json.dumps(out, indent=2), flush=True)
    with open("/root/notes/featureid_preset_scale.json", "w") as fh:
        json.dump(out, fh, indent=2)


if __name__ == "__main__":
    main()
