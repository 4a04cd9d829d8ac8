"""Tests for encoder/decoder feature learning and the preimage machinery."""

import numpy as np
import pytest

from featpde.errors import (
    ConfigError,
    DegenerateThresholdError,
    UsageError,
)
from featpde.featureid import (
    AeTrainConfig,
    AutoencoderNet,
    build_preimage,
    epsilon_default,
    loss_ct,
    loss_rc,
    train_autoencoder,
    _taped_ct,
)
from featpde.neural import DenseNetwork
from featpde.sde import StochasticSystem


def linear_encoder():
    # p = (x1 + x2, x3) as a bias-free affine network
    net = DenseNetwork.init((3, 2), seed=0)
    net.theta[:] = 0.0
    net.theta[:6] = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]]).ravel()
    return net


def quad_cost(x):
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    return 0.5 * (x[:, 0] + x[:, 1]) ** 2 + 0.5 * x[:, 2] ** 2


def literal_system():
    def drift(x):
        x = np.atleast_2d(x)
        return np.column_stack([x[:, 0] + x[:, 2], x[:, 1] - x[:, 2],
                                x[:, 2]])
    return StochasticSystem(state_dim=3, control_dim=3, drift=drift,
                            diffusion_const=np.eye(3))


def zero_drift_system():
    return StochasticSystem(state_dim=3, control_dim=3,
                            drift=lambda x: np.zeros_like(np.atleast_2d(x)),
                            diffusion_const=np.eye(3))


@pytest.fixture(scope="module")
def batch():
    return np.random.default_rng(3).uniform(0.0, 1.0, (200, 3))


# ------------------------------------------------------------- thresholds


def test_epsilon_two_samples():
    # (1/5) * mean consecutive sorted gap: ({0,1} has a single gap of 1)
    assert epsilon_default([0.0, 1.0]) == pytest.approx(0.2, abs=0)


def test_epsilon_arithmetic_sequence():
    h = 0.1
    seq = np.arange(0.0, 1.0 + 1e-12, h)
    assert epsilon_default(seq) == pytest.approx(h / 5.0, rel=1e-12)
    rng = np.random.default_rng(0)
    assert epsilon_default(rng.permutation(seq)) == pytest.approx(
        h / 5.0, rel=1e-12)


def test_epsilon_degenerate_and_short():
    with pytest.raises(DegenerateThresholdError):
        epsilon_default([0.7, 0.7, 0.7])
    with pytest.raises(UsageError):
        epsilon_default([0.7])


# -------------------------------------------------------------- preimage


def test_preimage_is_a_partition_with_mean_keys(batch):
    enc = linear_encoder()
    pre = build_preimage(batch, enc, [0.05, 0.05])
    for i in range(2):
        seen = np.concatenate(pre.members[i])
        assert np.array_equal(np.sort(seen), np.arange(len(batch)))
        for key, idx in zip(pre.keys[i], pre.members[i]):
            assert idx.size > 0
            assert key == pytest.approx(pre.feats[idx, i].mean(), rel=1e-12)


def test_preimage_chainwise_rule(batch):
    enc = linear_encoder()
    eps = 0.05
    pre = build_preimage(batch, enc, eps)
    for i in range(2):
        vals = np.sort(pre.feats[:, i])
        for idx in pre.members[i]:
            v = np.sort(pre.feats[idx, i])
            if v.size > 1:
                # members chain with gaps strictly below the threshold
                assert np.max(np.diff(v)) < eps
        # distinct buckets are separated by at least the threshold
        key_order = np.argsort(pre.keys[i])
        sorted_members = [pre.members[i][j] for j in key_order]
        for a, b in zip(sorted_members[:-1], sorted_members[1:]):
            assert pre.feats[b, i].min() - pre.feats[a, i].max() >= eps


def test_preimage_threshold_extremes(batch):
    enc = linear_encoder()
    one = build_preimage(batch, enc, 10.0)
    assert one.n_buckets(0) == 1 and one.n_buckets(1) == 1
    assert one.members[0][0].size == len(batch)
    tiny = build_preimage(batch, enc, 1e-15)
    assert tiny.n_buckets(0) == len(batch)


def test_preimage_member_reencoding_stays_near_key(batch):
    # chain-linked buckets bound the spread by (len - 1) gaps, each below
    # the threshold; on grid-snapped states buckets are pure duplicates and
    # members sit exactly on their key
    enc = linear_encoder()
    pre = build_preimage(batch, enc, [0.05, 0.05])
    for i in range(2):
        for key, idx in zip(pre.keys[i], pre.members[i]):
            bound = max(idx.size - 1, 1) * pre.epsilons[i]
            assert np.max(np.abs(pre.feats[idx, i] - key)) < bound

    ax = np.round(np.arange(0.0, 1.0001, 0.01), 10)
    grid = np.stack(np.meshgrid(ax, ax, ax, indexing="ij"), -1).reshape(-1, 3)
    sub = grid[np.random.default_rng(1).choice(len(grid), 500, replace=False)]
    feats = np.column_stack([sub[:, 0] + sub[:, 1], sub[:, 2]])
    eps = [epsilon_default(feats[:, 0]), epsilon_default(feats[:, 1])]
    snapped = build_preimage(sub, enc, eps)
    for i in range(2):
        for key, idx in zip(snapped.keys[i], snapped.members[i]):
            assert np.max(np.abs(snapped.feats[idx, i] - key)) < eps[i]


def test_preimage_rejects_bad_thresholds(batch):
    enc = linear_encoder()
    with pytest.raises(UsageError):
        build_preimage(batch, enc, [0.05, 0.05, 0.05])
    with pytest.raises(UsageError):
        build_preimage(batch, enc, 0.0)


def test_bucket_count_on_grid_snapped_features():
    # states snapped to a 0.01 grid: duplicates merge, so the bucket count
    # is the number of distinct feature values in the draw
    ax = np.round(np.arange(0.0, 1.0001, 0.01), 10)
    grid = np.stack(np.meshgrid(ax, ax, ax, indexing="ij"), -1).reshape(-1, 3)
    sub = grid[np.random.default_rng(0).choice(len(grid), 1000,
                                               replace=False)]
    enc = linear_encoder()
    feats = np.column_stack([sub[:, 0] + sub[:, 1], sub[:, 2]])
    eps = [epsilon_default(feats[:, 0]), epsilon_default(feats[:, 1])]
    pre = build_preimage(sub, enc, eps)
    assert pre.n_buckets(0) == len(np.unique(np.round(feats[:, 0], 9)))
    assert pre.n_buckets(1) == len(np.unique(np.round(feats[:, 1], 9)))


# ---------------------------------------------------------------- losses


def test_loss_rc_exact_affine_reconstruction(batch):
    dec = DenseNetwork.init((2, 1), seed=0)
    dec.theta[:] = [2.0, -1.0, 1.0]
    net = AutoencoderNet(encoder=linear_encoder(), decoder=dec)

    def affine_cost(x):
        x = np.atleast_2d(x)
        return 2.0 * (x[:, 0] + x[:, 1]) - x[:, 2] + 1.0

    assert loss_rc(net, batch, affine_cost) < 1e-30


def test_loss_rc_constant_decoder_gives_variance(batch):
    cvals = quad_cost(batch)
    dec = DenseNetwork.init((2, 1), seed=0)
    dec.theta[:] = [0.0, 0.0, cvals.mean()]
    net = AutoencoderNet(encoder=linear_encoder(), decoder=dec)
    assert loss_rc(net, batch, quad_cost) == pytest.approx(np.var(cvals),
                                                           rel=1e-12)


def test_loss_ct_zero_for_driftless_linear_features(batch):
    net = AutoencoderNet(encoder=linear_encoder(),
                         decoder=DenseNetwork.init((2, 4, 1), seed=1))
    pre = build_preimage(batch, net.encoder, [0.05, 0.05])
    assert loss_ct(net, zero_drift_system(), pre) == 0.0


def test_loss_ct_hand_value_for_analytic_features(batch):
    # a = (2, 1) constant; b1 = (x1+x2)/2, b2 = x3 under the literal drift,
    # so the gradient penalty is |(1/2,1/2,0)|^2 = 1/2 and |(0,0,1)|^2 = 1
    # for every bucket member: loss = (1/2) (1/2 + 1) = 3/4
    net = AutoencoderNet(encoder=linear_encoder(),
                         decoder=DenseNetwork.init((2, 4, 1), seed=1))
    pre = build_preimage(batch, net.encoder, [0.05, 0.05])
    assert loss_ct(net, literal_system(), pre) == pytest.approx(0.75,
                                                                rel=1e-10)


def test_loss_ct_invariant_under_member_permutation(batch):
    net = AutoencoderNet(encoder=linear_encoder(),
                         decoder=DenseNetwork.init((2, 4, 1), seed=1))
    pre = build_preimage(batch, net.encoder, [0.05, 0.05])
    base = loss_ct(net, literal_system(), pre)
    rng = np.random.default_rng(5)
    pre.members = [[rng.permutation(idx) for idx in side]
                   for side in pre.members]
    assert loss_ct(net, literal_system(), pre) == pytest.approx(base,
                                                                rel=1e-12)


def test_loss_ct_clamps_dead_features(batch):
    # second feature has zero gradient everywhere: a_2 = 0 at every probe
    enc = DenseNetwork.init((3, 2), seed=0)
    enc.theta[:] = 0.0
    enc.theta[:6] = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 0.0]]).ravel()
    net = AutoencoderNet(encoder=enc,
                         decoder=DenseNetwork.init((2, 4, 1), seed=1))
    pre = build_preimage(batch, enc, [0.05, 1.0])
    val, clamped = _taped_ct(enc, literal_system(), pre,
                             enc.layer_views())
    assert clamped == 6 * len(batch)  # every probe of the dead feature
    # the dead feature contributes nothing (its generator drift vanishes
    # too); what remains is feature 1's constant-gradient term at half
    # weight
    assert float(val) == pytest.approx(0.25, rel=1e-10)


def test_loss_ct_rejects_correlated_diffusion(batch):
    net = AutoencoderNet(encoder=linear_encoder(),
                         decoder=DenseNetwork.init((2, 4, 1), seed=1))
    pre = build_preimage(batch, net.encoder, [0.05, 0.05])
    sig = np.array([[1.0, 0.5, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    crooked = StochasticSystem(state_dim=3, control_dim=3,
                               drift=lambda x: np.zeros_like(np.atleast_2d(x)),
                               diffusion_const=sig)
    with pytest.raises(UsageError):
        loss_ct(net, crooked, pre)


# -------------------------------------------------------------- networks


def test_autoencoder_shapes_and_validation():
    net = AutoencoderNet.init(3, 2, hidden=(8, 4), seed=0)
    assert net.n == 3 and net.k == 2
    assert net.encoder.widths == (3, 8, 4, 2)
    assert net.decoder.widths == (2, 4, 8, 1)
    assert net.encode(np.zeros((5, 3))).shape == (5, 2)
    assert net.reconstruct(np.zeros((5, 3))).shape == (5,)
    with pytest.raises(UsageError):
        AutoencoderNet(encoder=DenseNetwork.init((3, 4, 2), seed=0),
                       decoder=DenseNetwork.init((3, 4, 1), seed=0))
    with pytest.raises(UsageError):
        AutoencoderNet(encoder=DenseNetwork.init((3, 4, 2), seed=0),
                       decoder=DenseNetwork.init((2, 4, 2), seed=0))


def test_autoencoder_save_load_roundtrip(tmp_path):
    net = AutoencoderNet.init(3, 2, hidden=(6,), seed=7)
    enc_p = str(tmp_path / "enc.json")
    dec_p = str(tmp_path / "dec.json")
    net.save(enc_p, dec_p, seed=7)
    back = AutoencoderNet.load(enc_p, dec_p)
    assert np.array_equal(back.encoder.theta, net.encoder.theta)
    assert np.array_equal(back.decoder.theta, net.decoder.theta)
    x = np.random.default_rng(1).uniform(0, 1, (4, 3))
    assert np.array_equal(back.reconstruct(x), net.reconstruct(x))


def test_config_validation():
    with pytest.raises(ConfigError):
        AeTrainConfig(w_rc=-1.0)
    with pytest.raises(ConfigError):
        AeTrainConfig(w_rc=0.0, w_ct=0.0)
    with pytest.raises(ConfigError):
        AeTrainConfig(d=0)
    with pytest.raises(ConfigError):
        AeTrainConfig(epochs=0)
    with pytest.raises(ConfigError):
        AeTrainConfig(batch_size=0)
    with pytest.raises(ConfigError):
        AeTrainConfig(lr=0.0)
    with pytest.raises(ConfigError):
        AeTrainConfig(k=0)
    with pytest.raises(ConfigError):
        AeTrainConfig(encoder_hidden=())


# -------------------------------------------------------------- training


def test_regression_only_training_fits_linear_cost(batch):
    def affine_cost(x):
        x = np.atleast_2d(x)
        return x[:, 0] + 0.5 * x[:, 1] - x[:, 2]

    cfg = AeTrainConfig(w_rc=1.0, w_ct=0.0, k=2, epochs=2, iterations=150,
                        batch_size=200, lr=3e-3, seed=0,
                        encoder_hidden=(16,))
    res = train_autoencoder(literal_system(), affine_cost, batch, cfg)
    assert loss_rc(res.net, batch, affine_cost) < 1e-3
    assert res.preimage is None
    assert all(ct == 0.0 for _, _, ct, _ in res.log)


def test_decoder_only_fit_with_frozen_analytic_encoder(batch):
    init = AutoencoderNet(encoder=linear_encoder(),
                          decoder=DenseNetwork.init((2, 10, 16, 1), seed=3))
    cfg = AeTrainConfig(w_rc=1.0, w_ct=0.0, k=2, epochs=8, iterations=1000,
                        batch_size=200, lr=1e-2, seed=0,
                        freeze_encoder=True)
    res = train_autoencoder(literal_system(), quad_cost, batch, cfg,
                            init_net=init)
    assert np.array_equal(res.net.encoder.theta, linear_encoder().theta)
    c = quad_cost(batch)
    err = res.net.reconstruct(batch) - c
    rel_l1 = np.sum(np.abs(err)) / np.sum(np.abs(c))
    assert rel_l1 < 0.005


def test_training_is_deterministic(batch):
    cfg = AeTrainConfig(k=2, epochs=1, iterations=8, batch_size=64,
                        encoder_hidden=(10, 4), seed=11)
    r1 = train_autoencoder(literal_system(), quad_cost, batch, cfg)
    r2 = train_autoencoder(literal_system(), quad_cost, batch, cfg)
    assert np.array_equal(r1.net.encoder.theta, r2.net.encoder.theta)
    assert np.array_equal(r1.net.decoder.theta, r2.net.decoder.theta)
    assert r1.log == r2.log


def test_total_loss_improves_for_most_seeds(batch):
    wins = 0
    for seed in range(20):
        cfg = AeTrainConfig(k=2, epochs=1, iterations=25, batch_size=150,
                            encoder_hidden=(20, 5), seed=seed, d=5)
        res = train_autoencoder(literal_system(), quad_cost, batch, cfg)
        first = cfg.w_rc * res.log[0][1] + cfg.w_ct * res.log[0][2]
        last = cfg.w_rc * res.log[-1][1] + cfg.w_ct * res.log[-1][2]
        if last < first:
            wins += 1
    assert wins >= 18, f"loss improved for only {wins}/20 seeds"


def test_preimage_refresh_period(batch):
    cfg = AeTrainConfig(k=2, epochs=1, iterations=6, batch_size=80,
                        encoder_hidden=(8,), seed=2, d=3)
    res = train_autoencoder(literal_system(), quad_cost, batch, cfg)
    assert res.preimage is not None
    assert res.epsilons is not None and res.epsilons.shape == (2,)
    # refreshed at iterations 0 and 3; members come from the iteration-3
    # batch, whose size is the configured batch size
    assert res.preimage.states.shape == (80, 3)


def test_training_log_csv(tmp_path, batch):
    cfg = AeTrainConfig(k=2, epochs=1, iterations=4, batch_size=50,
                        encoder_hidden=(6,), seed=0)
    res = train_autoencoder(literal_system(), quad_cost, batch, cfg)
    path = tmp_path / "ae_log.csv"
    res.log_to_csv(str(path))
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "iteration,loss_rc,loss_ct,clamped_probes"
    assert len(lines) == 5


def test_training_input_validation(batch):
    cfg = AeTrainConfig(k=2, epochs=1, iterations=2, batch_size=20,
                        encoder_hidden=(4,))
    two_dim = StochasticSystem(state_dim=2, control_dim=2,
                               drift=lambda x: np.zeros_like(np.atleast_2d(x)),
                               diffusion_const=np.eye(2))
    with pytest.raises(UsageError):
        train_autoencoder(two_dim, quad_cost, batch, cfg)
    wrong_net = AutoencoderNet.init(4, 2, hidden=(4,), seed=0)
    with pytest.raises(UsageError):
        train_autoencoder(literal_system(), quad_cost, batch, cfg,
                          init_net=wrong_net)
