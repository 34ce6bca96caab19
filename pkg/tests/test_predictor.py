import math
from fractions import Fraction

import numpy as np
import pytest

from dtcsim.exceptions import ConfigError, InvalidInputError
from dtcsim.metrics import nmse
from dtcsim.predictor import (
    CSIReconstructor,
    PathLossRegressor,
    PilotPattern,
    RicianConfig,
    gain_from_pl,
    interpolate_pilots,
    load_model,
    predict_pl,
    reconstruct_csi,
    sample_pilots,
    save_model,
    synthesize_predicted_channel,
    synthesize_predicted_links,
    train_pl_predictor,
    train_recon,
    write_training_csv,
)
from dtcsim.predictor.channel import interpolation_matrix
from dtcsim.predictor.nn import conv1d_backward, conv1d_forward
from dtcsim.propagation import array_response
from dtcsim.wek import N_DESCRIPTORS

LAM = 0.05


# -- channel synthesis --------------------------------------------------------


@pytest.mark.parametrize("pl,n_sc,expected", [(0.0, 1, 1.0), (30.0, 10, 1e-4), (86.9, 666, 3.066e-12)])
def test_gain_from_pl(pl, n_sc, expected):
    assert gain_from_pl(pl, n_sc) == pytest.approx(expected, rel=1e-3)


def test_los_limit(rng):
    h = synthesize_predicted_channel(2e-9, 0.3, 0, RicianConfig(1e12), 4, LAM / 2, LAM, rng)
    ref = math.sqrt(2e-9) * array_response(0.3, 4, LAM / 2, LAM)
    assert np.linalg.norm(h - ref) / np.linalg.norm(ref) < 1e-5


def test_zero_gain(rng):
    assert not synthesize_predicted_channel(0.0, 0.3, 0, RicianConfig(1.0), 4, LAM / 2, LAM, rng).any()


def test_negative_gain(rng):
    with pytest.raises(InvalidInputError):
        synthesize_predicted_channel(-1.0, 0.3, 0, RicianConfig(1.0), 4, LAM / 2, LAM, rng)


def test_seeded_synthesis_is_reproducible():
    a = synthesize_predicted_channel(1.0, 0.1, 1, RicianConfig(), 4, LAM / 2, LAM, np.random.default_rng(3))
    b = synthesize_predicted_channel(1.0, 0.1, 1, RicianConfig(), 4, LAM / 2, LAM, np.random.default_rng(3))
    np.testing.assert_array_equal(a, b)


def test_links_flat_and_shaped(rng):
    gain = np.array([[1.0, 4.0], [0.0, 2.0]])
    h = synthesize_predicted_links(gain, np.zeros((2, 2)), np.array([[0, 1], [0, 1]]), RicianConfig(1e12),
                                   3, np.full((2, 2), LAM / 2), LAM, rng, 5)
    assert h.shape == (2, 2, 3, 5) and h.dtype == np.complex64
    assert np.all(h == h[..., :1])
    np.testing.assert_allclose(h[0, 0, :, 0], np.ones(3), rtol=1e-5)
    assert not h[1, 0].any()


def test_links_mean_power(rng):
    g = np.full(20000, 3.0)
    for blocked in (0, 1):
        h = synthesize_predicted_links(g, np.full(g.shape, 0.4), np.full(g.shape, blocked), RicianConfig(1.0),
                                       4, np.full(g.shape, LAM / 2), LAM, rng, 1)
        power = np.mean(np.sum(np.abs(h[..., 0]) ** 2, axis=-1))
        assert power == pytest.approx(12.0, rel=0.03)


# -- pilots ----------------------------------------------------------------------


def test_pilot_comb():
    p = PilotPattern(Fraction(1, 10), 100)
    assert p.count == 10
    np.testing.assert_array_equal(p.indices, np.arange(0, 100, 10))


def test_pilot_ratio_bounds():
    with pytest.raises(InvalidInputError):
        PilotPattern(Fraction(3, 2), 10)


def test_full_ratio_no_noise_is_exact(rng):
    h = rng.standard_normal((2, 3, 12)) + 1j * rng.standard_normal((2, 3, 12))
    partial = sample_pilots(h, PilotPattern(1, 12), 0.0, rng)
    np.testing.assert_array_equal(partial.values, h)
    np.testing.assert_array_equal(interpolate_pilots(partial), h)


def test_noise_free_pilots_match_truth(rng):
    h = rng.standard_normal((3, 40)) + 1j * rng.standard_normal((3, 40))
    pattern = PilotPattern(Fraction(1, 4), 40)
    partial = sample_pilots(h, pattern, 0.0, rng)
    np.testing.assert_array_equal(partial.values, h[:, pattern.indices])


def test_pilot_size_mismatch(rng):
    with pytest.raises(InvalidInputError):
        sample_pilots(np.zeros((2, 11)), PilotPattern(Fraction(1, 2), 12), 0.0, rng)


def test_interpolation_linear_between_pilots():
    m = interpolation_matrix([0, 4, 8], 10)
    np.testing.assert_allclose(m @ np.array([0.0, 4.0, 8.0]), [0, 1, 2, 3, 4, 5, 6, 7, 8, 8])


# -- conv primitive -----------------------------------------------------------------


def _numeric_grad(f, x, eps=1e-6):
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + eps
        up = f()
        x[i] = old - eps
        down = f()
        x[i] = old
        g[i] = (up - down) / (2 * eps)
    return g


@pytest.mark.parametrize("mode", ["zeros", "edge"])
def test_conv_backward(rng, mode):
    x = rng.standard_normal((2, 3, 7))
    w = rng.standard_normal((4, 3, 3))
    b = rng.standard_normal(4)
    up = rng.standard_normal((2, 4, 7))

    def f():
        return float(np.sum(conv1d_forward(x, w, b, mode)[0] * up))

    _, cache = conv1d_forward(x, w, b, mode)
    dx, dw, db = conv1d_backward(up, cache)
    np.testing.assert_allclose(dx, _numeric_grad(f, x), rtol=1e-6, atol=1e-8)
    np.testing.assert_allclose(dw, _numeric_grad(f, w), rtol=1e-6, atol=1e-8)
    np.testing.assert_allclose(db, _numeric_grad(f, b), rtol=1e-6, atol=1e-8)


# -- path-loss CNN ---------------------------------------------------------------------


def _descriptors(rng, n):
    d = np.zeros((n, N_DESCRIPTORS))
    d[:, 0] = rng.integers(0, 2, n)
    d[:, 4] = 10 ** rng.uniform(-12, -8, n)
    d[:, 6] = 10 ** rng.uniform(-14, -9, n)
    return d


def test_pl_overfit_constant(rng):
    d = _descriptors(rng, 16)
    model = train_pl_predictor([(d, np.full(16, 80.0))], epochs=200, seed=1)
    assert np.mean((predict_pl(model, d) - 80.0) ** 2) < 1e-2


def test_pl_zero_epochs_keeps_init(rng):
    d = _descriptors(rng, 8)
    model = train_pl_predictor([(d, np.linspace(60, 90, 8))], epochs=0, seed=4)
    init = PathLossRegressor(window=8)._init_params(np.random.default_rng(4))
    for k, v in init.items():
        np.testing.assert_array_equal(model.params_[k], v)


def test_pl_deterministic(rng):
    data = [(_descriptors(rng, 8), rng.uniform(60, 90, 8)) for _ in range(5)]
    a = train_pl_predictor(data, epochs=5, seed=2)
    b = train_pl_predictor(data, epochs=5, seed=2)
    for k in a.params_:
        np.testing.assert_array_equal(a.params_[k], b.params_[k])


def test_pl_constant_input_constant_output(rng):
    data = [(_descriptors(rng, 8), rng.uniform(60, 90, 8)) for _ in range(5)]
    model = train_pl_predictor(data, epochs=3, seed=0)
    row = _descriptors(rng, 1)
    pred = predict_pl(model, np.repeat(row, 8, axis=0))
    np.testing.assert_allclose(pred, pred[0], rtol=1e-12)


def test_pl_shape_errors(rng):
    model = train_pl_predictor([(_descriptors(rng, 8), np.full(8, 70.0))], epochs=1)
    with pytest.raises(InvalidInputError):
        predict_pl(model, _descriptors(rng, 9))
    with pytest.raises(InvalidInputError):
        train_pl_predictor([])


def test_pl_gradient(rng):
    model = PathLossRegressor(window=6, channels=(3, 4))
    params = model._init_params(rng)
    for k in ("b1", "b2", "b3"):
        params[k] = rng.standard_normal(params[k].shape) * 0.1
    x = rng.standard_normal((3, 3, 6))
    y = rng.standard_normal((3, 6))
    _, grads = model._loss_grad(params, x, y)
    for k, p in params.items():
        num = _numeric_grad(lambda: model._loss_grad(params, x, y)[0], p)
        np.testing.assert_allclose(grads[k], num, rtol=1e-4, atol=1e-9)


def test_pl_sequence_longer_than_window(rng):
    data = [(_descriptors(rng, 8), rng.uniform(60, 90, 8)) for _ in range(4)]
    model = train_pl_predictor(data, epochs=2)
    assert model.predict_sequence(_descriptors(rng, 21)).shape == (21,)


# -- reconstruction network -------------------------------------------------------------


def _recon_data(rng, n=20, n_t=2, n_sc=24, ratio=Fraction(1, 4)):
    f = np.arange(n_sc)
    taus = rng.uniform(0, 0.08, (n, 1, 1, 3))
    gains = rng.standard_normal((n, n_t, 1, 3)) + 1j * rng.standard_normal((n, n_t, 1, 3))
    h = np.sum(gains * np.exp(-2j * np.pi * taus * f[None, None, :, None]), axis=-1)
    pattern = PilotPattern(ratio, n_sc)
    partial = sample_pilots(h, pattern, 0.0, rng)
    return h, partial, pattern, _descriptors(rng, n)


def test_zero_init_outputs_zero(rng):
    h, partial, pattern, wek = _recon_data(rng, n=3)
    net = CSIReconstructor(pattern.indices, 24, init="zeros", epochs=0).fit(partial.values, h, wek=wek)
    out = net.predict(partial.values, wek=wek)
    assert not out.any()
    assert nmse(out, h) == pytest.approx(1.0)


def test_untrained_equals_linear_interpolation(rng):
    h, partial, pattern, wek = _recon_data(rng, n=4)
    net = CSIReconstructor(pattern.indices, 24, epochs=0).fit(partial.values, h, wek=wek)
    params = dict(net.params_)
    params["d2w"] = np.zeros_like(params["d2w"])
    net.params_ = params
    np.testing.assert_allclose(net.predict(partial.values, wek=wek), interpolate_pilots(partial), atol=1e-12)


def test_recon_overfit_single_sample(rng):
    # The output is an interpolated comb, so the target is taken from that family.
    pattern = PilotPattern(Fraction(1, 4), 24)
    comb = rng.standard_normal((1, 2, 6)) + 1j * rng.standard_normal((1, 2, 6))
    h = comb @ interpolation_matrix(pattern.indices, 24).T
    noisy = sample_pilots(h, pattern, 0.05, rng)
    wek = _descriptors(rng, 1)
    net = CSIReconstructor(pattern.indices, 24, epochs=3000, learning_rate=0.2).fit(noisy.values, h, wek=wek)
    scale = np.sqrt(np.mean(np.abs(noisy.values) ** 2))
    energy = np.sum(np.abs(h / scale) ** 2)
    assert net.training_loss(noisy.values, h, wek=wek) < 1e-6 * energy


def test_recon_deterministic(rng):
    h, partial, pattern, wek = _recon_data(rng)
    a = CSIReconstructor(pattern.indices, 24, epochs=3, random_state=5).fit(partial.values, h, wek=wek)
    b = CSIReconstructor(pattern.indices, 24, epochs=3, random_state=5).fit(partial.values, h, wek=wek)
    assert a.loss_curve_ == b.loss_curve_


def test_recon_zero_epochs_initial_weights(rng):
    h, partial, pattern, wek = _recon_data(rng, n=2)
    net = CSIReconstructor(pattern.indices, 24, epochs=0, random_state=9).fit(partial.values, h, wek=wek)
    init = net._init_params(np.random.default_rng(9), 2)
    for k, v in init.items():
        np.testing.assert_array_equal(net.params_[k], v)


def test_recon_training_lowers_loss(rng):
    h, partial, pattern, wek = _recon_data(rng, n=60)
    noisy = sample_pilots(h, pattern, 0.05, rng)
    net = CSIReconstructor(pattern.indices, 24, epochs=30).fit(noisy.values, h, wek=wek)
    assert net.loss_curve_[-1] < net.loss_curve_[0]


def test_recon_gradient(rng):
    net = CSIReconstructor(np.array([0, 3, 6]), 8, hidden=3, kernel_size=3, wek_channels=2)
    params = net._init_params(rng, 2)
    for k in params:
        params[k] = params[k] + 0.3 * rng.standard_normal(params[k].shape)
    x = rng.standard_normal((2, 4, 3))
    w = rng.standard_normal((2, 1, N_DESCRIPTORS))
    target = rng.standard_normal((2, 2, 8)) + 1j * rng.standard_normal((2, 2, 8))
    interp = interpolation_matrix([0, 3, 6], 8)
    _, grads = net._loss_grad(params, x, w, interp, target)
    for k, p in params.items():
        num = _numeric_grad(lambda: net._loss_grad(params, x, w, interp, target)[0], p)
        np.testing.assert_allclose(grads[k], num, rtol=1e-4, atol=1e-9)


def test_train_recon_and_reconstruct(rng):
    h, partial, pattern, wek = _recon_data(rng, n=6)
    data = [(sample_pilots(h[i], pattern, 0.0, rng), wek[i], h[i]) for i in range(6)]
    net = train_recon(data, epochs=2)
    assert reconstruct_csi(net, data[0][0], wek[0]).shape == (2, 24)
    with pytest.raises(InvalidInputError):
        train_recon([])


def test_recon_shape_mismatch(rng):
    h, partial, pattern, wek = _recon_data(rng, n=2)
    net = CSIReconstructor(pattern.indices, 24, epochs=0).fit(partial.values, h, wek=wek)
    with pytest.raises(InvalidInputError):
        net.predict(partial.values[:, :, :-1], wek=wek)
    with pytest.raises(InvalidInputError):
        net.predict(partial.values, wek=None)


def test_no_wek_ablation_ignores_descriptors(rng):
    h, partial, pattern, wek = _recon_data(rng, n=4)
    net = CSIReconstructor(pattern.indices, 24, epochs=2, use_wek=False).fit(partial.values, h)
    np.testing.assert_array_equal(net.predict(partial.values, wek=wek), net.predict(partial.values))


# -- weight files ------------------------------------------------------------------------


def test_weight_round_trip(tmp_path, rng):
    pl = train_pl_predictor([(_descriptors(rng, 8), np.full(8, 70.0))], epochs=2)
    h, partial, pattern, wek = _recon_data(rng, n=3)
    recon = CSIReconstructor(pattern.indices, 24, epochs=1).fit(partial.values, h, wek=wek)
    for model, x in ((pl, rng.standard_normal((2, 3, 8))), (recon, partial.values)):
        save_model(tmp_path / "m.bin", model, metadata={"tag": "x"})
        again = load_model(tmp_path / "m.bin")
        if isinstance(model, CSIReconstructor):
            np.testing.assert_array_equal(again.predict(x, wek=wek), model.predict(x, wek=wek))
        else:
            np.testing.assert_array_equal(again.predict(x), model.predict(x))


def test_weight_file_garbage(tmp_path):
    (tmp_path / "bad.bin").write_bytes(b"\x05\x00\x00\x00\x00\x00\x00\x00nope!")
    with pytest.raises(ConfigError):
        load_model(tmp_path / "bad.bin")


def test_training_csv(tmp_path):
    write_training_csv(tmp_path / "t.csv", {"pl": [2.0, 1.0]})
    assert (tmp_path / "t.csv").read_text() == "model,epoch,loss\npl,1,2.0\npl,2,1.0\n"
