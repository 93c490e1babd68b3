import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ial.ial import (
    IalConfig,
    decoder_stage,
    encoder_stage,
    f_weight,
    normalize_aux_grad,
    task_grads,
    train_step,
    uw_eta_grad,
    uw_objective,
    uw_sigma_grad,
)
from ial.net import TaskSpec, forward, init_net, sigma

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


def small_net(seed=0, aux_kind="softmax_ce"):
    tasks = [
        TaskSpec("pri", "primary", "mse", (4, 1)),
        TaskSpec("aux", "auxiliary", aux_kind, (4, 3) if aux_kind == "softmax_ce" else (4, 1)),
    ]
    return init_net([3, 5, 4], tasks, seed)


def small_batch(seed=0, n=8, aux_kind="softmax_ce"):
    rng = np.random.default_rng(seed)
    y_aux = rng.integers(0, 3, size=n) if aux_kind == "softmax_ce" else rng.standard_normal(n)
    return rng.standard_normal((n, 3)), {"pri": rng.standard_normal(n), "aux": y_aux}


# -- uncertainty objective -------------------------------------------------------


def test_uw_sigma_grad_vanishes_at_sqrt_loss():
    assert uw_sigma_grad(4.0, 2.0) == pytest.approx(0.0, abs=1e-15)


def test_uw_sigma_grad_sign():
    # too small a sigma for the loss: objective falls as sigma grows
    assert uw_sigma_grad(4.0, 1.0) < 0
    assert uw_sigma_grad(4.0, 3.0) > 0


@given(st.floats(0.01, 50), st.floats(0.1, 5))
def test_uw_eta_grad_is_chain_rule(loss, sig):
    eta = 2 * math.log(sig)
    h = 1e-6
    num = (uw_objective(loss, math.exp((eta + h) / 2)) - uw_objective(loss, math.exp((eta - h) / 2))) / (2 * h)
    assert uw_eta_grad(loss, eta) == pytest.approx(num, rel=1e-5, abs=1e-7)


# -- f(sigma) --------------------------------------------------------------------


@given(st.floats(1e-6, 1e3))
def test_f_in_unit_interval(sig):
    for g_map in ("clamp", "softplus"):
        w = f_weight(sig, IalConfig(g_map=g_map))
        assert 0.0 <= w <= 1.0


@given(st.floats(1e-4, 10), st.floats(1e-4, 10))
def test_f_non_increasing(a, b):
    lo, hi = sorted((a, b))
    for g_map in ("clamp", "softplus"):
        cfg = IalConfig(g_map=g_map)
        assert f_weight(lo, cfg) >= f_weight(hi, cfg)


def test_f_clamp_values():
    assert f_weight(0.25) == pytest.approx(0.75)
    assert f_weight(1.0) == 0.0
    assert f_weight(3.0) == 0.0


def test_f_softplus_hits_one_at_zero_sigma_limit():
    assert f_weight(1e-12, IalConfig(g_map="softplus")) == pytest.approx(1.0)


def test_f_rejects_non_positive_sigma():
    with pytest.raises(ValueError):
        f_weight(0.0)


def test_config_validation():
    with pytest.raises(ValueError):
        IalConfig(g_map="sigmoid")
    with pytest.raises(ValueError):
        IalConfig(weight_source="magic")
    with pytest.raises(ValueError):
        IalConfig(lr_params=0)


# -- gradient rescaling ----------------------------------------------------------


@settings(max_examples=200)
@given(arrays(np.float64, 6, elements=finite), arrays(np.float64, 6, elements=finite))
def test_normalized_norm_matches_primary(g_aux, g_pri):
    out = normalize_aux_grad(g_aux, g_pri)
    n_pri, n_aux = np.linalg.norm(g_pri), np.linalg.norm(g_aux)
    if n_aux == 0:
        assert np.array_equal(out, g_aux)
    elif n_pri == 0:
        assert not out.any()
    else:
        assert abs(np.linalg.norm(out) - n_pri) <= 1e-12 * n_pri
        # direction is kept
        assert np.dot(out, g_aux) > 0


def test_normalize_does_not_alias_input():
    zero = np.zeros(2)
    out = normalize_aux_grad(zero, np.array([1.0, 0.0]))
    out[0] = 5.0
    assert not zero.any()


# -- stages ----------------------------------------------------------------------


def test_decoder_stage_is_impartial():
    """Perturbing one task's targets leaves every other task's decoder and eta gradient untouched."""
    net = small_net(1)
    x, y = small_batch(1)
    base = decoder_stage(forward(net, x, y), net)
    y2 = dict(y, aux=(y["aux"] + 1) % 3)
    pert = decoder_stage(forward(net, x, y2), net)
    for a, b in zip(base.decoder["pri"], pert.decoder["pri"]):
        assert np.array_equal(a, b)
    assert base.eta["pri"] == pert.eta["pri"]
    assert any(not np.array_equal(a, b) for a, b in zip(base.decoder["aux"], pert.decoder["aux"]))

    y3 = dict(y, pri=y["pri"] + 0.7)
    pert = decoder_stage(forward(net, x, y3), net)
    for a, b in zip(base.decoder["aux"], pert.decoder["aux"]):
        assert np.array_equal(a, b)
    assert base.eta["aux"] == pert.eta["aux"]


def test_decoder_weight_is_uncertainty_weight():
    net = small_net(2)
    x, y = small_batch(2)
    fp = forward(net, x, y)
    raw = task_grads(fp)
    grads = decoder_stage(fp, net)
    w = 1 / (2 * sigma(net, "aux") ** 2)
    for r, d in zip(raw["aux"].decoder, grads.decoder["aux"]):
        np.testing.assert_allclose(d, w * r, rtol=1e-14)


def test_encoder_weights_primary_is_one():
    net = small_net(3)
    net.eta["aux"] = 2 * math.log(0.4)
    x, y = small_batch(3)
    _, report = encoder_stage(forward(net, x, y), net)
    assert report.encoder_weights["pri"] == 1.0
    assert report.encoder_weights["aux"] == pytest.approx(0.6)
    assert report.normalized_grad_norms["aux"] == pytest.approx(report.grad_norms["pri"], rel=1e-12)


def test_sigma_override_matches_eta():
    net = small_net(4)
    x, y = small_batch(4)
    a, _ = encoder_stage(forward(net, x, y), net, sigmas={"pri": 1.0, "aux": 0.5})
    net.eta.update(pri=0.0, aux=2 * math.log(0.5))
    b, _ = encoder_stage(forward(net, x, y), net)
    for u, v in zip(a.encoder, b.encoder):
        np.testing.assert_allclose(u, v, rtol=1e-13)


@pytest.mark.parametrize("mode", ["f_zero", "no_aux"])
def test_single_task_collapse_bitwise(mode):
    """With every auxiliary weight 0 (or no auxiliaries) the encoder sees the primary alone."""
    net = small_net(5)
    x, y = small_batch(5)
    primary_only = init_net([3, 5, 4], [net.task("pri")], 0)
    primary_only.encoder_params = [p.copy() for p in net.encoder_params]
    primary_only.decoder_params = {"pri": [p.copy() for p in net.decoder_params["pri"]]}
    if mode == "f_zero":
        net.eta["aux"] = 2 * math.log(3.0)  # sigma > 1 -> f = 0
        multi = net
    else:
        multi = init_net([3, 5, 4], [net.task("pri")], 0)
        multi.encoder_params = [p.copy() for p in net.encoder_params]
        multi.decoder_params = {"pri": [p.copy() for p in net.decoder_params["pri"]]}
    for _ in range(5):
        before = [p.copy() for p in primary_only.encoder_params]
        train_step(primary_only, (x, {"pri": y["pri"]}))
        upd_single = [p - b for p, b in zip(primary_only.encoder_params, before)]
        before = [p.copy() for p in multi.encoder_params]
        train_step(multi, (x, y if mode == "f_zero" else {"pri": y["pri"]}))
        upd_multi = [p - b for p, b in zip(multi.encoder_params, before)]
        for a, b in zip(upd_single, upd_multi):
            assert np.array_equal(a, b)


def test_train_step_updates_sigma_before_encoder():
    net = small_net(6)
    net.eta["aux"] = 2 * math.log(0.9)
    x, y = small_batch(6)
    ref = net.copy()
    report = train_step(net, (x, y))
    # the encoder saw the post-update sigma
    assert report.sigmas["aux"] == pytest.approx(sigma(net, "aux"))
    assert report.sigmas["aux"] != pytest.approx(sigma(ref, "aux"))
    assert report.decoder_weights["aux"] == pytest.approx(1 / (2 * 0.81))


def test_train_step_frozen_decoder_keeps_params_but_sigma_moves():
    net = small_net(7)
    x, y = small_batch(7)
    dec = [p.copy() for p in net.decoder_params["aux"]]
    eta = net.eta["aux"]
    train_step(net, (x, y), freeze=("aux",))
    for a, b in zip(dec, net.decoder_params["aux"]):
        assert np.array_equal(a, b)
    assert net.eta["aux"] != eta


def test_fixed_weight_source_ignores_sigma():
    net = small_net(8)
    x, y = small_batch(8)
    cfg = IalConfig(weight_source="fixed", fixed_aux_weight=0.1)
    _, report = encoder_stage(forward(net, x, y), net, cfg=cfg)
    assert report.encoder_weights["aux"] == 0.1


# -- straight-line oracle --------------------------------------------------------
#
# A second implementation of the full step with explicit numpy backprop and no
# graph: decoders and log-variances move first, then the encoder is trained on
# the recombined shared-feature gradient with the updated sigmas.


def _oracle_task(z, dec, y, kind):
    v1, c1, v2, c2 = dec
    a = z @ v1 + c1
    r = np.maximum(a, 0.0)
    o = r @ v2 + c2
    n = z.shape[0]
    if kind == "mse":
        t = y.reshape(o.shape)
        loss = np.mean((o - t) ** 2)
        d_o = 2.0 * (o - t) / o.size
    else:
        s = o - o.max(axis=1, keepdims=True)
        p = np.exp(s) / np.exp(s).sum(axis=1, keepdims=True)
        loss = -np.mean(np.log(p[np.arange(n), y]))
        d_o = p.copy()
        d_o[np.arange(n), y] -= 1.0
        d_o /= n
    d_v2 = r.T @ d_o
    d_c2 = d_o.sum(axis=0)
    d_a = (d_o @ v2.T) * (a > 0)
    d_v1 = z.T @ d_a
    d_c1 = d_a.sum(axis=0)
    return loss, d_a @ v1.T, [d_v1, d_c1, d_v2, d_c2]


def _oracle_step(enc, decs, etas, x, ys, kinds, lr=0.05, lr_eta=0.025):
    w1, b1, w2, b2 = enc
    h1 = np.tanh(x @ w1 + b1)
    z = np.tanh(h1 @ w2 + b2)
    zg = {}
    for t in decs:
        loss, zg[t], raw = _oracle_task(z, decs[t], ys[t], kinds[t])
        sig = math.exp(etas[t] / 2)
        decs[t] = [p - lr * raw_g / (2 * sig * sig) for p, raw_g in zip(decs[t], raw)]
        etas[t] = etas[t] - lr_eta * (-loss / sig**3 + 1 / sig) * sig / 2
    sig_aux = math.exp(etas["aux"] / 2)
    f = min(1.0, max(0.0, 1.0 - sig_aux))
    scale = np.linalg.norm(zg["pri"]) / np.linalg.norm(zg["aux"])
    gz = zg["pri"] + f * scale * zg["aux"]
    d2 = gz * (1 - z**2)
    d1 = (d2 @ w2.T) * (1 - h1**2)
    grads = [x.T @ d1, d1.sum(axis=0), h1.T @ d2, d2.sum(axis=0)]
    return [p - lr * g for p, g in zip(enc, grads)], decs, etas


@pytest.mark.parametrize("aux_kind", ["softmax_ce", "mse"])
def test_ten_steps_match_straight_line_oracle(aux_kind):
    net = small_net(11, aux_kind)
    net.eta["aux"] = 2 * math.log(0.6)
    net.eta["pri"] = 2 * math.log(0.8)
    rng = np.random.default_rng(12)
    for p in net.encoder_params + net.decoder_params["pri"] + net.decoder_params["aux"]:
        p += 0.1 * rng.standard_normal(p.shape)
    enc = [p.copy() for p in net.encoder_params]
    decs = {t: [p.copy() for p in v] for t, v in net.decoder_params.items()}
    etas = dict(net.eta)
    kinds = {"pri": "mse", "aux": aux_kind}
    f_seen = []
    for step in range(10):
        x, y = small_batch(100 + step, aux_kind=aux_kind)
        report = train_step(net, (x, y))
        f_seen.append(report.encoder_weights["aux"])
        enc, decs, etas = _oracle_step(enc, decs, etas, x, y, kinds)
    assert all(0 < f < 1 for f in f_seen)
    for a, b in zip(net.encoder_params, enc):
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-10)
    for t in decs:
        for a, b in zip(net.decoder_params[t], decs[t]):
            np.testing.assert_allclose(a, b, rtol=0, atol=1e-10)
        assert abs(net.eta[t] - etas[t]) <= 1e-10


# -- worked examples -------------------------------------------------------------


def test_sigma_derivative_examples():
    assert uw_sigma_grad(8.0, 2.0) == pytest.approx(-0.5)
    assert uw_eta_grad(1.0, 0.0) == 0.0


@pytest.mark.parametrize("sig", [0.3, 1.0, 3.0])
@pytest.mark.parametrize("loss", [0.1, 1.0, 10.0])
def test_sigma_derivative_grid(sig, loss):
    h = 1e-6 * sig
    num = (uw_objective(loss, sig + h) - uw_objective(loss, sig - h)) / (2 * h)
    scale = max(abs(num), 1 / sig)
    assert abs(uw_sigma_grad(loss, sig) - num) / scale < 1e-6


def test_normalize_examples():
    np.testing.assert_allclose(normalize_aux_grad([0.0, 2.0], [3.0, 4.0]), [0.0, 5.0])
    g = np.array([0.3, -1.2])
    np.testing.assert_array_equal(normalize_aux_grad(g, g), g)
    np.testing.assert_array_equal(normalize_aux_grad([1.0, 1.0], [0.0, 0.0]), [0.0, 0.0])


def test_combine_example():
    from ial.ial import combine_z_grads

    net = small_net(0)
    combined, _ = combine_z_grads(
        net, {"pri": np.array([1.0, 0.0]), "aux": np.array([0.0, 1.0])}, {"aux": 0.5}, IalConfig()
    )
    np.testing.assert_allclose(combined, [1.0, 0.5])


def test_frozen_decoder_constant_over_100_steps():
    net = small_net(9)
    x, y = small_batch(9)
    dec = [p.copy() for p in net.decoder_params["aux"]]
    etas = set()
    for _ in range(100):
        train_step(net, (x, y), freeze=("aux",))
        etas.add(net.eta["aux"])
    assert all(np.array_equal(a, b) for a, b in zip(dec, net.decoder_params["aux"]))
    assert len(etas) == 100


def test_stationary_eta_when_sigma_squared_equals_loss():
    net = small_net(10)
    x, y = small_batch(10)
    loss = forward(net, x, y).loss("pri")
    net.eta["pri"] = math.log(loss)
    grads = decoder_stage(forward(net, x, y), net)
    assert abs(grads.eta["pri"]) < 1e-15
