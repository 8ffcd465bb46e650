"""Unfolded-layer behavior: identity at init, gradient checks, bookkeeping."""

import numpy as np
import pytest

from conftest import finite_difference, grad_rel_err
from ubct import autodiff as ad
from ubct.network import (ModelParams, PomNet, compute_cond, gdm, init_model,
                          layer_apply, pom)
from ubct.physics import forward_project, make_phantom, power_iteration_L
from ubct.schedule import ScheduleConfig, build_schedule
from ubct.seeding import rng_from


def _small_model(geom, K=3, per_layer=False, seed=1):
    return init_model(geom, K, seed=seed, per_layer=per_layer, L=100.0,
                      hidden=4, emb_dim=4)


@pytest.fixture(scope="module")
def tiny_data(tiny_geom):
    x0 = make_phantom("random_ellipses", tiny_geom.n, seed=5)
    y = forward_project(x0, tiny_geom)
    return x0, y


# ---------------------------------------------------------------------------
# identity at initialization


def test_pom_identity_at_init(tiny_geom):
    net = PomNet(rng_from(0, "net"), hidden=4, emb_dim=4)
    rng = np.random.default_rng(2)
    r = rng.standard_normal(tiny_geom.image_shape)
    cond = rng.standard_normal(tiny_geom.image_shape)
    out = pom(ad.Tensor(r), 0.5, cond, net)
    np.testing.assert_array_equal(out.data, r)


def test_layer_identity_with_zero_step(tiny_geom, tiny_data):
    x0, y = tiny_data
    params = _small_model(tiny_geom)
    params.set_mu_values(np.zeros(params.K))
    sched = build_schedule(ScheduleConfig(K=params.K))
    out = layer_apply(ad.Tensor(x0), y, 2, params, tiny_geom, sched)
    np.testing.assert_array_equal(out.data, x0)


# ---------------------------------------------------------------------------
# gradient-descent module


def test_gdm_zero_step_is_identity(tiny_geom, tiny_data):
    x0, y = tiny_data
    out = gdm(ad.Tensor(x0), y, ad.Tensor(np.array([0.0])), tiny_geom)
    np.testing.assert_array_equal(out.data, x0)


def test_gdm_fixed_point_at_solution(tiny_geom, tiny_data):
    x0, y = tiny_data
    out = gdm(ad.Tensor(x0), forward_project(x0, tiny_geom),
              ad.Tensor(np.array([0.01])), tiny_geom)
    np.testing.assert_allclose(out.data, x0, atol=1e-12)


def test_gdm_descends_data_term(tiny_geom, tiny_data):
    x0, y = tiny_data
    L = power_iteration_L(tiny_geom)
    x = np.zeros(tiny_geom.image_shape)
    before = np.linalg.norm(forward_project(x, tiny_geom) - y)
    out = gdm(ad.Tensor(x), y, ad.Tensor(np.array([1.0 / L])), tiny_geom)
    after = np.linalg.norm(forward_project(out.data, tiny_geom) - y)
    assert after < before


def test_gdm_shape_errors(tiny_geom):
    mu = ad.Tensor(np.array([0.1]))
    with pytest.raises(ValueError):
        gdm(ad.Tensor(np.zeros((8, 8))), np.zeros(tiny_geom.sino_shape), mu, tiny_geom)
    with pytest.raises(ValueError):
        gdm(ad.Tensor(np.zeros(tiny_geom.image_shape)), np.zeros((3, 3)), mu, tiny_geom)


def test_gdm_gradients_match_finite_differences(tiny_geom, tiny_data):
    x0, y = tiny_data
    rng = np.random.default_rng(3)
    x = x0 + 0.1 * rng.standard_normal(x0.shape)
    target = rng.standard_normal(x0.shape)
    mu = ad.Tensor(np.array([0.004]), requires_grad=True)
    xt = ad.Tensor(x.copy(), requires_grad=True)

    loss = ad.mse_loss(gdm(xt, y, mu, tiny_geom), ad.Tensor(target))
    ad.backward(loss)

    def f():
        out = gdm(ad.Tensor(xt.data), y, ad.Tensor(mu.data), tiny_geom)
        return float(np.mean((out.data - target) ** 2))

    assert grad_rel_err(xt.grad, finite_difference(f, xt.data, h=1e-6)) < 1e-4
    assert grad_rel_err(mu.grad, finite_difference(f, mu.data, h=1e-6)) < 1e-4


# ---------------------------------------------------------------------------
# full-layer gradient check


def test_layer_apply_gradients_match_finite_differences(tiny_geom, tiny_data):
    # Joint check through gdm + refinement CNN, against central differences,
    # for the step size, a conv kernel, a time projection, and the head.
    x0, y = tiny_data
    params = _small_model(tiny_geom)
    net = params.nets[0]
    rng = np.random.default_rng(7)
    # the head starts at zero, which would zero every hidden-layer gradient
    net.head_w.data = 0.05 * rng.standard_normal(net.head_w.shape)
    net.head_b.data = 0.05 * rng.standard_normal(net.head_b.shape)

    sched = build_schedule(ScheduleConfig(K=params.K))
    cond = compute_cond(y, tiny_geom)
    x = x0 + 0.1 * rng.standard_normal(x0.shape)
    target = rng.standard_normal(x0.shape)
    k = 2

    xt = ad.Tensor(x.copy(), requires_grad=True)
    loss = ad.mse_loss(layer_apply(xt, y, k, params, tiny_geom, sched, cond=cond),
                       ad.Tensor(target))
    ad.backward(loss)

    def f():
        out = layer_apply(ad.Tensor(xt.data), y, k, params, tiny_geom, sched, cond=cond)
        return float(np.mean((out.data - target) ** 2))

    checked = {
        "x": xt,
        "mu": params.mu[k - 1],
        "conv0": net.conv_w[0],
        "conv_b2": net.conv_b[2],
        "time1": net.time_w[1],
        "time_b0": net.time_b[0],
        "head": net.head_w,
        "head_b": net.head_b,
    }
    for label, p in checked.items():
        fd = finite_difference(f, p.data, h=1e-6)
        assert grad_rel_err(p.grad, fd) < 1e-4, label


# ---------------------------------------------------------------------------
# conditioning channel


def test_compute_cond_normalized(tiny_geom, tiny_data):
    _, y = tiny_data
    cond = compute_cond(y, tiny_geom)
    assert abs(cond.mean()) < 1e-12
    assert abs(cond.std() - 1.0) < 1e-12
    assert cond.tobytes() == compute_cond(y, tiny_geom).tobytes()


def test_pom_cond_shape_error(tiny_geom):
    net = PomNet(rng_from(0, "net"), hidden=4, emb_dim=4)
    with pytest.raises(ValueError):
        pom(ad.Tensor(np.zeros((16, 16))), 0.5, np.zeros((8, 8)), net)


# ---------------------------------------------------------------------------
# model bookkeeping


def test_layer_apply_k_range(tiny_geom, tiny_data):
    x0, y = tiny_data
    params = _small_model(tiny_geom)
    sched = build_schedule(ScheduleConfig(K=params.K))
    for bad in (0, params.K + 1):
        with pytest.raises(ValueError):
            layer_apply(ad.Tensor(x0), y, bad, params, tiny_geom, sched)


def test_init_model_validation(tiny_geom):
    with pytest.raises(ValueError):
        init_model(tiny_geom, 1, L=10.0)


def test_init_model_step_sizes(tiny_geom):
    params = init_model(tiny_geom, 4, L=50.0, hidden=4, emb_dim=4)
    np.testing.assert_allclose(params.mu_values(), 0.02)
    assert params.K == 4
    assert len(params.nets) == 1  # shared weights by default


def test_per_layer_variant(tiny_geom):
    params = _small_model(tiny_geom, K=3, per_layer=True)
    assert len(params.nets) == 3
    assert params.net_for(1) is not params.net_for(2)
    names = [n for n, _ in params.named_arrays()]
    assert any(n.startswith("pom1.") for n in names)
    assert any(n.startswith("pom3.") for n in names)
    shared = _small_model(tiny_geom, K=3)
    assert shared.net_for(1) is shared.net_for(3)
    assert all(n.startswith("pom.") for n, _ in shared.named_arrays())


def test_eval_counter(tiny_geom, tiny_data):
    x0, y = tiny_data
    params = _small_model(tiny_geom)
    sched = build_schedule(ScheduleConfig(K=params.K))
    assert params.eval_count == 0
    layer_apply(ad.Tensor(x0), y, 1, params, tiny_geom, sched)
    layer_apply(ad.Tensor(x0), y, 2, params, tiny_geom, sched)
    assert params.eval_count == 2
    params.reset_eval_count()
    assert params.eval_count == 0


def test_named_arrays_roundtrip(tiny_geom):
    src = _small_model(tiny_geom, seed=11)
    rng = np.random.default_rng(0)
    for _, p in src.nets[0].named_parameters():
        p.data = rng.standard_normal(p.shape)
    records = {name: arr.copy() for name, arr in src.named_arrays()}

    dst = _small_model(tiny_geom, seed=99)
    dst.load_arrays(records)
    for (na, a), (nb, b) in zip(src.named_arrays(), dst.named_arrays()):
        assert na == nb
        np.testing.assert_array_equal(a, b)


def test_load_arrays_shape_mismatch(tiny_geom):
    params = _small_model(tiny_geom)
    records = dict(params.named_arrays())
    records["pom.head.weight"] = np.zeros((2, 2))
    with pytest.raises(ValueError):
        params.load_arrays(records)


def test_mu_projection():
    mu = [ad.Tensor(np.array([v]), requires_grad=True) for v in (-0.5, 0.3)]
    params = ModelParams([PomNet(rng_from(0), hidden=4, emb_dim=4)], mu, shared=True)
    params.project_mu()
    np.testing.assert_array_equal(params.mu_values(), [0.0, 0.3])
    with pytest.raises(ValueError):
        params.set_mu_values(np.zeros(3))
