import math

import numpy as np
import pytest

from dssns.dss_fields import (StripField, StripGrid, bracket, divergence_residual, dss_extend,
                              epoch_index, read_snapshot, swirl_component, write_snapshot,
                              x_norm, x_norm_samples)


def ss_field(x, t):
    """x / (|x|^2 + t): self-similar of degree -1, hence DSS for every lambda."""
    x = np.asarray(x, dtype=float)
    t = np.asarray(t, dtype=float)
    return x / ((x * x).sum(-1) + t)[..., None]


def test_bracket():
    assert bracket([0.0, 0.0, 0.0]) == pytest.approx(math.sqrt(2))
    assert np.allclose(bracket(np.array([[3.0, 4.0, 0.0], [1.0, 1.0, 1.0]])),
                       [math.sqrt(27), math.sqrt(5)])


def test_epoch_index_matches_integer_scan(rng):
    lam = 1.7
    t = lam ** rng.uniform(-12, 12, 500)
    k = epoch_index(t, lam)
    for tt, kk in zip(t, k):
        scan = next(j for j in range(-20, 20) if 1.0 <= lam ** (2 * j) * tt < lam * lam)
        assert kk == scan
    assert epoch_index(np.array([1.0, lam * lam]), lam).tolist() == [0, -1]
    with pytest.raises(ValueError):
        epoch_index(np.array([0.0]), lam)


@pytest.mark.parametrize("kw", [dict(lam=1.0), dict(n_rho=3), dict(n_phi=5),
                                dict(rho_min=2.0), dict(angular="fourier")])
def test_grid_validation(kw):
    base = dict(lam=2.0, n_rho=6, rho_min=-1.0, rho_max=1.0, n_theta=2, n_phi=4, n_time=2)
    base.update(kw)
    with pytest.raises(ValueError):
        StripGrid(**base)


def test_field_shape_validation(tiny_grid):
    with pytest.raises(ValueError):
        StripField(tiny_grid, np.zeros((2, 2, 2, 3)), 0.5)
    with pytest.raises(ValueError):
        StripField.zeros(tiny_grid, 1.5)


def test_extension_reproduces_nodes(small_grid, rng):
    v = StripField(small_grid, rng.normal(size=small_grid.shape + (3,)), 0.5)
    X, T = small_grid.node_arrays()
    assert np.allclose(dss_extend(v, X, T), v.samples.reshape(-1, 3), rtol=1e-12, atol=1e-12)


def test_extension_is_dss(small_grid, rng):
    v = StripField(small_grid, rng.normal(size=small_grid.shape + (3,)), 0.5)
    x = rng.normal(size=(40, 3)) * 2
    t = rng.uniform(0.05, 30.0, 40)
    lam = small_grid.lam
    a = dss_extend(v, x, t)
    for k in (-2, 1, 3):
        b = lam ** k * dss_extend(v, lam ** k * x, lam ** (2 * k) * t)
        assert np.allclose(a, b, rtol=1e-12, atol=1e-14)


@pytest.mark.parametrize("angular", ["spectral", "bilinear"])
def test_interpolation_of_self_similar_field(angular, rng):
    g = StripGrid(2.0, 24, math.log(0.25), math.log(32.0), 6, 12, 4, angular)
    v = StripField.from_function(g, 0.5, ss_field)
    x = rng.normal(size=(60, 3))
    x *= (np.exp(rng.uniform(math.log(0.5), math.log(8), 60)) / np.linalg.norm(x, axis=1))[:, None]
    t = rng.uniform(1.0, 4.0, 60)
    err = np.linalg.norm(dss_extend(v, x, t) - ss_field(x, t), axis=1) * bracket(x) ** 1.5
    tol = 2e-3 if angular == "spectral" else 5e-2
    assert err.max() <= tol * x_norm(v)


def test_x_norm_of_known_field(tiny_grid):
    v = StripField.from_function(tiny_grid, 0.5, lambda x, t: np.tile([0.0, 0.0, 1.0], (len(t), 1)))
    r = tiny_grid.radii[-1]
    assert x_norm_samples(tiny_grid, 0.5, v.samples) == pytest.approx((r * r + 2) ** 0.75)
    assert x_norm(StripField.zeros(tiny_grid, 0.5)) == 0.0


def test_snapshot_roundtrip(tmp_path, small_grid, rng):
    v = StripField(small_grid, rng.normal(size=small_grid.shape + (3,)), 0.4)
    p = tmp_path / "snap.txt"
    write_snapshot(v, p, {"config_hash": "abc"})
    w = read_snapshot(p)
    assert w.grid == v.grid and w.gamma == v.gamma
    assert np.array_equal(w.samples, v.samples)
    assert p.read_text().startswith("# config_hash=abc")


def test_swirl_and_divergence_diagnostics():
    rot = lambda x: np.stack([-x[:, 1], x[:, 0], np.zeros(len(x))], axis=1)
    pts = np.array([[1.0, 0.0, 0.0], [0.0, 2.0, 1.0]])
    assert swirl_component(rot, pts) == pytest.approx(2.0)
    assert swirl_component(lambda x: x, pts) == pytest.approx(0.0, abs=1e-15)
    assert divergence_residual(lambda x: x, pts, 1e-3) == pytest.approx(3.0)
    assert divergence_residual(rot, pts, 1e-3) == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ValueError):
        divergence_residual(rot, pts, 0.0)
    with pytest.warns(UserWarning):
        swirl_component(rot, np.array([[0.0, 0.0, 1.0], [1.0, 0.0, 0.0]]))
