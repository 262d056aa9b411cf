"""Centered log-characteristic-polynomial field: extremes, thick points,
free energy, and linear statistics."""

import math

import numpy as np
import pytest

from ginfield.field import (
    FieldSample,
    Grid,
    TestFunction,
    concentration_check,
    covariance_scan,
    equilibrium_potential,
    evaluate_field,
    field_max,
    free_energy,
    freezing_prediction,
    linear_statistic,
    save_field_sample,
    load_field_sample,
    sigma_variance,
    thick_points,
)
from ginfield.gmc import RadialMollifier, g_test_function
from ginfield.sampler import EigenSample, SeedStream, sample_radii_kostlan


def _point_sample(points, n=None):
    pts = np.asarray(points, dtype=np.complex128)
    return EigenSample(n=n or pts.size, seed=0, backend="matrix-eig", points=pts)


# -- equilibrium potential -------------------------------------------------


def test_potential_on_circle_is_zero():
    for th in (0.0, 1.0, 2.5):
        z = np.exp(1j * th)
        assert float(equilibrium_potential(z)) == pytest.approx(0.0, abs=1e-15)


def test_potential_outside_is_log():
    assert float(equilibrium_potential(2.0 + 0j)) == pytest.approx(
        math.log(2.0), abs=1e-15
    )


def test_potential_at_origin():
    assert float(equilibrium_potential(0j)) == pytest.approx(-0.5, abs=1e-15)


def test_potential_is_continuous_at_the_edge():
    inner = float(equilibrium_potential(1.0 - 1e-9 + 0j))
    outer = float(equilibrium_potential(1.0 + 1e-9 + 0j))
    assert abs(inner - outer) < 1e-8


# -- evaluate_field --------------------------------------------------------


def test_field_vanishes_outside_for_single_origin_eigenvalue():
    # log|z - 0| and N phi(z) cancel exactly outside the disk at N = 1
    s = _point_sample([0j])
    grid = Grid(x0=2.0, y0=0.0, dx=0.5, dy=0.5, nx=2, ny=2)
    fs = evaluate_field(s, grid)
    assert fs.values[0, 0] == pytest.approx(0.0, abs=1e-14)


def test_field_mean_at_bulk_point(pool512):
    # E Psi_N(z) approaches 1/4 at interior points
    grid = Grid(x0=0.3, y0=0.0, dx=1e-3, dy=1e-3, nx=2, ny=2)
    vals = np.array([
        float(evaluate_field(s, grid).values[0, 0]) for s in pool512
    ])
    se = vals.std(ddof=1) / math.sqrt(vals.size)
    assert abs(vals.mean() - 0.25) <= 3.0 * se + 0.01


def test_field_rejects_radii_only_samples():
    s = sample_radii_kostlan(8, SeedStream(30, 0))
    with pytest.raises(ValueError):
        evaluate_field(s, Grid.centered_square(1.0, 16))


def test_field_threads_do_not_change_bytes(pool64, monkeypatch):
    grid = Grid.centered_square(1.1, 64)
    monkeypatch.setenv("GINFIELD_THREADS", "1")
    a = evaluate_field(pool64[0], grid)
    monkeypatch.setenv("GINFIELD_THREADS", "4")
    b = evaluate_field(pool64[0], grid)
    assert a.values.tobytes() == b.values.tobytes()


# -- field_max -------------------------------------------------------------


def test_field_max_constant_surface():
    grid = Grid.centered_square(0.9, 32)
    fs = FieldSample(grid=grid, values=np.full((32, 32), 1.75), n=16, seed=0,
                     quantity="test")
    _, v = field_max(fs, 0.8)
    assert v == 1.75


def test_field_max_single_eigenvalue_closed_form():
    # N = 1, eigenvalue at 0: field = log r - r^2/2 + 1/2, increasing on
    # (0, 1), so the max over D_{1/2} sits on the rim: log(1/2) + 3/8
    s = _point_sample([0j])
    grid = Grid.centered_square(0.55, 256)
    fs = evaluate_field(s, grid)
    z, v = field_max(fs, 0.5)
    assert abs(abs(z) - 0.5) < 0.02
    assert v == pytest.approx(math.log(0.5) + 0.375, abs=2e-3)


def test_field_max_warns_on_coarse_grid(pool64):
    # spacing above 1/(4 sqrt(N)) undersamples the oscillation scale
    grid = Grid.centered_square(0.9, 16)
    fs = evaluate_field(pool64[0], grid)
    with pytest.warns(UserWarning):
        field_max(fs, 0.8)


def test_field_max_requires_overlap():
    grid = Grid(x0=5.0, y0=5.0, dx=0.1, dy=0.1, nx=4, ny=4)
    fs = FieldSample(grid=grid, values=np.zeros((4, 4)), n=4, seed=0,
                     quantity="test")
    with pytest.raises(ValueError):
        field_max(fs, 0.5)


# -- thick points -----------------------------------------------------------


def test_thick_points_beta_zero(pool512):
    grid = Grid.centered_square(0.9, 256)
    fs = evaluate_field(pool512[0], grid)
    rep = thick_points(fs, 0.0, 0.8)
    assert 0.0 < rep.area < math.pi * 0.64
    assert rep.threshold == 0.0


def test_thick_points_beta_one_is_empty(pool512):
    # level log N sits far above the max (~0.6 log N at these sizes)
    grid = Grid.centered_square(0.9, 256)
    empty = 0
    for s in pool512[:20]:
        rep = thick_points(evaluate_field(s, grid), 1.0, 0.8)
        empty += rep.area == 0.0
        assert rep.area == 0.0 or rep.exponent < 0
    assert empty >= 19


def test_thick_points_validation(pool64):
    grid = Grid.centered_square(0.9, 32)
    fs = FieldSample(grid=grid, values=np.zeros((32, 32)), n=64, seed=0)
    with pytest.raises(ValueError):
        thick_points(fs, -0.1, 0.8)
    with pytest.raises(ValueError):
        thick_points(fs, 0.5, 1.5)


# -- free energy ------------------------------------------------------------


def test_freezing_prediction_branches():
    assert freezing_prediction(2.0) == pytest.approx(0.75, abs=1e-15)
    crit = math.sqrt(8.0)
    assert freezing_prediction(crit) == pytest.approx(1.0 / math.sqrt(2.0), abs=1e-15)
    assert freezing_prediction(5.0) == pytest.approx(1.0 / math.sqrt(2.0), abs=1e-15)
    # continuous and flat past the critical point
    assert freezing_prediction(crit - 1e-9) == pytest.approx(
        freezing_prediction(crit + 1e-9), abs=1e-8
    )
    with pytest.raises(ValueError):
        freezing_prediction(0.0)


def test_free_energy_near_prediction(pool1024):
    grid = Grid.centered_square(0.9, 384)
    vals = [
        free_energy(evaluate_field(s, grid), 1.0, 0.8) for s in pool1024[:10]
    ]
    assert abs(np.mean(vals) - freezing_prediction(1.0)) <= 0.15


def test_free_energy_validation(pool64):
    grid = Grid.centered_square(0.9, 32)
    fs = FieldSample(grid=grid, values=np.zeros((32, 32)), n=64, seed=0)
    with pytest.raises(ValueError):
        free_energy(fs, 0.0, 0.8)


# -- linear statistics -------------------------------------------------------


def test_linear_statistic_requires_integral():
    s = _point_sample([0.1 + 0j, 0.2j])
    with pytest.raises(ValueError):
        linear_statistic(s, lambda z: np.abs(z) ** 2)


def test_linear_statistic_quadrature_route():
    s = _point_sample([0.1 + 0j, 0.2j, -0.3 + 0.1j])
    f = lambda z: np.abs(z) ** 2
    a = linear_statistic(s, f, sigma_integral=0.5)
    b = linear_statistic(s, f, sigma_integral="polar-quadrature")
    assert a == pytest.approx(b, abs=1e-6 * s.n)


def test_linear_statistic_second_moment_kostlan():
    # E sum |lambda|^2 - n/2 = 1/2 for every n
    f = lambda z: np.abs(z) ** 2
    vals = np.array([
        linear_statistic(sample_radii_kostlan(100, SeedStream(31, r)), f, 0.5)
        for r in range(10_000)
    ])
    assert vals.mean() == pytest.approx(0.5, abs=0.02)


# -- sigma_variance ----------------------------------------------------------


def test_sigma_variance_zero_function():
    grid = Grid.centered_square(0.6, 64)
    assert sigma_variance(grid, np.zeros((64, 64))) == 0.0


def test_sigma_variance_radial_oracle():
    # f = h(|z|) gives (1/2) int h'(r)^2 r dr; h a smooth bump
    grid = Grid.centered_square(0.6, 1024)
    zz = grid.nodes()
    r = np.abs(zz)
    h0 = 0.45
    with np.errstate(divide="ignore", over="ignore"):
        f = np.where(r < h0, np.exp(-h0**2 / (h0**2 - np.minimum(r, h0 * 0.9999) ** 2)), 0.0)
    got = sigma_variance(grid, f)

    rr = np.linspace(0.0, h0 * (1 - 1e-9), 400_001)
    hh = np.exp(-h0**2 / (h0**2 - rr**2))
    dh = np.gradient(hh, rr)
    want = 0.5 * np.trapezoid(dh * dh * rr, rr)
    assert got == pytest.approx(float(want), rel=1e-3)


def test_sigma_variance_log_growth(mollifier):
    # difference of smoothings at scales eps and 1: variance grows like
    # (1/2) log(1/eps)
    grid = Grid.centered_square(0.3, 768)
    eps_list = [0.1, 0.05, 0.025]
    var = [
        sigma_variance(grid, g_test_function(mollifier, e, 0j, grid).values)
        for e in eps_list
    ]
    x = np.log(1.0 / np.asarray(eps_list))
    slope = np.polyfit(x, var, 1)[0]
    assert 0.45 <= slope <= 0.55


def test_sigma_variance_rejects_nonvanishing_boundary():
    grid = Grid.centered_square(0.6, 64)
    with pytest.raises(ValueError):
        sigma_variance(grid, np.ones((64, 64)))


# -- covariance scan ---------------------------------------------------------


@pytest.fixture(scope="module")
def wide_fields(pool512):
    grid = Grid.centered_square(1.75, 128)
    return [evaluate_field(s, grid) for s in pool512[:100]]


def test_covariance_zero_offset_is_second_moment(wide_fields):
    rep = covariance_scan(wide_fields, 0j, [0j, 0.1 + 0j])
    v0 = np.array([fs.values[fs.grid.nearest_index(0j)] for fs in wide_fields])
    row = rep.results["rows"][0]
    assert row["cov"] == pytest.approx(float((v0 * v0).mean()), rel=1e-12)
    assert row["cov"] > 0


def test_covariance_decorrelates_far_outside(wide_fields):
    rep = covariance_scan(wide_fields, 0j, [1.6 + 0j])
    row = rep.results["rows"][0]
    assert abs(row["cov"]) <= 3.0 * row["stderr"]


def test_covariance_needs_replicas(wide_fields):
    with pytest.raises(ValueError):
        covariance_scan(wide_fields[:50], 0j, [0.1 + 0j])


# -- concentration ------------------------------------------------------------


def test_concentration_zero_function_never_exceeds(pool64):
    grid = Grid.centered_square(0.6, 32)
    fs = [evaluate_field(s, grid) for s in pool64[:10]]
    tf = TestFunction(grid=grid, values=np.zeros((32, 32)),
                      laplacian=np.zeros((32, 32)), label="null")
    rep = concentration_check(fs, [tf], 0.1)
    assert rep.results["exceed_rate"] == 0.0
    assert rep.passes["no-unexpected-exceedance"]


def test_concentration_mollifier_family(pool1024, mollifier):
    grid = Grid.centered_square(0.6, 128)
    rng = np.random.Generator(np.random.Philox(key=32))
    centers = 0.25 * (rng.random(20) - 0.5) + 0.25j * (rng.random(20) - 0.5)
    family = [
        g_test_function(mollifier, 0.1, z0, grid, scale=0.25) for z0 in centers
    ]
    assert all(tf.laplacian_mass() <= 1.0 + 1e-9 for tf in family)
    fields = [evaluate_field(s, grid) for s in pool1024[:200]]
    rep = concentration_check(fields, family, 0.1)
    assert rep.results["exceed_count"] == 0


def test_concentration_rejects_heavy_laplacian(pool64, mollifier):
    grid = Grid.centered_square(0.6, 32)
    fs = [evaluate_field(s, grid) for s in pool64[:2]]
    heavy = g_test_function(mollifier, 0.1, 0j, grid, scale=5.0)
    with pytest.raises(ValueError):
        concentration_check(fs, [heavy], 0.1)


def test_linear_statistic_agrees_with_laplacian_route(pool512, mollifier):
    # X(f) through the eigenvalue sum vs through (1/2pi) int Delta f Psi
    grid = Grid.centered_square(0.6, 512)
    z0 = 0.1 + 0.05j
    tf = g_test_function(mollifier, 0.1, z0, grid)
    s = pool512[0]
    direct = linear_statistic(
        s, lambda z: _tf_eval(mollifier, 0.1, z0, z), "polar-quadrature"
    )
    fs = evaluate_field(s, grid)
    lap_route = float(
        (tf.laplacian * fs.values).sum() * grid.dx * grid.dy / (2.0 * math.pi)
    )
    assert lap_route == pytest.approx(direct, rel=0.01, abs=0.01)


def _tf_eval(m, eps, z0, z):
    d = np.abs(np.asarray(z) - z0)
    return (math.log(eps) + m.potential_profile(d / eps)) - m.potential_profile(d)


# -- serialization -------------------------------------------------------------


def test_field_roundtrip(tmp_path, pool64):
    grid = Grid.centered_square(1.0, 48)
    fs = evaluate_field(pool64[3], grid)
    base = tmp_path / "field"
    save_field_sample(fs, base)
    back = load_field_sample(base)
    assert back.grid == fs.grid
    assert back.n == fs.n
    assert back.seed == fs.seed
    assert back.quantity == fs.quantity
    assert back.clamp_count == fs.clamp_count
    assert np.array_equal(back.values, fs.values)


def test_field_sample_validates_shape_and_finiteness():
    grid = Grid.centered_square(1.0, 8)
    with pytest.raises(ValueError):
        FieldSample(grid=grid, values=np.zeros((4, 4)), n=4, seed=0)
    bad = np.zeros((8, 8))
    bad[0, 0] = np.inf
    with pytest.raises(ValueError):
        FieldSample(grid=grid, values=bad, n=4, seed=0)


def test_grid_nearest_index():
    grid = Grid.centered_square(1.0, 21)  # dx = 0.1
    iy, ix = grid.nearest_index(0.32 + 0.48j)
    assert (grid.xs()[ix], grid.ys()[iy]) == (pytest.approx(0.3), pytest.approx(0.5))
    with pytest.raises(ValueError):
        grid.nearest_index(5.0 + 0j)
