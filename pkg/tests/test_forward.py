import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from elastrtm import forward as fw
from elastrtm import green
from elastrtm.medium import ElasticMedium


@pytest.fixture(scope="module")
def circle():
    return fw.make_curve("circle", {"radius": 1.0}, (0.0, 10.0))


@pytest.fixture(scope="module")
def circle_solver(medium, circle):
    return fw.ForwardSolver(fw.Obstacle(circle, "dirichlet"), medium)


def _rel(a, b):
    return float(np.linalg.norm(np.asarray(a) - np.asarray(b)) / np.linalg.norm(np.asarray(b)))


# ---------------------------------------------------------------------------
# curves


def test_curve_examples():
    kite = fw.make_curve("kite", {}, (0.0, 10.0))
    np.testing.assert_allclose(kite.position(np.array([0.0]))[0], [1.0, 10.0], atol=1e-14)
    leaf = fw.make_curve("leaf", {"p": 3}, (0.0, 10.0))
    np.testing.assert_allclose(leaf.position(np.array([0.0]))[0], [1.2, 10.0], atol=1e-14)
    c = fw.make_curve("circle", {"radius": 1.0}, (0.0, 10.0))
    np.testing.assert_allclose(c.position(np.array([np.pi / 2]))[0], [0.0, 11.0], atol=1e-14)


@pytest.mark.parametrize("kind", ["circle", "kite", "leaf", "peanut", "rounded_square"])
def test_curve_derivatives_and_orientation(kind):
    c = fw.make_curve(kind, {}, (0.0, 10.0))
    t = np.linspace(0, 2 * np.pi, 37)
    h = 1e-5
    fd1 = (c.position(t + h) - c.position(t - h)) / (2 * h)
    fd2 = (c.position(t + h) - 2 * c.position(t) + c.position(t - h)) / h**2
    np.testing.assert_allclose(c.derivative(t), fd1, atol=1e-8)
    np.testing.assert_allclose(c.second_derivative(t), fd2, atol=1e-4)
    # outward normal: moving along it leaves the interior
    p = c.position(t) + 1e-3 * c.normal(t)
    assert not np.any(c.contains(p))
    assert np.all(c.contains(c.position(t) - 1e-3 * c.normal(t)))


def test_circle_geometry(circle):
    assert circle.length() == pytest.approx(2 * np.pi, rel=1e-12)
    np.testing.assert_allclose(circle.curvature(np.linspace(0, 6, 7)), 1.0, rtol=1e-12)


@pytest.mark.parametrize("kind,params,center", [
    ("circle", {"radius": 1.0}, (0.0, 0.5)),
    ("circle", {"radius": -1.0}, (0.0, 10.0)),
    ("leaf", {"p": 3, "amplitude": 1.5}, (0.0, 10.0)),
    ("blob", {}, (0.0, 10.0)),
])
def test_invalid_curves_rejected(kind, params, center):
    with pytest.raises(ValueError):
        fw.make_curve(kind, params, center)


def test_obstacle_and_survey_validation(circle):
    with pytest.raises(ValueError):
        fw.Obstacle(circle, "soft")
    with pytest.raises(ValueError):
        fw.Obstacle(circle, "impedance", eta=-1.0)
    with pytest.raises(ValueError):
        fw.SurveyGeometry(0.0, 3, 3)
    sv = fw.SurveyGeometry(50.0, 1, 5)
    np.testing.assert_array_equal(sv.sources, [0.0])
    np.testing.assert_allclose(sv.receivers, [-50, -25, 0, 25, 50])


# ---------------------------------------------------------------------------
# solver


def _point_source_check(medium, curve, bc, n_points, eta=1.0):
    """Scattered field of an interior point source is reproduced exactly outside."""
    ob = fw.Obstacle(curve, bc, eta=eta)
    op = fw.build_operator([ob], medium, n_points)
    z, p = np.array([[0.1, 10.05]]), np.array([1.0, 0.5])
    X = op.nodes
    u = green.neumann_green_matrix(X, z, medium)[:, 0] @ p
    if bc == "dirichlet":
        f = u.reshape(-1)
    else:
        tr = green.neumann_traction_matrix(X, op.normals, z, medium)[:, 0] @ p
        f = (tr + 1j * op.eta[:, None] * u).reshape(-1)
    phi = op.solve(f)
    xr = np.linspace(-5, 5, 7)
    got = fw.field_at_surface(op, phi[:, None], xr)[:, 0]
    ref = (green.surface_neumann_matrix(xr, z, medium)[:, 0] @ p).reshape(-1)
    return _rel(got, ref)


@pytest.mark.parametrize("bc,tol", [("dirichlet", 1e-10), ("neumann", 1e-7), ("impedance", 1e-7)])
def test_point_source_oracle_circle(medium, circle, bc, tol):
    assert _point_source_check(medium, circle, bc, 128) < tol


@pytest.mark.parametrize("kind", ["kite", "rounded_square"])
def test_point_source_oracle_other_shapes(medium, kind):
    curve = fw.make_curve(kind, {}, (0.0, 10.0))
    assert _point_source_check(medium, curve, "dirichlet", 128) < 1e-5
    assert _point_source_check(medium, curve, "neumann", 128) < 1e-5


def test_operator_layout(medium, circle):
    s = fw.assemble_single_layer(circle, medium, 64)
    assert s.shape == (128, 128) and np.all(np.isfinite(s))
    t = fw.assemble_traction_operator(circle, medium, 64)
    assert t.shape == (128, 128)
    # block (i, j) couples node i to node j: far blocks equal the weighted Green tensor
    disc = fw.CurveDiscretization(circle, 64)
    i, j = 0, 32
    ref = green.neumann_green_matrix(disc.points[[i]], disc.points[[j]], medium)[0, 0]
    assert _rel(s[2 * i:2 * i + 2, 2 * j:2 * j + 2], ref * disc.weights[j]) < 0.5


def test_default_resolution(medium, circle):
    n = fw.default_n_points(circle, medium)
    assert n % 2 == 0 and n >= 10 * circle.length() / (2 * np.pi / medium.wavenumbers.k_s)


def test_solve_density_linear(circle_solver):
    op = circle_solver.operator
    a = fw.solve_density(op, 3.0, [1.0, 0.0])
    b = fw.solve_density(op, 3.0, [0.0, 1.0])
    c = fw.solve_density(op, 3.0, [1.0, 1.0])
    np.testing.assert_allclose(c, a + b, rtol=1e-10, atol=1e-12 * np.abs(c).max())


def test_boundary_residual_off_grid(medium, circle_solver):
    op = circle_solver.operator
    xs = np.array([-20.0, 0.0, 35.0])
    dens = op.solve(fw.incident_rhs(op, xs))

    def rhs(pts):
        n = green.surface_neumann_matrix(xs, pts, medium)  # (S, M, 2, 2)
        return -n.transpose(1, 3, 0, 2).reshape(len(pts), 2, -1)

    assert fw.boundary_residual(op, dens, rhs) < 1e-3


def test_impedance_approaches_dirichlet(medium, circle):
    sv = fw.SurveyGeometry(20.0, 3, 5)
    dd = fw.synthesize_data(fw.Obstacle(circle, "dirichlet"), sv, medium).data
    dist = []
    for eta in (0.0, 1.0, 10.0):
        de = fw.synthesize_data(fw.Obstacle(circle, "impedance", eta=eta), sv, medium).data
        dist.append(_rel(de, dd))
    assert dist[0] > dist[1] > dist[2]


def test_disjoint_obstacles_required(medium, circle):
    other = fw.make_curve("circle", {"radius": 1.0}, (0.5, 10.0))
    with pytest.raises(ValueError):
        fw.build_operator([fw.Obstacle(circle), fw.Obstacle(other)], medium)


def test_two_obstacles_superpose_weakly(medium, circle):
    far = fw.make_curve("circle", {"radius": 0.5}, (6.0, 10.0))
    sv = fw.SurveyGeometry(20.0, 2, 3)
    both = fw.synthesize_data([fw.Obstacle(circle), fw.Obstacle(far)], sv, medium).data
    one = fw.synthesize_data(fw.Obstacle(circle), sv, medium).data
    two = fw.synthesize_data(fw.Obstacle(far), sv, medium).data
    # multiple scattering makes the difference nonzero but small compared to the data
    assert 0 < _rel(both, one + two) < 0.5


# ---------------------------------------------------------------------------
# data


def test_data_layout_and_reciprocity(medium, circle_solver):
    sv = fw.SurveyGeometry(30.0, 7, 7)
    ds = circle_solver.synthesize(sv)
    assert ds.data.shape == (7, 7, 2, 2)
    # e_c . u_{e_q}(x_r, x_s) = e_q . u_{e_c}(x_s, x_r)
    assert _rel(ds.data, ds.data.transpose(1, 0, 3, 2)) < 1e-3
    P = np.diag([1.0, -1.0])
    mirrored = np.einsum("ab,srbc,cd->srad", P, ds.data, P)
    assert _rel(ds.data[::-1, ::-1], mirrored) < 1e-10


def test_zero_dataset_without_obstacles(medium):
    ds = fw.synthesize_data([], fw.SurveyGeometry(10.0, 3, 4), medium)
    assert not np.any(ds.data)


def test_offset_envelope_decays(medium, circle_solver):
    op = circle_solver.operator
    dens = op.solve(fw.incident_rhs(op, [0.0]))
    u = fw.field_at_surface(op, dens, [10.0, 20.0, 40.0]).reshape(3, 2, 2)
    amp = np.linalg.norm(u, axis=(1, 2))
    assert amp[0] > amp[1] > amp[2]


def test_dataset_validation(medium):
    sv = fw.SurveyGeometry(10.0, 2, 2)
    with pytest.raises(ValueError):
        fw.ScatterDataSet(1.0, 0.5, 0.25, sv, np.zeros((2, 3, 2, 2)))
    bad = np.zeros((2, 2, 2, 2), dtype=complex)
    bad[0, 0, 0, 0] = np.nan
    with pytest.raises(ValueError):
        fw.ScatterDataSet(1.0, 0.5, 0.25, sv, bad)


def _random_dataset(ns, nr, seed=0):
    rng = np.random.default_rng(seed)
    data = rng.normal(size=(ns, nr, 2, 2)) + 1j * rng.normal(size=(ns, nr, 2, 2))
    return fw.ScatterDataSet(2 * np.pi, 0.5, 0.25, fw.SurveyGeometry(50.0, ns, nr), data, '{"kind":"test"}')


def test_noise_statistics():
    ds = _random_dataset(160, 160)
    noisy = fw.add_noise(ds, 0.2, 1234)
    nu = noisy.data - ds.data
    assert nu.size >= 10**5
    target = 0.2**2 * np.max(np.abs(ds.data)) ** 2
    assert np.mean(np.abs(nu) ** 2) == pytest.approx(target, rel=0.03)
    assert abs(np.mean(nu.real)) < 0.02 * np.sqrt(target)


def test_noise_determinism():
    ds = _random_dataset(5, 6)
    same = fw.add_noise(ds, 0.0, 9)
    np.testing.assert_array_equal(same.data, ds.data)
    a, b = fw.add_noise(ds, 0.1, 42), fw.add_noise(ds, 0.1, 42)
    np.testing.assert_array_equal(a.data, b.data)
    assert not np.array_equal(a.data, fw.add_noise(ds, 0.1, 43).data)
    with pytest.raises(ValueError):
        fw.add_noise(ds, -0.1, 0)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**64 - 1), st.integers(1, 50))
def test_noise_entries_depend_only_on_index(seed, count):
    long = fw._counter_normals(seed, 64)
    np.testing.assert_array_equal(fw._counter_normals(seed, count), long[:count])


def test_dataset_roundtrip(tmp_path):
    ds = fw.add_noise(_random_dataset(3, 4), 0.1, 77)
    path = tmp_path / "d.txt"
    fw.write_dataset(path, ds)
    back = fw.read_dataset(path)
    np.testing.assert_array_equal(back.data, ds.data)
    assert (back.omega, back.lam, back.mu, back.survey, back.seed, back.sigma) == (
        ds.omega, ds.lam, ds.mu, ds.survey, ds.seed, ds.sigma)
    assert back.obstacle == ds.obstacle
    fw.write_dataset(tmp_path / "e.txt", back)
    assert (tmp_path / "e.txt").read_bytes() == path.read_bytes()


def test_dataset_rejects_unknown_version(tmp_path):
    ds = _random_dataset(2, 2)
    text = fw.dataset_to_text(ds).replace("format_version = 1", "format_version = 99")
    p = tmp_path / "v.txt"
    p.write_text(text)
    with pytest.raises(ValueError):
        fw.read_dataset(p)
    lines = fw.dataset_to_text(ds).splitlines()
    p.write_text("\n".join(lines[:-1]) + "\n")
    with pytest.raises(ValueError):
        fw.read_dataset(p)


def test_other_frequency_matches_scaling():
    # same geometry in wavelengths gives the same data up to the 1/mu_scale factor
    m1 = ElasticMedium(0.5, 0.25, 2 * np.pi)
    m2 = ElasticMedium(2.0, 1.0, 4 * np.pi)
    c = fw.make_curve("circle", {"radius": 1.0}, (0.0, 10.0))
    sv = fw.SurveyGeometry(20.0, 2, 2)
    a = fw.synthesize_data(fw.Obstacle(c), sv, m1, n_points=128).data
    b = fw.synthesize_data(fw.Obstacle(c), sv, m2, n_points=128).data
    assert _rel(4 * b, a) < 1e-8
