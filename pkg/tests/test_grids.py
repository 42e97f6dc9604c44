"""Grids, fields, sources, measures, and the discrete gradient pair."""

import math

import numpy as np
import pytest

import massopt as mo


# -- grid structure ---------------------------------------------------------

def test_interval_volumes_and_boundary():
    g = mo.interval_grid(-1.0, 1.0, 16)
    assert np.sum(g.cell_volumes) == pytest.approx(2.0, rel=1e-14)
    assert g.boundary_mask[0] and g.boundary_mask[-1]
    assert np.count_nonzero(g.boundary_mask) == 2


@pytest.mark.parametrize("dim,exact", [
    (1, 2.0), (2, math.pi), (3, 4.0 * math.pi / 3.0)])
def test_radial_ball_volume(dim, exact):
    g = mo.radial_grid(1.0, 257, dim)
    assert np.sum(g.cell_volumes) == pytest.approx(exact, rel=1e-10)
    # r = 0 is an interior point of the ball; only r = R is boundary
    assert not g.boundary_mask[0] and g.boundary_mask[-1]
    assert np.count_nonzero(g.boundary_mask) == 1


def test_rectangle_volume_and_boundary():
    g = mo.rectangle_grid(0.0, 2.0, 0.0, 1.0, 10, 6)
    assert np.sum(g.cell_volumes) == pytest.approx(2.0, rel=1e-14)
    assert np.count_nonzero(g.boundary_mask) == 2 * (10 + 1) + 2 * (6 + 1) - 4


# -- gradient ---------------------------------------------------------------

def test_gradient_parabola_exact_at_centers():
    g = mo.interval_grid(-1.0, 1.0, 40)
    u = mo.ScalarField.from_function(g, lambda p: 1.0 - p[0] ** 2)
    gr = mo.gradient(u)
    assert np.allclose(gr.values[:, 0], -2.0 * g.cell_centers[:, 0], atol=1e-13)


def test_gradient_of_zero_field():
    g = mo.radial_grid(1.0, 20, 2)
    gr = mo.gradient(mo.ScalarField.zeros(g))
    assert np.all(gr.values == 0.0)


def test_gradient_rectangle_bilinear():
    g = mo.rectangle_grid(0.0, 1.0, 0.0, 1.0, 12, 9)
    u = mo.ScalarField.from_function(g, lambda p: p[0] * p[1])
    gr = mo.gradient(u)
    assert np.allclose(gr.values[:, 0], g.cell_centers[:, 1], atol=1e-13)
    assert np.allclose(gr.values[:, 1], g.cell_centers[:, 0], atol=1e-13)


@pytest.mark.parametrize("make", [
    lambda n: mo.interval_grid(-1.0, 1.0, n),
    lambda n: mo.rectangle_grid(0.0, 1.0, 0.0, 1.0, n, n)])
def test_gradient_convergence_order(make):
    errs = []
    for n in (16, 32, 64):
        g = make(n)
        if g.dim == 1:
            u = mo.ScalarField.from_function(g, lambda p: math.sin(2.0 * p[0]))
            exact = 2.0 * np.cos(2.0 * g.cell_centers[:, 0])
            got = mo.gradient(u).values[:, 0]
        else:
            u = mo.ScalarField.from_function(
                g, lambda p: math.sin(2.0 * p[0]) * math.sin(p[1]))
            exact = 2.0 * np.cos(2.0 * g.cell_centers[:, 0]) * np.sin(g.cell_centers[:, 1])
            got = mo.gradient(u).values[:, 0]
        errs.append(np.max(np.abs(got - exact)))
    order1 = math.log2(errs[0] / errs[1])
    order2 = math.log2(errs[1] / errs[2])
    assert min(order1, order2) >= 1.9


# -- adjointness ------------------------------------------------------------

@pytest.mark.parametrize("grid", [
    mo.interval_grid(-1.0, 1.0, 33),
    mo.radial_grid(1.0, 25, 3),
    mo.rectangle_grid(0.0, 1.0, 0.0, 2.0, 9, 7)])
def test_weighted_divergence_adjointness(grid):
    rng = np.random.default_rng(5)
    u = rng.standard_normal(grid.n_nodes)
    u[grid.boundary_mask] = 0.0
    sigma = mo.VectorField(grid, rng.standard_normal((grid.n_cells, grid.dim)))
    atoms = []
    if grid.dim == 1 and grid.kind == "interval":
        atoms = [(np.array([0.31]), 0.6)]
    mu = mo.DiscreteMeasure(grid, rng.random(grid.n_cells), atoms=atoms)
    div = mo.divergence_weighted(mu, sigma)
    lhs = float(u @ div)
    gv = grid.gradient_apply(u)
    rhs = -float(np.sum(sigma.values * gv * (grid.cell_volumes * mu.ac_density)[:, None]))
    for loc, mass in mu.atoms:
        rhs -= mass * float(sigma.at_point(loc) @ mo.VectorField(grid, gv).at_point(loc))
    scale = 1.0 + abs(lhs) + abs(rhs)
    assert abs(lhs - rhs) <= 1e-12 * scale


def test_divergence_identity_1d():
    # mu = Lebesgue, sigma = -x: -(sigma)' = 1, nodal values match the load of f = 1
    g = mo.interval_grid(-1.0, 1.0, 64)
    mu = mo.DiscreteMeasure.lebesgue(g)
    sigma = mo.VectorField(g, -g.cell_centers)
    div = mo.divergence_weighted(mu, sigma)
    load = mo.SourceTerm.constant(g, 1.0).load_vector()
    interior = ~g.boundary_mask
    assert np.max(np.abs(-div - load)[interior]) <= 1e-12


def test_divergence_zero_flux():
    g = mo.interval_grid(-1.0, 1.0, 16)
    mu = mo.DiscreteMeasure.lebesgue(g)
    div = mo.divergence_weighted(mu, mo.VectorField(g, np.zeros((g.n_cells, 1))))
    assert np.all(div == 0.0)


def test_divergence_single_atom():
    # <div(mu sigma), hat_j> = -sigma(p) . grad hat_j(p) for mu = delta_p
    g = mo.interval_grid(-1.0, 1.0, 8)
    p = np.array([0.1])
    mu = mo.DiscreteMeasure(g, np.zeros(g.n_cells), atoms=[(p, 1.0)])
    sigma = mo.VectorField(g, np.ones((g.n_cells, 1)))
    div = mo.divergence_weighted(mu, sigma)
    (i, _w), = g.cell_weights_at(p)
    h = g.cell_h[i]
    assert div[i] == pytest.approx(1.0 / h)
    assert div[i + 1] == pytest.approx(-1.0 / h)


# -- sources ----------------------------------------------------------------

def test_pair_source_quadrature():
    g = mo.interval_grid(-1.0, 1.0, 512)
    f = mo.SourceTerm.constant(g, 1.0)
    u = mo.ScalarField.from_function(g, lambda p: (1.0 - p[0] ** 2) / 2.0)
    assert mo.pair_source(f, u) == pytest.approx(2.0 / 3.0, abs=1e-5)


def test_pair_source_atom():
    g = mo.interval_grid(-1.0, 1.0, 64)
    f = mo.SourceTerm(g, atoms=[(np.array([0.0]), 1.0)])
    tent = mo.ScalarField.from_function(g, lambda p: 1.0 - abs(p[0]))
    assert mo.pair_source(f, tent) == pytest.approx(1.0, abs=1e-14)


def test_pair_zero_total_with_constant_field():
    g = mo.interval_grid(-1.0, 1.0, 32)
    dens = g.node_coords[:, 0].copy()  # odd density: zero total mass
    f = mo.SourceTerm(g, density=dens)
    const = mo.ScalarField(g, np.ones(g.n_nodes))
    assert abs(mo.pair_source(f, const)) <= 1e-14
    assert abs(f.total_mass) <= 1e-14


def test_pairing_is_linear():
    g = mo.interval_grid(-1.0, 1.0, 24)
    rng = np.random.default_rng(9)
    f = mo.SourceTerm(g, density=rng.standard_normal(g.n_nodes),
                      atoms=[(np.array([0.4]), 1.3)])
    u = mo.ScalarField(g, rng.standard_normal(g.n_nodes))
    v = mo.ScalarField(g, rng.standard_normal(g.n_nodes))
    uv = mo.ScalarField(g, 2.0 * u.values - 3.0 * v.values)
    assert mo.pair_source(f, uv) == pytest.approx(
        2.0 * mo.pair_source(f, u) - 3.0 * mo.pair_source(f, v), rel=1e-12)


def test_source_atom_must_be_interior():
    g = mo.interval_grid(-1.0, 1.0, 8)
    with pytest.raises(mo.AtomOutsideGrid):
        mo.SourceTerm(g, atoms=[(np.array([1.0]), 1.0)])
    with pytest.raises(mo.AtomOutsideGrid):
        mo.SourceTerm(g, atoms=[(np.array([2.0]), 1.0)])


def test_radial_center_atom_allowed():
    g = mo.radial_grid(1.0, 16, 2)
    f = mo.SourceTerm(g, atoms=[(np.array([0.0]), 2.0)])
    assert f.load_vector()[0] == pytest.approx(2.0)


# -- measures ---------------------------------------------------------------

def test_measure_invariants():
    g = mo.interval_grid(-1.0, 1.0, 16)
    with pytest.raises(ValueError):
        mo.DiscreteMeasure(g, -np.ones(g.n_cells))
    with pytest.raises(ValueError):
        mo.DiscreteMeasure(g, np.ones(g.n_cells), atoms=[(np.array([0.0]), -1.0)])
    mu = mo.DiscreteMeasure(g, np.ones(g.n_cells), atoms=[(np.array([0.5]), 2.0)])
    assert mu.total_variation == pytest.approx(4.0)


def test_zero_boundary_flag():
    g = mo.interval_grid(0.0, 1.0, 8)
    u = mo.ScalarField.zeros(g)
    assert u.is_zero_boundary()
    u.values[0] = 1.0
    assert not u.is_zero_boundary()


# -- export / import --------------------------------------------------------

def test_field_csv_roundtrip(tmp_path):
    g = mo.radial_grid(1.0, 12, 3)
    u = mo.ScalarField.from_function(g, lambda p: math.cos(p[0]))
    path = tmp_path / "u.csv"
    mo.write_field_csv(path, u)
    back = mo.read_field_csv(path)
    assert back.grid.kind == "radial"
    assert np.array_equal(back.values, u.values)


def test_measure_roundtrip(tmp_path):
    g = mo.interval_grid(-1.0, 1.0, 20)
    mu = mo.DiscreteMeasure(g, np.abs(g.cell_centers[:, 0]),
                            atoms=[(np.array([0.25]), 0.5)])
    mo.write_measure(tmp_path / "m.csv", tmp_path / "m.json", mu)
    back = mo.read_measure(tmp_path / "m.csv", tmp_path / "m.json")
    assert np.array_equal(back.ac_density, mu.ac_density)
    assert back.atoms[0][1] == 0.5
    assert back.total_variation == pytest.approx(mu.total_variation, rel=1e-15)
