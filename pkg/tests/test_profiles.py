import numpy as np
import pytest

from stratiwave import profiles as pr
from stratiwave.errors import DomainError


def test_poly_eval_constant():
    f = pr.ProfileFn.poly([1.0], -1.0, 0.0)
    assert f.eval(-0.5) == 1.0


def test_poly_eval_identity():
    f = pr.ProfileFn.poly([0.0, 1.0], -1.0, 0.0)
    assert f.eval(-0.5) == -0.5


def test_table_eval_node_value():
    f = pr.ProfileFn.table([-1.0, 0.0], [2.0, 3.0])
    assert f.eval(-1.0) == pytest.approx(2.0)


def test_eval_out_of_domain_raises():
    f = pr.ProfileFn.poly([1.0], -1.0, 0.0)
    with pytest.raises(DomainError):
        f.eval(0.5)
    with pytest.raises(DomainError):
        f.eval(-1.5)


def test_deriv_linear_and_constant():
    assert pr.ProfileFn.poly([0.0, 1.0], -1.0, 0.0).deriv(-0.3) == 1.0
    assert pr.ProfileFn.poly([1.0], -1.0, 0.0).deriv(-0.3) == 0.0


def test_deriv_quadratic():
    f = pr.ProfileFn.poly([0.0, 0.0, 1.0], -2.0, 0.0)
    assert f.deriv(-1.0) == pytest.approx(-2.0)


def test_table_monotone_preserved():
    p = np.linspace(-1.0, 0.0, 9)
    f = pr.ProfileFn.table(p, 1.0 - p / 10.0)
    fine = np.linspace(-1.0, 0.0, 301)
    assert np.all(np.diff(f.eval(fine)) < 0)


def test_build_B_zero_beta():
    grid = pr.PGrid(-1.0, 16)
    beta = pr.ProfileFn.poly([0.0], 0.0, 1.0)
    B = pr.build_B(beta, grid)
    assert np.allclose(B.eval(grid.nodes), 0.0)
    assert pr.b_min(B) == pytest.approx(0.0)


def test_build_B_constant_beta():
    grid = pr.PGrid(-1.0, 16)
    beta = pr.ProfileFn.poly([1.0], 0.0, 1.0)
    B = pr.build_B(beta, grid)
    assert np.allclose(B.eval(grid.nodes), grid.nodes, atol=1e-14)
    assert pr.b_min(B) == pytest.approx(-1.0)


def test_build_B_linear_beta():
    # beta(s) = s gives B(p) = -p^2/2 and B_min = -p0^2/2
    grid = pr.PGrid(-2.0, 32)
    beta = pr.ProfileFn.poly([0.0, 1.0], 0.0, 2.0)
    B = pr.build_B(beta, grid)
    assert np.allclose(B.eval(grid.nodes), -grid.nodes ** 2 / 2.0, atol=1e-14)
    assert pr.b_min(B) == pytest.approx(-2.0)


def test_build_B_recovers_beta_by_differencing():
    grid = pr.PGrid(-1.0, 64)
    beta = pr.ProfileFn.table(np.linspace(0, 1, 33),
                              np.sin(np.linspace(0, 1, 33)))
    B = pr.build_B(beta, grid)
    p = grid.nodes[1:-1]
    h = grid.h
    dB = (B.eval(p + h) - B.eval(p - h)) / (2 * h)
    assert np.max(np.abs(dB - beta.eval(-p))) < 5.0 / grid.N_p ** 2


def test_quad_trivial_cases():
    grid = pr.PGrid(-1.0, 16)
    p = grid.nodes
    assert pr.quad(grid, np.ones_like(p)) == pytest.approx(1.0)
    assert pr.quad(grid, p) == pytest.approx(-0.5)
    assert pr.quad(grid, p ** 2) == pytest.approx(1.0 / 3.0, abs=1e-15)


def test_quad_convergence_order_on_sin():
    errs = []
    for n in (16, 32, 64):
        grid = pr.PGrid(-1.0, n)
        exact = np.cos(1.0) - 1.0       # int_{-1}^{0} sin(p) dp
        errs.append(abs(pr.quad(grid, np.sin(grid.nodes)) - exact))
    orders = [np.log2(errs[k] / errs[k + 1]) for k in range(2)]
    assert min(orders) >= 3.8


def test_cumquad_matches_quad_and_antiderivative():
    grid = pr.PGrid(-1.0, 64)
    p = grid.nodes
    F = pr.cumquad_from_left(grid, np.exp(p))
    assert np.max(np.abs(F - (np.exp(p) - np.exp(-1.0)))) < 1e-9
    G = pr.cumquad_to_zero(grid, np.exp(p))
    assert np.max(np.abs(G - (1.0 - np.exp(p)))) < 1e-9


def test_pgrid_validation():
    with pytest.raises(DomainError):
        pr.PGrid(-1.0, 7)
    with pytest.raises(DomainError):
        pr.PGrid(-1.0, 9)
    with pytest.raises(DomainError):
        pr.PGrid(1.0, 16)


def test_physics_validation():
    rho_bad = pr.ProfileFn.poly([1.0, 1.0], -1.0, 0.0)   # increasing rho
    beta = pr.ProfileFn.poly([0.0], 0.0, 1.0)
    with pytest.raises(DomainError):
        pr.Physics(g=1.0, c=1.0, p0=-1.0, sigma=0.0, rho=rho_bad, beta=beta)
    rho = pr.ProfileFn.poly([1.0], -1.0, 0.0)
    with pytest.raises(DomainError):
        pr.Physics(g=1.0, c=-1.0, p0=-1.0, sigma=0.0, rho=rho, beta=beta)
    with pytest.raises(DomainError):
        pr.Physics(g=1.0, c=1.0, p0=0.5, sigma=0.0, rho=rho, beta=beta)
