import numpy as np
import pytest

from conftest import make_physics
from stratiwave import eulerian as eu
from stratiwave import heightsolver as hs
from stratiwave import laminar as lm
from stratiwave import profiles as pr
from stratiwave import spectral as sp
from stratiwave.errors import EllipticityLossError


@pytest.fixture(scope="module")
def small_wave(t0):
    grid = pr.PGrid(-1.0, 64)
    lam_star = sp.find_lambda_star(t0, grid, 1.0)
    flow = lm.solve_laminar(t0, lam_star, grid)
    mode = sp.shoot_mode(flow, t0, 1)
    germ = hs.germ_field(flow, (mode, mode), (1.0, 0.0), 0.05 / mode.M[-1], 64)
    sol = hs.newton(t0, germ, 1.0, frozen="amplitude")
    return sol


def test_reconstruct_laminar(t0, grid64):
    flow = lm.solve_laminar(t0, 4.0, grid64)
    wave = eu.reconstruct(t0, hs.laminar_field(flow, 64))
    assert np.allclose(wave.u, -1.0, atol=1e-12)        # c - 1/H_p = 1 - 2
    assert np.allclose(wave.v, 0.0)
    assert np.allclose(wave.eta, 0.0, atol=1e-14)
    assert wave.d == pytest.approx(0.5)
    assert np.allclose(wave.v[:, 0], 0.0)               # bed row


def test_reconstruct_pure_capillary(grid64):
    phys = make_physics(g=0.0)
    flow = lm.solve_laminar(phys, 4.0, grid64)
    wave = eu.reconstruct(phys, hs.laminar_field(flow, 64))
    assert np.allclose(wave.u, phys.c - 2.0, atol=1e-12)


def test_reconstruct_symmetries(t0, small_wave):
    wave = eu.reconstruct(t0, small_wave)
    n = wave.x.size - 1
    # u, eta even and v odd about x = 0 on the reflected grid
    assert np.allclose(wave.u, wave.u[::-1, :], atol=1e-14)
    assert np.allclose(wave.eta, wave.eta[::-1], atol=1e-14)
    assert np.allclose(wave.v, -wave.v[::-1, :], atol=1e-14)
    assert abs(np.mean(wave.eta[:-1])) < 1e-12
    assert np.max(wave.u) < t0.c


def test_reconstruct_requires_ellipticity(t0, grid64):
    h = np.tile(-(grid64.nodes + 1.0), (9, 1))
    fld = hs.HeightField(Q=1.0, N_q=8, pgrid=grid64, h=h)
    with pytest.raises(EllipticityLossError):
        eu.reconstruct(t0, fld)


def test_flux_laminar_exact(t0, grid64):
    flow = lm.solve_laminar(t0, 4.0, grid64)
    wave = eu.reconstruct(t0, hs.laminar_field(flow, 64))
    assert eu.flux(wave, 0) == pytest.approx(-1.0, abs=1e-10)


def test_flux_uniform_across_columns(t0, small_wave):
    wave = eu.reconstruct(t0, small_wave)
    fluxes = eu.flux_all_columns(wave)
    assert np.max(np.abs(fluxes + 1.0)) < 1e-4
    assert np.max(np.abs(fluxes - fluxes[0])) < 1e-4


def test_surface_bernoulli_laminar_zero(t0, grid64):
    flow = lm.solve_laminar(t0, 4.0, grid64)
    wave = eu.reconstruct(t0, hs.laminar_field(flow, 64))
    assert eu.surface_bernoulli_residual(wave, t0, 1.0) < 1e-12


def test_surface_bernoulli_detects_corruption(t0, small_wave):
    wave = eu.reconstruct(t0, small_wave)
    clean = eu.surface_bernoulli_residual(wave, t0, 1.0)
    rng = np.random.default_rng(3)
    bad_field = small_wave.h + 1e-3 * rng.standard_normal(small_wave.h.shape)
    from dataclasses import replace
    bad = eu.reconstruct(t0, replace(small_wave, h=bad_field))
    assert eu.surface_bernoulli_residual(bad, t0, 1.0) > 100 * max(clean, 1e-9)


def test_yih_laminar_linear_psi(t0, grid64):
    flow = lm.solve_laminar(t0, 4.0, grid64)
    wave = eu.reconstruct(t0, hs.laminar_field(flow, 64))
    assert eu.yih_residual(wave, t0) < 1e-10


def test_yih_laminar_with_vorticity():
    # beta = 1, rho = 1: psi_yy = -1, checked through the resampling
    phys = make_physics(beta_coeffs=(1.0,))
    errs = []
    for N in (32, 64):
        grid = pr.PGrid(-1.0, N)
        flow = lm.solve_laminar(phys, 4.0, grid)
        wave = eu.reconstruct(phys, hs.laminar_field(flow, N))
        errs.append(eu.yih_residual(wave, phys))
    assert errs[0] < 2e-3
    assert errs[0] / errs[1] > 3.0       # ~second order


def test_csv_emission(t0, small_wave):
    wave = eu.reconstruct(t0, small_wave)
    wcsv = eu.wave_csv(wave)
    assert wcsv.splitlines()[0] == "x,y,u,v,rho,psi"
    scsv = eu.surface_csv(wave)
    assert scsv.splitlines()[0] == "x,eta,kappa"
    assert len(scsv.strip().splitlines()) == wave.x.size + 1
