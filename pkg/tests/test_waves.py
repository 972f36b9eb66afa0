import math
import warnings

import numpy as np
import pytest

from bbwaves.model import ModelCoeffs, toland_f
from bbwaves.spectral import Grid
from bbwaves.waves import (DegenerateBranchMismatch, DivergenceDetected, MaxItersExceeded,
                           NoExactSolution, PetviashviliOptions, SingularMode, SolitaryWave,
                           build_symbol_matrix, classify_profile, exact_sech2,
                           mpe_extrapolate, petviashvili_solve, petviashvili_step,
                           sample_exact, sech2_guess, traveling_residual)

from cases import BENCH, CSW_A3, GSW_A2, HAM0, quad

G = Grid(256.0, 2048)


@pytest.fixture(scope="module")
def a3_wave():
    return petviashvili_solve(CSW_A3, CSW_A3.c_sound + 0.5, G, None,
                              PetviashviliOptions(max_iters=2000))


# --- exact solutions -----------------------------------------------------------

def test_benchmark_exact_constants():
    e = exact_sech2(BENCH)
    assert e.c_s == pytest.approx(1.0328, abs=5e-4)
    assert e.amplitude == pytest.approx(7.9846, abs=1e-3)
    assert e.B**2 == pytest.approx(0.440435, abs=1e-6)
    assert e.mu1 == pytest.approx(e.amplitude / 3)
    assert e.mu2 == pytest.approx(2.67757, abs=1e-5)
    assert e.width == pytest.approx(0.5 * math.sqrt(e.mu1 / e.mu2))


def test_exact_residual_fine_grid():
    g = Grid(256.0, 4096)
    e = exact_sech2(BENCH)
    s = sample_exact(e, g)
    assert traveling_residual(BENCH, e.c_s, g, s.zeta, s.v) <= 1e-10
    j = g.N // 2
    assert s.zeta[j] == pytest.approx(e.amplitude, rel=1e-12)


def test_exact_zeta_xx_and_mirror():
    e = exact_sech2(BENCH)
    x = np.linspace(-5, 5, 201)
    h = 1e-4
    fd = (e.zeta(x + h) - 2 * e.zeta(x) + e.zeta(x - h)) / h**2
    np.testing.assert_allclose(e.zeta_xx(x), fd, atol=1e-5)
    m = exact_sech2(BENCH, sign=-1)
    assert m.c_s == pytest.approx(-e.c_s) and m.B == pytest.approx(-e.B)
    assert e.shifted(3.0).zeta(3.0) == pytest.approx(e.amplitude)


def test_beta_zero_gives_u_equal_b_zeta():
    k = BENCH.replace(beta=0.0)
    e = exact_sech2(k)
    x = np.linspace(-10, 10, 41)
    np.testing.assert_allclose(e.u(x), e.B * e.zeta(x), rtol=1e-15)


def test_degenerate_branch():
    # kappa1 (b - 2d) = a and c = a (delta + gamma)
    a, d = 0.1, 0.05
    k = ModelCoeffs(a, 2 * d + a * 1.4, a * 1.4, d, 0.5, 0.9)
    with pytest.raises(DegenerateBranchMismatch):
        exact_sech2(k)
    with pytest.raises(NoExactSolution):
        exact_sech2(k, "degenerate", B=math.sqrt(k.kappa2 / k.kappa1))
    with pytest.raises(DegenerateBranchMismatch):
        exact_sech2(BENCH, "degenerate", B=1.0)


def test_no_exact_solution_for_negative_b2():
    with pytest.raises(NoExactSolution):
        exact_sech2(HAM0.replace(c=-HAM0.d - 0.5))


def test_wrap_warning_on_short_domain():
    with pytest.warns(UserWarning, match="wrap"):
        sample_exact(exact_sech2(BENCH), Grid(20.0, 256))


# --- symbol -------------------------------------------------------------------------

def test_symbol_matrix():
    cs = CSW_A3.c_sound + 0.1
    S = build_symbol_matrix(CSW_A3, cs, G)
    assert S.det[0] == pytest.approx(cs**2 - CSW_A3.c_sound**2)
    assert S.s11[0] == cs and S.s12[0] == -CSW_A3.kappa1
    rng = np.random.default_rng(1)
    zh = rng.normal(size=G.N) + 0j
    vh = rng.normal(size=G.N) + 0j
    z2, v2 = S.solve(*S.apply(zh, vh))
    np.testing.assert_allclose(z2, zh, atol=1e-12)
    with pytest.raises(SingularMode):
        build_symbol_matrix(CSW_A3, CSW_A3.c_sound, G)


# --- Petviashvili ------------------------------------------------------------------

def test_exact_seed_is_fixed_point():
    e = exact_sech2(BENCH)
    g = Grid(256.0, 4096)
    guess = (e.zeta(g.x), e.v(g.x))
    w = petviashvili_solve(BENCH, e.c_s, g, guess)
    assert w.converged and w.iterations <= 3
    assert w.residual <= 1e-10
    assert abs(w.m_history[-1] - 1) <= 1e-10


def test_default_guess_uses_exact_amplitude():
    e = exact_sech2(BENCH)
    w = petviashvili_solve(BENCH, e.c_s, G)
    assert w.converged
    assert w.amplitude == pytest.approx(e.amplitude, rel=1e-8)


def test_a3_reference(a3_wave):
    w = a3_wave
    assert w.converged and w.residual <= 1e-10
    assert w.wave_type == "CSW"
    assert w.amplitude == pytest.approx(11.101, abs=1e-3)
    r = np.array(w.residual_history)
    assert np.all(np.diff(r[5:]) <= 0)
    # boundary decay of a classical wave
    assert np.max(np.abs(w.zeta[np.abs(G.x) > 0.99 * G.L])) <= 1e-6 * w.amplitude


def test_m_h_settles_monotonically(a3_wave):
    dm = np.abs(np.array(a3_wave.m_history[-5:]) - 1)
    assert np.all(np.diff(dm) <= 0)


def test_one_step_on_converged_profile(a3_wave):
    w = a3_wave
    tol = PetviashviliOptions().tolerance
    z, v = petviashvili_step(w)
    assert math.sqrt(G.l2(z - w.zeta) ** 2 + G.l2(v - w.v_beta) ** 2) <= 10 * tol


def test_translation_equivariance(a3_wave):
    shift = 64  # nodes
    z0, v0 = sech2_guess(G, 1.0, 0.5, (shift * G.h,))
    w = petviashvili_solve(CSW_A3, CSW_A3.c_sound + 0.5, G, (z0, v0),
                           PetviashviliOptions(max_iters=2000))
    assert G.l2(w.zeta - np.roll(a3_wave.zeta, shift)) <= 1e-8


def test_mpe_not_slower(a3_wave):
    w = petviashvili_solve(CSW_A3, CSW_A3.c_sound + 0.5, G, None,
                           PetviashviliOptions(max_iters=2000, mpe_cycle_width=5))
    assert w.converged
    assert w.iterations <= a3_wave.iterations
    assert w.amplitude == pytest.approx(a3_wave.amplitude, rel=1e-8)


def test_gsw_witness():
    w = petviashvili_solve(GSW_A2, GSW_A2.c_sound + 0.01, G, sech2_guess(G, 0.1, 0.2),
                           PetviashviliOptions(max_iters=2000, mpe_cycle_width=5))
    assert w.converged
    assert w.wave_type == "GSW"
    assert w.amplitude == pytest.approx(4.5728e-2, rel=1e-4)
    assert w.c_s == pytest.approx(0.48824, abs=1e-5)


def test_nonmonotone_and_periodic_profiles():
    nm = quad(0.5, 0.9, "d", a=-1 / 9, c=-1 / 6)
    assert nm.d == pytest.approx(0.7058, abs=1e-4)
    w = petviashvili_solve(nm, nm.c_sound - 0.2, G, None, PetviashviliOptions(max_iters=2000))
    assert w.wave_type == "CSW-nonmonotone"
    ptw = quad(0.5, 0.9, "d", b=1 / 6)
    assert ptw.d == pytest.approx(0.2169, abs=1e-4)
    w = petviashvili_solve(ptw, ptw.c_sound - 0.2, G, sech2_guess(G, 0.1, 0.2),
                           PetviashviliOptions(max_iters=2000, mpe_cycle_width=5))
    assert w.wave_type == "PeriodicTW"


def test_exact_sample_classified_csw():
    e = exact_sech2(BENCH)
    s = sample_exact(e, G)
    w = SolitaryWave(G, BENCH, e.c_s, s.zeta, s.v, [0.0], [1.0], 0, True)
    assert classify_profile(w) == "CSW"


def test_amplitude_increases_with_speed():
    g = Grid(128.0, 1024)
    amps = []
    for j in range(1, 11):
        w = petviashvili_solve(HAM0, HAM0.c_sound + 0.05 * j, g, None,
                               PetviashviliOptions(max_iters=2000, mpe_cycle_width=5))
        assert w.converged
        amps.append(w.amplitude)
    assert np.all(np.diff(amps) > 0)


def test_projection_keeps_crest_on_manifold():
    cs = HAM0.c_sound + 0.5
    j = G.N // 2
    for n in (1, 3, 7, 12):
        opts = PetviashviliOptions(max_iters=n, tolerance=1e-9, mpe_cycle_width=5,
                                   projection_manifold=True)
        w = petviashvili_solve(HAM0, cs, G, None, opts, raise_on_failure=False)
        assert abs(toland_f(HAM0, cs, w.v_beta[j], w.zeta[j])) <= 1e-10


def test_failures_carry_partial_wave():
    with pytest.raises(ValueError, match="nonzero"):
        petviashvili_solve(CSW_A3, 1.0, G, (np.zeros(G.N), np.zeros(G.N)))
    with pytest.raises(MaxItersExceeded) as info:
        petviashvili_solve(CSW_A3, CSW_A3.c_sound + 0.5, G, None, PetviashviliOptions(max_iters=3))
    assert len(info.value.wave.residual_history) == 4
    with pytest.raises(DivergenceDetected):
        petviashvili_solve(CSW_A3, CSW_A3.c_sound + 0.5, G, None,
                           PetviashviliOptions(max_iters=200, exponent=3.0))
    with pytest.raises(ValueError):
        PetviashviliOptions(mpe_cycle_width=1)


def test_mpe_solves_linear_iteration():
    rng = np.random.default_rng(2)
    n = 4
    A = rng.normal(size=(n, n))
    A *= 0.5 / np.max(np.abs(np.linalg.eigvals(A)))
    b = rng.normal(size=n)
    x = [rng.normal(size=n)]
    for _ in range(n + 1):
        x.append(A @ x[-1] + b)
    fixed = np.linalg.solve(np.eye(n) - A, b)
    np.testing.assert_allclose(mpe_extrapolate(np.column_stack(x)), fixed, atol=1e-10)


def test_state_mirror(a3_wave):
    s = a3_wave.state(direction=-1)
    np.testing.assert_allclose(s.v, -a3_wave.v_beta, atol=1e-12)
    np.testing.assert_allclose(s.zeta, a3_wave.zeta, atol=1e-12)


def test_resolution_leader_speed_amplitude():
    # leading wave emerging from a Gaussian pulse: speed 0.81779, amplitude 4.1790
    w = petviashvili_solve(CSW_A3, 0.81779, G, None, PetviashviliOptions(max_iters=3000))
    assert w.wave_type == "CSW"
    assert w.amplitude == pytest.approx(4.1790, abs=1e-3)
