import math

import numpy as np
import pytest

from inverse_stopping.barrier import Barrier
from inverse_stopping.model import Affine, Constant, Monomial, OrnsteinUhlenbeckDrift, make_problem
from inverse_stopping.paths import PreconditionError
from inverse_stopping.transfer import (MCConfig, QuadratureConfig, TransferCurve,
                                       check_transfer_properties, closed_form_bm_transfer,
                                       estimate_transfer_at, transfer_curve)

SMALL = MCConfig(n_paths=4000, max_step=0.01, seed=3)


def test_horizon_returns_exact_zero(bm_square):
    assert estimate_transfer_at(bm_square(1.0), Barrier.constant(0.0), 1.0, SMALL) == (0.0, 0.0)


def test_square_payoff_any_barrier(bm_square):
    m, se = estimate_transfer_at(bm_square(0.7), Barrier.linear(1.0, -1.0), 0.25, SMALL)
    assert m == pytest.approx(0.49 * 0.75, abs=1e-12)


def test_martingale_transfer_is_zero():
    p = make_problem(sigma=Constant(1.0), terminal=Monomial(1.0, 1))
    m, se = estimate_transfer_at(p, Barrier.constant(0.3), 0.0, SMALL)
    assert abs(m) <= 3 * se + 1e-15


def test_determinism():
    p = make_problem(sigma=Constant(1.0), f=Affine(0.0, -1.0))
    b = Barrier.step(0.2, 0.9, 0.5)
    times = np.linspace(0, 1, 6)
    a = transfer_curve(p, b, times, SMALL)
    c = transfer_curve(p, b, times, SMALL, workers=2)
    assert a.pi.tobytes() == c.pi.tobytes()
    assert a.stderr.tobytes() == c.stderr.tobytes()


def test_barrier_independence_square_payoff(bm_square):
    p = bm_square(1.5)
    times = np.linspace(0, 1, 5)
    a = transfer_curve(p, Barrier.constant(0.0), times, SMALL)
    c = transfer_curve(p, Barrier.step(-1.0, 1.0, 0.5), times, SMALL)
    assert np.all(np.abs(a.pi - c.pi) <= 3 * np.hypot(a.stderr, c.stderr) + 1e-12)


def test_constant_flow_shift():
    base = make_problem(sigma=Constant(1.0), f=Affine(0.0, -1.0))
    shifted = make_problem(sigma=Constant(1.0), f=Affine(0.4, -1.0))
    b = Barrier.linear(0.5, 0.0)
    times = np.linspace(0, 1, 6)
    a = transfer_curve(base, b, times, SMALL)
    c = transfer_curve(shifted, b, times, SMALL)
    np.testing.assert_allclose(c.pi - a.pi, 0.4 * (1 - times), atol=1e-12)


def test_constant_h_is_exact():
    p = make_problem(f=Constant(2.0))
    curve = transfer_curve(p, Barrier.constant(1.0), np.linspace(0, 1, 11), SMALL)
    np.testing.assert_allclose(curve.pi, 2.0 * (1 - curve.times), atol=1e-12)


def test_closed_form_square_payoff(bm_square):
    for sigma in (0.5, 2.0):
        r = closed_form_bm_transfer(sigma, 0.4, bm_square(sigma), 0.3)
        assert r.value == pytest.approx(sigma ** 2 * 0.7, rel=1e-12)


@pytest.mark.parametrize("t", [0.0, 0.2, 0.7])
def test_closed_form_linear_integrand(t):
    sigma, b0 = 1.3, 0.3
    p = make_problem(sigma=Constant(sigma), f=Affine(0.0, 1.0))
    exact = b0 * (1 - t) - sigma * math.sqrt(2 / math.pi) * (2 / 3) * (1 - t) ** 1.5
    r = closed_form_bm_transfer(sigma, b0, p, t)
    assert r.value == pytest.approx(exact, abs=1e-10)
    assert r.tail_bound < 1e-12


def test_closed_form_at_horizon_and_precondition(bm_square):
    assert closed_form_bm_transfer(1.0, 0.0, bm_square(1.0), 1.0).value == 0.0
    ou = make_problem(mu=OrnsteinUhlenbeckDrift(1.0, 0.0), sigma=Constant(1.0))
    with pytest.raises(PreconditionError):
        closed_form_bm_transfer(1.0, 0.0, ou, 0.0)


@pytest.mark.slow
def test_closed_form_vs_monte_carlo():
    sigma, b0 = 0.8, 0.25
    p = make_problem(sigma=Constant(sigma), f=Affine(0.1, -1.0))
    times = np.linspace(0, 0.9, 10)
    curve = transfer_curve(p, Barrier.constant(b0), times, MCConfig(n_paths=20_000, max_step=5e-3))
    quad = np.array([closed_form_bm_transfer(sigma, b0, p, t, QuadratureConfig()).value
                     for t in times])
    assert np.all(np.abs(curve.pi - quad) <= 3 * curve.stderr + 1e-6)


def _synthetic(jump_at=None, size=0.0):
    times = np.linspace(0, 1, 11)
    pi = 1 - times
    se = np.full(11, 0.01)
    left = pi.copy()
    if jump_at is not None:
        left[jump_at] = pi[jump_at] - size
    return TransferCurve(times, pi, se, left, np.full(11, 0.01))


def test_detector_flags_injected_upward_jump():
    rep = check_transfer_properties(_synthetic(5, 10 * 0.01), Barrier.constant(0.0))
    assert not rep["no_upward_jumps"].passed
    assert rep["no_upward_jumps"].evidence[0][0] == pytest.approx(0.5)
    assert not rep.passed


def test_detector_accepts_clean_curve():
    rep = check_transfer_properties(_synthetic(), Barrier.constant(0.0))
    assert rep.passed
    assert "pi(T-)" in rep.summary()


def test_detector_downward_jump_only_where_barrier_jumps_up():
    curve = _synthetic(5, -0.2)  # pi drops by 0.2 at t = 0.5
    assert check_transfer_properties(curve, Barrier.step(0.0, 1.0, 0.5)).passed
    bad = check_transfer_properties(curve, Barrier.step(1.0, 0.0, 0.5))
    assert not bad["continuous_where_barrier_continuous_or_down"].passed
    assert not bad["downward_jumps_only_at_barrier_up_jumps"].passed


def test_continuous_barrier_curve_passes():
    p = make_problem(sigma=Constant(1.0), f=Affine(0.0, -1.0))
    b = Barrier.linear(0.8, 0.1)
    curve = transfer_curve(p, b, np.linspace(0, 1, 21), MCConfig(n_paths=4000, max_step=5e-3))
    rep = check_transfer_properties(curve, b)
    assert rep["no_upward_jumps"].passed
    assert rep["continuous_where_barrier_continuous_or_down"].passed


def test_curve_csv_round_trip(tmp_path):
    c = _synthetic(5, -0.1)
    c.to_csv(tmp_path / "c.csv")
    back = TransferCurve.from_csv(tmp_path / "c.csv")
    np.testing.assert_array_equal(back.pi, c.pi)
    np.testing.assert_array_equal(back.pi_left, c.pi_left)
    assert back(0.5) == c(0.5) == 0.5
    assert back(0.45) == pytest.approx(0.5 * (c.pi[4] + c.pi_left[5]))


def test_zero_curve():
    z = TransferCurve.zero(2.0)
    assert z(1.3) == 0.0


def test_mcconfig_validation():
    with pytest.raises(ValueError):
        MCConfig(n_paths=1)
    with pytest.raises(ValueError):
        MCConfig(max_step=0)
