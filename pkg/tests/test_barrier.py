import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from inverse_stopping import barrier as bio
from inverse_stopping.barrier import Barrier, BarrierError, validate_regular


def test_constant():
    b = Barrier.constant(1.5)
    assert b.eval(0.0) == b.eval(0.37) == b.eval(1.0) == 1.5


def test_cadlag_convention():
    b = Barrier([0.0, 0.5, 1.0], [1.0, 2.0, 2.0])
    assert b.eval(0.5) == 2.0
    assert b.eval(0.49) == 1.0
    assert b.eval_left(0.5) == 1.0


def test_continuous_left_equals_value():
    b = Barrier.linear(1.0, -1.0)
    ts = np.linspace(0.01, 1.0, 50)
    np.testing.assert_array_equal(b.eval_left(ts), b.eval(ts))


def test_downward_jump_left_limit():
    b = Barrier([0.0, 0.5, 1.0], [2.0, 1.0, 1.0])
    assert b.eval_left(0.5) == 2.0
    assert b.eval(0.5) == 1.0


def test_regular_and_jump_report():
    assert validate_regular(Barrier.linear(0.0, 1.0)).ok
    rep = validate_regular(Barrier.step(1.0, 0.3, 0.4))
    assert rep.ok
    assert len(rep.jumps) == 1
    assert rep.jumps[0].t == 0.4
    assert rep.jumps[0].size == pytest.approx(-0.7)
    assert rep.downward_total == pytest.approx(0.7)


@pytest.mark.parametrize("times,values", [([0.0, 0.5, 0.5, 1.0], [1, 2, 3, 4]),
                                          ([0.0, 0.6, 0.5], [1, 2, 3]),
                                          ([0.0, 1.0], [1.0, np.inf])])
def test_invalid_knots(times, values):
    with pytest.raises(BarrierError):
        Barrier(times, values)


def test_out_of_range():
    with pytest.raises(BarrierError):
        Barrier.constant(1.0).eval(1.5)


def test_linear_uses_left_limit_at_right_knot():
    b = Barrier([0.0, 0.5, 1.0], [0.0, 5.0, 5.0], lefts=[0.0, 1.0, 5.0], interpolation="linear")
    assert b.eval(0.25) == pytest.approx(0.5)
    assert b.eval_left(0.5) == 1.0
    assert b.eval(0.5) == 5.0


knot_lists = st.lists(st.floats(-5, 5, allow_nan=False), min_size=2, max_size=8)


@st.composite
def barriers(draw):
    vals = draw(knot_lists)
    n = len(vals)
    times = np.linspace(0.0, 1.0, n)
    interp = draw(st.sampled_from(["constant", "linear"]))
    lefts = None
    if interp == "linear":
        lefts = [vals[0]] + draw(st.lists(st.floats(-5, 5, allow_nan=False), min_size=n - 1,
                                          max_size=n - 1))
    return Barrier(times, vals, lefts, interp)


@settings(max_examples=40)
@given(barriers())
def test_round_trip_1000_times(b):
    ts = np.random.default_rng(0).uniform(0.0, 1.0, 1000)
    again = bio.loads(bio.dumps(b))
    np.testing.assert_array_equal(again.eval(ts), b.eval(ts))
    np.testing.assert_array_equal(again.eval_left(ts), b.eval_left(ts))
    assert again == b


@settings(max_examples=40)
@given(barriers())
def test_right_continuity_and_left_limits(b):
    for i, t in enumerate(b.times[1:-1], start=1):
        assert b.eval(t + 1e-12) == pytest.approx(b.eval(t), abs=1e-9)
        assert b.eval(t - 1e-12) == pytest.approx(b.eval_left(t), abs=1e-9)
    mids = 0.5 * (b.times[:-1] + b.times[1:])
    np.testing.assert_array_equal(b.eval_left(mids), b.eval(mids))


def test_file_round_trip(tmp_path):
    b = Barrier.step(0.2, 0.9, 0.5)
    bio.save(b, tmp_path / "b.txt")
    assert bio.load(tmp_path / "b.txt") == b


def test_parse_errors_name_line():
    with pytest.raises(BarrierError, match="first line"):
        bio.loads("0,1\n")
    with pytest.raises(BarrierError, match="line 3"):
        bio.loads("interpolation=linear\n0,1\n0.5,abc\n")
    with pytest.raises(FileNotFoundError):
        bio.load("/nonexistent/barrier.txt")


def test_restrict_and_min_left_right():
    b = Barrier.step(0.2, 0.9, 0.5)
    r = b.restrict(0.3)
    assert r.start == 0.3
    assert r.eval(0.6) == 0.9
    assert b.min_left_right(0.5) == 0.2
    assert b.jump_at(0.5) == pytest.approx(0.7)
    assert b.jump_at(0.4) == 0.0
