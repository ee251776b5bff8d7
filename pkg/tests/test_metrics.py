import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from totaluq.metrics import coverage, error_norms, lpp, lpp_pointwise, summarize, write_summaries_csv


def test_error_norms_hand_case():
    l2, linf = error_norms([1.0, 2.0, 4.0], [1.0, 2.0, 2.0])
    assert l2 == pytest.approx(2 / 3)
    assert linf == 2.0


def test_error_norms_identity_and_offset():
    r = np.array([0.5, -1.0, 3.0])
    assert error_norms(r, r) == (0.0, 0.0)
    assert error_norms(r + 0.25, r)[1] == pytest.approx(0.25)
    with pytest.raises(ValueError):
        error_norms([1.0], [0.0])
    with pytest.raises(ValueError):
        error_norms([1.0, 2.0], [1.0])


def test_coverage_cases():
    m = np.arange(5.0)
    _, f = coverage(m, np.zeros(5), m)
    assert f == 1.0
    ref = m.copy()
    ref[[1, 3]] += 0.1
    hit, f = coverage(m, np.zeros(5), ref)
    assert f == pytest.approx(0.6)
    np.testing.assert_array_equal(hit, [True, False, True, False, True])
    with pytest.raises(ValueError):
        coverage(m, -np.ones(5), m)
    with pytest.raises(ValueError):
        coverage(m, np.ones(5), m, level=1.0)


def test_coverage_z_value():
    # residual exactly at the 95% half-width is covered, slightly beyond is not
    _, f = coverage([0.0, 0.0], [1.0, 1.0], [1.959963, 1.959966])
    assert f == 0.5


@settings(max_examples=30, deadline=None)
@given(arrays(float, 20, elements=st.floats(-3, 3)), st.floats(0.05, 0.9), st.floats(0.05, 0.09))
def test_coverage_monotone_in_level(res, lo, dl):
    var = np.full(20, 0.5)
    _, a = coverage(np.zeros(20), var, res, lo)
    _, b = coverage(np.zeros(20), var, res, lo + dl)
    assert b >= a


def test_lpp_hand_values():
    assert lpp([0.0], [1 / (2 * np.pi)], [0.0]) == pytest.approx(0.0, abs=1e-15)
    assert lpp([1.0, 0.0], [1.0, 1.0], [0.0, 0.0]) == pytest.approx(-(0.5 + np.log(2 * np.pi)))


def test_lpp_overconfidence_penalty():
    vals = [lpp([1.0], [v], [0.0]) for v in (1e-1, 1e-3, 1e-6)]
    assert vals[0] > vals[1] > vals[2]
    # floored: zero variance is finite
    assert np.isfinite(lpp([1.0], [0.0], [0.0]))


def test_lpp_additive():
    rng = np.random.default_rng(0)
    m, r = rng.standard_normal((2, 50))
    v = rng.uniform(0.1, 2, 50)
    assert abs(lpp_pointwise(m, v, r).sum() - lpp(m, v, r)) <= 1e-12 * abs(lpp(m, v, r))


def test_summarize_perfect_estimate(tmp_path):
    r = np.linspace(1, 2, 8)
    s = summarize(r, np.ones(8), r, method="ri", noise_var=0.01)
    assert (s.l2_rel, s.linf, s.coverage) == (0.0, 0.0, 1.0)
    assert s.lpp == pytest.approx(-4 * np.log(2 * np.pi))
    assert json.loads(s.to_json())["coverage"] == 1.0
    write_summaries_csv(tmp_path / "t.csv", [s, s])
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "method,noise_var,l2_rel,linf,lpp,coverage"
    assert len(lines) == 3
    assert summarize(r, np.ones(8), r).lpp == s.lpp
