import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate

from fracbasis import rational as ra
from fracbasis.errors import DimensionError, InvalidArgument, ParseError

from conftest import E_FIX

EPS = 1e-8


# -- grid ------------------------------------------------------------------------

@pytest.mark.parametrize("rule", ["strided", "gauss"])
def test_grid_layout(rule):
    g = ra.build_grid(EPS, rule)
    assert g.nodes.size == 7001 and g.n_cells == 7000
    assert g.nodes[0] == EPS and g.nodes[-1] == 1.0
    assert np.all(np.diff(g.nodes) > 0) and np.all(g.widths > 0)
    assert g.points.size == 21000
    assert math.isclose(sum(ra.GAUSS_WEIGHTS), 1.0, rel_tol=0, abs_tol=1e-15)
    assert abs(g.weights.sum() - (1 - EPS)) < 1e-14


def test_grid_points_stay_in_their_cells_for_gauss():
    g = ra.build_grid(EPS, "gauss")
    cell = np.repeat(np.arange(g.n_cells), 3)
    assert np.all(g.points > g.nodes[cell]) and np.all(g.points < g.nodes[cell + 1])


def test_strided_is_a_permutation_of_gauss_points():
    a, b = ra.build_grid(EPS, "gauss"), ra.build_grid(EPS, "strided")
    assert np.array_equal(np.sort(a.points), np.sort(b.points))
    assert np.array_equal(a.weights, b.weights)


@pytest.mark.parametrize("eps", [0.0, -1e-8, 1e-3, 0.5])
def test_grid_rejects_bad_epsilon(eps):
    with pytest.raises(InvalidArgument):
        ra.build_grid(eps)


def test_grid_rejects_unknown_rule():
    with pytest.raises(InvalidArgument):
        ra.build_grid(EPS, "simpson")


# -- inner product -------------------------------------------------------------------

@pytest.mark.parametrize("rule", ["strided", "gauss"])
def test_inner_product_of_constants(rule):
    g = ra.build_grid(EPS, rule)
    one = np.ones_like(g.points)
    assert abs(ra.inner_product(one, one, g) - (1 - EPS)) < 1e-14


def test_gauss_rule_integrates_linear_exactly():
    g = ra.build_grid(EPS, "gauss")
    one = np.ones_like(g.points)
    assert abs(ra.inner_product(g.points, one, g) - (1 - EPS**2) / 2) < 1e-15


def test_gauss_rule_is_exact_for_quintics_per_cell():
    g = ra.build_grid(EPS, "gauss")
    z = g.points
    exact = (1 - EPS**6) / 6
    assert abs(ra.inner_product(z**2, z**3, g) - exact) < 1e-15


def test_gauss_rule_log_integral():
    # int z^-1 over [1e-3, 1] is resolved to 1e-6; the first cell [1e-8, 5.1e-7]
    # spans a factor 51 in 1/z and carries almost all of the total error
    g = ra.build_grid(EPS, "gauss")
    v = g.weights * g.points**-1.0
    cell = np.repeat(np.arange(g.n_cells), 3)
    assert abs(v[cell >= 2000].sum() / math.log(1e3) - 1) < 1e-6
    total = v.sum()
    first_cell_error = v[cell == 0].sum() - math.log(g.nodes[1] / EPS)
    assert abs((total - math.log(1 / EPS)) - first_cell_error) < 2e-3 * abs(first_cell_error)
    assert abs(total / math.log(1 / EPS) - 1) < 0.04


def test_inner_product_shape_mismatch():
    g = ra.build_grid(EPS)
    with pytest.raises(DimensionError):
        ra.inner_product(np.ones(10), np.ones(10), g)


# -- dictionary --------------------------------------------------------------------------

def test_default_dictionary():
    d = ra.build_dictionary(EPS)
    assert len(d) == 100000
    assert d.shifts[0] == pytest.approx(2.5e-9, rel=1e-15)
    assert d.shifts[-1] == 25.0
    assert d.norms[-1] == pytest.approx(math.sqrt(1 / (25 + EPS) - 1 / 26), rel=1e-14)
    assert d.norms[-1] == pytest.approx(3.92232e-2, rel=1e-5)
    assert np.all(d.norms > 0) and np.all(np.isfinite(d.norms))


@pytest.mark.parametrize("t", [2.5e-9, 1.80625e-5, 0.1, 25.0])
def test_dictionary_norm_matches_quadrature(t):
    d = ra.Dictionary(np.array([t]), np.sqrt([1 / (EPS + t) - 1 / (1 + t)]), EPS)
    val, _ = integrate.quad(lambda z: (z + t) ** -2, EPS, 1, points=[1e-6, 1e-4, 1e-2], limit=200)
    assert d.norms[0] == pytest.approx(math.sqrt(val), rel=1e-8)


@pytest.mark.parametrize("hd,cap", [(0.0, 5.0), (-1.0, 5.0), (5e-5, 0.0), (1.0, 0.5)])
def test_dictionary_rejects_bad_parameters(hd, cap):
    with pytest.raises(InvalidArgument):
        ra.build_dictionary(EPS, hd, cap)


def test_correlation_scores_match_dense(small_grid):
    d = ra.build_dictionary(EPS, hd=0.05, t_cap=5.0)
    z = small_grid.points
    resid = z**-0.5 - 1.0
    dense = np.array([np.sum(small_grid.weights * resid * d.element(j, z)) for j in range(len(d))])
    assert np.allclose(ra.correlation_scores(resid, small_grid, d), dense, rtol=1e-12, atol=0)


# -- OGA ---------------------------------------------------------------------------------

def test_single_element_projection(small_grid):
    t = 0.01
    nu = math.sqrt(1 / (EPS + t) - 1 / (1 + t))
    d = ra.Dictionary(np.array([t]), np.array([nu]), EPS)
    z = small_grid.points
    g = d.element(0, z)
    phi = z**-0.5
    coef = ra.inner_product(phi, g, small_grid) / ra.inner_product(g, g, small_grid)
    r = ra.oga_fit(0.5, 1, small_grid, d, validate=(1e-6, 1.0, 1000))
    assert r.shifts[0] == t
    assert r.residues[0] == pytest.approx(coef / nu, rel=1e-13)


def test_oga_residual_strictly_decreasing_and_orthogonal(small_grid, coarse_dictionary):
    z = small_grid.points
    phi = z**-0.5
    phi_norm = math.sqrt(ra.inner_product(phi, phi, small_grid))
    prev = phi_norm
    for step in ra.oga_steps(0.5, 12, small_grid, coarse_dictionary):
        assert step.residual_norm < prev
        prev = step.residual_norm
        for j in step.selected:
            g = coarse_dictionary.element(j, z)
            assert abs(ra.inner_product(g, step.residual, small_grid)) <= 1e-8 * phi_norm
    assert len(set(step.selected)) == 12


def test_oga_is_deterministic(small_grid, coarse_dictionary):
    a = ra.oga_fit(0.5, 8, small_grid, coarse_dictionary, validate=(1e-6, 1, 10000))
    b = ra.oga_fit(0.5, 8, small_grid, coarse_dictionary, validate=(1e-6, 1, 10000))
    assert a.terms == b.terms and a.achieved_max_error == b.achieved_max_error


def test_oga_rejects_bad_inputs(small_grid, coarse_dictionary):
    with pytest.raises(InvalidArgument):
        ra.oga_fit(1.0, 5, small_grid, coarse_dictionary)
    with pytest.raises(InvalidArgument):
        ra.oga_fit(0.5, len(coarse_dictionary) + 1, small_grid, coarse_dictionary)


def test_first_pick_on_full_dictionary_is_table_row_one(small_grid):
    d = ra.build_dictionary(EPS)
    scores = np.abs(ra.correlation_scores(small_grid.points**-0.5, small_grid, d))
    j = int(np.argmax(scores))
    assert j == 84   # (85 * 5e-5)^2 = 1.80625e-5
    assert d.shifts[j] == 1.80625e-5


# -- approximant, evaluation, errors ----------------------------------------------

def test_approximant_invariants():
    with pytest.raises(InvalidArgument):
        ra.RationalApproximant(0.5, EPS, ())
    with pytest.raises(InvalidArgument):
        ra.RationalApproximant(0.5, EPS, ((1.0, 0.0),))
    with pytest.raises(InvalidArgument):
        ra.RationalApproximant(0.5, EPS, ((1.0, 0.1), (2.0, 0.1)))
    with pytest.raises(InvalidArgument):
        ra.RationalApproximant(0.5, EPS, ((1.0, float("inf")),))


def test_evaluate_single_pole_at_zero_shift():
    assert ra.evaluate_terms([1.0], [0.0], 4.0) == 0.25


def test_evaluate_rejects_nonpositive(fixture_approximant):
    with pytest.raises(InvalidArgument):
        ra.evaluate(fixture_approximant, 0.0)
    with pytest.raises(InvalidArgument):
        fixture_approximant(np.array([1.0, -2.0]))


def test_fixture_at_one(fixture_approximant):
    assert abs(fixture_approximant(1.0) - 1.0) <= fixture_approximant.achieved_max_error


def test_fixture_decays_beyond_largest_shift(fixture_approximant):
    z = np.geomspace(2 * fixture_approximant.shifts.max(), 1e8, 200)
    v = fixture_approximant(z)
    assert np.all(np.diff(v) < 0) and v[-1] < 1e-6


def test_fixture_table_shape(fixture_approximant):
    r = fixture_approximant
    assert len(r) == 20 and r.s == 0.5 and r.epsilon == EPS
    assert r.terms[0] == (0.0011631816222, 1.80625e-5)
    assert r.terms[18][0] == -0.002953457313354
    assert r.terms[6][1] == 25.0
    assert np.any(r.residues < 0)


def test_max_error_of_identical_functions_is_zero():
    r = ra.RationalApproximant(0.5, EPS, ((2.0, 0.3),))
    assert ra.max_error(r, 0.5, n_points=10001, target=lambda z: 2.0 / (z + 0.3)) == 0.0


def test_max_error_interval_check(fixture_approximant):
    with pytest.raises(InvalidArgument):
        ra.max_error(fixture_approximant, 0.5, lo=1.0, hi=0.5)


def test_fixture_error_recorded(fixture_approximant):
    assert fixture_approximant.achieved_max_error == E_FIX
    assert abs(ra.max_error(fixture_approximant, 0.5) - E_FIX) <= 1e-12


# -- documents --------------------------------------------------------------------------

def test_fixture_round_trip(fixture_approximant):
    text = ra.serialize(fixture_approximant)
    assert text == ra.fixture_text()
    again = ra.deserialize(text)
    assert again.terms == fixture_approximant.terms
    assert again.achieved_max_error == fixture_approximant.achieved_max_error


finite = st.floats(min_value=-1e6, max_value=1e6, allow_nan=False, allow_subnormal=False)
positive = st.floats(min_value=1e-300, max_value=1e300, allow_nan=False, allow_infinity=False)


@given(st.lists(st.tuples(finite, positive), min_size=1, max_size=8, unique_by=lambda p: p[1]),
       st.floats(min_value=0.01, max_value=0.99))
def test_round_trip_is_lossless(terms, s):
    r = ra.RationalApproximant(s, EPS, tuple(terms), 1.5e-4)
    back = ra.deserialize(ra.serialize(r))
    assert back.terms == r.terms and back.s == r.s and back.achieved_max_error == r.achieved_max_error


def test_save_and_load(tmp_path, fixture_approximant):
    path = tmp_path / "r.json"
    ra.save(fixture_approximant, path)
    assert ra.load(path).terms == fixture_approximant.terms


def _doc(**changes):
    doc = json.loads(ra.fixture_text())
    doc.update(changes)
    return json.dumps(doc)


def test_missing_terms_is_parse_error():
    doc = json.loads(ra.fixture_text())
    del doc["terms"]
    with pytest.raises(ParseError) as info:
        ra.deserialize(json.dumps(doc))
    assert info.value.location == "terms"


def test_nonpositive_shift_is_rejected():
    with pytest.raises(ParseError) as info:
        ra.deserialize(_doc(terms=[{"c": 1.0, "t": 0.5}, {"c": 1.0, "t": -0.1}]))
    assert info.value.location == "terms[1].t"


def test_duplicate_shift_is_rejected():
    with pytest.raises(ParseError):
        ra.deserialize(_doc(terms=[{"c": 1.0, "t": 0.5}, {"c": 2.0, "t": 0.5}]))


@pytest.mark.parametrize("text", ["{", "[]", '{"s": 0.5, "epsilon": 1e-8, "terms": []}',
                                  '{"s": 0.5, "epsilon": 1e-8, "terms": [{"c": "x", "t": 1}]}',
                                  '{"s": 0.5, "epsilon": 1e-8, "terms": [{"c": 1}]}'])
def test_malformed_documents(text):
    with pytest.raises(ParseError):
        ra.deserialize(text)


def test_json_error_reports_position():
    with pytest.raises(ParseError) as info:
        ra.deserialize('{"s": 0.5,\n  "epsilon": }')
    assert info.value.location.startswith("line 2")
