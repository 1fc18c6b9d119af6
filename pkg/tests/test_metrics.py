import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from emofuse import metrics as met
from helpers import rel_err


def test_confusion_perfect_is_diagonal():
    y = np.array([0, 1, 2, 1, 0])
    conf = met.confusion_matrix(y, y, 3)
    assert np.array_equal(conf, np.diag([2, 2, 1]))


def test_confusion_single_predicted_column():
    conf = met.confusion_matrix([0, 1, 2], [0, 0, 0], 3)
    assert conf[:, 0].sum() == 3 and conf[:, 1:].sum() == 0


def test_confusion_matches_tally_loop():
    rng = np.random.default_rng(0)
    y_true = rng.integers(0, 5, 100)
    y_pred = rng.integers(0, 5, 100)
    conf = met.confusion_matrix(y_true, y_pred, 5)
    expected = np.zeros((5, 5), dtype=int)
    for t, p in zip(y_true, y_pred):
        expected[t, p] += 1
    assert np.array_equal(conf, expected)


def test_confusion_label_out_of_range():
    with pytest.raises(ValueError):
        met.confusion_matrix([0, 5], [0, 0], 3)


def test_confusion_marginals():
    rng = np.random.default_rng(1)
    y_true = rng.integers(0, 4, 60)
    y_pred = rng.integers(0, 4, 60)
    conf = met.confusion_matrix(y_true, y_pred, 4)
    assert np.array_equal(conf.sum(axis=1), np.bincount(y_true, minlength=4))
    assert np.array_equal(conf.sum(axis=0), np.bincount(y_pred, minlength=4))


def test_weighted_f1_perfect_prediction():
    y = [0, 1, 2, 2, 1]
    assert met.weighted_f1(y, y, 3) == 1.0


def test_weighted_f1_single_class_all_correct():
    assert met.weighted_f1([1, 1, 1], [1, 1, 1], 3) == 1.0


def test_weighted_f1_two_class_formula_oracle():
    y_true, y_pred = [0, 0, 1, 1], [0, 1, 1, 1]
    # class 0: p=1, r=0.5, f1=2/3 ; class 1: p=2/3, r=1, f1=0.8
    expected = 0.5 * (2 / 3) + 0.5 * 0.8
    assert abs(met.weighted_f1(y_true, y_pred, 2) - expected) <= 1e-12


def independent_weighted_f1(y_true, y_pred, classes):
    total = len(y_true)
    acc = 0.0
    for c in range(classes):
        tp = sum(1 for t, p in zip(y_true, y_pred) if t == c and p == c)
        fp = sum(1 for t, p in zip(y_true, y_pred) if t != c and p == c)
        fn = sum(1 for t, p in zip(y_true, y_pred) if t == c and p != c)
        support = tp + fn
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / support if support else 0.0
        f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
        acc += support / total * f1
    return acc


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3)), min_size=1, max_size=40))
def test_weighted_f1_matches_independent_tally(pairs):
    y_true = [t for t, _ in pairs]
    y_pred = [p for _, p in pairs]
    assert abs(met.weighted_f1(y_true, y_pred, 4)
               - independent_weighted_f1(y_true, y_pred, 4)) <= 1e-12


def test_weighted_f1_invariant_under_class_relabeling():
    rng = np.random.default_rng(2)
    y_true = rng.integers(0, 4, 50)
    y_pred = rng.integers(0, 4, 50)
    perm = rng.permutation(4)
    assert abs(met.weighted_f1(y_true, y_pred, 4)
               - met.weighted_f1(perm[y_true], perm[y_pred], 4)) <= 1e-12


def test_weighted_f1_empty_error():
    with pytest.raises(ValueError):
        met.weighted_f1([], [], 3)


def test_per_class_accuracy_diagonal():
    recall, mean, present = met.per_class_accuracy(np.diag([3, 2, 5]))
    assert np.allclose(recall, 1.0) and mean == 1.0


def test_per_class_accuracy_zero_support_excluded():
    conf = np.array([[2, 0, 0], [0, 0, 0], [0, 0, 4]])
    recall, mean, present = met.per_class_accuracy(conf)
    assert not present[1]
    assert recall[1] == 0.0
    assert mean == 1.0


# --- paired t-test ------------------------------------------------------

def mp_two_sided_p(t, df):
    t = mpmath.mpf(t)
    x = df / (df + t * t)
    return float(mpmath.betainc(mpmath.mpf(df) / 2, mpmath.mpf("0.5"),
                                0, x, regularized=True))


def test_t_test_symmetric_differences():
    res = met.paired_t_test([1.0, 0.0], [0.0, 1.0])
    assert res.t == 0.0 and res.p == 1.0 and not res.significant


def test_t_test_identical_samples():
    res = met.paired_t_test([0.3, 0.4, 0.5], [0.3, 0.4, 0.5])
    assert res.t == 0.0 and res.p == 1.0


def test_t_test_zero_variance_nonzero_mean_degenerate():
    res = met.paired_t_test([1.0, 1.0, 1.0], [0.0, 0.0, 0.0])
    assert res.degenerate and res.p == 0.0 and res.significant


def test_t_test_against_high_precision_cdf():
    d = np.array([1.1, 0.9, 1.0, 1.2, 0.8])
    res = met.paired_t_test(d, np.zeros(5))
    n = len(d)
    t_expected = d.mean() / (d.std(ddof=1) / math.sqrt(n))
    assert abs(res.t - t_expected) <= 1e-12
    assert abs(res.p - mp_two_sided_p(t_expected, n - 1)) <= 1e-10


@settings(max_examples=100, deadline=None)
@given(st.floats(-8, 8), st.integers(1, 40))
def test_t_cdf_matches_mpmath(t, df):
    assert abs(met.t_two_sided_p(t, df) - mp_two_sided_p(t, df)) <= 1e-10


def test_t_test_needs_two_samples():
    with pytest.raises(ValueError):
        met.paired_t_test([1.0], [0.5])


# --- 2D projection ------------------------------------------------------

def test_projection_recovers_axis_aligned_2d():
    x = np.array([[3.0, 0.0], [-3.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
    proj = met.project_2d(x)
    assert abs(abs(proj.components[0, 0]) - 1.0) <= 1e-6
    assert abs(abs(proj.components[1, 1]) - 1.0) <= 1e-6


def test_projection_duplicated_points_identical_coords():
    rng = np.random.default_rng(4)
    base = rng.normal(size=(5, 4))
    x = np.vstack([base, base])
    proj = met.project_2d(x)
    assert np.allclose(proj.coords[:5], proj.coords[5:])


def test_projection_matches_eigendecomposition():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(10, 5))
    proj = met.project_2d(x)
    xc = x - x.mean(axis=0)
    evals, evecs = np.linalg.eigh(xc.T @ xc / 9)
    top2 = evals[::-1][:2]
    assert rel_err(proj.eigenvalues, top2) <= 1e-6
    # reconstruction error of rank-2 approximations agrees
    recon_pi = proj.coords @ proj.components
    v = evecs[:, ::-1][:, :2]
    recon_eig = (xc @ v) @ v.T
    assert abs(np.linalg.norm(xc - recon_pi) - np.linalg.norm(xc - recon_eig)) <= 1e-6


def test_projection_orthogonal_components_and_translation_invariance():
    rng = np.random.default_rng(6)
    x = rng.normal(size=(20, 6))
    proj = met.project_2d(x)
    assert abs(proj.components[0] @ proj.components[1]) <= 1e-8
    shifted = met.project_2d(x + 100.0)
    assert rel_err(shifted.coords, proj.coords) <= 1e-6


def test_projection_rank_deficient_flagged():
    x = np.outer(np.arange(10.0), np.array([1.0, 2.0, 3.0]))
    proj = met.project_2d(x)
    assert proj.rank_deficient
    assert np.allclose(proj.components[1], 0.0)


def test_report_roundtrip_files(tmp_path):
    rng = np.random.default_rng(7)
    y_true = rng.integers(0, 3, 30)
    y_pred = rng.integers(0, 3, 30)
    report = met.compute_report(y_true, y_pred, 3, ["a", "b", "c"])
    met.write_confusion_csv(tmp_path / "c.csv", report)
    met.write_per_class_csv(tmp_path / "p.csv", report)
    met.write_aggregates_json(tmp_path / "a.json", report)
    assert (tmp_path / "c.csv").read_text().startswith("true\\pred,a,b,c")
    assert "weighted_f1" in (tmp_path / "a.json").read_text()
