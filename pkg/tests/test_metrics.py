import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from hsicattr.design import exhaustive_design, sample_lhs_masks
from hsicattr.hsic import HSICAnalysis
from hsicattr.metrics import (
    UndefinedCorrelationError,
    auc,
    convergence_study,
    deletion_curve,
    fidelity_report,
    importance_order,
    insertion_curve,
    mu_fidelity,
    occlusion_attribution,
    pearson,
    rise_attribution,
    spearman,
    subset_size,
)
from hsicattr.model import Constant, ModelEndpoint, PatchImageMean, PatchSum, Xor
from hsicattr.perturb import PerturbConfig


def ep(model, **kw):
    return ModelEndpoint(model, **kw)


def grid_for(d):
    return PerturbConfig((d, 1))


# -- rank correlation ------------------------------------------------------------


def test_spearman_examples():
    assert spearman([1, 2, 3], [1, 3, 2]) == 0.5
    assert spearman([1, 2, 3], [1, 2, 3]) == 1.0
    assert spearman([1, 2, 3], [3, 2, 1]) == -1.0


def test_spearman_ties_average_ranks():
    # ranks (1.5, 1.5, 3) vs (1, 2, 3)
    assert spearman([5, 5, 9], [1, 2, 3]) == pytest.approx(np.sqrt(3) / 2, abs=1e-15)


def test_spearman_undefined_and_errors():
    with pytest.raises(UndefinedCorrelationError):
        spearman([1, 1, 1], [1, 2, 3])
    with pytest.raises(ValueError):
        spearman([1, 2], [1, 2, 3])
    with pytest.raises(ValueError):
        spearman([1], [1])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(-1000, 1000), min_size=3, max_size=30, unique=True), st.randoms(use_true_random=False))
def test_spearman_matches_closed_form_without_ties(values, rnd):
    other = values[:]
    rnd.shuffle(other)
    assert spearman(values, other) == pytest.approx(oracles.spearman_formula(values, other), abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(-1000, 1000), min_size=3, max_size=20, unique=True))
def test_spearman_monotone_invariance(values):
    a = np.array(values, dtype=float)
    b = np.arange(a.size)[::-1].astype(float)
    assert spearman(a**3 + 7 * a, b) == spearman(a, b)
    assert spearman(a, b) == spearman(b, a)


def test_pearson_affine():
    rng = np.random.default_rng(0)
    a = rng.normal(size=30)
    assert pearson(a, 3 * a + 2) == pytest.approx(1.0, abs=1e-15)
    assert pearson(a, -a) == pytest.approx(-1.0, abs=1e-15)


def test_importance_order_ties_by_index():
    assert importance_order([1.0, 3.0, 3.0, 0.0]).tolist() == [1, 2, 0, 3]


def test_auc_trapezoid():
    assert auc([0, 0.5, 1], [1, 1, 0]) == 0.75


# -- deletion / insertion --------------------------------------------------------


def test_constant_model_flat_curves():
    cfg = grid_for(5)
    e = ep(Constant(2.5))
    scores = np.arange(5.0)
    for curve in (deletion_curve(e, None, scores, cfg), insertion_curve(e, None, scores, cfg)):
        np.testing.assert_array_equal(curve.values, 2.5)
        assert curve.auc == pytest.approx(2.5, abs=1e-15)


def test_patch_sum_staircase():
    w = np.array([1.0, 4.0, 2.0])
    cfg = grid_for(3)
    e = ep(PatchSum(w))
    dele = deletion_curve(e, None, w, cfg)
    ins = insertion_curve(e, None, w, cfg)
    np.testing.assert_array_equal(dele.fractions, [0, 1 / 3, 2 / 3, 1])
    np.testing.assert_array_equal(dele.values, [7, 3, 1, 0])
    np.testing.assert_array_equal(ins.values, [0, 4, 6, 7])


def test_curve_endpoints_swap():
    rng = np.random.default_rng(4)
    w = rng.uniform(0.1, 2, 6)
    cfg = grid_for(6)
    e = ep(PatchSum(w))
    s = rng.normal(size=6)
    dele, ins = deletion_curve(e, None, s, cfg), insertion_curve(e, None, s, cfg)
    assert dele.values[0] == ins.values[-1] and dele.values[-1] == ins.values[0]


def test_coarse_steps():
    cfg = grid_for(10)
    curve = deletion_curve(ep(PatchSum(np.ones(10))), None, np.arange(10.0), cfg, steps=4)
    # counts round(t*10/4) with halves up: 0, 3, 5, 8, 10
    np.testing.assert_array_equal(curve.values, [10, 7, 5, 2, 0])


def _curve_auc_for_order(w, order, insertion):
    d = len(w)
    vals = []
    for k in range(d + 1):
        kept = order[:k] if insertion else order[k:]
        vals.append(sum(w[i] for i in kept))
    return float(np.trapezoid(vals, np.arange(d + 1) / d))


@pytest.mark.parametrize("d", [3, 5, 6])
def test_exact_scores_optimal_over_all_orderings(d):
    rng = np.random.default_rng(d)
    w = rng.permutation(np.arange(1.0, d + 1))
    cfg = grid_for(d)
    e = ep(PatchSum(w))
    dele = deletion_curve(e, None, w, cfg).auc
    ins = insertion_curve(e, None, w, cfg).auc
    all_del = [_curve_auc_for_order(w, list(o), False) for o in itertools.permutations(range(d))]
    all_ins = [_curve_auc_for_order(w, list(o), True) for o in itertools.permutations(range(d))]
    assert dele == pytest.approx(min(all_del), abs=1e-12)
    assert ins == pytest.approx(max(all_ins), abs=1e-12)


def test_batched_and_sequential_curves_identical():
    rng = np.random.default_rng(2)
    x = rng.random((8, 8, 3))
    cfg = PerturbConfig((4, 4), baseline=0.2)
    e = ep(PatchImageMean(rng.normal(size=16), (4, 4)), batch_limit=5)
    s = rng.normal(size=16)
    for fn in (deletion_curve, insertion_curve):
        a = fn(e, x, s, cfg, batched=True)
        b = fn(e, x, s, cfg, batched=False)
        assert a.values.tobytes() == b.values.tobytes()


def test_curve_score_length_checked():
    with pytest.raises(ValueError):
        deletion_curve(ep(Constant()), None, [1.0, 2.0], grid_for(3))


# -- muFidelity ----------------------------------------------------------------


def test_subset_size_rounding():
    assert subset_size(49, 0.2) == 10
    assert subset_size(5, 0.1) == 1
    assert subset_size(10, 0.25) == 3


def test_mu_fidelity_exact_scores_is_one():
    rng = np.random.default_rng(1)
    w = rng.normal(size=12)
    e = ep(PatchSum(w))
    assert mu_fidelity(e, None, w, grid_for(12)) == pytest.approx(1.0, abs=1e-12)
    assert mu_fidelity(e, None, -w, grid_for(12)) == pytest.approx(-1.0, abs=1e-12)


def test_mu_fidelity_affine_invariant():
    rng = np.random.default_rng(3)
    x = rng.random((6, 6, 1))
    cfg = PerturbConfig((3, 3))
    e = ep(PatchImageMean(rng.normal(size=9), (3, 3)))
    s = rng.normal(size=9)
    base = mu_fidelity(e, x, s, cfg, seed=4)
    assert mu_fidelity(e, x, 2.5 * s + 1.0, cfg, seed=4) == pytest.approx(base, abs=1e-12)


def test_mu_fidelity_constant_model_undefined():
    with pytest.raises(UndefinedCorrelationError):
        mu_fidelity(ep(Constant(1.0)), None, np.arange(6.0), grid_for(6))
    report = fidelity_report(ep(Constant(1.0)), None, np.arange(6.0), grid_for(6))
    assert report.mu_fidelity is None and report.diagnostics
    assert report.to_dict()["muFidelity"] is None


def test_mu_fidelity_argument_checks():
    for kw in ({"k_fraction": 0.0}, {"k_fraction": 1.0}, {"subset_count": 1}):
        with pytest.raises(ValueError):
            mu_fidelity(ep(PatchSum([1.0, 2.0])), None, [1.0, 2.0], grid_for(2), **kw)


def test_report_serialization():
    w = np.array([1.0, 2.0, 3.0])
    report = fidelity_report(ep(PatchSum(w)), None, w, grid_for(3), metrics=("deletion", "insertion"))
    obj = report.to_dict()
    assert set(obj) == {"config", "diagnostics", "deletionCurve", "deletionAUC", "insertionCurve", "insertionAUC", "muFidelity"}
    assert obj["deletionCurve"][0] == [0.0, 6.0]
    lines = report.to_csv().splitlines()
    assert lines[0] == "metric,fraction,score" and len(lines) == 9
    with pytest.raises(ValueError):
        fidelity_report(ep(PatchSum(w)), None, w, grid_for(3), metrics=("auc",))


# -- baselines -------------------------------------------------------------------


def test_occlusion_patch_sum_exact():
    rng = np.random.default_rng(5)
    x = rng.random((12, 12, 3))
    cfg = PerturbConfig((3, 3))
    w = rng.normal(size=9)
    from hsicattr.perturb import cell_means

    got = occlusion_attribution(ep(PatchSum(w)), x, cfg).scores
    np.testing.assert_allclose(got, w * cell_means(x, (3, 3)), rtol=0, atol=1e-12)


def test_occlusion_xor_blind_to_interaction():
    cfg = PerturbConfig((2, 1))
    scores = occlusion_attribution(ep(Xor(0, 1)), None, cfg).scores
    assert scores[0] == scores[1]
    design = exhaustive_design(2)
    y = np.abs(design.masks[:, 0].astype(float) - design.masks[:, 1])
    assert HSICAnalysis(design, y).interaction(0, 1) > 0


def test_rise_constant_model():
    cfg = grid_for(5)
    design = sample_lhs_masks(40, 5, 2)
    got = rise_attribution(ep(Constant(3.0)), None, design, cfg).scores
    np.testing.assert_allclose(got, 3.0, rtol=1e-15)


def test_rise_ranks_patch_sum():
    w = np.arange(1.0, 9.0)
    design = sample_lhs_masks(2048, 8, 0)
    got = rise_attribution(ep(PatchSum(w)), None, design, grid_for(8)).scores
    assert spearman(got, w) == 1.0


def test_rise_never_unmasked_cell_warns():
    from hsicattr.design import MaskDesign

    masks = np.array([[1, 0], [1, 0], [0, 0]], dtype=np.uint8)
    design = MaskDesign(masks, "lhs", 0)
    result = rise_attribution(ep(PatchSum([1.0, 1.0])), None, design, grid_for(2))
    assert result.scores[1] == 0.0 and result.warnings


# -- convergence -----------------------------------------------------------------


def test_convergence_self_reference_is_one():
    rng = np.random.default_rng(0)
    x = rng.random((8, 8, 1))
    cfg = PerturbConfig((2, 2))
    e = ep(PatchImageMean(np.array([1.0, 2.0, 3.0, 4.0]), (2, 2)))
    out = convergence_study(e, x, cfg, [256], 256, seed=0, reference_seed=0)
    assert out == [(256, 1.0)]


def test_convergence_rejects_small_reference():
    with pytest.raises(ValueError):
        convergence_study(ep(PatchSum([1.0, 2.0])), None, grid_for(2), [64, 128], 100)
    with pytest.raises(ValueError):
        convergence_study(ep(PatchSum([1.0, 2.0])), None, grid_for(2), [], 100)
