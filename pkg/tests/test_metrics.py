import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from agfilter.errors import DegenerateLabels, EmptyUnion, NonBinaryInput, ShapeMismatch
from agfilter.metrics import ConfusionCounts, auc, binarize, confusion, overlap_error
from agfilter.tensor import Tensor

from oracles import loop_confusion, pairwise_auc


def _mask(a):
    return Tensor(np.asarray(a, dtype=np.float32))


def test_perfect_prediction(rng):
    gt = _mask(rng.random((16, 16)) > 0.5)
    c = confusion(gt, gt)
    assert (c.accuracy, c.sensitivity, c.specificity, c.iou) == (1.0, 1.0, 1.0, 1.0)


def test_negated_prediction(rng):
    g = rng.random((16, 16)) > 0.5
    c = confusion(_mask(~g), _mask(g))
    assert (c.accuracy, c.sensitivity, c.specificity, c.iou) == (0.0, 0.0, 0.0, 0.0)


@pytest.mark.parametrize("seed", range(5))
def test_counts_vs_loop(seed):
    rng = np.random.default_rng(seed)
    p, g = rng.random((16, 16)) > 0.4, rng.random((16, 16)) > 0.6
    c = confusion(_mask(p), _mask(g))
    tp, fp, tn, fn = loop_confusion(p, g)
    assert (c.tp, c.fp, c.tn, c.fn) == (tp, fp, tn, fn)
    assert c.accuracy == (tp + tn) / 256
    assert c.sensitivity == tp / (tp + fn)
    assert c.specificity == tn / (tn + fp)
    assert c.iou == tp / (tp + fp + fn)


def test_accuracy_symmetric_under_relabeling(rng):
    p, g = rng.random((12, 12)) > 0.5, rng.random((12, 12)) > 0.3
    a = confusion(_mask(p), _mask(g))
    b = confusion(_mask(~p), _mask(~g))
    assert a.accuracy == b.accuracy
    assert a.sensitivity == b.specificity and a.specificity == b.sensitivity


def test_vacuous_metrics_are_flagged():
    zeros = _mask(np.zeros((4, 4)))
    values, flagged = confusion(zeros, zeros).rates()
    assert values["sen"] == 1.0 and values["iou"] == 1.0
    assert flagged == ["sen", "iou"]
    _, flagged = ConfusionCounts(3, 0, 0, 0).rates()
    assert flagged == ["spe"]


def test_non_binary_and_shape():
    with pytest.raises(NonBinaryInput):
        confusion(_mask([[0.5, 1.0]]), _mask([[0.0, 1.0]]))
    with pytest.raises(ShapeMismatch):
        confusion(_mask([[0.0, 1.0]]), _mask([[0.0], [1.0]]))


def test_binarize_is_inclusive():
    t = Tensor([[0.2, 0.5, 0.9]])
    assert binarize(t, 0.5).data.ravel().tolist() == [0.0, 1.0, 1.0]
    assert binarize(t, 0.0).data.min() == 1.0


# -- AUC --------------------------------------------------------------------------


def test_auc_separated_and_reversed():
    gt = _mask([[0, 0, 1, 1]])
    assert auc(Tensor([[0.1, 0.2, 0.8, 0.9]]), gt) == 1.0
    assert auc(Tensor([[0.9, 0.8, 0.2, 0.1]]), gt) == 0.0


def test_auc_all_ties_is_half(rng):
    gt = _mask(rng.random((8, 8)) > 0.5)
    assert auc(Tensor.full(8, 8, 0.3), gt) == 0.5


def test_auc_vs_pairwise_oracle():
    rng = np.random.default_rng(7)
    labels = rng.random(200) > 0.6
    # quantised scores so ties occur
    scores = np.round(rng.random(200) + 0.3 * labels, 2)
    got = auc(Tensor(scores[None]), _mask(labels[None]))
    assert abs(got - pairwise_auc(scores, labels)) <= 1e-12


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_auc_invariant_to_monotone_transform(seed):
    rng = np.random.default_rng(seed)
    labels = rng.random((6, 6)) > 0.5
    labels.flat[0], labels.flat[1] = True, False
    s = rng.uniform(-1, 1, (6, 6))
    base = auc(Tensor(s, dtype=np.float64), _mask(labels))
    assert auc(Tensor(s**3, dtype=np.float64), _mask(labels)) == base


def test_auc_needs_both_classes():
    with pytest.raises(DegenerateLabels):
        auc(Tensor([[0.1, 0.2]]), _mask([[1, 1]]))


# -- overlap error ----------------------------------------------------------------


def test_overlap_error_cases():
    full = np.ones((10, 10))
    half = np.zeros((10, 10))
    half[:, :5] = 1
    assert overlap_error(_mask(full), _mask(full)) == 0.0
    assert overlap_error(_mask(half), _mask(1 - half)) == 1.0
    assert overlap_error(_mask(full), _mask(half)) == 0.5


@pytest.mark.parametrize("seed", range(5))
def test_overlap_error_is_one_minus_iou(seed):
    rng = np.random.default_rng(seed)
    p, g = _mask(rng.random((9, 9)) > 0.5), _mask(rng.random((9, 9)) > 0.5)
    assert overlap_error(g, p) == 1.0 - confusion(p, g).iou


def test_overlap_error_empty_union():
    z = _mask(np.zeros((3, 3)))
    with pytest.raises(EmptyUnion):
        overlap_error(z, z)
