import math

import numpy as np
import pytest

from fstlab.metrics import accuracy, ema_trace, miou, pseudo_error_rate


# independent brute-force oracles: plain loops, no vectorization


def oracle_error_rate(pseudo, truth, num_classes):
    pseudo = np.asarray(pseudo)
    truth = np.asarray(truth)
    if pseudo.ndim <= 2:
        pseudo, truth = pseudo.reshape(1, -1), truth.reshape(1, -1)
    else:
        pseudo, truth = pseudo.reshape(pseudo.shape[0], -1), truth.reshape(truth.shape[0], -1)
    per_image = []
    for i in range(truth.shape[0]):
        recalls = []
        for c in range(num_classes):
            total = 0
            correct = 0
            for j in range(truth.shape[1]):
                if truth[i, j] == c:
                    total += 1
                    if pseudo[i, j] == c:
                        correct += 1
            if total:
                recalls.append(correct / total)
        per_image.append(sum(recalls) / len(recalls))
    return 1.0 - sum(per_image) / len(per_image)


def oracle_miou(pred, truth, num_classes):
    pred = np.asarray(pred).reshape(-1)
    truth = np.asarray(truth).reshape(-1)
    ious = []
    for c in range(num_classes):
        inter = 0
        union = 0
        for j in range(pred.size):
            p, t = pred[j] == c, truth[j] == c
            inter += p and t
            union += p or t
        if union:
            ious.append(inter / union)
    return sum(ious) / len(ious)


def test_error_rate_perfect_and_disjoint():
    truth = np.array([[0, 0, 1, 1]])
    assert pseudo_error_rate(truth, truth, 2) == 0.0
    assert pseudo_error_rate(1 - truth, truth, 2) == 1.0


def test_error_rate_hand_case():
    # one image, class 0: 3/4 pixels recovered, class 1: 1/2 -> 1 - (0.75+0.5)/2
    truth = np.array([0, 0, 0, 0, 1, 1])
    pseudo = np.array([0, 0, 0, 1, 1, 0])
    assert pseudo_error_rate(pseudo, truth, 2) == 0.375


def test_error_rate_skips_absent_classes():
    truth = np.array([[0, 0], [1, 1]])  # each image misses one class
    pseudo = np.array([[0, 1], [1, 1]])
    # image 0: recall(c0)=1/2; image 1: recall(c1)=1 -> 1 - (0.5 + 1)/2
    assert pseudo_error_rate(pseudo, truth, 2) == 0.25


def test_error_rate_rejects_empty_and_mismatched():
    with pytest.raises(ValueError):
        pseudo_error_rate(np.zeros((0,)), np.zeros((0,)), 2)
    with pytest.raises(ValueError):
        pseudo_error_rate(np.zeros(3), np.zeros(4), 2)
    with pytest.raises(ValueError):
        pseudo_error_rate(np.zeros(3), np.zeros(3), 1)


def test_miou_perfect_and_disjoint():
    truth = np.array([0, 1, 0, 1])
    assert miou(truth, truth, 2) == 1.0
    assert miou(1 - truth, truth, 2) == 0.0


def test_miou_hand_case():
    # constructed so IoU(class0) = 3/6 and IoU(class1) = 1/4 -> mean 0.375
    truth = np.array([0, 0, 0, 1, 0, 0, 1])
    pred = np.array([0, 0, 0, 1, 1, 1, 0])
    assert miou(pred, truth, 2) == 0.375


def test_miou_skips_empty_union():
    truth = np.array([0, 0, 1])
    pred = np.array([0, 1, 1])
    # class 2 never appears; mean over classes 0 and 1 only
    assert miou(pred, truth, 3) == (0.5 + 0.5) / 2


def test_metrics_match_bruteforce_oracles():
    rng = np.random.default_rng(2024)
    for _ in range(200):
        shape = (rng.integers(1, 4), 8, 8)
        truth = rng.integers(0, 3, size=shape)
        pred = np.where(rng.uniform(size=shape) < 0.6, truth, rng.integers(0, 3, size=shape))
        assert pseudo_error_rate(pred, truth, 3) == oracle_error_rate(pred, truth, 3)
        assert miou(pred, truth, 3) == oracle_miou(pred, truth, 3)


def test_metrics_permutation_invariant():
    rng = np.random.default_rng(5)
    truth = rng.integers(0, 3, size=64)
    pred = rng.integers(0, 3, size=64)
    perm = rng.permutation(64)
    assert pseudo_error_rate(pred, truth, 3) == pseudo_error_rate(pred[perm], truth[perm], 3)
    assert miou(pred, truth, 3) == miou(pred[perm], truth[perm], 3)


def test_accuracy():
    assert accuracy(np.array([0, 1, 1]), np.array([0, 1, 0])) == pytest.approx(2 / 3)
    with pytest.raises(ValueError):
        accuracy(np.array([]), np.array([]))


def test_ema_trace_constant_stream():
    out = ema_trace([2.5, 2.5, 2.5], 0.9)
    assert out.tolist() == [2.5, 2.5, 2.5]


def test_ema_trace_zero_momentum_is_raw():
    vals = [1.0, -2.0, 0.5]
    assert ema_trace(vals, 0.0).tolist() == vals


def test_ema_trace_hand_case():
    assert ema_trace([1.0, 0.0], 0.5).tolist() == [1.0, 0.5]


def test_ema_trace_momentum_range():
    with pytest.raises(ValueError):
        ema_trace([1.0], 1.0)
