"""Objective values and gradients against independent oracles."""

import math

import numpy as np
import pytest

from gradcheck import central_diff, max_rel_err
from srat.errors import DomainError
from srat.losses import (
    ClassWeights,
    LossConfig,
    combined_objective,
    cross_entropy,
    effective_number_weights,
    focal_loss,
    ldam_loss,
    ldam_margins,
    prediction_loss,
    separation_loss,
)
from srat.rand import derive_rng


def _random_batch(rng, n=6, c=4, spread=2.0):
    logits = spread * rng.normal(size=(n, c))
    labels = rng.integers(0, c, size=n)
    return logits, labels


# ---------------------------------------------------------------------------
# cross entropy
# ---------------------------------------------------------------------------


def test_ce_uniform_logits_is_log_num_classes():
    logits = np.zeros((5, 2))
    labels = np.array([0, 1, 0, 1, 1])
    loss, _ = cross_entropy(logits, labels, ClassWeights.uniform(2))
    assert loss == pytest.approx(math.log(2.0))


def test_ce_saturates_to_zero_when_confident():
    labels = np.array([0, 1, 2])
    logits = 40.0 * np.eye(3)[labels]
    loss, _ = cross_entropy(logits, labels, ClassWeights.uniform(3))
    assert 0.0 <= loss < 1e-12


def test_ce_weights_scale_per_example_terms():
    rng = derive_rng(21)
    logits, labels = _random_batch(rng, n=8, c=3)
    uniform, _ = cross_entropy(logits, labels, ClassWeights.uniform(3))
    weighted, _ = cross_entropy(
        logits, labels, ClassWeights(np.array([0.5, 1.0, 1.5]))
    )
    # recompute by hand from per-example CE terms
    per_example = []
    for row, y in zip(logits, labels):
        z = row - row.max()
        per_example.append(-(z[y] - np.log(np.exp(z).sum())))
    w = np.array([0.5, 1.0, 1.5])[labels]
    assert weighted == pytest.approx(float(np.mean(w * per_example)))
    assert uniform == pytest.approx(float(np.mean(per_example)))


def test_ce_gradient_matches_finite_differences():
    rng = derive_rng(22)
    logits, labels = _random_batch(rng)
    weights = ClassWeights.normalized(rng.uniform(0.5, 2.0, size=4))
    _, grad = cross_entropy(logits, labels, weights)
    fd = central_diff(
        lambda flat: cross_entropy(flat.reshape(logits.shape), labels, weights)[0],
        logits.ravel(),
    )
    assert max_rel_err(grad.ravel(), fd) <= 1e-5


def test_ce_rejects_empty_and_bad_labels():
    with pytest.raises(DomainError):
        cross_entropy(np.zeros((0, 2)), np.zeros(0, dtype=int), ClassWeights.uniform(2))
    with pytest.raises(DomainError):
        cross_entropy(np.zeros((2, 2)), np.array([0, 2]), ClassWeights.uniform(2))


# ---------------------------------------------------------------------------
# focal
# ---------------------------------------------------------------------------


def test_focal_gamma_zero_is_ce_bit_for_bit():
    rng = derive_rng(23)
    for _ in range(20):
        logits, labels = _random_batch(rng, n=5, c=3)
        weights = ClassWeights.normalized(rng.uniform(0.5, 2.0, size=3))
        l_ce, g_ce = cross_entropy(logits, labels, weights)
        l_f, g_f = focal_loss(logits, labels, weights, 0.0)
        assert l_ce == l_f
        assert np.array_equal(g_ce, g_f)


def test_focal_vanishes_faster_than_ce_when_confident():
    labels = np.array([0])
    weights = ClassWeights.uniform(2)
    ratios = []
    for margin in (2.0, 4.0, 6.0):
        logits = np.array([[margin, 0.0]])
        ce, _ = cross_entropy(logits, labels, weights)
        focal, _ = focal_loss(logits, labels, weights, 2.0)
        ratios.append(focal / ce)
    assert ratios[0] > ratios[1] > ratios[2]
    assert ratios[2] < 1e-4


def test_focal_gradient_matches_finite_differences():
    rng = derive_rng(24)
    for gamma in (0.5, 2.0):
        logits, labels = _random_batch(rng)
        weights = ClassWeights.normalized(rng.uniform(0.5, 2.0, size=4))
        _, grad = focal_loss(logits, labels, weights, gamma)
        fd = central_diff(
            lambda flat: focal_loss(flat.reshape(logits.shape), labels, weights, gamma)[0],
            logits.ravel(),
        )
        assert max_rel_err(grad.ravel(), fd) <= 1e-5


# ---------------------------------------------------------------------------
# margin (LDAM-style) loss
# ---------------------------------------------------------------------------


def test_margin_loss_reduces_to_ce_bit_for_bit():
    rng = derive_rng(25)
    for _ in range(20):
        logits, labels = _random_batch(rng, n=5, c=3)
        weights = ClassWeights.normalized(rng.uniform(0.5, 2.0, size=3))
        l_ce, g_ce = cross_entropy(logits, labels, weights)
        l_m, g_m = ldam_loss(logits, labels, (7, 3, 11), 0.0, 1.0, weights)
        assert l_ce == l_m
        assert np.array_equal(g_ce, g_m)


def test_margin_ratio_follows_quartic_root_rule():
    margins = ldam_margins((10_000, 10), 0.5)
    assert margins[1] / margins[0] == pytest.approx((10_000 / 10) ** 0.25)
    assert margins[1] / margins[0] == pytest.approx(5.623413251903491)
    assert margins[1] == pytest.approx(0.5)  # rarest class gets the full margin


def test_margins_shrink_with_count():
    margins = ldam_margins((1, 10, 100, 1000), 0.5)
    assert (np.diff(margins) < 0).all()


def test_margin_loss_gradient_matches_finite_differences():
    rng = derive_rng(26)
    logits, labels = _random_batch(rng, spread=0.5)
    weights = ClassWeights.normalized(rng.uniform(0.5, 2.0, size=4))
    counts = (50, 10, 200, 5)
    _, grad = ldam_loss(logits, labels, counts, 0.5, 10.0, weights)
    fd = central_diff(
        lambda flat: ldam_loss(
            flat.reshape(logits.shape), labels, counts, 0.5, 10.0, weights
        )[0],
        logits.ravel(),
    )
    assert max_rel_err(grad.ravel(), fd) <= 1e-5


def test_margin_loss_rejects_zero_counts():
    with pytest.raises(DomainError):
        ldam_loss(
            np.zeros((2, 2)),
            np.array([0, 1]),
            (5, 0),
            0.5,
            30.0,
            ClassWeights.uniform(2),
        )


# ---------------------------------------------------------------------------
# effective-number weights
# ---------------------------------------------------------------------------


def test_effective_number_beta_zero_is_uniform():
    w = effective_number_weights((100, 5, 1000), 0.0)
    assert np.array_equal(w.weights, np.ones(3))


def test_effective_number_all_singletons_is_uniform():
    w = effective_number_weights((1, 1, 1, 1), 0.7)
    np.testing.assert_allclose(w.weights, np.ones(4), atol=1e-12)


def test_effective_number_direct_substitution():
    # counts (2, 5) at beta 0.9: effective numbers 1.9 and 4.0951
    w = effective_number_weights((2, 5), 0.9)
    e2 = (1 - 0.9**2) / 0.1
    e5 = (1 - 0.9**5) / 0.1
    assert e2 == pytest.approx(1.9)
    assert w.weights[0] / w.weights[1] == pytest.approx(e5 / e2)
    assert w.weights.mean() == pytest.approx(1.0)


def test_effective_number_monotone():
    rng = derive_rng(27)
    for _ in range(20):
        counts = rng.integers(1, 10_000, size=6)
        w = effective_number_weights(counts, float(rng.uniform(0.0, 0.9999)))
        order = np.argsort(counts)
        sorted_weights = w.weights[order]
        assert (np.diff(sorted_weights) <= 1e-12).all()


def test_effective_number_rejects_bad_beta():
    with pytest.raises(DomainError):
        effective_number_weights((1, 2), 1.0)
    with pytest.raises(DomainError):
        effective_number_weights((0, 2), 0.9)


# ---------------------------------------------------------------------------
# feature separation
# ---------------------------------------------------------------------------


def _naive_separation(feats, labels, tau):
    """Independent double-loop evaluation on normalized features."""
    z = feats / np.linalg.norm(feats, axis=1, keepdims=True)
    n = len(feats)
    total, valid = 0.0, 0
    for i in range(n):
        pos = [p for p in range(n) if p != i and labels[p] == labels[i]]
        if not pos:
            continue
        valid += 1
        denom = sum(math.exp(z[i] @ z[a] / tau) for a in range(n) if a != i)
        anchor = 0.0
        for p in pos:
            anchor += -math.log(math.exp(z[i] @ z[p] / tau) / denom)
        total += anchor / len(pos)
    return total / valid if valid else 0.0


def test_separation_two_identical_same_class_vectors():
    feats = np.array([[1.0, 0.0], [1.0, 0.0]])
    loss, _ = separation_loss(feats, np.array([0, 0]), 1.0)
    assert loss == 0.0


def test_separation_two_different_classes_is_zero():
    feats = np.array([[1.0, 0.0], [0.0, 1.0]])
    loss, grad = separation_loss(feats, np.array([0, 1]), 1.0)
    assert loss == 0.0
    assert not grad.any()


def test_separation_matches_naive_double_loop():
    rng = derive_rng(28)
    for _ in range(10):
        n = int(rng.integers(3, 9))
        feats = rng.normal(size=(n, 5))
        labels = rng.integers(0, 3, size=n)
        ours, _ = separation_loss(feats, labels, 0.3)
        assert ours == pytest.approx(_naive_separation(feats, labels, 0.3), abs=1e-12)


def test_separation_clustered_beats_shuffled():
    # two tight same-class pairs, cross-class orthogonal
    feats = np.array(
        [[1.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 1.0, 0.0]]
    )
    clustered = np.array([0, 0, 1, 1])
    shuffled = np.array([0, 1, 0, 1])
    l_clustered, _ = separation_loss(feats, clustered, 0.5)
    l_shuffled, _ = separation_loss(feats, shuffled, 0.5)
    assert l_clustered < l_shuffled
    assert l_clustered == pytest.approx(_naive_separation(feats, clustered, 0.5))
    assert l_shuffled == pytest.approx(_naive_separation(feats, shuffled, 0.5))


def test_separation_decreases_as_within_class_similarity_grows():
    # 4 points in 4-D: within-class cosine cos(2t), cross-class cosine
    # exactly 0 for every t
    def config(t):
        c, s = math.cos(t), math.sin(t)
        return np.array(
            [[c, s, 0, 0], [c, -s, 0, 0], [0, 0, c, s], [0, 0, c, -s]]
        )

    labels = np.array([0, 0, 1, 1])
    losses = [
        separation_loss(config(t), labels, 0.4)[0]
        for t in (1.2, 0.9, 0.6, 0.3, 0.1)
    ]
    assert (np.diff(losses) < 0).all()


def test_separation_invariances():
    rng = derive_rng(29)
    feats = rng.normal(size=(6, 4))
    labels = rng.integers(0, 3, size=6)
    base, _ = separation_loss(feats, labels, 0.2)

    # (a) common orthogonal transform
    q, _ = np.linalg.qr(rng.normal(size=(4, 4)))
    rotated, _ = separation_loss(feats @ q, labels, 0.2)
    assert rotated == pytest.approx(base, abs=1e-9)

    # (b) relabeling permutation of class identities
    perm = np.array([2, 0, 1])
    relabeled, _ = separation_loss(feats, perm[labels], 0.2)
    assert relabeled == pytest.approx(base, abs=1e-9)

    # (c) positive per-example scaling of raw features
    scales = rng.uniform(0.1, 10.0, size=6)
    scaled, _ = separation_loss(feats * scales[:, None], labels, 0.2)
    assert scaled == pytest.approx(base, abs=1e-9)


def test_separation_gradient_matches_finite_differences():
    rng = derive_rng(30)
    for normalize in (True, False):
        feats = rng.normal(size=(5, 3))
        labels = rng.integers(0, 2, size=5)
        _, grad = separation_loss(feats, labels, 0.5, normalize=normalize)
        fd = central_diff(
            lambda flat: separation_loss(
                flat.reshape(feats.shape), labels, 0.5, normalize=normalize
            )[0],
            feats.ravel(),
        )
        assert max_rel_err(grad.ravel(), fd) <= 1e-5


def test_separation_rejects_bad_inputs():
    with pytest.raises(DomainError):
        separation_loss(np.zeros((1, 3)), np.array([0]), 0.5)
    with pytest.raises(DomainError):
        separation_loss(np.zeros((3, 3)), np.zeros(3, dtype=int), 0.0)


# ---------------------------------------------------------------------------
# combined objective
# ---------------------------------------------------------------------------


def test_combined_lambda_zero_is_prediction_alone():
    rng = derive_rng(31)
    logits, labels = _random_batch(rng)
    feats = rng.normal(size=(6, 5))
    weights = ClassWeights.uniform(4)
    cfg = LossConfig(kind="ce", tau=0.5, lam=0.0)
    obj = combined_objective(logits, feats, labels, weights, cfg)
    pred, d_logits = cross_entropy(logits, labels, weights)
    assert obj.total == pred
    assert np.array_equal(obj.d_logits, d_logits)
    assert not obj.d_features.any()


def test_combined_is_additive():
    rng = derive_rng(32)
    logits, labels = _random_batch(rng)
    feats = rng.normal(size=(6, 5))
    weights = ClassWeights.uniform(4)
    cfg = LossConfig(kind="ce", tau=0.5, lam=1.0)
    obj = combined_objective(logits, feats, labels, weights, cfg)
    pred, _ = cross_entropy(logits, labels, weights)
    sep, _ = separation_loss(feats, labels, 0.5)
    assert obj.total == pytest.approx(pred + sep, rel=1e-15)
    assert obj.prediction == pred and obj.separation == sep


def test_combined_needs_counts_for_margin_loss():
    cfg = LossConfig(kind="ldam", tau=0.5, lam=0.0)
    with pytest.raises(DomainError):
        prediction_loss(np.zeros((2, 2)), np.array([0, 1]), ClassWeights.uniform(2), cfg)


def test_combined_gradients_match_finite_differences():
    rng = derive_rng(33)
    for kind in ("ce", "focal", "ldam"):
        logits, labels = _random_batch(rng, n=5, c=3, spread=0.8)
        feats = rng.normal(size=(5, 4))
        weights = ClassWeights.normalized(rng.uniform(0.5, 2.0, size=3))
        cfg = LossConfig(kind=kind, tau=0.4, lam=0.8, ldam_scale=5.0)
        counts = (20, 7, 55)
        obj = combined_objective(logits, feats, labels, weights, cfg, counts)

        fd_logits = central_diff(
            lambda flat: combined_objective(
                flat.reshape(logits.shape), feats, labels, weights, cfg, counts
            ).total,
            logits.ravel(),
        )
        assert max_rel_err(obj.d_logits.ravel(), fd_logits) <= 1e-5

        fd_feats = central_diff(
            lambda flat: combined_objective(
                logits, flat.reshape(feats.shape), labels, weights, cfg, counts
            ).total,
            feats.ravel(),
        )
        assert max_rel_err(obj.d_features.ravel(), fd_feats) <= 1e-5


def test_loss_config_validation():
    with pytest.raises(DomainError):
        LossConfig(kind="mse")
    with pytest.raises(DomainError):
        LossConfig(tau=0.0)
    with pytest.raises(DomainError):
        LossConfig(cb_beta=1.0)
    with pytest.raises(DomainError):
        LossConfig(lam=-0.5)


def test_class_weights_invariants():
    with pytest.raises(DomainError):
        ClassWeights(np.array([2.0, 2.0]))  # mean != 1
    with pytest.raises(DomainError):
        ClassWeights.normalized(np.array([1.0, -1.0]))
    w = ClassWeights.normalized(np.array([1.0, 3.0]))
    assert w.weights.mean() == pytest.approx(1.0)
    assert np.array_equal(w.per_example(np.array([1, 0, 1])), w.weights[[1, 0, 1]])
