import math

import numpy as np
import pytest

from constraintmatch.losses import (EPS, PairBatch, alignment, combined_loss,
                                    cross_entropy_loss, mcl_loss)


def random_prob_rows(rng, m, n):
    raw = rng.random((m, n)) + 0.05
    return raw / raw.sum(axis=1, keepdims=True)


def test_alignment_examples():
    e0 = np.array([1.0, 0.0, 0.0])
    e1 = np.array([0.0, 1.0, 0.0])
    assert alignment(e0, e0) == 1.0
    assert alignment(e0, e1) == 0.0
    assert alignment(np.array([0.5, 0.5]), np.array([0.5, 0.5])) == 0.5
    with pytest.raises(ValueError):
        alignment(np.ones(2) / 2, np.ones(3) / 3)


def test_mcl_perfect_pairs_near_zero():
    one_hot = np.array([[1.0, 0.0]])
    other = np.array([[0.0, 1.0]])
    loss_ml, _, _ = mcl_loss(PairBatch(one_hot, one_hot, np.array([1.0])))
    loss_cl, _, _ = mcl_loss(PairBatch(one_hot, other, np.array([0.0])))
    assert loss_ml < 1e-6
    assert loss_cl < 1e-6


def test_mcl_half_alignment_is_ln2():
    half = np.array([[0.5, 0.5]])
    loss, _, _ = mcl_loss(PairBatch(half, half, np.array([1.0])))
    assert abs(loss - math.log(2)) < 1e-12


def test_mcl_empty_batch():
    batch = PairBatch.empty(4)
    loss, gl, gr = mcl_loss(batch)
    assert loss == 0.0
    assert gl.shape == (0, 4) and gr.shape == (0, 4)


def test_mcl_symmetric_under_swap():
    rng = np.random.default_rng(0)
    left = random_prob_rows(rng, 8, 5)
    right = random_prob_rows(rng, 8, 5)
    targets = rng.random(8)
    loss_a, gl_a, gr_a = mcl_loss(PairBatch(left, right, targets))
    loss_b, gl_b, gr_b = mcl_loss(PairBatch(right, left, targets))
    assert loss_a == loss_b
    assert np.allclose(gl_a, gr_b) and np.allclose(gr_a, gl_b)


def test_mcl_nonnegative_hard_and_entropy_bound_soft():
    rng = np.random.default_rng(1)
    for _ in range(50):
        left = random_prob_rows(rng, 1, 4)
        right = random_prob_rows(rng, 1, 4)
        c_hard = float(rng.integers(0, 2))
        loss, _, _ = mcl_loss(PairBatch(left, right, np.array([c_hard])))
        assert loss >= 0.0
        c_soft = float(rng.uniform(0.05, 0.95))
        loss, _, _ = mcl_loss(PairBatch(left, right, np.array([c_soft])))
        entropy = -(c_soft * math.log(c_soft) + (1 - c_soft) * math.log(1 - c_soft))
        assert loss >= entropy - 1e-12


def test_mcl_gradients_match_finite_differences():
    rng = np.random.default_rng(2)
    step = 1e-6
    for trial in range(10):
        left = random_prob_rows(rng, 4, 3)
        right = random_prob_rows(rng, 4, 3)
        targets = rng.uniform(0.1, 0.9, size=4)
        _, gl, gr = mcl_loss(PairBatch(left, right, targets))
        for mat, grad in ((left, gl), (right, gr)):
            for r in range(4):
                for c in range(3):
                    orig = mat[r, c]
                    mat[r, c] = orig + step
                    hi, _, _ = mcl_loss(PairBatch(left, right, targets))
                    mat[r, c] = orig - step
                    lo, _, _ = mcl_loss(PairBatch(left, right, targets))
                    mat[r, c] = orig
                    numeric = (hi - lo) / (2 * step)
                    denom = max(abs(numeric), abs(grad[r, c]), 1e-4)
                    assert abs(numeric - grad[r, c]) / denom < 1e-5


def test_combined_loss_degenerate_cases():
    rng = np.random.default_rng(3)
    cons = PairBatch(random_prob_rows(rng, 5, 3), random_prob_rows(rng, 5, 3),
                     rng.integers(0, 2, size=5).astype(float))
    pseudo = PairBatch(random_prob_rows(rng, 7, 3), random_prob_rows(rng, 7, 3),
                       rng.random(7))
    loss_c, _, _ = mcl_loss(cons)
    loss_p, _, _ = mcl_loss(pseudo)

    total, _, (glp, grp) = combined_loss(cons, pseudo, lam=0.0)
    assert total == loss_c
    assert not glp.any() and not grp.any()

    total, _, _ = combined_loss(PairBatch.empty(3), pseudo, lam=1.0)
    assert total == loss_p

    total, _, _ = combined_loss(cons, cons, lam=1.0)
    assert abs(total - 2 * loss_c) < 1e-15


def test_combined_loss_gradient_weighting():
    rng = np.random.default_rng(4)
    cons = PairBatch(random_prob_rows(rng, 3, 4), random_prob_rows(rng, 3, 4),
                     np.array([1.0, 0.0, 1.0]))
    pseudo = PairBatch(random_prob_rows(rng, 3, 4), random_prob_rows(rng, 3, 4),
                       rng.random(3))
    _, _, (gl1, gr1) = combined_loss(cons, pseudo, lam=1.0)
    _, _, (gl2, gr2) = combined_loss(cons, pseudo, lam=0.25)
    assert np.allclose(gl2, 0.25 * gl1)
    assert np.allclose(gr2, 0.25 * gr1)


def _project_to_simplex(v):
    # Euclidean projection onto the probability simplex
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    rho = np.nonzero(u - css / (np.arange(len(v)) + 1) > 0)[0][-1]
    theta = css[rho] / (rho + 1)
    return np.maximum(v - theta, 0.0)


@pytest.mark.parametrize("target", [1.0, 0.0])
def test_mcl_minimizers_via_projected_descent(target):
    rng = np.random.default_rng(5 if target else 6)
    left = _project_to_simplex(rng.random(3))
    right = _project_to_simplex(rng.random(3))
    for _ in range(4000):
        batch = PairBatch(left[None, :], right[None, :], np.array([target]))
        loss, gl, gr = mcl_loss(batch)
        left = _project_to_simplex(left - 0.5 * gl[0])
        right = _project_to_simplex(right - 0.5 * gr[0])
    loss, _, _ = mcl_loss(PairBatch(left[None, :], right[None, :], np.array([target])))
    assert loss < 1e-4
    if target == 1.0:
        # both converge to the same one-hot
        assert left.max() > 0.999 and right.max() > 0.999
        assert left.argmax() == right.argmax()
    else:
        # supports become disjoint
        assert float(left @ right) < 1e-4


def test_cross_entropy_loss():
    probs = np.array([[0.9, 0.05, 0.05], [0.2, 0.7, 0.1]])
    labels = np.array([0, 1])
    loss, grad = cross_entropy_loss(probs, labels)
    expected = -(math.log(0.9) + math.log(0.7)) / 2
    assert abs(loss - expected) < 1e-12
    assert abs(grad[0, 0] + 1 / (2 * 0.9)) < 1e-12
    assert abs(grad[1, 1] + 1 / (2 * 0.7)) < 1e-12
    assert grad[0, 1] == 0.0
    # matching one-hot target: loss about zero
    one_hot = np.array([[0.0, 1.0]])
    loss, _ = cross_entropy_loss(one_hot, np.array([1]))
    assert loss == 0.0
    loss, grad = cross_entropy_loss(np.zeros((0, 3)), np.zeros(0, dtype=int))
    assert loss == 0.0 and grad.shape == (0, 3)


def test_pair_batch_validation():
    with pytest.raises(ValueError):
        PairBatch(np.zeros((2, 3)), np.zeros((3, 3)), np.zeros(2))
    with pytest.raises(ValueError):
        PairBatch(np.zeros((2, 3)), np.zeros((2, 3)), np.array([0.5, 1.5]))
    with pytest.raises(ValueError):
        PairBatch(np.zeros((1, 2)), np.zeros((1, 2)), np.array([0.5]), lam=-1.0)
