import numpy as np
import pytest

from constraintmatch.pseudo import (PseudoConstraint, SelectionConfig, harden,
                                    harden_targets, jsd, make_pseudo_constraints,
                                    mode_flip, mode_flip_batch,
                                    normalized_entropy,
                                    pseudo_constraint_arrays, select)


def random_probs(rng, m, n):
    raw = rng.random((m, n)) + 0.01
    return raw / raw.sum(axis=1, keepdims=True)


# --- normalized entropy -----------------------------------------------------

def test_entropy_uniform_is_one():
    for n in (2, 3, 7, 50):
        assert abs(normalized_entropy(np.ones(n) / n) - 1.0) < 1e-12


def test_entropy_one_hot_is_zero():
    for n in (2, 5):
        v = np.zeros(n)
        v[n // 2] = 1.0
        assert normalized_entropy(v) == 0.0


def test_entropy_bimodal_spot_value():
    assert normalized_entropy(np.array([0.5, 0.5, 0.0, 0.0])) == 0.5


def test_entropy_permutation_invariant_and_bounded():
    rng = np.random.default_rng(0)
    for _ in range(100):
        p = random_probs(rng, 1, 6)[0]
        h = normalized_entropy(p)
        assert 0.0 <= h <= 1.0
        assert abs(normalized_entropy(p[rng.permutation(6)]) - h) < 1e-12
        # strictly interior unless uniform or one-hot
        assert 0.0 < h < 1.0


def test_entropy_extremes_unique():
    rng = np.random.default_rng(1)
    uniform = np.ones(4) / 4
    assert normalized_entropy(uniform) == pytest.approx(1.0)
    nudged = uniform + np.array([0.02, -0.02, 0.01, -0.01])
    assert normalized_entropy(nudged) < 1.0
    assert normalized_entropy(np.array([0.999, 0.001, 0.0, 0.0])) > 0.0


def test_entropy_single_cluster_error():
    with pytest.raises(ValueError):
        normalized_entropy(np.array([1.0]))


# --- selection --------------------------------------------------------------

def test_select_informativeness_examples():
    cfg = SelectionConfig(mode="informativeness", tau=0.2)
    one_hot = np.array([[0.0, 1.0, 0.0, 0.0]])
    uniform = np.ones((1, 4)) / 4
    bimodal = np.array([[0.5, 0.5, 0.0, 0.0]])
    assert select(one_hot, cfg)[0]
    assert not select(uniform, SelectionConfig("informativeness", 1.0))[0]
    assert not select(bimodal, cfg)[0]  # entropy 0.5 >= 0.2
    assert select(bimodal, SelectionConfig("confidence", 0.45))[0]


def test_select_tau_zero_selects_nothing():
    cfg = SelectionConfig(mode="informativeness", tau=0.0)
    probs = np.array([[1.0, 0.0], [0.9, 0.1]])
    assert not select(probs, cfg).any()


def test_select_confidence_strict():
    cfg = SelectionConfig(mode="confidence", tau=0.7)
    probs = np.array([[0.7, 0.3], [0.71, 0.29]])
    assert select(probs, cfg).tolist() == [False, True]


def test_selected_fraction_monotone_in_tau():
    rng = np.random.default_rng(2)
    probs = random_probs(rng, 200, 5)
    fractions = [select(probs, SelectionConfig("informativeness", t)).mean()
                 for t in np.linspace(0, 1, 11)]
    assert all(a <= b for a, b in zip(fractions, fractions[1:]))


# --- Jensen-Shannon distance ------------------------------------------------

def test_jsd_identity_and_extremes():
    p = np.array([0.2, 0.5, 0.3])
    assert jsd(p, p) == 0.0
    assert jsd(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == 1.0


def test_jsd_spot_value():
    # frozen from an arbitrary-precision evaluation (see acceptance suite)
    value = jsd(np.array([1.0, 0.0]), np.array([0.5, 0.5]))
    assert abs(value - 0.55792304528414388) < 1e-12


def test_jsd_symmetric_bounded_metric():
    rng = np.random.default_rng(3)
    for _ in range(10000):
        p, q, r = random_probs(rng, 3, 4)
        d_pq = jsd(p, q)
        assert 0.0 <= d_pq <= 1.0
        assert abs(d_pq - jsd(q, p)) < 1e-12
        assert jsd(p, r) <= d_pq + jsd(q, r) + 1e-12


def test_jsd_zero_iff_equal():
    rng = np.random.default_rng(4)
    for _ in range(200):
        p, q = random_probs(rng, 2, 5)
        assert jsd(p, q) > 0.0
    with pytest.raises(ValueError):
        jsd(np.ones(2) / 2, np.ones(3) / 3)


# --- pseudo-constraint generation ------------------------------------------

def test_pseudo_constraints_one_hot_pairs():
    cfg = SelectionConfig("informativeness", 0.2)
    same = np.array([[1.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
    pcs = make_pseudo_constraints(same, cfg)
    assert len(pcs) == 1
    assert pcs[0] == PseudoConstraint(0, 1, 1.0)
    disjoint = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    pcs = make_pseudo_constraints(disjoint, cfg)
    assert pcs[0].c_tilde == 0.0


def test_pseudo_constraints_pair_count():
    cfg = SelectionConfig("informativeness", 0.2)
    probs = np.vstack([np.eye(4), np.ones((2, 4)) / 4])  # 4 selected, 2 rejected
    pcs = make_pseudo_constraints(probs, cfg)
    assert len(pcs) == 6
    selected = {0, 1, 2, 3}
    for pc in pcs:
        assert pc.i < pc.j
        assert pc.i in selected and pc.j in selected


def test_pseudo_constraints_lexicographic_and_capped():
    rng = np.random.default_rng(5)
    probs = np.eye(30)[rng.integers(0, 30, size=30)]
    cfg = SelectionConfig("informativeness", 0.5)
    ii, jj, ct, n_sel = pseudo_constraint_arrays(probs, cfg, max_pairs=50,
                                                 rng=np.random.default_rng(0))
    assert n_sel == 30
    assert len(ii) == 50
    order = sorted(zip(ii.tolist(), jj.tolist()))
    assert list(zip(ii.tolist(), jj.tolist())) == order
    again = pseudo_constraint_arrays(probs, cfg, max_pairs=50,
                                     rng=np.random.default_rng(0))
    assert np.array_equal(again[0], ii) and np.array_equal(again[2], ct)


def test_pseudo_constraints_empty_cases():
    cfg = SelectionConfig("informativeness", 0.2)
    uniform = np.ones((5, 4)) / 4
    assert make_pseudo_constraints(uniform, cfg) == []
    single = np.vstack([np.eye(4)[:1], uniform])
    assert make_pseudo_constraints(single, cfg) == []


def test_confirmation_bias_property():
    # two samples of the same true class confidently placed in the same wrong
    # cluster still produce a correct must-link; two samples of different
    # classes in different wrong clusters still produce a correct cannot-link
    cfg = SelectionConfig("informativeness", 0.2)
    wrong_same = np.array([[0.0, 0.0, 1.0], [0.0, 0.0, 1.0]])
    pcs = make_pseudo_constraints(wrong_same, cfg)
    assert pcs[0].c_tilde == 1.0
    wrong_diff = np.array([[0.0, 0.0, 1.0], [0.0, 1.0, 0.0]])
    pcs = make_pseudo_constraints(wrong_diff, cfg)
    assert pcs[0].c_tilde == 0.0


# --- hardening --------------------------------------------------------------

def test_harden_boundary_inclusive():
    pcs = [PseudoConstraint(0, 1, 0.6)]
    assert harden(pcs, 0.6)[0].c_tilde == 1.0
    assert harden(pcs, 0.0) == [PseudoConstraint(0, 1, 1.0)]
    assert harden([PseudoConstraint(0, 1, 0.9999)], 1.0)[0].c_tilde == 0.0


def test_harden_monotone_in_mu():
    rng = np.random.default_rng(6)
    values = rng.random(50)
    mus = np.sort(rng.random(8))
    previous = harden_targets(values, mus[0])
    for mu in mus[1:]:
        current = harden_targets(values, mu)
        assert np.all(current <= previous)  # raising mu never turns 0 into 1
        previous = current


# --- mode flip --------------------------------------------------------------

def test_mode_flip_example():
    flipped = mode_flip(np.array([0.7, 0.2, 0.1]), seed=0, rho=1.0)
    assert np.allclose(flipped, [0.2, 0.7, 0.1])


def test_mode_flip_uniform_tie_noop():
    v = np.ones(4) / 4
    assert np.array_equal(mode_flip(v, seed=1, rho=1.0), v)


def test_mode_flip_rho_zero_identity():
    rng = np.random.default_rng(7)
    probs = random_probs(rng, 20, 5)
    out = mode_flip_batch(probs, 0.0, np.random.default_rng(0))
    assert np.array_equal(out, probs)


def test_mode_flip_preserves_simplex_and_multiset():
    rng = np.random.default_rng(8)
    probs = random_probs(rng, 50, 6)
    out = mode_flip_batch(probs, 1.0, np.random.default_rng(1))
    assert np.allclose(out.sum(axis=1), 1.0)
    assert np.allclose(np.sort(out, axis=1), np.sort(probs, axis=1))
    # top two really exchanged
    row = np.array([0.05, 0.6, 0.3, 0.05])
    flipped = mode_flip(row, seed=2, rho=1.0)
    assert flipped[1] == 0.3 and flipped[2] == 0.6


def test_selection_config_validation():
    with pytest.raises(ValueError):
        SelectionConfig(mode="magic", tau=0.5)
    with pytest.raises(ValueError):
        SelectionConfig(mode="confidence", tau=1.5)
    with pytest.raises(ValueError):
        PseudoConstraint(3, 2, 0.5)
