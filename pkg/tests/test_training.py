import numpy as np
import pytest

from constraintmatch.data import NoiseConfig, dense_constraints, make_blobs, sample_constraints
from constraintmatch.evaluation import evaluate
from constraintmatch.network import predict_labels
from constraintmatch.pseudo import SelectionConfig, pseudo_constraint_arrays
from constraintmatch.training import (TrainConfig, TrainTrace, TrainingDiverged,
                                      apply_pseudo_noise, pseudo_label_accuracy,
                                      train, train_naive_pl,
                                      validation_constraint_loss)


@pytest.fixture(scope="module")
def small_problem():
    ds = make_blobs(k=3, per_class=60, d=2, spread=0.4, seed=1)
    pairs = sample_constraints(ds, 60, seed=5)
    return ds, pairs


def quick_cfg(**overrides):
    base = dict(regime="constraintmatch", T=60, warmup_steps=20, batch_c=12,
                batch_u=24, eta=0.1, seed=7, max_pseudo_pairs=300)
    base.update(overrides)
    return TrainConfig(**base)


def params_equal(a, b):
    return (all(np.array_equal(x, y) for x, y in zip(a.weights, b.weights))
            and all(np.array_equal(x, y) for x, y in zip(a.biases, b.biases)))


def test_deterministic_trace(small_problem):
    ds, pairs = small_problem
    model_a, trace_a = train(ds, pairs, quick_cfg())
    model_b, trace_b = train(ds, pairs, quick_cfg())
    assert trace_a.to_jsonl() == trace_b.to_jsonl()
    assert params_equal(model_a, model_b)


def test_trace_has_exactly_t_records(small_problem):
    ds, pairs = small_problem
    _, trace = train(ds, pairs, quick_cfg(T=37, warmup_steps=10))
    assert len(trace.records) == 37
    assert [r.t for r in trace.records] == list(range(37))
    assert all(np.isfinite(r.loss_cons) and np.isfinite(r.loss_pseudo)
               for r in trace.records)


def test_constrained_equals_cm_with_full_warmup(small_problem):
    ds, pairs = small_problem
    _, trace_cons = train(ds, pairs, quick_cfg(regime="constrained"))
    _, trace_cm = train(ds, pairs, quick_cfg(lam=0.0, warmup_steps=60))
    assert trace_cons.to_jsonl() == trace_cm.to_jsonl()


def test_lambda_zero_reduces_to_constrained(small_problem):
    # pseudo branch active but weightless: the constrained-loss sequence and
    # the final parameters must match the pure constrained regime exactly
    ds, pairs = small_problem
    model_cons, trace_cons = train(ds, pairs, quick_cfg(regime="constrained"))
    model_cm, trace_cm = train(ds, pairs, quick_cfg(lam=0.0))
    cons_losses = [r.loss_cons for r in trace_cons.records]
    cm_losses = [r.loss_cons for r in trace_cm.records]
    assert cons_losses == cm_losses
    assert params_equal(model_cons, model_cm)
    # and the pseudo branch really ran after warmup
    assert any(r.sel_frac > 0 for r in trace_cm.records)


def test_warmup_prefix_matches_constrained(small_problem):
    ds, pairs = small_problem
    _, trace_cm = train(ds, pairs, quick_cfg(lam=1.0, warmup_steps=30))
    _, trace_cons = train(ds, pairs, quick_cfg(regime="constrained"))
    for rec_cm, rec_cons in zip(trace_cm.records[:30], trace_cons.records[:30]):
        assert rec_cm.loss_cons == rec_cons.loss_cons
        assert rec_cm.loss_pseudo == 0.0


def test_naive_pl_threshold_one_equals_constrained(small_problem):
    ds, pairs = small_problem
    cfg_naive = quick_cfg(regime="naive_pl",
                          selection=SelectionConfig("confidence", 1.0))
    _, trace_naive = train_naive_pl(ds, pairs, cfg_naive)
    _, trace_cons = train(ds, pairs, quick_cfg(regime="constrained"))
    assert ([r.loss_cons for r in trace_naive.records]
            == [r.loss_cons for r in trace_cons.records])
    assert all(r.sel_frac == 0.0 for r in trace_naive.records)


def test_naive_pl_requires_confidence_mode(small_problem):
    ds, pairs = small_problem
    with pytest.raises(ValueError):
        train_naive_pl(ds, pairs, quick_cfg(regime="naive_pl"))


def test_naive_pl_trains(small_problem):
    ds, pairs = small_problem
    cfg = quick_cfg(regime="naive_pl", selection=SelectionConfig("confidence", 0.7))
    model, trace = train_naive_pl(ds, pairs, cfg)
    assert len(trace.records) == cfg.T
    assert any(r.sel_frac > 0 for r in trace.records)
    assert all(np.isfinite(r.loss_pseudo) for r in trace.records)


def test_apply_pseudo_noise_extremes():
    rng = np.random.default_rng(0)
    raw = rng.random((100, 4)) + 0.1
    probs = raw / raw.sum(axis=1, keepdims=True)
    clean = apply_pseudo_noise(probs, NoiseConfig(pseudo_flip_fraction=0.0), rng=1)
    assert np.array_equal(clean, probs)
    flipped = apply_pseudo_noise(probs, NoiseConfig(pseudo_flip_fraction=1.0), rng=1)
    top = probs.argmax(axis=1)
    order = np.argsort(-probs, axis=1, kind="stable")
    assert np.array_equal(flipped[np.arange(100), top],
                          probs[np.arange(100), order[:, 1]])


def test_apply_pseudo_noise_binomial_rate():
    rng = np.random.default_rng(1)
    raw = rng.random((10000, 3)) + 0.1
    probs = raw / raw.sum(axis=1, keepdims=True)
    noised = apply_pseudo_noise(probs, NoiseConfig(pseudo_flip_fraction=0.5), rng=2)
    flipped = (noised != probs).any(axis=1).sum()
    sigma = np.sqrt(10000 * 0.5 * 0.5)
    assert abs(flipped - 5000) <= 3 * sigma


def test_oracle_predictions_recover_ground_truth_pairs():
    # with perfect one-hot predictions, pseudo-constraints equal the true
    # pairwise relations exactly
    ds = make_blobs(k=3, per_class=8, d=2, spread=0.2, seed=2)
    probs = np.eye(3)[ds.labels]
    ii, jj, targets, n_sel = pseudo_constraint_arrays(
        probs, SelectionConfig("informativeness", 0.2), max_pairs=10 ** 6)
    assert n_sel == ds.n
    expected = (ds.labels[ii] == ds.labels[jj]).astype(float)
    assert np.array_equal(targets, expected)


def test_pseudo_label_accuracy_drops_under_full_flip(small_problem):
    ds, pairs = small_problem
    cfg = quick_cfg(regime="constrained", T=150)
    model, _ = train(ds, pairs, cfg)
    selection = SelectionConfig("confidence", 0.6)
    acc_clean = pseudo_label_accuracy(model, ds, NoiseConfig(), selection)
    acc_noisy = pseudo_label_accuracy(
        model, ds, NoiseConfig(pseudo_flip_fraction=1.0), selection)
    assert acc_clean > acc_noisy


def test_divergence_aborts_with_state(small_problem):
    ds, pairs = small_problem
    cfg = quick_cfg(regime="constrained", eta=1e300, weight_decay=1e300, T=20)
    with np.errstate(all="ignore"), pytest.raises(TrainingDiverged) as err:
        train(ds, pairs, cfg)
    assert "t" in err.value.state


def test_empty_constraints_pseudo_only(small_problem):
    ds, _ = small_problem
    cfg = quick_cfg(lam=1.0, warmup_steps=0, T=20, n_out=3)
    model, trace = train(ds, [], cfg)
    assert all(r.loss_cons == 0.0 for r in trace.records)
    assert len(trace.records) == 20


def test_constraint_indices_validated(small_problem):
    ds, pairs = small_problem
    from constraintmatch.data import ConstraintPair
    bad = pairs + [ConstraintPair(0, ds.n + 5, 1)]
    with pytest.raises(ValueError):
        train(ds, bad, quick_cfg())


def test_trace_jsonl_round_trip(tmp_path, small_problem):
    ds, pairs = small_problem
    _, trace = train(ds, pairs, quick_cfg(T=15, warmup_steps=5))
    path = tmp_path / "trace.jsonl"
    trace.write_jsonl(path)
    loaded = TrainTrace.read_jsonl(path)
    assert loaded.records == trace.records


def test_validation_constraint_loss(small_problem):
    ds, pairs = small_problem
    model, _ = train(ds, pairs, quick_cfg(regime="constrained", T=100))
    val = make_blobs(k=3, per_class=20, d=2, spread=0.4, seed=9, split_tag="val")
    val_pairs = sample_constraints(val, 30, seed=3)
    loss = validation_constraint_loss(model, val, val_pairs)
    assert np.isfinite(loss) and loss >= 0.0


def test_fully_constrained_upper_bound():
    # dense supervision on separable blobs reaches near-perfect test accuracy
    ds = make_blobs(k=4, per_class=500, d=2, spread=0.5, seed=11)
    pairs = dense_constraints(ds, max_pairs=50000, seed=0)
    cfg = TrainConfig(regime="fully_constrained", T=2000, seed=13)
    model, _ = train(ds, pairs, cfg)
    test_ds = make_blobs(k=4, per_class=250, d=2, spread=0.5, seed=12,
                         split_tag="test")
    report = evaluate(predict_labels(model, test_ds.features), test_ds.labels,
                      K=4, n_out=4)
    assert report.acc >= 0.99
