import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import ewma_unrolled, f_measure_by_hand
from predict_detect.dataio import generate_synthetic
from predict_detect.learners import anova_f
from predict_detect.detectors import (AWAITING, COLLECTING, CONFIRMED, FALSE_ALARM,
                                      LABELS_REQUESTED, MONITORING, SUSPECTED, WARNING,
                                      AccuracyTracker, DetectorConfig, DetectorState,
                                      MarginDensity, NoChange,
                                      PredictDetect, ReferenceStats, band_folds, ewma,
                                      make_detector, performance, select_labels_disagreement)


def fitted(kind, cfg, data, seed=0):
    return make_detector(kind, cfg, seed).fit(data.X, data.y)


def clean_stream(n, seed):
    d = generate_synthetic(n // 2, 10, rng_seed=seed)
    perm = np.random.default_rng(seed).permutation(len(d))
    return d.X[perm], d.y[perm]


def run(det, X, y, oracle=True):
    labels, events = [], []
    orc = (lambda ts, _X: y[np.asarray(ts)]) if oracle else None
    for t, x in enumerate(X):
        lab, ev = det.step(x, t, oracle=orc, y_true=int(y[t]))
        labels.append(lab)
        events.extend(ev)
    return np.array(labels), events


# -- configuration --------------------------------------------------------------------


def test_config_defaults_and_validation():
    c = DetectorConfig()
    assert c.n_unlabeled == 500 and c.n_train == 500
    assert c.lam == pytest.approx(0.998)
    with pytest.raises(ValueError):
        DetectorConfig(n_unlabeled=10, n_train=20)
    for bad in ({"perf_metric": "auc"}, {"retrain_policy": "x"}, {"labeling_policy": "x"},
                {"chunk_size": 1}):
        with pytest.raises(ValueError):
            DetectorConfig(**bad)


def test_make_detector_kinds():
    assert isinstance(make_detector("pd-shuffle"), PredictDetect)
    assert make_detector("pd-noshuffle").cfg.retrain_policy == "noshuffle"
    assert isinstance(make_detector("md3"), MarginDensity)
    assert isinstance(make_detector("acctr"), AccuracyTracker)
    assert isinstance(make_detector("nochange"), NoChange)
    with pytest.raises(ValueError, match="unknown detector"):
        make_detector("adwin")


# -- small pure helpers ----------------------------------------------------------------


def test_ewma_single_step():
    assert ewma([0.0], 0.998, start=0.1)[0] == pytest.approx(0.0998, abs=1e-15)


@given(st.lists(st.sampled_from([0.0, 1.0]), min_size=1000, max_size=1000),
       st.floats(0, 1), st.integers(2, 2000))
def test_ewma_closed_form(values, start, n):
    lam = (n - 1) / n
    got = ewma(values, lam, start)
    ref = ewma_unrolled(values[:50], lam, start)
    np.testing.assert_allclose(got[:50], ref, atol=1e-9, rtol=0)
    # full 1000-step closed form, vectorised
    t = np.arange(1, 1001)
    v = np.asarray(values)
    closed = lam ** t * start + (1 - lam) * np.array(
        [np.sum(lam ** (k - np.arange(1, k + 1)) * v[:k]) for k in t])
    np.testing.assert_allclose(got, closed, atol=1e-9, rtol=0)


@given(st.lists(st.sampled_from([0.0, 1.0]), min_size=1000, max_size=1000),
       st.floats(0.0, 1.0))
def test_detector_signal_follows_closed_form(flags, start):
    """The step loop applies the same recursion to the per-sample values."""
    det = PredictDetect(DetectorConfig(chunk_size=500, theta=1e9))
    det.reference_ = ReferenceStats(start, 0.005, 1.0, 0.005)
    det.state_ = DetectorState(signal=start)
    det.events_ = []
    it = iter(flags)
    det._step_signal = lambda x, y: (0, next(it))
    signals = []
    for t in range(1000):
        det.step(np.zeros(1), t)
        signals.append(det.state_.signal)
    np.testing.assert_allclose(signals, ewma(flags, 0.998, start), atol=1e-12)
    t = np.arange(1, 1001)
    closed = 0.998 ** t * start + 0.002 * np.array(
        [np.sum(0.998 ** (k - np.arange(1, k + 1)) * np.asarray(flags[:k])) for k in t])
    np.testing.assert_allclose(signals, closed, atol=1e-9, rtol=0)


def test_band_folds_interleaved():
    folds = band_folds(23, 10)
    assert [f.tolist() for f in folds[:2]] == [[0, 10, 20], [1, 11, 21]]
    assert sorted(np.concatenate(folds).tolist()) == list(range(23))


def test_performance_metrics():
    y = [1, 1, 0, 0, 1, 0]
    p = [1, 0, 0, 1, 1, 0]
    assert performance(y, p) == pytest.approx(4 / 6)
    assert performance(y, p, "f_measure") == pytest.approx(f_measure_by_hand(y, p))
    assert performance([1, 0, 1], [0, 0, 0], "f_measure") == 0.0


@given(st.lists(st.tuples(st.integers(0, 1), st.integers(0, 1)), min_size=1, max_size=60))
def test_f_measure_matches_definition(pairs):
    y, p = zip(*pairs)
    assert performance(y, p, "f_measure") == pytest.approx(f_measure_by_hand(y, p))


# -- label selection ---------------------------------------------------------------------


def test_disagreement_selection_examples():
    rng = np.random.default_rng(0)
    dis = np.zeros(100, bool)
    dis[:30] = True
    sel = select_labels_disagreement(dis, 40, rng)
    assert dis[sel].sum() == 20 and (~dis[sel]).sum() == 20
    dis = np.zeros(100, bool)
    dis[:10] = True
    sel = select_labels_disagreement(dis, 40, rng)
    assert dis[sel].sum() == 10 and (~dis[sel]).sum() == 30


@given(st.integers(1, 200), st.data())
def test_disagreement_selection_properties(n, data):
    dis = np.array(data.draw(st.lists(st.booleans(), min_size=n, max_size=n)))
    budget = data.draw(st.integers(0, n))
    seed = data.draw(st.integers(0, 10_000))
    sel = select_labels_disagreement(dis, budget, np.random.default_rng(seed))
    assert len(sel) == budget
    assert len(set(sel.tolist())) == budget
    n_dis, n_agr = int(dis.sum()), int((~dis).sum())
    got_dis = int(dis[sel].sum())
    assert got_dis >= min(n_dis, budget // 2)
    if n_dis <= budget // 2:
        # cap not binding: every disagreeing sample is taken
        assert got_dis == n_dis
    if got_dis > budget // 2:
        # leftover disagreeing samples only once the agreeing pool is exhausted
        assert int((~dis[sel]).sum()) == n_agr


def test_disagreement_selection_rejects_large_budget():
    with pytest.raises(ValueError):
        select_labels_disagreement(np.ones(3, bool), 4, np.random.default_rng(0))


# -- reference learning --------------------------------------------------------------------


def test_reference_on_synthetic(synthetic):
    det = PredictDetect(DetectorConfig(n_members=15, epochs=10), 0).fit(synthetic.X, synthetic.y)
    ref = det.reference_
    assert ref.perf_ref >= 0.98
    assert ref.signal_ref <= 0.02
    assert ref.signal_sigma >= 0.005 and ref.perf_sigma >= 0.005
    again = PredictDetect(DetectorConfig(n_members=15, epochs=10), 0).fit(synthetic.X, synthetic.y)
    assert again.reference_ == ref


def test_reference_zero_disagreement_floors_sigma(small_synthetic, fast_cfg):
    det = PredictDetect(fast_cfg).fit(small_synthetic.X, small_synthetic.y)
    det.models_.disagreement = lambda X: np.zeros(len(X), bool)
    det._train = lambda X, y, seed, split=None: det.models_
    ref = det.learn_reference(small_synthetic.X, small_synthetic.y, seed=0)
    assert ref.signal_ref == 0.0 and ref.signal_sigma == fast_cfg.sigma_floor


def test_reference_needs_both_classes(small_synthetic, fast_cfg):
    det = PredictDetect(fast_cfg).fit(small_synthetic.X, small_synthetic.y)
    with pytest.raises(ValueError):
        det.learn_reference(small_synthetic.X[:5], np.zeros(5, int))
    prev = det.reference_
    assert det.learn_reference(small_synthetic.X[:5], np.zeros(5, int), previous=prev) is prev


# -- streaming behaviour ---------------------------------------------------------------------


def test_threshold_arithmetic_triggers_suspicion(small_synthetic, fast_cfg):
    det = fitted("pd-shuffle", fast_cfg, small_synthetic)
    det.reference_ = ReferenceStats(0.02, 0.01, 0.95, 0.01)
    det.state_.signal = 0.06 / det.cfg.lam  # one agreeing step lands exactly on 0.06
    det._step_signal = lambda x, y: (0, 0.0)
    _, ev = det.step(np.zeros(10), 0)
    assert det.state_.signal == pytest.approx(0.06)
    assert [e.kind for e in ev] == [SUSPECTED]
    assert det.state_.phase == COLLECTING


def test_no_drift_stream_is_quiet(synthetic):
    X, y = clean_stream(4000, 11)
    cfg = DetectorConfig(n_members=15, epochs=10)
    for kind in ("pd-shuffle", "md3", "nochange"):
        det = fitted(kind, cfg, synthetic)
        labels, events = run(det, X, y)
        assert events == [], kind
        assert det.state_.labels_spent == 0
        assert np.mean(labels == y) >= 0.99


def test_pd_serves_prediction_model_in_every_phase(small_synthetic, fast_cfg):
    det = fitted("pd-shuffle", replace_cfg(fast_cfg, theta=0.0), small_synthetic)
    det.reference_ = ReferenceStats(0.5, 0.005, 1.0, 0.005)  # any movement is a deviation
    X, y = clean_stream(400, 5)
    phases = set()
    for t, x in enumerate(X):
        expect = det.prediction_model.predict(x[None])[0]
        lab, _ = det.step(x, t, oracle=lambda ts, _X: y[np.asarray(ts)])
        phases.add(det.state_.phase)
        assert lab == expect
    assert COLLECTING in phases


def replace_cfg(cfg, **kw):
    from dataclasses import replace
    return replace(cfg, **kw)


def drifted_samples(n, rng):
    """Malicious samples moved onto the Legitimate side of half the features."""
    X = rng.normal(0.25, 0.05, (n, 10))
    X[:, ::2] = rng.normal(0.75, 0.05, (n, 5))
    return np.clip(X, 0, 1)


def test_confirm_and_retrain_on_real_drift(synthetic):
    cfg = DetectorConfig(chunk_size=100, n_members=15, epochs=10)
    det = fitted("pd-shuffle", cfg, synthetic)
    rng = np.random.default_rng(2)
    X = np.vstack([synthetic.X[synthetic.y == 0], drifted_samples(250, rng)])
    y = np.r_[np.zeros(250, int), np.ones(250, int)]
    perm = rng.permutation(500)
    X, y = X[perm], y[perm]
    old_models = det.models_
    _, events = run(det, X, y)
    kinds = [e.kind for e in events]
    assert kinds[:3] == [SUSPECTED, LABELS_REQUESTED, CONFIRMED]
    assert det.models_ is not old_models
    assert det.state_.labels_spent == cfg.n_train * kinds.count(LABELS_REQUESTED)
    assert det.state_.phase in (MONITORING, COLLECTING)


def test_false_alarm_keeps_reference(small_synthetic, fast_cfg):
    det = fitted("pd-shuffle", fast_cfg, small_synthetic)
    ref_before = det.reference_
    models_before = det.models_
    X, y = clean_stream(fast_cfg.n_unlabeled, 4)
    det.state_.phase = AWAITING
    det.state_.unlabeled = [(t, x, None) for t, x in enumerate(X)]
    events = det.confirm_and_retrain(lambda ts, _X: y[np.asarray(ts)])
    assert [e.kind for e in events] == [FALSE_ALARM]
    assert det.reference_ is ref_before and det.models_ is models_before
    assert det.state_.labels_spent == fast_cfg.n_train
    assert det.state_.phase == MONITORING
    assert det.state_.signal == ref_before.signal_ref


def test_confirmation_threshold_arithmetic(small_synthetic, fast_cfg):
    det = fitted("pd-shuffle", fast_cfg, small_synthetic)
    det.reference_ = ReferenceStats(0.0, 0.005, 0.95, 0.01)
    n = fast_cfg.n_unlabeled
    y = np.zeros(n, int)
    y[: int(0.2 * n)] = 1  # served model says Legitimate everywhere below -> perf 0.80
    det._predict_with = lambda models, X: np.zeros(len(X), int)
    det.state_.phase = AWAITING
    det.state_.unlabeled = [(t, small_synthetic.X[t % 60], None) for t in range(n)]
    events = det.confirm_and_retrain(lambda ts, _X: y[np.asarray(ts)])
    assert CONFIRMED in [e.kind for e in events]


def test_oracle_failure_surfaces_as_event(small_synthetic, fast_cfg):
    det = fitted("pd-shuffle", fast_cfg, small_synthetic)
    det.state_.phase = AWAITING
    det.state_.unlabeled = [(0, small_synthetic.X[0], None)] * fast_cfg.n_unlabeled

    def broken(ts, X):
        raise RuntimeError("labeler offline")

    events = det.confirm_and_retrain(broken)
    assert [e.kind for e in events] == [WARNING]
    assert det.state_.phase == AWAITING and det.state_.labels_spent == 0


def test_confirm_requires_pending_buffer(small_synthetic, fast_cfg):
    det = fitted("pd-shuffle", fast_cfg, small_synthetic)
    with pytest.raises(RuntimeError):
        det.confirm_and_retrain(lambda ts, X: np.zeros(len(ts)))


def test_waits_without_oracle(small_synthetic, fast_cfg):
    det = fitted("md3", replace_cfg(fast_cfg, theta=0.0), small_synthetic)
    det.reference_ = ReferenceStats(0.5, 0.005, 1.0, 0.005)
    X, y = clean_stream(200, 1)
    for t, x in enumerate(X):
        det.step(x, t)
    assert det.state_.phase == AWAITING
    assert len(det.state_.unlabeled) == fast_cfg.n_unlabeled


def test_noshuffle_keeps_split_and_shuffle_reranks(synthetic):
    cfg = DetectorConfig(chunk_size=100, n_members=9, epochs=5)
    rng = np.random.default_rng(3)
    X = np.vstack([synthetic.X[synthetic.y == 0][:50], drifted_samples(50, rng)])
    y = np.r_[np.zeros(50, int), np.ones(50, int)]
    keep = fitted("pd-noshuffle", cfg, synthetic)
    split = keep.split_
    keep._retrain(X, y, 0)
    assert keep.split_ is split
    moved = fitted("pd-shuffle", cfg, synthetic)
    moved._retrain(X, y, 0)
    # drifted features (even indices) stopped separating, odd ones now rank first
    top = moved.models_.split_.subsets
    assert set(top[0]) | set(top[1]) == set(range(10))
    ranking_top = np.argsort(-anova_f(X, y))[:2]
    assert all(j % 2 == 1 for j in ranking_top)


def test_single_class_labeled_set_warns(small_synthetic, fast_cfg):
    det = fitted("pd-shuffle", fast_cfg, small_synthetic)
    models = det.models_
    events = det._retrain(small_synthetic.X[:10], np.ones(10, int), 0)
    assert [e.kind for e in events] == [WARNING]
    assert det.models_ is models


def test_md3_signal_is_margin_membership(small_synthetic, fast_cfg):
    det = fitted("md3", fast_cfg, small_synthetic)
    x = small_synthetic.X[0]
    lab, value = det._step_signal(x, None)
    assert value == float(det.models_.in_margin(x[None])[0])
    mid = np.full(10, 0.5)
    assert det._signal_values(det.models_, mid[None], None)[0] == float(det.models_.in_margin(mid[None])[0])


def test_acctr_consumes_every_label(small_synthetic, fast_cfg):
    det = fitted("acctr", fast_cfg, small_synthetic)
    X, y = clean_stream(300, 8)
    labels, events = run(det, X, y, oracle=False)
    assert det.state_.labels_spent == 300
    assert events == []
    with pytest.raises(ValueError):
        det.step(X[0], 0)


def test_acctr_retrains_without_oracle(synthetic):
    cfg = DetectorConfig(chunk_size=100, n_members=9, epochs=5)
    det = fitted("acctr", cfg, synthetic)
    rng = np.random.default_rng(6)
    X = drifted_samples(400, rng)
    X = np.vstack([X, synthetic.X[synthetic.y == 0][:200]])
    y = np.r_[np.ones(400, int), np.zeros(200, int)]
    perm = rng.permutation(600)
    _, events = run(det, X[perm], y[perm], oracle=False)
    assert CONFIRMED in [e.kind for e in events]


def test_nochange_never_adapts(synthetic):
    det = fitted("nochange", DetectorConfig(n_members=9, epochs=5), synthetic)
    rng = np.random.default_rng(0)
    X = drifted_samples(300, rng)
    labels, events = run(det, X, np.ones(300, int))
    assert events == [] and det.state_.labels_spent == 0
    assert det.state_.signal == 0.0


def test_monotone_sensitivity(synthetic):
    rng = np.random.default_rng(1)
    X = np.vstack([synthetic.X, drifted_samples(250, rng), synthetic.X[synthetic.y == 0]])
    y = np.r_[synthetic.y, np.ones(250, int), np.zeros(250, int)]
    perm = rng.permutation(len(y))
    X, y = X[perm], y[perm]
    counts = []
    for theta in (1.0, 2.0, 3.0, 5.0, 8.0):
        cfg = DetectorConfig(theta=theta, chunk_size=100, n_members=9, epochs=5)
        det = fitted("pd-shuffle", cfg, synthetic)
        _, events = run(det, X, y)
        counts.append(sum(e.kind == SUSPECTED for e in events))
    assert counts == sorted(counts, reverse=True)
