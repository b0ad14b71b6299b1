"""Streaming drift detectors sharing one suspect / collect / confirm / retrain loop.

``PredictDetect`` tracks disagreement between the prediction and the hidden
detection model, ``MarginDensity`` tracks the fraction of samples in a
subspace ensemble's margin, ``AccuracyTracker`` tracks the supervised error
rate and ``NoChange`` never adapts.
"""
import logging
from dataclasses import dataclass, field, replace

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.metrics import f1_score

from .dataio import MALICIOUS, Dataset
from .learners import SplitModels, SubspaceEnsemble

logger = logging.getLogger(__name__)

MONITORING = "monitoring"
COLLECTING = "collecting_unlabeled"
AWAITING = "awaiting_confirmation"

SUSPECTED = "suspected"
LABELS_REQUESTED = "labels_requested"
CONFIRMED = "confirmed"
FALSE_ALARM = "false_alarm"
WARNING = "warning"


@dataclass
class DetectorConfig:
    theta: float = 3.0
    chunk_size: int = 500
    n_unlabeled: int | None = None
    n_train: int | None = None
    perf_metric: str = "accuracy"
    retrain_policy: str = "shuffle"
    labeling_policy: str = "take_all"
    sigma_floor: float = 0.005
    n_folds: int = 10
    n_members: int = 50
    feature_fraction: float = 0.5
    penalty: str = "l1"
    reg_constant: float = 1.0
    epochs: int = 20
    margin_threshold: float = 0.5
    hidden_fraction: float | None = None

    def __post_init__(self):
        if self.n_unlabeled is None:
            self.n_unlabeled = self.chunk_size
        if self.n_train is None:
            self.n_train = self.n_unlabeled
        if self.n_train > self.n_unlabeled:
            raise ValueError("n_train must not exceed n_unlabeled")
        if self.chunk_size < 2:
            raise ValueError("chunk_size must be >= 2")
        if self.perf_metric not in ("accuracy", "f_measure"):
            raise ValueError(f"unknown perf_metric {self.perf_metric!r}")
        if self.retrain_policy not in ("shuffle", "noshuffle"):
            raise ValueError(f"unknown retrain_policy {self.retrain_policy!r}")
        if self.labeling_policy not in ("take_all", "random", "disagreement"):
            raise ValueError(f"unknown labeling_policy {self.labeling_policy!r}")

    @property
    def lam(self):
        return (self.chunk_size - 1) / self.chunk_size

    def ensemble(self, random_state=0, **overrides):
        params = dict(n_members=self.n_members, feature_fraction=self.feature_fraction,
                      penalty=self.penalty, C=self.reg_constant, epochs=self.epochs,
                      margin_threshold=self.margin_threshold, random_state=random_state)
        params.update(overrides)
        return SubspaceEnsemble(**params)


@dataclass
class ReferenceStats:
    signal_ref: float
    signal_sigma: float
    perf_ref: float
    perf_sigma: float


@dataclass
class Event:
    t: int
    kind: str
    signal: float
    labels_spent: int
    detail: str = ""


@dataclass
class DetectorState:
    phase: str = MONITORING
    signal: float = 0.0
    unlabeled: list = field(default_factory=list)
    samples_seen: int = 0
    labels_spent: int = 0
    suspected: int = 0
    confirmed: int = 0
    false_alarms: int = 0


def performance(y_true, y_pred, metric="accuracy"):
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if metric == "accuracy":
        return float(np.mean(y_true == y_pred))
    return float(f1_score(y_true, y_pred, pos_label=MALICIOUS, zero_division=0))


def ewma(values, lam, start=0.0):
    out = np.empty(len(values))
    s = start
    for i, v in enumerate(values):
        s = lam * s + (1.0 - lam) * v
        out[i] = s
    return out


def band_folds(n, n_folds):
    """Index ``i`` goes to band ``i % n_folds``."""
    idx = np.arange(n)
    return [idx[idx % n_folds == f] for f in range(n_folds)]


def select_labels_random(pool_size, budget, rng):
    return np.sort(rng.choice(pool_size, size=budget, replace=False))


def select_labels_disagreement(disagree, budget, rng):
    """Pick ``budget`` pool positions, disagreeing ones first, capped at half the budget.

    ``disagree`` is a boolean vector over the pool. Up to ``budget // 2``
    positions are drawn from the disagreeing pool, the rest from the
    agreeing pool, topping up from leftover disagreeing positions only if
    the agreeing pool runs dry.
    """
    disagree = np.asarray(disagree, dtype=bool)
    if budget > disagree.size:
        raise ValueError("budget exceeds pool size")
    dis_idx = np.flatnonzero(disagree)
    agr_idx = np.flatnonzero(~disagree)
    n_dis = min(dis_idx.size, budget // 2)
    from_dis = rng.choice(dis_idx, size=n_dis, replace=False)
    n_agr = min(agr_idx.size, budget - n_dis)
    from_agr = rng.choice(agr_idx, size=n_agr, replace=False)
    rest = budget - n_dis - n_agr
    leftover = np.setdiff1d(dis_idx, from_dis)
    extra = rng.choice(leftover, size=rest, replace=False)
    return np.sort(np.concatenate([from_dis, from_agr, extra]).astype(int))


class StreamingDetector(BaseEstimator):
    """Base class: ``fit`` on labeled training data, then ``step`` sample by sample.

    ``step(x, t, oracle=None, y_true=None)`` returns ``(label, events)``. When
    the unlabeled buffer fills, ``confirm_and_retrain`` runs immediately if
    an oracle was passed; otherwise the detector waits in
    ``awaiting_confirmation`` until it is called explicitly.

    The oracle is any callable ``oracle(ts, X) -> labels`` where ``ts`` are
    the stream positions of the buffered samples.
    """

    name = "base"
    signal_name = "signal"
    adaptive = True

    def __init__(self, config=None, random_state=0):
        self.config = config
        self.random_state = random_state

    @property
    def cfg(self) -> DetectorConfig:
        return self.config if self.config is not None else DetectorConfig()

    # subclasses provide these
    def _train(self, X, y, seed, split=None):
        raise NotImplementedError

    def _signal_values(self, models, X, y):
        raise NotImplementedError

    def _predict_with(self, models, X):
        raise NotImplementedError

    def _step_signal(self, x, y_true):
        raise NotImplementedError

    def fit(self, X, y):
        self._seeds = np.random.SeedSequence(self.random_state)
        self._rng = np.random.default_rng(self._seeds.spawn(1)[0])
        self.models_ = self._train(X, y, self._next_seed())
        self.reference_ = self.learn_reference(X, y)
        self.state_ = DetectorState(signal=self.reference_.signal_ref)
        self.events_ = []
        return self

    def _next_seed(self):
        return int(self._seeds.spawn(1)[0].generate_state(1)[0])

    def learn_reference(self, X, y, seed=None, previous=None, split=None) -> ReferenceStats:
        """Cross-validated reference signal and performance.

        Uses ``n_folds`` interleaved bands; small labeled sets shrink the fold
        count to the minority class size. Returns ``previous`` unchanged when
        fewer than two samples of either class are available.
        """
        cfg = self.cfg
        X = np.asarray(X, dtype=float)
        y = np.asarray(y)
        counts = np.bincount(y, minlength=2)
        n_folds = int(min(cfg.n_folds, counts.min()))
        if n_folds < 2:
            if previous is None:
                raise ValueError("reference learning needs >= 2 samples of each class")
            return previous
        # keep bands stratified whatever the input order
        order = np.argsort(y, kind="stable")
        X, y = X[order], y[order]
        seed = self._next_seed() if seed is None else seed
        signals, perfs = [], []
        for f, test in enumerate(band_folds(len(y), n_folds)):
            train = np.setdiff1d(np.arange(len(y)), test)
            models = self._train(X[train], y[train], seed + f, split)
            if models is None:
                continue
            signals.append(np.mean(self._signal_values(models, X[test], y[test])))
            perfs.append(performance(y[test], self._predict_with(models, X[test]), cfg.perf_metric))
        if not signals:
            if previous is None:
                raise ValueError("no fold could be trained")
            return previous
        floor = cfg.sigma_floor
        sd = (lambda v: float(np.std(v, ddof=1)) if len(v) > 1 else 0.0)
        return ReferenceStats(float(np.mean(signals)), max(sd(signals), floor),
                              float(np.mean(perfs)), max(sd(perfs), floor))

    # -- streaming -----------------------------------------------------------------

    def predict(self, X):
        return self._predict_with(self.models_, np.atleast_2d(X))

    def step(self, x, t=None, oracle=None, y_true=None):
        cfg, st = self.cfg, self.state_
        t = st.samples_seen if t is None else t
        x = np.asarray(x, dtype=float)
        label, value = self._step_signal(x, y_true)
        st.samples_seen += 1
        events = []
        if not self.adaptive:
            return label, events
        lam = cfg.lam
        st.signal = lam * st.signal + (1.0 - lam) * value
        ref = self.reference_
        if st.phase == MONITORING and abs(st.signal - ref.signal_ref) > cfg.theta * ref.signal_sigma:
            st.phase = COLLECTING
            st.unlabeled = []
            st.suspected += 1
            events.append(self._event(t, SUSPECTED))
        if st.phase == COLLECTING:
            st.unlabeled.append((t, x, y_true))
            if len(st.unlabeled) >= cfg.n_unlabeled:
                st.phase = AWAITING
                events.append(self._event(t, LABELS_REQUESTED))
        if st.phase == AWAITING and (oracle is not None or self._self_labeled):
            events.extend(self.confirm_and_retrain(oracle, t))
        return label, events

    _self_labeled = False
    needs_labels = False

    def _event(self, t, kind, detail=""):
        ev = Event(t, kind, self.state_.signal, self.state_.labels_spent, detail)
        self.events_.append(ev)
        return ev

    def _select(self, X_pool):
        cfg = self.cfg
        n = len(X_pool)
        budget = min(cfg.n_train, n)
        if cfg.labeling_policy == "take_all":
            return np.arange(budget)
        if cfg.labeling_policy == "disagreement" and hasattr(self, "disagreement"):
            return select_labels_disagreement(self.disagreement(X_pool), budget, self._rng)
        return select_labels_random(n, budget, self._rng)

    def confirm_and_retrain(self, oracle, t=None):
        """Label part of the buffer, test for a performance drop and retrain on a drop."""
        cfg, st = self.cfg, self.state_
        if st.phase != AWAITING:
            raise RuntimeError("no labeled confirmation pending")
        ts = np.array([u[0] for u in st.unlabeled])
        X_pool = np.array([u[1] for u in st.unlabeled])
        t = int(ts[-1]) if t is None else t
        chosen = self._select(X_pool)
        try:
            y_sel = np.asarray(oracle(ts[chosen], X_pool[chosen]))
        except Exception as exc:  # noqa: BLE001 - surfaced as an event
            return [self._event(t, WARNING, f"oracle failure: {exc}")]
        X_sel = X_pool[chosen]
        st.labels_spent += len(chosen)
        self.last_labeled_ = Dataset(X_sel, y_sel)
        perf = performance(y_sel, self._predict_with(self.models_, X_sel), cfg.perf_metric)
        ref = self.reference_
        events = []
        if ref.perf_ref - perf > cfg.theta * ref.perf_sigma:
            st.confirmed += 1
            events.extend(self._retrain(X_sel, y_sel, t))
            events.append(self._event(t, CONFIRMED, f"perf={perf:.4f}"))
        else:
            st.false_alarms += 1
            events.append(self._event(t, FALSE_ALARM, f"perf={perf:.4f}"))
        st.phase = MONITORING
        st.unlabeled = []
        st.signal = self.reference_.signal_ref
        return events

    def _retrain(self, X, y, t):
        if np.unique(y).size < 2:
            return [self._event(t, WARNING, "single-class labeled set, models kept")]
        models = self._train(X, y, self._next_seed())
        if models is None:
            return [self._event(t, WARNING, "retraining failed, models kept")]
        self.models_ = models
        self.reference_ = self.learn_reference(X, y, previous=self.reference_)
        return []

    @property
    def black_box(self):
        """Label-only view of the forward-facing model."""
        return self.prediction_model.predict


class PredictDetect(StreamingDetector):
    """Prediction model plus hidden detection model on disjoint feature subsets.

    Served labels always come from the prediction model. The tracked
    signal is the EWMA of prediction/detection disagreement.
    """

    name = "pd"
    signal_name = "disagreement"

    def _train(self, X, y, seed, split=None):
        counts = np.bincount(np.asarray(y), minlength=2)
        if counts.min() < (1 if split is not None else 2):
            return None
        cfg = self.cfg
        return SplitModels(cfg.ensemble(), 2, cfg.hidden_fraction, split, seed).fit(X, y)

    def _retrain(self, X, y, t):
        events = []
        counts = np.bincount(np.asarray(y), minlength=2)
        if counts.min() == 0:
            return [self._event(t, WARNING, "single-class labeled set, models kept")]
        split = None
        if self.cfg.retrain_policy == "noshuffle":
            split = self.models_.split_
        elif counts.min() < 2:
            events.append(self._event(t, WARNING, "too few samples to re-rank, split kept"))
            split = self.models_.split_
        self.models_ = self._train(X, y, self._next_seed(), split)
        self.reference_ = self.learn_reference(X, y, previous=self.reference_, split=split)
        return events

    def _signal_values(self, models, X, y):
        return models.disagreement(X).astype(float)

    def _predict_with(self, models, X):
        return models.prediction_model.predict(X)

    def _step_signal(self, x, y_true):
        m = self.models_
        p = int(m.prediction_model.predict(x)[0])
        d = int(m.detection_model.predict(x)[0])
        return p, float(p != d)

    def disagreement(self, X):
        return self.models_.disagreement(X)

    @property
    def prediction_model(self):
        return self.models_.prediction_model

    @property
    def split_(self):
        return self.models_.split_


class MarginDensity(StreamingDetector):
    """Margin density tracking on a random subspace ensemble (MD3-RS)."""

    name = "md3"
    signal_name = "margin_density"

    def _train(self, X, y, seed, split=None):
        if np.unique(y).size < 2:
            return None
        return self.cfg.ensemble(seed).fit(X, y)

    def _signal_values(self, models, X, y):
        return models.in_margin(X).astype(float)

    def _predict_with(self, models, X):
        return models.predict(X)

    def _step_signal(self, x, y_true):
        label, _, in_margin = self.models_.predict_one(x)
        return label, float(in_margin)

    @property
    def prediction_model(self):
        return self.models_


class AccuracyTracker(MarginDensity):
    """Fully supervised baseline: EWMA of the error indicator, retrain on the next labeled chunk.

    Every sample's true label is consumed, so labeling is 100% by
    construction. After a suspicion the following ``n_train`` labeled
    samples are collected and the ensemble is retrained on them without a
    separate confirmation test.
    """

    name = "acctr"
    signal_name = "error_rate"
    _self_labeled = True
    needs_labels = True

    def _signal_values(self, models, X, y):
        return (models.predict(X) != y).astype(float)

    def _step_signal(self, x, y_true):
        if y_true is None:
            raise ValueError("AccuracyTracker needs the true label at every step")
        label = int(self.models_.predict(x)[0])
        self.state_.labels_spent += 1
        return label, float(label != y_true)

    def confirm_and_retrain(self, oracle=None, t=None):
        st = self.state_
        X = np.array([u[1] for u in st.unlabeled[-self.cfg.n_train:]])
        y = np.array([u[2] for u in st.unlabeled[-self.cfg.n_train:]])
        t = st.unlabeled[-1][0] if t is None else t
        st.confirmed += 1
        self.last_labeled_ = Dataset(X, y)
        events = self._retrain(X, y, t)
        events.append(self._event(t, CONFIRMED, "supervised"))
        st.phase = MONITORING
        st.unlabeled = []
        st.signal = self.reference_.signal_ref
        return events


class NoChange(MarginDensity):
    """Static baseline: serve the initial ensemble forever, never signal or label."""

    name = "nochange"
    signal_name = "none"
    adaptive = False

    def fit(self, X, y):
        self._seeds = np.random.SeedSequence(self.random_state)
        self._rng = np.random.default_rng(self._seeds.spawn(1)[0])
        self.models_ = self._train(X, y, self._next_seed())
        self.reference_ = ReferenceStats(0.0, self.cfg.sigma_floor, 1.0, self.cfg.sigma_floor)
        self.state_ = DetectorState()
        self.events_ = []
        return self

    def _step_signal(self, x, y_true):
        return int(self.models_.predict(x)[0]), 0.0


DETECTORS = {
    "nochange": lambda cfg, seed: NoChange(cfg, seed),
    "acctr": lambda cfg, seed: AccuracyTracker(cfg, seed),
    "md3": lambda cfg, seed: MarginDensity(cfg, seed),
    "pd-shuffle": lambda cfg, seed: PredictDetect(replace(cfg, retrain_policy="shuffle"), seed),
    "pd-noshuffle": lambda cfg, seed: PredictDetect(replace(cfg, retrain_policy="noshuffle"), seed),
}


def make_detector(kind, config=None, random_state=0):
    try:
        factory = DETECTORS[kind]
    except KeyError:
        raise ValueError(f"unknown detector {kind!r}; choose from {sorted(DETECTORS)}") from None
    return factory(config or DetectorConfig(), random_state)
