"""AP-Stream: drifting adversarial streams drawn from four sample buffers."""
import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .adversary import AttackConfig, anchor_points_attack
from .dataio import LEGITIMATE, MALICIOUS, Dataset

logger = logging.getLogger(__name__)

# source tags
TAG_L = "L"
TAG_M = "M"
TAG_E = "E"
TAG_A = "A"
TAG_PREV_A = "A_prev"


@dataclass
class StreamSchedule:
    cycle_length: int = 20000
    t_explore: int = 1000
    t_exploit: int = 10000
    imbalance: float = 0.5
    blend: float = 0.05
    cycles: int = 1
    carry_attack: bool = True

    def __post_init__(self):
        if not 0 < self.t_explore < self.t_exploit < self.cycle_length:
            raise ValueError("need 0 < t_explore < t_exploit < cycle_length")
        if not 0 < self.imbalance < 1:
            raise ValueError("imbalance must lie in (0, 1)")
        if not 0 <= self.blend <= 1:
            raise ValueError("blend must lie in [0, 1]")
        if self.cycles < 1:
            raise ValueError("cycles must be >= 1")

    @property
    def length(self):
        return self.cycles * self.cycle_length


@dataclass
class Buffers:
    buf_L: np.ndarray
    buf_M: np.ndarray
    buf_E: np.ndarray = None
    buf_A: np.ndarray = None
    buf_prev_A: np.ndarray = None

    def __post_init__(self):
        if len(self.buf_L) == 0 or len(self.buf_M) == 0:
            raise ValueError("buf_L and buf_M must be non-empty")
        dim = self.buf_L.shape[1]
        for name in ("buf_E", "buf_A"):
            if getattr(self, name) is None:
                setattr(self, name, np.empty((0, dim)))

    @classmethod
    def from_dataset(cls, data: Dataset):
        return cls(data.X[data.y == LEGITIMATE], data.X[data.y == MALICIOUS])


class StreamRngs:
    """Independent generators for scheduling coins, buffer draws and the adversary."""

    def __init__(self, seed):
        ss = np.random.SeedSequence(seed)
        sched, draw, adv = ss.spawn(3)
        self.schedule = np.random.default_rng(sched)
        self.draw = np.random.default_rng(draw)
        self._adv = adv

    def attack_seed(self, cycle):
        return int(self._adv.spawn(1)[0].generate_state(1)[0]) + cycle


def _pick(buf, u):
    return buf[min(int(u * len(buf)), len(buf) - 1)]


def next_sample(sched: StreamSchedule, bufs: Buffers, t, rng):
    """One stream sample ``(x, label, source_tag)`` at global time ``t``.

    ``rng`` may be a single generator or a :class:`StreamRngs`. The
    malicious side follows the cycle-local phase ``tau = t % cycle_length``.
    An empty required buffer falls back to ``buf_M`` with a ``*_fallback``
    tag.
    """
    if t >= sched.length:
        raise ValueError("t beyond stream length")
    coin_rng = rng.schedule if isinstance(rng, StreamRngs) else rng
    draw_rng = rng.draw if isinstance(rng, StreamRngs) else rng
    coins = coin_rng.random(2)
    u = draw_rng.random()
    return _sample_from(sched, bufs, t % sched.cycle_length, coins[0], coins[1], u)


def _sample_from(sched, bufs, tau, c_class, c_blend, u):
    if c_class >= sched.imbalance:
        return _pick(bufs.buf_L, u), LEGITIMATE, TAG_L
    if tau < sched.t_exploit:
        base, base_tag = bufs.buf_M, TAG_M
        if bufs.buf_prev_A is not None and len(bufs.buf_prev_A):
            base, base_tag = bufs.buf_prev_A, TAG_PREV_A
        if tau >= sched.t_explore and c_blend < sched.blend:
            if len(bufs.buf_E):
                return _pick(bufs.buf_E, u), MALICIOUS, TAG_E
            return _pick(bufs.buf_M, u), MALICIOUS, TAG_M + "_fallback"
        return _pick(base, u), MALICIOUS, base_tag
    if len(bufs.buf_A):
        return _pick(bufs.buf_A, u), MALICIOUS, TAG_A
    return _pick(bufs.buf_M, u), MALICIOUS, TAG_M + "_fallback"


def generate_cycle(sched: StreamSchedule, bufs: Buffers, rngs: StreamRngs):
    """All samples of one cycle as ``(X, y, tags)``.

    Coins and buffer draws are taken for every step even when unused, so
    changing one knob never reshuffles the other streams of randomness.
    """
    n = sched.cycle_length
    coins = rngs.schedule.random((n, 2))
    u = rngs.draw.random(n)
    dim = bufs.buf_L.shape[1]
    X = np.empty((n, dim))
    y = np.empty(n, dtype=np.int64)
    tags = []
    for tau in range(n):
        x, lab, tag = _sample_from(sched, bufs, tau, coins[tau, 0], coins[tau, 1], u[tau])
        X[tau] = x
        y[tau] = lab
        tags.append(tag)
    return X, y, tags


class Oracle:
    """Ground-truth labels by stream position; counts every label handed out."""

    def __init__(self):
        self._labels = {}
        self.cost = 0
        self.malicious_given = 0

    def record(self, t0, y):
        for i, lab in enumerate(y):
            self._labels[t0 + i] = int(lab)

    def __call__(self, ts, X=None):
        labels = np.array([self._labels[int(t)] for t in ts], dtype=np.int64)
        self.cost += len(labels)
        self.malicious_given += int(np.sum(labels == MALICIOUS))
        return labels


@dataclass
class StreamRecord:
    """Per-step trace of one detector over one stream."""

    detector: str
    t: list = field(default_factory=list)
    tags: list = field(default_factory=list)
    y_true: list = field(default_factory=list)
    y_pred: list = field(default_factory=list)
    phases: list = field(default_factory=list)
    signal: list = field(default_factory=list)
    events: list = field(default_factory=list)
    attacks: list = field(default_factory=list)
    labels_spent: int = 0
    oracle_cost: int = 0
    oracle_malicious: int = 0
    X: list = field(default_factory=list)


def _feed(detector, X, y, tags, t0, oracle, rec, keep_samples=False):
    supervised = getattr(detector, "needs_labels", False)
    for i in range(len(y)):
        t = t0 + i
        label, events = detector.step(X[i], t, oracle=oracle,
                                      y_true=int(y[i]) if supervised else None)
        rec.t.append(t)
        rec.tags.append(tags[i])
        rec.y_true.append(int(y[i]))
        rec.y_pred.append(int(label))
        rec.phases.append(detector.state_.phase)
        rec.signal.append(detector.state_.signal)
        rec.events.extend(events)
    if keep_samples:
        rec.X.append(np.asarray(X))


def run_cycle(detector, sched: StreamSchedule, bufs: Buffers, train: Dataset,
              attack_cfg: AttackConfig, cycle, rngs: StreamRngs, oracle: Oracle,
              rec: StreamRecord, keep_samples=False):
    """Attack the detector's current forward model, then stream one cycle through it."""
    malicious = train.X[train.y == MALICIOUS]
    art = anchor_points_attack(detector.black_box, malicious, attack_cfg, rngs.attack_seed(cycle))
    if art.aborted:
        logger.warning("cycle %d: attack aborted, stream falls back to buf_M", cycle)
    bufs.buf_E = art.probes
    bufs.buf_A = art.attack_samples
    rec.attacks.append(art)
    X, y, tags = generate_cycle(sched, bufs, rngs)
    t0 = cycle * sched.cycle_length
    oracle.record(t0, y)
    _feed(detector, X, y, tags, t0, oracle, rec, keep_samples)
    if sched.carry_attack and len(art.attack_samples):
        bufs.buf_prev_A = art.attack_samples
    return rec


def run_stream(detector, train: Dataset, sched: StreamSchedule, attack_cfg: AttackConfig,
               seed=0, keep_samples=False) -> StreamRecord:
    """Generate the adversarial stream against ``detector`` (already fitted) and run it.

    In every cycle the adversary re-attacks the currently deployed model.
    With ``carry_attack`` the previous cycle's payload keeps arriving as
    the malicious side until the next exploitation starts.
    """
    rngs = StreamRngs(seed)
    bufs = Buffers.from_dataset(train)
    oracle = Oracle()
    rec = StreamRecord(type(detector).__name__)
    for cycle in range(sched.cycles):
        run_cycle(detector, sched, bufs, train, attack_cfg, cycle, rngs, oracle, rec, keep_samples)
    rec.labels_spent = detector.state_.labels_spent
    rec.oracle_cost = oracle.cost
    rec.oracle_malicious = oracle.malicious_given
    return rec


def replay(detector, X, y, tags) -> StreamRecord:
    """Run a fitted detector over a fixed (dumped) stream."""
    oracle = Oracle()
    oracle.record(0, y)
    rec = StreamRecord(type(detector).__name__)
    _feed(detector, X, y, tags, 0, oracle, rec)
    rec.labels_spent = detector.state_.labels_spent
    rec.oracle_cost = oracle.cost
    rec.oracle_malicious = oracle.malicious_given
    return rec


def dump_stream(path, X, y, tags):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "source_tag", "true_label"] + [f"f{j + 1}" for j in range(X.shape[1])])
        for t, (x, lab, tag) in enumerate(zip(X, y, tags)):
            w.writerow([t, tag, int(lab)] + [repr(float(v)) for v in x])


def load_stream(path):
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        rows = list(reader)
    tags = [r[1] for r in rows]
    y = np.array([int(r[2]) for r in rows], dtype=np.int64)
    X = np.array([[float(v) for v in r[3:]] for r in rows])
    return X, y, tags
