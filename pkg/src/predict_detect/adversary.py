"""Anchor-points exploratory attack against a label-only black box."""
import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataio import LEGITIMATE, MALICIOUS
from .learners import SubspaceEnsemble

logger = logging.getLogger(__name__)


class BlackBox:
    """Wraps a label-returning predict function and counts every probe."""

    def __init__(self, predict):
        self._predict = predict
        self.probes = 0

    def __call__(self, X):
        X = np.atleast_2d(X)
        self.probes += len(X)
        return np.asarray(self._predict(X))


@dataclass
class AttackConfig:
    budget: int = 800
    r0: float = 0.05
    dr: float = 0.05
    probes_per_round: int = 50
    filter_members: int = 50
    filter_fraction: float = 0.5
    filter_c: float = 10.0
    filter_penalty: str = "l1"
    confidence_threshold: float = 0.8
    n_attack: int = 2000
    combine_k: int = 10
    perturb_sigma: float = 0.02


@dataclass
class AttackArtifacts:
    probes: np.ndarray
    probe_labels: np.ndarray
    anchors: np.ndarray
    keep: np.ndarray
    attack_samples: np.ndarray
    probes_used: int
    warnings: list = field(default_factory=list)

    @property
    def filtered_anchors(self):
        return self.anchors[self.keep]

    @property
    def aborted(self):
        return len(self.anchors) == 0

    def to_csv(self, path):
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            dim = self.probes.shape[1] if self.probes.size else 0
            w.writerow(["provenance"] + [f"f{j + 1}" for j in range(dim)])
            for a, kept in zip(self.anchors, self.keep):
                w.writerow(["anchor" if kept else "filtered_out"] + [f"{v:.12g}" for v in a])
            for a in self.attack_samples:
                w.writerow(["attack"] + [f"{v:.12g}" for v in a])


def explore(black_box, seed_sample, budget, rng, r0=0.05, dr=0.05, probes_per_round=50):
    """Radius-grown random search for samples the black box accepts.

    Each probe is drawn uniformly from the L-infinity ball of the current
    radius around a centre: the seed while no anchor exists, otherwise an
    anchor picked at random. The radius grows by ``dr`` after every round
    that produces no new anchor. Returns ``(probes, labels, anchors)``.
    """
    if budget < 1:
        raise ValueError("exploration budget must be >= 1")
    seed_sample = np.asarray(seed_sample, dtype=float)
    dim = seed_sample.size
    anchors = np.empty((0, dim))
    probes, labels = [], []
    radius = r0
    used = 0
    while used < budget:
        n = min(probes_per_round, budget - used)
        if len(anchors):
            centres = anchors[rng.integers(len(anchors), size=n)]
        else:
            centres = np.broadcast_to(seed_sample, (n, dim))
        batch = np.clip(centres + rng.uniform(-radius, radius, size=(n, dim)), 0.0, 1.0)
        lab = black_box(batch)
        used += n
        probes.append(batch)
        labels.append(lab)
        accepted = batch[lab == LEGITIMATE]
        if len(accepted):
            anchors = np.vstack([anchors, accepted])
        else:
            radius = min(radius + dr, 1.0)
    return np.vstack(probes), np.concatenate(labels), anchors


def filter_anchors(anchors, rejected, cfg: AttackConfig, rng_seed=0,
                   confidence_threshold=None):
    """Boolean keep-mask over ``anchors``.

    The adversary fits its own subspace ensemble on what exploration taught
    it, anchors as Legitimate against ``rejected`` samples as Malicious, and
    keeps anchors that at least ``confidence_threshold`` of the members call
    Legitimate.
    """
    thr = cfg.confidence_threshold if confidence_threshold is None else confidence_threshold
    anchors = np.asarray(anchors, dtype=float)
    if thr <= 0 or len(anchors) < 2 or len(rejected) < 2:
        return np.ones(len(anchors), dtype=bool)
    X = np.vstack([anchors, rejected])
    y = np.r_[np.full(len(anchors), LEGITIMATE), np.full(len(rejected), MALICIOUS)]
    ens = SubspaceEnsemble(cfg.filter_members, cfg.filter_fraction, cfg.filter_penalty,
                           cfg.filter_c, random_state=rng_seed).fit(X, y)
    return legit_vote_fraction(ens, anchors) >= thr


def legit_vote_fraction(ensemble, X):
    return 1.0 - ensemble.malicious_fraction(X)


def exploit(anchors, n_attack, rng, combine_k=3, perturb_sigma=0.02):
    """Perturbed convex combinations of randomly chosen anchors."""
    anchors = np.asarray(anchors, dtype=float)
    if len(anchors) == 0:
        raise ValueError("exploitation needs at least one anchor")
    replace = len(anchors) < combine_k
    out = np.empty((n_attack, anchors.shape[1]))
    for i in range(n_attack):
        chosen = anchors[rng.choice(len(anchors), size=combine_k, replace=replace)]
        w = rng.dirichlet(np.ones(combine_k))
        out[i] = w @ chosen
    if perturb_sigma > 0:
        out += rng.normal(0.0, perturb_sigma, size=out.shape)
    return np.clip(out, 0.0, 1.0)


def anchor_points_attack(predict, malicious, cfg: AttackConfig, rng_seed=0) -> AttackArtifacts:
    """Explore, filter and exploit against ``predict`` starting from a random malicious sample."""
    ss = np.random.SeedSequence(rng_seed)
    rng_explore, rng_exploit = (np.random.default_rng(s) for s in ss.spawn(2))
    filter_seed = int(ss.generate_state(1)[0])
    malicious = np.asarray(malicious, dtype=float)
    bb = BlackBox(predict)
    seed_sample = malicious[rng_explore.integers(len(malicious))]
    probes, labels, anchors = explore(bb, seed_sample, cfg.budget, rng_explore, cfg.r0, cfg.dr,
                                      cfg.probes_per_round)
    warnings = []
    if len(anchors) == 0:
        warnings.append("exploration found no anchor points, attack aborted")
        logger.warning(warnings[-1])
        return AttackArtifacts(probes, labels, anchors, np.zeros(0, dtype=bool),
                               np.empty((0, malicious.shape[1])), bb.probes, warnings)
    rejected = probes[labels != LEGITIMATE]
    if len(rejected) < 2:
        rejected = malicious
    keep = filter_anchors(anchors, rejected, cfg, filter_seed)
    if not keep.any():
        warnings.append("confidence filter removed every anchor, using unfiltered anchors")
        logger.warning(warnings[-1])
        keep = np.ones(len(anchors), dtype=bool)
    attack = exploit(anchors[keep], cfg.n_attack, rng_exploit, cfg.combine_k, cfg.perturb_sigma)
    return AttackArtifacts(probes, labels, anchors, keep, attack, bb.probes, warnings)
