"""Loss components and match-function machinery.

The match assignment pairs every training sample with a same-class partner
from a different domain. The contrastive loss pulls matched pairs together
against different-class negatives in the 2-d causal-feature space; the
matching loss penalizes the distance between matched pairs directly.
Losses reduce by the mean over realized in-batch pairs so the loss-weight
defaults stay stable across batch sizes.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import tensor as tn
from .errors import NumericError, UsageError
from .tensor import Array2

log = logging.getLogger(__name__)

EPS_NORM = 1e-8
METRICS = ("cos_dist", "l1", "l2")


@dataclass
class MatchAssignment:
    """sample_id -> matched sample_id; pairs share class, differ in domain."""

    map: dict[str, str] = field(default_factory=dict)

    def validate(self, meta: dict[str, tuple[str, int]]) -> None:
        for j, m in self.map.items():
            dj, yj = meta[j]
            dm, ym = meta[m]
            if yj != ym or dj == dm:
                raise UsageError(f"invalid match {j} -> {m}: class/domain rule violated")


@dataclass
class LossBreakdown:
    l_y: float
    l_v: float  # negative lower bound, as minimized
    l_r: float
    l_con: float
    total: float


def cross_entropy(logits: Array2, y) -> Array2:
    """Per-sample -log softmax(logits)[y], shape (B, 1), log-sum-exp stable."""
    if not np.all(np.isfinite(logits.value)):
        raise NumericError("non-finite logits")
    y = np.atleast_1d(np.asarray(y, dtype=int))
    b, k = logits.shape
    if y.shape[0] != b:
        raise UsageError(f"labels length {y.shape[0]} != batch size {b}")
    onehot = np.zeros((b, k))
    onehot[np.arange(b), y] = 1.0
    lse = tn.logsumexp_rows(logits)
    picked = tn.sum_rows(tn.mul(logits, Array2(onehot)))
    return lse - picked


def cosine_sim(a, b) -> float:
    """Raw cosine similarity of two vectors; rejects zero-norm inputs."""
    av = np.asarray(a, dtype=float).ravel()
    bv = np.asarray(b, dtype=float).ravel()
    na, nb = np.linalg.norm(av), np.linalg.norm(bv)
    if na == 0.0 or nb == 0.0:
        raise NumericError("cosine_sim of zero-norm vector")
    return float(av @ bv / (na * nb))


@dataclass
class BatchMeta:
    """Identity columns accompanying a (B, 2) representation matrix."""

    sample_ids: list[str]
    domain_ids: list[str]
    labels: np.ndarray

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=int)
        if not (len(self.sample_ids) == len(self.domain_ids) == self.labels.shape[0]):
            raise UsageError("batch metadata columns differ in length")


def _realized_pairs(meta: BatchMeta, omega: MatchAssignment) -> list[tuple[int, int]]:
    index = {sid: i for i, sid in enumerate(meta.sample_ids)}
    pairs = []
    for j, sid in enumerate(meta.sample_ids):
        partner = omega.map.get(sid)
        if partner is not None and partner in index:
            pairs.append((j, index[partner]))
    return pairs


def _normalized_rows(c: Array2) -> Array2:
    norms = tn.sqrt(tn.sum_rows(tn.mul(c, c))) + EPS_NORM
    return c / norms


class PairCounter:
    """Tracks batches that realized no positive pair (warning, not error)."""

    def __init__(self) -> None:
        self.empty_batches = 0


def contrastive_loss(c: Array2, meta: BatchMeta, omega: MatchAssignment,
                     tau: float, counter: PairCounter | None = None) -> Array2:
    """Temperature-scaled loss over realized positive pairs, scalar (1, 1)."""
    if tau <= 0:
        raise UsageError(f"temperature must be positive, got {tau}")
    b = c.rows
    pairs = _realized_pairs(meta, omega)
    if not pairs:
        if counter is not None:
            counter.empty_batches += 1
        log.debug("contrastive_loss: no realized positive pair in batch")
        return Array2(0.0)
    sim = _normalized_rows(c) @ tn.transpose(_normalized_rows(c))
    logits = sim * (1.0 / tau)
    mask = np.zeros((b, b))
    pos = np.zeros((b, b))
    weight = np.zeros((b, 1))
    neg = meta.labels[None, :] != meta.labels[:, None]
    for j, m in pairs:
        mask[j] = neg[j].astype(float)
        mask[j, m] = 1.0
        pos[j, m] = 1.0
        weight[j, 0] = 1.0
    mask[weight[:, 0] == 0.0, 0] = 1.0  # dummy entry; zero-weighted below
    lse = tn.logsumexp_rows(logits, mask)
    s_pos = tn.sum_rows(tn.mul(logits, Array2(pos)))
    per_row = tn.mul(lse - s_pos, Array2(weight))
    return tn.sum_all(per_row) * (1.0 / len(pairs))


def _pair_distance(cj: Array2, cm: Array2, metric: str) -> Array2:
    diff = cj - cm
    if metric == "l1":
        return tn.sum_rows(tn.absolute(diff))
    if metric == "l2":
        return tn.sqrt(tn.sum_rows(tn.mul(diff, diff)) + 1e-12)
    if metric == "cos_dist":
        num = tn.sum_rows(tn.mul(cj, cm))
        den = (tn.sqrt(tn.sum_rows(tn.mul(cj, cj))) + EPS_NORM) * \
              (tn.sqrt(tn.sum_rows(tn.mul(cm, cm))) + EPS_NORM)
        return 1.0 - num / den
    raise UsageError(f"unknown metric {metric!r}; expected one of {METRICS}")


def matching_loss(c: Array2, meta: BatchMeta, omega: MatchAssignment,
                  metric: str = "cos_dist") -> Array2:
    """Mean distance between realized matched pairs, scalar (1, 1)."""
    pairs = _realized_pairs(meta, omega)
    if not pairs:
        return Array2(0.0)
    b = c.rows
    gj = np.zeros((len(pairs), b))
    gm = np.zeros((len(pairs), b))
    for row, (j, m) in enumerate(pairs):
        gj[row, j] = 1.0
        gm[row, m] = 1.0
    cj = Array2(gj) @ c
    cm = Array2(gm) @ c
    return tn.mean_all(_pair_distance(cj, cm, metric))


def pair_distances(c: np.ndarray, sample_ids: list[str],
                   omega: MatchAssignment, metric: str = "cos_dist") -> np.ndarray:
    """Plain-numpy distances for every assigned pair (diagnostics)."""
    index = {sid: i for i, sid in enumerate(sample_ids)}
    out = []
    for j, m in omega.map.items():
        if j not in index or m not in index:
            continue
        a, b = c[index[j]], c[index[m]]
        if metric == "l1":
            out.append(np.abs(a - b).sum())
        elif metric == "l2":
            out.append(float(np.linalg.norm(a - b)))
        else:
            na = np.linalg.norm(a) + EPS_NORM
            nb = np.linalg.norm(b) + EPS_NORM
            out.append(1.0 - float(a @ b) / (na * nb))
    return np.asarray(out)


def _eligible(meta: dict[str, tuple[str, int]], j: str) -> list[str]:
    dj, yj = meta[j]
    return sorted(m for m, (dm, ym) in meta.items()
                  if ym == yj and dm != dj)


def update_match(reps: dict[str, np.ndarray], meta: dict[str, tuple[str, int]],
                 metric: str = "cos_dist") -> MatchAssignment:
    """Nearest same-class cross-domain neighbour under the configured metric;
    ties break toward the smallest sample id."""
    omega = MatchAssignment()
    for j in sorted(meta):
        candidates = _eligible(meta, j)
        if not candidates:
            log.info("update_match: %s has no eligible partner", j)
            continue
        best = None
        for m in candidates:
            dist = _metric_np(reps[j], reps[m], metric)
            if best is None or dist < best[0]:
                best = (dist, m)
        omega.map[j] = best[1]
    return omega


def _metric_np(a: np.ndarray, b: np.ndarray, metric: str) -> float:
    if metric == "l1":
        return float(np.abs(a - b).sum())
    if metric == "l2":
        return float(np.linalg.norm(a - b))
    if metric == "cos_dist":
        na = np.linalg.norm(a) + EPS_NORM
        nb = np.linalg.norm(b) + EPS_NORM
        return 1.0 - float(a @ b) / (na * nb)
    raise UsageError(f"unknown metric {metric!r}; expected one of {METRICS}")


def init_random_match(meta: dict[str, tuple[str, int]],
                      rng: np.random.Generator) -> MatchAssignment:
    omega = MatchAssignment()
    for j in sorted(meta):
        candidates = _eligible(meta, j)
        if not candidates:
            log.info("init_random_match: %s has no eligible partner", j)
            continue
        omega.map[j] = candidates[rng.integers(len(candidates))]
    return omega


def total_loss(l_y, neg_elbo, l_r, gamma: float, lam: float):
    """Phase-2 objective: classification + gamma * (-lower bound) + lambda * match."""
    if gamma < 0 or lam < 0:
        raise UsageError("loss weights must be non-negative")
    return l_y + gamma * neg_elbo + lam * l_r
