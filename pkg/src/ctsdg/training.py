"""Two-phase optimization loop, Adam, early stopping, and the ERM baseline.

Phase 1 (epoch < phase1_threshold) minimizes the contrastive loss plus the
weighted negative lower bound and refreshes the match assignment once per
epoch. Phase 2 freezes the assignment and minimizes the full objective;
early stopping monitors the phase-2 validation total loss only and the best
validation parameters are restored at the end.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import objective as obj
from . import tensor as tn
from . import vrnn
from .errors import ConfigError, DataError, NumericError
from .frenet import DomainDataset, SequenceSample

log = logging.getLogger(__name__)

# Raw features are meters at roughly +-100; a fixed scale keeps the tiny
# networks out of activation saturation without leaking test statistics.
FEATURE_SCALE = 0.1


def prep(x: np.ndarray) -> np.ndarray:
    return np.asarray(x, dtype=np.float64) * FEATURE_SCALE


@dataclass
class TrainConfig:
    lr: float = 1e-3
    epochs_max: int = 500
    batch: int = 16
    patience: int = 20
    tau: float = 0.05
    gamma: float = 1e-4
    lam: float = 1.0
    phase1_threshold: int = 100
    val_frac: float = 0.2
    seed: int = 0
    metric: str = "cos_dist"
    loss_reduction: str = "mean"
    init_scale: float = 1.0
    grad_clip: float = 10.0
    no_lv: bool = False
    no_contrast: bool = False

    def validate(self) -> None:
        if min(self.lr, self.tau, self.init_scale) <= 0:
            raise ConfigError("lr, tau and init_scale must be positive")
        if min(self.epochs_max, self.batch, self.patience, self.phase1_threshold) < 1:
            raise ConfigError("epoch, batch, patience and threshold counts must be >= 1")
        if not 0.0 < self.val_frac < 1.0:
            raise ConfigError(f"val_frac must lie in (0, 1), got {self.val_frac}")
        if self.gamma < 0 or self.lam < 0:
            raise ConfigError("gamma and lambda must be non-negative")
        if self.metric not in obj.METRICS:
            raise ConfigError(f"metric must be one of {obj.METRICS}")
        if self.loss_reduction not in ("mean", "sum"):
            raise ConfigError("loss_reduction must be 'mean' or 'sum'")

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        cfg = cls(**data)
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def for_params(cls, params: dict[str, np.ndarray]) -> "AdamState":
        return cls(m={k: np.zeros_like(p) for k, p in params.items()},
                   v={k: np.zeros_like(p) for k, p in params.items()})


BETA1, BETA2, ADAM_EPS = 0.9, 0.999, 1e-8


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: AdamState, lr: float) -> None:
    state.step += 1
    t = state.step
    for name in params:
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {name!r}")
        state.m[name] = BETA1 * state.m[name] + (1 - BETA1) * g
        state.v[name] = BETA2 * state.v[name] + (1 - BETA2) * g * g
        m_hat = state.m[name] / (1 - BETA1 ** t)
        v_hat = state.v[name] / (1 - BETA2 ** t)
        params[name] = params[name] - lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)


def clip_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> None:
    total = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if total > max_norm > 0:
        scale = max_norm / total
        for name in grads:
            grads[name] = grads[name] * scale


@dataclass
class EpochLosses:
    train: obj.LossBreakdown
    val: obj.LossBreakdown


@dataclass
class TrainReport:
    epochs: list[EpochLosses] = field(default_factory=list)
    best_epoch: int = -1
    best_val_total: float = float("inf")
    stop_reason: str = ""
    seed: int = 0

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "best_epoch": self.best_epoch,
            "best_val_total": self.best_val_total,
            "stop_reason": self.stop_reason,
            "epochs": [{"train": asdict(e.train), "val": asdict(e.val)}
                       for e in self.epochs],
        }


def split_train_val(sources: list[DomainDataset], val_frac: float,
                    rng: np.random.Generator
                    ) -> tuple[list[SequenceSample], list[SequenceSample]]:
    """Stratified by (domain, class); disjoint; deterministic given the rng."""
    if not 0.0 < val_frac < 1.0:
        raise ConfigError(f"val_frac must lie in (0, 1), got {val_frac}")
    train, val = [], []
    for dom in sources:
        if len(dom) < 5:
            raise DataError(f"domain {dom.domain_id} has only {len(dom)} samples")
        for label in (0, 1):
            stratum = sorted((s for s in dom.samples if s.y == label),
                             key=lambda s: s.sample_id)
            if not stratum:
                raise DataError(f"domain {dom.domain_id} has no class-{label} samples")
            order = rng.permutation(len(stratum))
            n_val = max(1, int(round(val_frac * len(stratum))))
            for pos, idx in enumerate(order):
                (val if pos < n_val else train).append(stratum[idx])
    return train, val


def _meta_of(samples: list[SequenceSample]) -> dict[str, tuple[str, int]]:
    return {s.sample_id: (s.domain_id, s.y) for s in samples}


def _stack(samples: list[SequenceSample]) -> np.ndarray:
    return prep(np.stack([s.x for s in samples]))


def _batch_meta(samples: list[SequenceSample]) -> obj.BatchMeta:
    return obj.BatchMeta(sample_ids=[s.sample_id for s in samples],
                         domain_ids=[s.domain_id for s in samples],
                         labels=np.array([s.y for s in samples]))


def _representations(params: dict[str, np.ndarray],
                     samples: list[SequenceSample]) -> dict[str, np.ndarray]:
    """Zero-noise causal-feature embedding per sample (no tape)."""
    x = _stack(samples)
    traced = {k: tn.Array2(v) for k, v in params.items()}
    vpass = vrnn.forward_batch(x, traced)
    c = vrnn.hypothesis(traced, vpass.representation)
    return {s.sample_id: c.value[i].copy() for i, s in enumerate(samples)}


def _evaluate_losses(params: dict[str, np.ndarray], samples: list[SequenceSample],
                     omega: obj.MatchAssignment, cfg: TrainConfig) -> obj.LossBreakdown:
    """Full-objective losses on a sample set with zero noise, no tape."""
    x = _stack(samples)
    y = np.array([s.y for s in samples])
    traced = {k: tn.Array2(v) for k, v in params.items()}
    vpass = vrnn.forward_batch(x, traced)
    c = vrnn.hypothesis(traced, vpass.representation)
    l_y = float(np.mean(obj.cross_entropy(c, y).value))
    neg_elbo = float(-np.mean(vrnn.elbo(vpass).value))
    meta = _batch_meta(samples)
    l_r = obj.matching_loss(c, meta, omega, cfg.metric).item()
    l_con = obj.contrastive_loss(c, meta, omega, cfg.tau).item()
    gamma = 0.0 if cfg.no_lv else cfg.gamma
    total = l_y + gamma * neg_elbo + cfg.lam * l_r
    return obj.LossBreakdown(l_y=l_y, l_v=neg_elbo, l_r=l_r, l_con=l_con, total=total)


def _collect_grads(params: dict[str, np.ndarray],
                   traced: dict[str, tn.Array2]) -> dict[str, np.ndarray]:
    return {name: traced[name].grad for name in params}


def train_ctsdg(config: TrainConfig, sources: list[DomainDataset]
                ) -> tuple[dict[str, np.ndarray], TrainReport]:
    config.validate()
    if len(sources) < 2:
        raise ConfigError("cross-domain matching needs at least 2 source domains")
    rng = np.random.default_rng(config.seed)
    train, val = split_train_val(sources, config.val_frac, rng)
    train_meta = _meta_of(train)
    val_meta = _meta_of(val)
    params = vrnn.init_params(rng, config.init_scale)
    state = AdamState.for_params(params)
    omega = obj.init_random_match(train_meta, rng)
    report = TrainReport(seed=config.seed)
    best_params = {k: v.copy() for k, v in params.items()}
    epochs_since_improve = 0
    gamma = 0.0 if config.no_lv else config.gamma
    counter = obj.PairCounter()
    t_steps = train[0].x.shape[0]

    stop_reason = "epochs_max reached"
    for epoch in range(config.epochs_max):
        phase1 = epoch < config.phase1_threshold
        order = rng.permutation(len(train))
        for at in range(0, len(order), config.batch):
            idx = order[at:at + config.batch]
            batch = [train[i] for i in idx]
            x = _stack(batch)
            y = np.array([s.y for s in batch])
            noise = rng.standard_normal((len(batch), t_steps, vrnn.Z_DIM))
            tape = tn.Tape()
            traced = vrnn.trace_params(params, tape)
            vpass = vrnn.forward_batch(x, traced, noise)
            c = vrnn.hypothesis(traced, vpass.representation)
            meta = _batch_meta(batch)
            per_elbo = vrnn.elbo(vpass)
            if config.loss_reduction == "mean":
                neg_elbo = -tn.mean_all(per_elbo)
            else:
                neg_elbo = -tn.sum_all(per_elbo)
            if phase1:
                loss = gamma * neg_elbo
                if not config.no_contrast:
                    loss = loss + obj.contrastive_loss(c, meta, omega, config.tau,
                                                       counter)
            else:
                ce = obj.cross_entropy(c, y)
                l_y = tn.mean_all(ce) if config.loss_reduction == "mean" else tn.sum_all(ce)
                l_r = obj.matching_loss(c, meta, omega, config.metric)
                loss = obj.total_loss(l_y, neg_elbo, l_r, gamma, config.lam)
            if loss.tape is None:
                continue  # all terms disabled; nothing to optimize this phase
            tn.backward(loss)
            grads = _collect_grads(params, traced)
            clip_global_norm(grads, config.grad_clip)
            adam_step(params, grads, state, config.lr)
        if phase1 and not config.no_contrast:
            reps = _representations(params, train)
            omega = obj.update_match(reps, train_meta, config.metric)

        val_omega = obj.update_match(_representations(params, val), val_meta,
                                     config.metric)
        epoch_losses = EpochLosses(
            train=_evaluate_losses(params, train, omega, config),
            val=_evaluate_losses(params, val, val_omega, config))
        report.epochs.append(epoch_losses)
        if not phase1:
            val_total = epoch_losses.val.total
            if val_total < report.best_val_total:
                report.best_val_total = val_total
                report.best_epoch = epoch
                best_params = {k: v.copy() for k, v in params.items()}
                epochs_since_improve = 0
            else:
                epochs_since_improve += 1
                if epochs_since_improve >= config.patience:
                    stop_reason = f"no validation improvement for {config.patience} epochs"
                    break
    report.stop_reason = stop_reason
    if report.best_epoch < 0:  # never entered phase 2
        best_params = params
        report.best_epoch = len(report.epochs) - 1
    if counter.empty_batches:
        log.warning("%d batches realized no positive pair", counter.empty_batches)
    return best_params, report


def train_erm(config: TrainConfig, sources: list[DomainDataset]
              ) -> tuple[dict[str, np.ndarray], TrainReport]:
    """Cross-entropy-only recurrent baseline with the same training machinery."""
    config.validate()
    if len(sources) < 1:
        raise ConfigError("at least one source domain required")
    rng = np.random.default_rng(config.seed)
    train, val = split_train_val(sources, config.val_frac, rng)
    params = vrnn.init_params(rng, config.init_scale, vrnn.erm_param_shapes())
    state = AdamState.for_params(params)
    report = TrainReport(seed=config.seed)
    best_params = {k: v.copy() for k, v in params.items()}
    epochs_since_improve = 0
    x_val = _stack(val)
    y_val = np.array([s.y for s in val])

    stop_reason = "epochs_max reached"
    for epoch in range(config.epochs_max):
        order = rng.permutation(len(train))
        for at in range(0, len(order), config.batch):
            idx = order[at:at + config.batch]
            batch = [train[i] for i in idx]
            x = _stack(batch)
            y = np.array([s.y for s in batch])
            tape = tn.Tape()
            traced = vrnn.trace_params(params, tape)
            logits = vrnn.erm_forward(x, traced)
            ce = obj.cross_entropy(logits, y)
            loss = tn.mean_all(ce) if config.loss_reduction == "mean" else tn.sum_all(ce)
            tn.backward(loss)
            grads = _collect_grads(params, traced)
            clip_global_norm(grads, config.grad_clip)
            adam_step(params, grads, state, config.lr)
        traced = {k: tn.Array2(v) for k, v in params.items()}
        train_ce = float(np.mean(obj.cross_entropy(
            vrnn.erm_forward(_stack(train), traced),
            np.array([s.y for s in train])).value))
        val_ce = float(np.mean(obj.cross_entropy(
            vrnn.erm_forward(x_val, traced), y_val).value))
        report.epochs.append(EpochLosses(
            train=obj.LossBreakdown(train_ce, 0.0, 0.0, 0.0, train_ce),
            val=obj.LossBreakdown(val_ce, 0.0, 0.0, 0.0, val_ce)))
        if val_ce < report.best_val_total:
            report.best_val_total = val_ce
            report.best_epoch = epoch
            best_params = {k: v.copy() for k, v in params.items()}
            epochs_since_improve = 0
        else:
            epochs_since_improve += 1
            if epochs_since_improve >= config.patience:
                stop_reason = f"no validation improvement for {config.patience} epochs"
                break
    report.stop_reason = stop_reason
    return best_params, report


def _is_erm(params: dict[str, np.ndarray]) -> bool:
    return "phi_enc.w0" not in params


def predict_batch(params: dict[str, np.ndarray], xs: np.ndarray
                  ) -> tuple[np.ndarray, np.ndarray]:
    """Zero-noise inference; argmax ties resolve to the lower index."""
    xs = prep(xs)
    if xs.ndim == 2:
        xs = xs[None, :, :]
    traced = {k: tn.Array2(v) for k, v in params.items()}
    if _is_erm(params):
        logits = vrnn.erm_forward(xs, traced).value
    else:
        vpass = vrnn.forward_batch(xs, traced)
        logits = vrnn.hypothesis(traced, vpass.representation).value
    labels = np.argmax(logits, axis=1)
    return labels, logits


def predict(params: dict[str, np.ndarray], sample: SequenceSample
            ) -> tuple[int, np.ndarray]:
    labels, logits = predict_batch(params, sample.x)
    return int(labels[0]), logits[0]
