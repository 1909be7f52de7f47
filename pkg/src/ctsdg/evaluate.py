"""Leave-one-domain-out evaluation, ablation matrix, and representation export.

Each fold trains on all domains but one and tests on the held-out domain,
repeated over consecutive seeds; cells report mean and population standard
deviation over the runs. Folds and repeats are independent jobs and may run
in a process pool.
"""

from __future__ import annotations

import csv
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace

import numpy as np

from . import objective as obj
from . import training as tr
from .errors import ConfigError, OutputError, UsageError
from .frenet import DomainDataset

log = logging.getLogger(__name__)

ABLATION_VARIANTS = ("full", "no_lv", "no_contrast", "l1", "l2")


@dataclass
class LodoResult:
    source_domains: list[str]
    target_domain: str
    accuracies: list[float]
    mean: float
    std: float
    runs: int
    seeds: list[int]

    @classmethod
    def from_accuracies(cls, sources, target, accs, seeds) -> "LodoResult":
        accs = [float(a) for a in accs]
        return cls(source_domains=list(sources), target_domain=target,
                   accuracies=accs, mean=float(np.mean(accs)),
                   std=float(np.std(accs)), runs=len(accs), seeds=list(seeds))

    def cell(self) -> str:
        return f"{self.mean:.2f} ({self.std:.2f})"


def accuracy(params: dict[str, np.ndarray], dataset: DomainDataset) -> float:
    if len(dataset) == 0:
        raise UsageError("accuracy of an empty dataset")
    xs = np.stack([s.x for s in dataset.samples])
    labels, _ = tr.predict_batch(params, xs)
    truth = np.array([s.y for s in dataset.samples])
    return 100.0 * float(np.mean(labels == truth))


def _variant_config(config: tr.TrainConfig, variant: str) -> tr.TrainConfig:
    if variant == "full":
        return config
    if variant == "no_lv":
        return replace(config, no_lv=True)
    if variant == "no_contrast":
        return replace(config, no_contrast=True)
    if variant in ("l1", "l2"):
        return replace(config, metric=variant)
    raise ConfigError(f"unknown ablation variant {variant!r}")


def _run_one(job) -> tuple[int, int, float]:
    fold_idx, seed, method, config, sources, target = job
    cfg = replace(config, seed=seed)
    if method == "ctsdg":
        params, _ = tr.train_ctsdg(cfg, sources)
    elif method == "erm":
        params, _ = tr.train_erm(cfg, sources)
    else:
        raise ConfigError(f"unknown method {method!r}")
    return fold_idx, seed, accuracy(params, target)


def run_lodo(domains: list[DomainDataset], config: tr.TrainConfig, runs: int,
             method: str = "ctsdg", target_domain: str | None = None,
             workers: int = 1) -> list[LodoResult]:
    """All leave-one-out folds, or a single fixed-target fold.

    ``target_domain`` switches to fixed-target mode: train on every other
    domain, test on the named one.
    """
    if runs < 1:
        raise ConfigError("runs must be >= 1")
    by_id = {d.domain_id: d for d in domains}
    if target_domain is not None:
        if target_domain not in by_id:
            raise ConfigError(f"unknown target domain {target_domain!r}")
        folds = [target_domain]
    else:
        folds = sorted(by_id)
    jobs = []
    for fold_idx, held_out in enumerate(folds):
        sources = [by_id[d] for d in sorted(by_id) if d != held_out]
        if method == "ctsdg" and len(sources) < 2:
            raise ConfigError(
                f"fold holding out {held_out!r} leaves {len(sources)} source domain(s); "
                "cross-domain matching needs at least 2")
        for r in range(runs):
            jobs.append((fold_idx, config.seed + r, method, config, sources,
                         by_id[held_out]))
    outcomes: dict[int, dict[int, float]] = {i: {} for i in range(len(folds))}
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for fold_idx, seed, acc in pool.map(_run_one, jobs):
                outcomes[fold_idx][seed] = acc
    else:
        for job in jobs:
            fold_idx, seed, acc = _run_one(job)
            outcomes[fold_idx][seed] = acc
    results = []
    for fold_idx, held_out in enumerate(folds):
        seeds = sorted(outcomes[fold_idx])
        accs = [outcomes[fold_idx][s] for s in seeds]
        sources = [d for d in sorted(by_id) if d != held_out]
        results.append(LodoResult.from_accuracies(sources, held_out, accs, seeds))
    return results


def run_ablations(domains: list[DomainDataset], config: tr.TrainConfig,
                  runs: int, workers: int = 1) -> dict:
    """Full model plus the four ablation variants, one LODO sweep each."""
    columns = {}
    for variant in ABLATION_VARIANTS:
        cfg = _variant_config(config, variant)
        columns[variant] = run_lodo(domains, cfg, runs, "ctsdg", workers=workers)
    folds = [r.target_domain for r in columns["full"]]
    table = {"folds": folds, "variants": {}, "average": {}}
    for variant, results in columns.items():
        table["variants"][variant] = [asdict(r) for r in results]
        table["average"][variant] = float(np.mean([r.mean for r in results]))
    return table


def format_lodo_table(results: list[LodoResult], method: str = "ctsdg") -> str:
    lines = [f"{'Source':<24} {'Target':<8} {method}"]
    for r in results:
        lines.append(f"{','.join(r.source_domains):<24} {r.target_domain:<8} {r.cell()}")
    avg = float(np.mean([r.mean for r in results]))
    lines.append(f"{'Average':<24} {'':<8} {avg:.2f}")
    return "\n".join(lines)


def format_ablation_table(table: dict) -> str:
    variants = list(table["variants"])
    header = f"{'Target':<10}" + "".join(f"{v:>18}" for v in variants)
    lines = [header]
    for i, fold in enumerate(table["folds"]):
        row = f"{fold:<10}"
        for v in variants:
            r = table["variants"][v][i]
            row += f"{r['mean']:>11.2f} ({r['std']:.2f})"
        lines.append(row)
    avg_row = f"{'Average':<10}" + "".join(
        f"{table['average'][v]:>18.2f}" for v in variants)
    lines.append(avg_row)
    return "\n".join(lines)


def export_representations(params: dict[str, np.ndarray], dataset: DomainDataset,
                           out_path: str) -> None:
    """CSV of per-sample causal features and hidden-state representations."""
    from . import tensor as tn
    from . import vrnn
    samples = sorted(dataset.samples, key=lambda s: s.sample_id)
    xs = tr.prep(np.stack([s.x for s in samples]))
    traced = {k: tn.Array2(v) for k, v in params.items()}
    vpass = vrnn.forward_batch(xs, traced)
    h = vpass.representation.value
    c = vrnn.hypothesis(traced, vpass.representation).value
    pred = np.argmax(c, axis=1)
    header = (["sample_id", "domain_id", "y_true", "y_pred", "c0", "c1"]
              + [f"h{i}" for i in range(h.shape[1])])
    try:
        tmp = out_path + ".tmp"
        with open(tmp, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for i, s in enumerate(samples):
                writer.writerow([s.sample_id, s.domain_id, s.y, int(pred[i])]
                                + [repr(float(v)) for v in c[i]]
                                + [repr(float(v)) for v in h[i]])
        os.replace(tmp, out_path)
    except OSError as e:
        raise OutputError(f"cannot write representation export to {out_path}: {e}") from e


def mean_match_distance(params: dict[str, np.ndarray], samples,
                        omega: obj.MatchAssignment,
                        metric: str = "cos_dist") -> float:
    """Mean matched-pair distance in causal-feature space (shrinkage probe)."""
    reps = tr._representations(params, samples)
    ids = [s.sample_id for s in samples]
    c = np.stack([reps[i] for i in ids])
    dists = obj.pair_distances(c, ids, omega, metric)
    return float(np.mean(dists)) if dists.size else 0.0
