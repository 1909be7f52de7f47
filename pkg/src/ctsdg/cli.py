"""Command-line entry point.

Subcommands: synth, train, eval, lodo, ablate, export-repr. Logs go to
stderr; machine output goes to files or stdout only. Every run that produces
files also writes a manifest capturing the resolved config, seeds, and input
digests so the run can be replayed byte-for-byte.

Exit codes: 2 usage, 3 data/config, 4 numeric, 5 I/O.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import fields

import numpy as np

from . import evaluate as ev
from . import frenet, plots, synth
from . import training as tr
from . import vrnn
from .errors import ConfigError, CtsdgError, DataError, OutputError

log = logging.getLogger("ctsdg")

ARTIFACT_VERSION = "0.1.0"


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def atomic_write_text(path: str, text: str) -> None:
    tmp = f"{path}.tmp.{os.getpid()}"
    try:
        with open(tmp, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except OSError as e:
        raise OutputError(f"cannot write {path}: {e}") from e


def write_manifest(out_path: str, config: dict, seeds: list[int],
                   inputs: list[str], outputs: list[str], started: float) -> None:
    manifest = {
        "artifact_version": ARTIFACT_VERSION,
        "config": config,
        "seeds": seeds,
        "inputs": {p: _sha256(p) for p in inputs if os.path.exists(p)},
        "outputs": {p: _sha256(p) for p in outputs if os.path.exists(p)},
        "started": started,
        "finished": time.time(),
    }
    atomic_write_text(out_path, json.dumps(manifest, indent=1))


def load_config(path: str | None) -> dict:
    """Config file values (JSON, or TOML by extension); {} when absent."""
    if path is None:
        return {}
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    with open(path, "rb") as fh:
        raw = fh.read()
    if not raw.strip():
        return {}
    if path.endswith(".toml"):
        try:
            import tomllib
        except ModuleNotFoundError:  # Python < 3.11
            import tomli as tomllib
        data = tomllib.loads(raw.decode())
    else:
        try:
            data = json.loads(raw)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid config ({e})") from e
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: config must be a table/object")
    return data


_FLAG_FIELDS = [f.name for f in fields(tr.TrainConfig)]


def add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON or TOML config file")
    group = parser.add_argument_group("config overrides")
    for f in fields(tr.TrainConfig):
        flag = "--" + f.name.replace("_", "-")
        if f.type == "bool":
            group.add_argument(flag, action="store_const", const=True, default=None)
        elif f.type == "int":
            group.add_argument(flag, type=int, default=None)
        elif f.type == "float":
            group.add_argument(flag, type=float, default=None)
        else:
            group.add_argument(flag, default=None)


def resolve_config(args: argparse.Namespace) -> tr.TrainConfig:
    """Flags override the config file; the file overrides the defaults."""
    data = load_config(getattr(args, "config", None))
    for name in _FLAG_FIELDS:
        value = getattr(args, name, None)
        if value is not None:
            data[name] = value
    return tr.TrainConfig.from_dict(data)


def _default_workers() -> int:
    env = os.environ.get("CTSDG_WORKERS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def _load_domains(paths: list[str]) -> list[frenet.DomainDataset]:
    samples = []
    for p in paths:
        samples.extend(frenet.load_jsonl(p))
    domains = frenet.group_by_domain(samples)
    if not domains:
        raise DataError("no samples found in the given dataset files")
    return domains


def cmd_synth(args) -> int:
    started = time.time()
    rng = np.random.default_rng(args.seed)
    if os.path.exists(args.spec):
        with open(args.spec) as fh:
            obj = json.load(fh)
        spec = synth.DomainSpec(**obj)
    elif args.spec in synth.SPEC_LIBRARY:
        spec = synth.SPEC_LIBRARY[args.spec]
    else:
        raise ConfigError(f"unknown domain spec {args.spec!r}; builtin specs: "
                          f"{', '.join(sorted(synth.SPEC_LIBRARY))}")
    if args.jitter:
        spec = synth.sample_domain({spec.domain_id: spec}, rng, jitter=True)
    dataset, records = synth.gen_domain_dataset(
        spec, args.n_per_class, rng, aggressiveness_offset=args.driver_offset)
    frenet.save_jsonl(dataset.samples, args.out)
    outputs = [args.out]
    if args.causal_sidecar:
        synth.save_sidecar(records, args.causal_sidecar)
        outputs.append(args.causal_sidecar)
    write_manifest(args.out + ".manifest.json",
                   {"spec": spec.__dict__, "n_per_class": args.n_per_class,
                    "jitter": args.jitter, "driver_offset": args.driver_offset},
                   [args.seed], [], outputs, started)
    log.info("wrote %d samples for domain %s to %s", len(dataset), spec.domain_id,
             args.out)
    return 0


def cmd_train(args) -> int:
    started = time.time()
    config = resolve_config(args)
    domains = _load_domains(args.data)
    if args.holdout_domain:
        sources = [d for d in domains if d.domain_id != args.holdout_domain]
        if len(sources) == len(domains):
            raise ConfigError(f"holdout domain {args.holdout_domain!r} not in data")
    else:
        sources = domains
    if args.method == "ctsdg":
        params, report = tr.train_ctsdg(config, sources)
    else:
        params, report = tr.train_erm(config, sources)
    outputs = []
    if args.out_ckpt:
        vrnn.save_params(params, args.out_ckpt)
        outputs.append(os.path.join(args.out_ckpt, "manifest.json"))
    if args.report:
        atomic_write_text(args.report, json.dumps(report.to_dict(), indent=1))
        outputs.append(args.report)
        if args.figures:
            fig = os.path.splitext(args.report)[0] + "_curves.png"
            plots.plot_training_curves(report.to_dict(), fig)
            outputs.append(fig)
    write_manifest((args.report or args.out_ckpt or "train") + ".manifest.json",
                   config.to_dict(), [config.seed], args.data, outputs, started)
    log.info("training stopped: %s (best epoch %d)", report.stop_reason,
             report.best_epoch)
    return 0


def cmd_eval(args) -> int:
    params = vrnn.load_params(args.ckpt)
    domains = _load_domains(args.data)
    rows = []
    for d in domains:
        rows.append({"domain": d.domain_id, "n": len(d),
                     "accuracy": ev.accuracy(params, d)})
    print(json.dumps(rows, indent=1))
    return 0


def cmd_lodo(args) -> int:
    started = time.time()
    config = resolve_config(args)
    domains = _load_domains(args.domains)
    results = ev.run_lodo(domains, config, args.runs, args.method,
                          target_domain=args.target, workers=args.workers)
    payload = {"method": args.method, "runs": args.runs, "seed": config.seed,
               "results": [r.__dict__ for r in results]}
    outputs = []
    if args.out_json:
        atomic_write_text(args.out_json, json.dumps(payload, indent=1))
        outputs.append(args.out_json)
    if args.out_table:
        atomic_write_text(args.out_table, ev.format_lodo_table(results, args.method))
        outputs.append(args.out_table)
    if not outputs:
        print(ev.format_lodo_table(results, args.method))
    if args.figures and args.out_json:
        fig = os.path.splitext(args.out_json)[0] + "_accuracy.png"
        plots.plot_lodo_bars([r.__dict__ for r in results], fig, title=args.method)
        outputs.append(fig)
    if args.out_json:
        write_manifest(args.out_json + ".manifest.json", config.to_dict(),
                       [config.seed + i for i in range(args.runs)], args.domains,
                       outputs, started)
    return 0


def cmd_ablate(args) -> int:
    started = time.time()
    config = resolve_config(args)
    domains = _load_domains(args.domains)
    table = ev.run_ablations(domains, config, args.runs, workers=args.workers)
    outputs = []
    if args.out_json:
        atomic_write_text(args.out_json, json.dumps(table, indent=1))
        outputs.append(args.out_json)
    if args.out_table:
        atomic_write_text(args.out_table, ev.format_ablation_table(table))
        outputs.append(args.out_table)
    if not outputs:
        print(ev.format_ablation_table(table))
    if args.figures and args.out_json:
        fig = os.path.splitext(args.out_json)[0] + "_ablation.png"
        plots.plot_ablation_bars(table, fig)
        outputs.append(fig)
    if args.out_json:
        write_manifest(args.out_json + ".manifest.json", config.to_dict(),
                       [config.seed + i for i in range(args.runs)], args.domains,
                       outputs, started)
    return 0


def cmd_export_repr(args) -> int:
    params = vrnn.load_params(args.ckpt)
    domains = _load_domains(args.data)
    merged = frenet.DomainDataset("all")
    for d in domains:
        merged.samples.extend(d.samples)
    ev.export_representations(params, merged, args.out)
    log.info("wrote %d representation rows to %s", len(merged), args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ctsdg",
        description="Causal time-series domain generalization for two-vehicle "
                    "intention prediction")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic domain dataset")
    p.add_argument("--spec", required=True, help="builtin spec name or JSON file")
    p.add_argument("--n-per-class", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jitter", action="store_true")
    p.add_argument("--driver-offset", type=float, default=0.0,
                   help="per-domain aggressiveness mean offset")
    p.add_argument("--out", required=True)
    p.add_argument("--causal-sidecar")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train one model on source domains")
    p.add_argument("--data", nargs="+", required=True)
    p.add_argument("--holdout-domain")
    p.add_argument("--method", choices=["ctsdg", "erm"], default="ctsdg")
    p.add_argument("--out-ckpt")
    p.add_argument("--report")
    p.add_argument("--figures", action="store_true")
    add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="accuracy of a checkpoint on datasets")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", nargs="+", required=True)
    p.set_defaults(func=cmd_eval)

    for name, fn in (("lodo", cmd_lodo), ("ablate", cmd_ablate)):
        p = sub.add_parser(name)
        p.add_argument("--domains", nargs="+", required=True)
        p.add_argument("--runs", type=int, default=3)
        p.add_argument("--workers", type=int, default=_default_workers())
        p.add_argument("--out-json")
        p.add_argument("--out-table")
        p.add_argument("--figures", action="store_true")
        if name == "lodo":
            p.add_argument("--method", choices=["ctsdg", "erm"], default="ctsdg")
            p.add_argument("--target", help="fixed-target mode: test domain id")
        add_config_flags(p)
        p.set_defaults(func=fn)

    p = sub.add_parser("export-repr", help="export per-sample representations")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_repr)
    return parser


def dispatch(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(stream=sys.stderr,
                        level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CtsdgError as e:
        log.error("%s", e)
        return e.exit_code
    except OSError as e:
        log.error("%s", e)
        return 5


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
