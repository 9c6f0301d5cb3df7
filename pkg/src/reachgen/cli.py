"""Command-line driver.

    reachgen <command> --config PATH [--seed N] [--method id|oc] [--out DIR] [--threads N]

Outputs go to ``<out>/<METHOD>/<stage>/``; every stage directory is built in a
temporary sibling and renamed into place only after its ``run_manifest.json``
is written, so a failed command leaves no partial output behind.
"""
from __future__ import annotations

import argparse
import contextlib
import json
import logging
import platform
import shutil
import sys
import tempfile
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .config import AppConfig, ParseError, check, load_config, validate_config
from .dataset import METHODS, generate_dataset, load_dataset, save_dataset, sha256_file
from .errors import ConfigError, ReachgenError
from .evaluate import endpoint_errors, export_plot_data, write_report
from .neuralnet import load_weights, pretrain_autoencoder, save_weights, train_decoder

log = logging.getLogger("reachgen")

COMMANDS = ("gen-data", "pretrain", "train-decoder", "eval", "export-plots", "pipeline", "validate")


# --- atomic stage directories ----------------------------------------------

@contextlib.contextmanager
def staged_dir(target: Path):
    """Yield a temporary directory that replaces ``target`` on success."""
    target.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{target.name}.tmp-", dir=target.parent))
    try:
        yield tmp
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    old = None
    if target.exists():
        old = target.with_name(f".{target.name}.old-{tmp.name.rsplit('-', 1)[-1]}")
        target.rename(old)
    tmp.rename(target)
    if old is not None:
        shutil.rmtree(old, ignore_errors=True)


def _checksums(directory: Path) -> dict:
    return {p.name: sha256_file(p) for p in sorted(directory.iterdir())
            if p.is_file() and p.name != "run_manifest.json"}


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(f".{path.name}.tmp")
    tmp.write_text(text)
    tmp.replace(path)


class Run:
    """Collects what a stage read and wrote, for its ``run_manifest.json``."""

    def __init__(self, command: str, cfg: AppConfig, args):
        self.command, self.cfg, self.args = command, cfg, args
        self.started = time.time()

    def manifest(self, out_dir: Path, inputs: dict) -> dict:
        return {
            "command": self.command,
            "tool_version": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "config_path": str(self.args.config),
            "config_sha256": self.cfg.source_sha256,
            "overrides": {"seed": self.args.seed, "method": self.args.method, "out": self.args.out,
                          "threads": self.args.threads},
            "effective_config": self.cfg.to_dict(),
            "inputs": inputs,
            "outputs": _checksums(out_dir),
            "timing": {"started_utc": datetime.fromtimestamp(self.started, timezone.utc).isoformat(),
                       "seconds": round(time.time() - self.started, 3)},
        }

    def finish(self, out_dir: Path, inputs: dict) -> None:
        _write_json(out_dir / "run_manifest.json", self.manifest(out_dir, inputs))


# --- stages ----------------------------------------------------------------

def _stage(cfg: AppConfig, method: str, name: str) -> Path:
    return Path(cfg.out) / method / name


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise ReachgenError(f"missing {what}: {path} (run the earlier stage first)")
    return path


def _input_sums(*paths: Path) -> dict:
    out = {}
    for p in paths:
        files = sorted(f for f in p.iterdir() if f.is_file()) if p.is_dir() else [p]
        for f in files:
            if f.name != "run_manifest.json":
                out[str(f)] = sha256_file(f)
    return out


def cmd_gen_data(cfg: AppConfig, method: str, args) -> Path:
    run = Run("gen-data", cfg, args)
    target = _stage(cfg, method, "data")
    gen = cfg.gen if cfg.gen.method == method else type(cfg.gen)(**{**cfg.gen.to_dict(), "method": method})
    log.info("generating %d + %d %s reaches (seed %d)", gen.n_train, gen.n_test, method, gen.seed)
    ds = generate_dataset(gen, cfg.arm, cfg.ilqg, threads=args.threads)
    with staged_dir(target) as tmp:
        save_dataset(ds, tmp)
        run.finish(tmp, {})
    log.info("wrote %s (rejections: %s)", target, ds.rejections)
    return target


def cmd_pretrain(cfg: AppConfig, method: str, args) -> Path:
    run = Run("pretrain", cfg, args)
    data = _require(_stage(cfg, method, "data"), "dataset")
    ds = load_dataset(data)
    net, info = pretrain_autoencoder(ds.train.activations, cfg.train)
    target = _stage(cfg, method, "pretrain")
    with staged_dir(target) as tmp:
        save_weights(net, tmp / "autoencoder.rgnn")
        _write_json(tmp / "curves.json", info)
        run.finish(tmp, _input_sums(data))
    return target


def cmd_train_decoder(cfg: AppConfig, method: str, args) -> Path:
    run = Run("train-decoder", cfg, args)
    data = _require(_stage(cfg, method, "data"), "dataset")
    ae_path = _require(_stage(cfg, method, "pretrain") / "autoencoder.rgnn", "pretrained autoencoder")
    ds = load_dataset(data)
    tr = ds.train
    dec, curve = train_decoder(load_weights(ae_path), tr.pairs, tr.activations, cfg.train)
    target = _stage(cfg, method, "decoder")
    with staged_dir(target) as tmp:
        save_weights(dec, tmp / "decoder.rgnn")
        _write_json(tmp / "curve.json", {"loss_curve": curve})
        run.finish(tmp, _input_sums(data, ae_path))
    return target


def cmd_eval(cfg: AppConfig, method: str, args) -> Path:
    run = Run("eval", cfg, args)
    data = _require(_stage(cfg, method, "data"), "dataset")
    dec_path = _require(_stage(cfg, method, "decoder") / "decoder.rgnn", "trained decoder")
    ds = load_dataset(data)
    sums = {"pairs.csv": sha256_file(data / "pairs.csv"),
            "activations.csv": sha256_file(data / "activations.csv"),
            "decoder.rgnn": sha256_file(dec_path)}
    echo = cfg.to_dict()
    echo["gen"]["method"] = method
    report = endpoint_errors(load_weights(dec_path), ds, cfg.arm, cfg.train,
                             config_echo=echo, checksums=sums)
    target = _stage(cfg, method, "eval")
    with staged_dir(target) as tmp:
        write_report(report, tmp / "report.json")
        run.finish(tmp, _input_sums(data, dec_path))
    log.info("%s: rms %.4g, endpoint mean %.4g cm (max %.4g, p95 %.4g), %d excluded", method,
             report.rms, report.endpoint_mean_cm, report.endpoint_max_cm, report.endpoint_p95_cm,
             len(report.excluded))
    return target


def cmd_export_plots(cfg: AppConfig, method: str, args) -> Path:
    run = Run("export-plots", cfg, args)
    data = _require(_stage(cfg, method, "data"), "dataset")
    dec_path = _require(_stage(cfg, method, "decoder") / "decoder.rgnn", "trained decoder")
    ds = load_dataset(data)
    target = _stage(cfg, method, "plots")
    with staged_dir(target) as tmp:
        export_plot_data(load_weights(dec_path), ds, cfg.arm, tmp, cfg.train, ilqg_cfg=cfg.ilqg)
        run.finish(tmp, _input_sums(data, dec_path))
    return target


STAGES = {"gen-data": cmd_gen_data, "pretrain": cmd_pretrain, "train-decoder": cmd_train_decoder,
          "eval": cmd_eval, "export-plots": cmd_export_plots}


def summary_table(reports: dict) -> str:
    lines = [f"{'condition':<10}{'n_test':>8}{'rms':>10}{'ref rms':>10}{'endpoint cm':>14}{'ref cm':>9}",
             "-" * 61]
    for method, r in reports.items():
        ref = r["reference"]
        lines.append(f"{method:<10}{r['n_test']:>8d}{r['rms']:>10.4f}{ref['paper_rms']:>10.4f}"
                     f"{r['endpoint_mean_cm']:>14.3f}{ref['paper_endpoint_cm']:>9.3f}")
    lines.append(f"baseline endpoint error for comparison: {ref['baseline_endpoint_cm']:.3f} cm")
    return "\n".join(lines) + "\n"


def cmd_pipeline(cfg: AppConfig, methods, args) -> Path:
    run = Run("pipeline", cfg, args)
    reports = {}
    for method in methods:
        for name in ("gen-data", "pretrain", "train-decoder", "eval", "export-plots"):
            log.info("[%s] %s", method, name)
            STAGES[name](cfg, method, args)
        reports[method] = json.loads((_stage(cfg, method, "eval") / "report.json").read_text())
    root = Path(cfg.out)
    root.mkdir(parents=True, exist_ok=True)
    table = summary_table(reports)
    summary = {m: {k: r[k] for k in ("n_test", "rms", "endpoint_mean_cm", "endpoint_max_cm",
                                      "endpoint_p95_cm", "reference")} for m, r in reports.items()}
    _atomic_write(root / "summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    _atomic_write(root / "summary.txt", table)
    manifest = run.manifest(root, {str(_stage(cfg, m, "eval") / "report.json"):
                                   sha256_file(_stage(cfg, m, "eval") / "report.json") for m in methods})
    manifest["outputs"] = {n: sha256_file(root / n) for n in ("summary.json", "summary.txt")}
    _atomic_write(root / "run_manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    sys.stdout.write(table)
    return root


# --- entry point -----------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(f"usage error: {message}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="reachgen", description="Generate reach datasets, train the activation decoder, "
                                             "and evaluate it.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, type=Path, help="TOML config file")
    p.add_argument("--seed", type=int, help="override gen.seed and train.seed")
    p.add_argument("--method", type=str.upper, choices=METHODS,
                   help="labeling method (id|oc); for pipeline, restricts to one condition")
    p.add_argument("--out", help="override paths.out")
    p.add_argument("--threads", type=int, default=1, help="worker processes for data generation")
    p.add_argument("--version", action="version", version=f"reachgen {__version__}")
    return p


def run(argv=None) -> int:
    """Execute one command; returns the process exit status (0, 1 or 2)."""
    try:
        args = build_parser().parse_args(argv)
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        if args.command == "validate":
            diags = validate_config(args.config)
            for d in diags:
                print(d)
            if not diags:
                print(f"{args.config}: ok")
            return 2 if any(d.level == "error" for d in diags) else 0
        cfg, warnings = load_config(args.config)
        cfg = cfg.with_overrides(args.seed, args.method, args.out)
        problems = [d for d in check(cfg) if d.level == "error"]
        if problems:
            raise ConfigError("invalid overrides:\n" + "\n".join(f"  {d}" for d in problems))
        for w in warnings:
            log.warning("%s", w.message)
        # single-threaded BLAS keeps floating-point reductions reproducible
        with threadpool_limits(limits=1):
            if args.command == "pipeline":
                cmd_pipeline(cfg, [args.method] if args.method else list(METHODS), args)
            else:
                STAGES[args.command](cfg, cfg.gen.method, args)
        return 0
    except (ConfigError, ParseError) as exc:
        print(f"reachgen: {exc}", file=sys.stderr)
        return 2
    except ReachgenError as exc:
        print(f"reachgen: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    logging.basicConfig(level=logging.INFO, format="reachgen: %(message)s")
    sys.exit(run())


if __name__ == "__main__":
    main()
