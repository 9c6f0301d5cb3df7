"""TOML application config: loading, overrides and validation."""
from __future__ import annotations

import dataclasses
import hashlib
import re
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .arm import ArmParams
from .dataset import GenConfig
from .errors import ConfigError
from .ilqg import ILQGConfig
from .neuralnet import TrainConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

PAPER_REGION = (0.50, 0.20)
SECTIONS = {"arm": ArmParams, "gen": GenConfig, "ilqg": ILQGConfig, "train": TrainConfig}


class ParseError(ConfigError):
    def __init__(self, message, path=None, line=None, column=None):
        loc = f"{path}:{line}:{column}: " if line is not None else (f"{path}: " if path else "")
        super().__init__(loc + message)
        self.path, self.line, self.column = path, line, column


@dataclass
class Diagnostic:
    level: str      # "error" or "warning"
    message: str

    def __str__(self):
        return f"{self.level}: {self.message}"


@dataclass
class AppConfig:
    arm: ArmParams = field(default_factory=ArmParams)
    gen: GenConfig = field(default_factory=GenConfig)
    ilqg: ILQGConfig = field(default_factory=ILQGConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    out: str = "runs"
    paper_region_check: bool = True
    source_sha256: str = ""

    def to_dict(self) -> dict:
        return {"arm": self.arm.to_dict(), "gen": self.gen.to_dict(), "ilqg": self.ilqg.to_dict(),
                "train": self.train.to_dict()}

    def with_overrides(self, seed=None, method=None, out=None) -> "AppConfig":
        gen, train = self.gen, self.train
        if seed is not None:
            gen = dataclasses.replace(gen, seed=int(seed))
            train = dataclasses.replace(train, seed=int(seed))
        if method is not None:
            gen = dataclasses.replace(gen, method=method)
        return dataclasses.replace(self, gen=gen, train=train, out=out if out is not None else self.out)


def default_config_text() -> str:
    return resources.files("reachgen").joinpath("default_config.toml").read_text()


def _parse(text: str, path) -> dict:
    try:
        return tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = re.search(r"line (\d+), column (\d+)", str(exc))
        line, col = (int(m.group(1)), int(m.group(2))) if m else (None, None)
        msg = re.sub(r"\s*\(at line \d+, column \d+\)", "", str(exc))
        raise ParseError(msg, path, line, col) from None


def _read(path) -> tuple[dict, str]:
    p = Path(path)
    try:
        data = p.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc.strerror or exc}") from None
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError:
        raise ParseError("config is not valid UTF-8", p) from None
    return _parse(text, p), hashlib.sha256(data).hexdigest()


def _build(raw: dict, diags: list, sha: str = "") -> AppConfig | None:
    kwargs = {}
    for key in raw:
        if key not in SECTIONS and key not in ("paths", "checks"):
            diags.append(Diagnostic("error", f"unknown section [{key}]"))
    for name, cls in SECTIONS.items():
        section = raw.get(name, {})
        if not isinstance(section, dict):
            diags.append(Diagnostic("error", f"[{name}] must be a table"))
            continue
        known = {f.name for f in dataclasses.fields(cls)}
        bad = sorted(set(section) - known)
        for k in bad:
            diags.append(Diagnostic("error", f"unknown key {name}.{k}"))
        values = {k: v for k, v in section.items() if k in known}
        if "alphas" in values and isinstance(values["alphas"], list):
            values["alphas"] = tuple(values["alphas"])
        for k in ("region", "margin", "input_lo", "input_hi"):
            if k in values and isinstance(values[k], list):
                values[k] = tuple(values[k])
        try:
            kwargs[name] = cls(**values)
        except (TypeError, ValueError) as exc:
            diags.append(Diagnostic("error", f"[{name}]: {exc}"))
    paths = raw.get("paths", {})
    checks = raw.get("checks", {})
    for k in set(paths) - {"out"}:
        diags.append(Diagnostic("error", f"unknown key paths.{k}"))
    for k in set(checks) - {"paper_region"}:
        diags.append(Diagnostic("error", f"unknown key checks.{k}"))
    out = paths.get("out", "runs")
    if not isinstance(out, str) or not out:
        diags.append(Diagnostic("error", "paths.out must be a non-empty string"))
    if len(kwargs) < len(SECTIONS):
        return None
    return AppConfig(**kwargs, out=str(out), paper_region_check=bool(checks.get("paper_region", True)),
                     source_sha256=sha)


def check(cfg: AppConfig) -> list[Diagnostic]:
    """Invariant violations of an assembled config (errors) plus paper-matching warnings."""
    diags = []
    for part in (cfg.arm, cfg.gen, cfg.ilqg, cfg.train):
        try:
            problems = part.problems()
        except (TypeError, ValueError) as exc:
            problems = [f"{type(part).__name__}: {exc}"]
        diags.extend(Diagnostic("error", p) for p in problems)
    if cfg.paper_region_check and len(cfg.gen.region) == 4:
        xmin, xmax, ymin, ymax = cfg.gen.region
        w, h = xmax - xmin, ymax - ymin
        if abs(w - PAPER_REGION[0]) > 1e-9 or abs(h - PAPER_REGION[1]) > 1e-9:
            diags.append(Diagnostic(
                "warning", f"gen.region is {w:.3g} m x {h:.3g} m; the reference experiment uses "
                           f"{PAPER_REGION[0]:.2f} m x {PAPER_REGION[1]:.2f} m "
                           "(set checks.paper_region = false to silence)"))
    return diags


def validate_config(path) -> list[Diagnostic]:
    """All diagnostics for the config file at ``path``; empty means valid.

    Raises :class:`ParseError` (with line and column) if the file is not TOML.
    """
    raw, sha = _read(path)
    diags: list[Diagnostic] = []
    cfg = _build(raw, diags, sha)
    if cfg is not None:
        diags.extend(check(cfg))
    return diags


def load_config(path) -> tuple[AppConfig, list[Diagnostic]]:
    """Parse and validate; raises :class:`ConfigError` listing every error found."""
    raw, sha = _read(path)
    diags: list[Diagnostic] = []
    cfg = _build(raw, diags, sha)
    if cfg is not None:
        diags.extend(check(cfg))
    errors = [d for d in diags if d.level == "error"]
    if errors:
        raise ConfigError(f"invalid config {path}:\n" + "\n".join(f"  {d}" for d in errors))
    return cfg, [d for d in diags if d.level == "warning"]
