"""Reach sampling, ground-truth activation labeling, and dataset persistence."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import arm as arm_model
from .arm import ArmParams
from .errors import (ChecksumMismatch, FormatError, InfeasibleStep, SamplingExhausted,
                     SingularConfiguration, Unreachable)
from .ilqg import ILQGConfig, ilqg_solve
from .minjerk import MinJerkSpec, sample_minjerk_arrays
from .muscle_opt import torques_to_activations

log = logging.getLogger(__name__)

N_STEPS = 50
N_MUSCLES = 6
N_ACT = N_STEPS * N_MUSCLES
METHODS = ("ID", "OC")
FORMAT_VERSION = "1"
MAX_REJECTIONS = 1000

PAIRS_HEADER = ["id", "x0", "y0", "xf", "yf", "split", "method"]
ACT_HEADER = ["id"] + [f"a_t{t:02d}_m{m}" for t in range(N_STEPS) for m in range(N_MUSCLES)]


@dataclass(frozen=True)
class ReachPair:
    start: np.ndarray
    end: np.ndarray

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.start, self.end])

    @classmethod
    def from_vector(cls, v) -> "ReachPair":
        v = np.asarray(v, dtype=float)
        return cls(v[:2].copy(), v[2:4].copy())


@dataclass
class GenConfig:
    region: tuple = (-0.25, 0.25, 0.25, 0.45)   # xmin, xmax, ymin, ymax (m)
    max_reach_dist: float = 0.10
    n_train: int = 4500
    n_test: int = 500
    seed: int = 0
    method: str = "ID"
    margin: tuple = (0.15, 0.58)                 # admissible |p| range (m)

    def __post_init__(self):
        self.region = tuple(float(v) for v in self.region)
        self.margin = tuple(float(v) for v in self.margin)
        self.method = str(self.method).upper()

    def problems(self) -> list[str]:
        out = []
        xmin, xmax, ymin, ymax = self.region
        if not (xmax > xmin and ymax > ymin):
            out.append("gen.region must have xmax > xmin and ymax > ymin")
        if not self.max_reach_dist > 0:
            out.append("gen.max_reach_dist must be > 0")
        if self.n_train < 0 or self.n_test < 0 or self.n_train + self.n_test < 1:
            out.append("gen.n_train and gen.n_test must be non-negative with a positive total")
        if self.method not in METHODS:
            out.append(f"gen.method must be one of {', '.join(METHODS)}")
        if not 0 <= self.margin[0] < self.margin[1]:
            out.append("gen.margin must satisfy 0 <= lower < upper")
        if not 0 <= self.seed < 2 ** 64:
            out.append("gen.seed must be a 64-bit unsigned integer")
        return out

    def to_dict(self):
        d = asdict(self)
        d["region"] = list(self.region)
        d["margin"] = list(self.margin)
        return d


@dataclass
class Dataset:
    method: str
    ids: np.ndarray
    pairs: np.ndarray          # (n, 4): x0, y0, xf, yf
    activations: np.ndarray    # (n, 300), time-major
    splits: np.ndarray         # "train" / "test"
    config: GenConfig = field(default_factory=GenConfig)
    arm: ArmParams = field(default_factory=ArmParams)
    rejections: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.ids)

    def subset(self, split: str) -> "Dataset":
        m = self.splits == split
        return Dataset(self.method, self.ids[m], self.pairs[m], self.activations[m],
                       self.splits[m], self.config, self.arm, dict(self.rejections))

    @property
    def train(self) -> "Dataset":
        return self.subset("train")

    @property
    def test(self) -> "Dataset":
        return self.subset("test")

    def pair(self, i: int) -> ReachPair:
        return ReachPair.from_vector(self.pairs[i])

    def trajectory(self, i: int) -> np.ndarray:
        return self.activations[i].reshape(N_STEPS, N_MUSCLES)


def sample_stream(seed: int, sample_id: int) -> np.random.Generator:
    """Independent RNG stream for one sample; serial and parallel runs agree."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(sample_id),)))


def _admissible(p, margin) -> bool:
    r = math.hypot(p[0], p[1])
    return margin[0] <= r <= margin[1]


def sample_reach_pair(rng: np.random.Generator, cfg: GenConfig, arm: ArmParams | None = None,
                      counter: Counter | None = None) -> ReachPair:
    """Uniform start in the region, uniform direction, distance in (0, max_reach_dist].

    Draws that leave the reachability margin or fail inverse kinematics are
    discarded and redrawn; discards are tallied in ``counter["reach"]``.
    """
    arm = arm or ArmParams()
    xmin, xmax, ymin, ymax = cfg.region
    for _ in range(MAX_REJECTIONS):
        start = np.array([rng.uniform(xmin, xmax), rng.uniform(ymin, ymax)])
        theta = rng.uniform(0.0, 2.0 * np.pi)
        dist = cfg.max_reach_dist * (1.0 - rng.uniform())
        end = start + dist * np.array([np.cos(theta), np.sin(theta)])
        if _admissible(start, cfg.margin) and _admissible(end, cfg.margin):
            try:
                arm_model.inverse_kinematics(arm, start, 1)
                arm_model.inverse_kinematics(arm, end, 1)
                return ReachPair(start, end)
            except Unreachable:
                pass
        if counter is not None:
            counter["reach"] += 1
    raise SamplingExhausted(f"{MAX_REJECTIONS} consecutive rejections; check gen.region")


def id_torques(arm: ArmParams, pair: ReachPair, n_steps: int = N_STEPS, duration: float = 1.0):
    """Joint torques along the sampled minimum-jerk path, shape ``(n_steps, 2)``."""
    p, v, a = sample_minjerk_arrays(MinJerkSpec(tuple(pair.start), tuple(pair.end), duration, n_steps))
    q = arm_model.inverse_kinematics(arm, p, 1)
    qd, qdd = arm_model.hand_to_joint_derivatives(arm, q, v, a)
    return arm_model.inverse_dynamics(arm, q, qd, qdd)


def oc_torques(arm: ArmParams, pair: ReachPair, ilqg_cfg: ILQGConfig | None = None):
    return ilqg_solve(arm, pair, ilqg_cfg).u


def label_pair(arm: ArmParams, pair: ReachPair, method: str, ilqg_cfg: ILQGConfig | None = None):
    """Ground-truth ``(50, 6)`` activations for one reach."""
    if method == "ID":
        tau = id_torques(arm, pair)
    elif method == "OC":
        tau = oc_torques(arm, pair, ilqg_cfg)
    else:
        raise ValueError(f"unknown method {method!r}")
    return torques_to_activations(arm.R, tau)


def _generate_one(args):
    sample_id, cfg, arm, ilqg_cfg = args
    rng = sample_stream(cfg.seed, sample_id)
    counter = Counter()
    for _ in range(MAX_REJECTIONS):
        pair = sample_reach_pair(rng, cfg, arm, counter)
        try:
            act = label_pair(arm, pair, cfg.method, ilqg_cfg)
        except (InfeasibleStep, SingularConfiguration) as exc:
            counter["label"] += 1
            log.debug("sample %d: discarded pair (%s)", sample_id, exc)
            continue
        return pair.as_vector(), act.reshape(-1), counter
    raise SamplingExhausted(f"sample {sample_id}: {MAX_REJECTIONS} consecutive labeling failures")


def _single_thread_blas():
    threadpool_limits(limits=1)


def generate_dataset(cfg: GenConfig, arm: ArmParams | None = None, ilqg_cfg: ILQGConfig | None = None,
                     threads: int = 1) -> Dataset:
    """Sample ``n_train + n_test`` reaches and label them with ``cfg.method``.

    Sample ``i`` uses its own RNG stream derived from ``(cfg.seed, i)``, so the
    result does not depend on ``threads``.  Ids ``0..n_train-1`` form the
    training split.
    """
    arm = arm or ArmParams()
    n = cfg.n_train + cfg.n_test
    jobs = [(i, cfg, arm, ilqg_cfg) for i in range(n)]
    if threads > 1 and n > 1:
        with ProcessPoolExecutor(max_workers=threads, initializer=_single_thread_blas) as pool:
            results = list(pool.map(_generate_one, jobs, chunksize=max(1, n // (8 * threads))))
    else:
        results = [_generate_one(j) for j in jobs]
    total = Counter()
    for _, _, c in results:
        total.update(c)
    return Dataset(
        method=cfg.method,
        ids=np.arange(n),
        pairs=np.array([r[0] for r in results]).reshape(n, 4),
        activations=np.array([r[1] for r in results]).reshape(n, N_ACT),
        splits=np.array(["train"] * cfg.n_train + ["test"] * cfg.n_test),
        config=cfg,
        arm=arm,
        rejections={"reach": int(total["reach"]), "label": int(total["label"])},
    )


# --- persistence -----------------------------------------------------------

def fmt(x: float) -> str:
    return f"{x:.9g}"


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_csv(path: Path, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    path.write_text(buf.getvalue())


def save_dataset(ds: Dataset, directory, extra: dict | None = None) -> dict:
    """Write ``pairs.csv``, ``activations.csv`` and ``manifest.json``; return the manifest."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    _write_csv(d / "pairs.csv", PAIRS_HEADER,
               ([str(i)] + [fmt(v) for v in p] + [s, ds.method]
                for i, p, s in zip(ds.ids, ds.pairs, ds.splits)))
    _write_csv(d / "activations.csv", ACT_HEADER,
               ([str(i)] + [fmt(v) for v in a] for i, a in zip(ds.ids, ds.activations)))
    manifest = {
        "format_version": FORMAT_VERSION,
        "method": ds.method,
        "seed": int(ds.config.seed),
        "gen": ds.config.to_dict(),
        "arm": ds.arm.to_dict(),
        "rejections": dict(ds.rejections),
        "rows": {"train": int(np.sum(ds.splits == "train")), "test": int(np.sum(ds.splits == "test"))},
        "checksums": {name: sha256_file(d / name) for name in ("pairs.csv", "activations.csv")},
    }
    if extra:
        manifest.update(extra)
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def _read_rows(path: Path, header):
    try:
        text = path.read_text()
    except OSError as exc:
        raise FormatError(f"cannot read file ({exc})", path) from exc
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0] != header:
        raise FormatError("unexpected header", path, 1)
    return rows[1:]


def _parse_float(cell, path, line, col):
    try:
        v = float(cell)
    except ValueError:
        raise FormatError(f"not a number: {cell!r}", path, line, col) from None
    if not math.isfinite(v):
        raise FormatError(f"non-finite value {cell!r}", path, line, col)
    return v


def load_dataset(directory, verify: bool = True) -> Dataset:
    d = Path(directory)
    try:
        manifest = json.loads((d / "manifest.json").read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"unreadable manifest ({exc})", d / "manifest.json") from exc
    if str(manifest.get("format_version")) != FORMAT_VERSION:
        raise FormatError(f"unsupported format_version {manifest.get('format_version')!r}",
                          d / "manifest.json")

    pairs_path = d / "pairs.csv"
    ids, pairs, splits, methods = [], [], [], []
    for line, row in enumerate(_read_rows(pairs_path, PAIRS_HEADER), start=2):
        if len(row) != len(PAIRS_HEADER):
            raise FormatError(f"expected {len(PAIRS_HEADER)} columns, got {len(row)}", pairs_path, line)
        try:
            ids.append(int(row[0]))
        except ValueError:
            raise FormatError(f"bad id {row[0]!r}", pairs_path, line, 1) from None
        pairs.append([_parse_float(c, pairs_path, line, j + 2) for j, c in enumerate(row[1:5])])
        if row[5] not in ("train", "test"):
            raise FormatError(f"bad split {row[5]!r}", pairs_path, line, 6)
        splits.append(row[5])
        methods.append(row[6])

    act_path = d / "activations.csv"
    acts = []
    for line, row in enumerate(_read_rows(act_path, ACT_HEADER), start=2):
        if len(row) != len(ACT_HEADER):
            raise FormatError(f"row for id {row[0] if row else '?'} has {len(row)} columns, "
                              f"expected {len(ACT_HEADER)}", act_path, line)
        k = line - 2
        if k >= len(ids) or row[0] != str(ids[k]):
            raise FormatError(f"id {row[0]!r} does not match pairs.csv", act_path, line, 1)
        vals = [_parse_float(c, act_path, line, j + 2) for j, c in enumerate(row[1:])]
        for j, v in enumerate(vals):
            if not 0.0 <= v <= 1.0:
                raise FormatError(f"activation {v} outside [0, 1]", act_path, line, j + 2)
        acts.append(vals)
    if len(acts) != len(ids):
        raise FormatError(f"{len(acts)} activation rows for {len(ids)} pairs", act_path, len(acts) + 2)
    if len(set(ids)) != len(ids):
        raise FormatError("duplicate sample ids", pairs_path)

    if verify:
        for name, expected in manifest.get("checksums", {}).items():
            got = sha256_file(d / name)
            if got != expected:
                raise ChecksumMismatch(f"{name}: checksum {got} does not match manifest {expected}")

    method = manifest.get("method", methods[0] if methods else "ID")
    return Dataset(
        method=method,
        ids=np.array(ids, dtype=int),
        pairs=np.array(pairs, dtype=float).reshape(-1, 4),
        activations=np.array(acts, dtype=float).reshape(-1, N_ACT),
        splits=np.array(splits),
        config=GenConfig(**manifest["gen"]),
        arm=ArmParams.from_dict(manifest["arm"]),
        rejections=manifest.get("rejections", {}),
    )
