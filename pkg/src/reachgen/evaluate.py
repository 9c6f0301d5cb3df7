"""Prediction quality: activation RMS error and simulated endpoint error."""
from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import arm as arm_model
from .arm import ArmParams, JointState
from .dataset import N_MUSCLES, N_STEPS, Dataset, ReachPair, fmt, label_pair
from .errors import DimensionMismatch, ReachgenError
from .neuralnet import Network, TrainConfig, predict

REPORT_VERSION = "1"
# reference values reported for the original experiment
PAPER_RMS = {"ID": 0.0048, "OC": 0.0067}
PAPER_ENDPOINT_CM = {"ID": 0.125, "OC": 0.127}
BASELINE_ENDPOINT_CM = 0.347


@dataclass
class EvalReport:
    method: str
    n_test: int
    rms: float
    endpoint_mean_cm: float
    endpoint_max_cm: float
    endpoint_p95_cm: float
    per_sample: list = field(default_factory=list)   # (id, rms, endpoint_cm)
    excluded: list = field(default_factory=list)     # (id, reason)
    config_echo: dict = field(default_factory=dict)
    dataset_checksums: dict = field(default_factory=dict)
    reference: dict = field(default_factory=dict)

    def to_json(self) -> str:
        d = asdict(self)
        d["format_version"] = REPORT_VERSION
        d["per_sample"] = [{"id": int(i), "rms": float(r), "endpoint_cm": float(e)}
                           for i, r, e in self.per_sample]
        d["excluded"] = [{"id": int(i), "reason": str(r)} for i, r in self.excluded]
        return json.dumps(d, indent=2, sort_keys=True) + "\n"


def rms_error(pred, truth) -> float:
    """Root-mean-square difference pooled over every entry."""
    pred = np.asarray(pred, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if pred.shape != truth.shape:
        raise DimensionMismatch(f"prediction {pred.shape} vs truth {truth.shape}")
    return float(np.sqrt(np.mean((pred - truth) ** 2)))


def simulate_endpoints(arm: ArmParams, pairs, trajs, dt_int: float = 0.001):
    """Forward-simulate each ``(50, 6)`` trajectory from rest at its start point.

    Returns ``(states, final_hand)`` batched over samples.
    """
    pairs = np.asarray(pairs, dtype=float).reshape(-1, 4)
    q0 = arm_model.inverse_kinematics(arm, pairs[:, :2], 1)
    return arm_model.simulate_activations(arm, JointState.at_rest(q0),
                                          np.asarray(trajs).reshape(-1, N_STEPS, N_MUSCLES),
                                          dt_int=dt_int)


def _summarize(method, ids, pred, truth, final_hand, targets, config_echo, checksums, excluded):
    per_rms = np.sqrt(np.mean((pred - truth) ** 2, axis=1))
    err_cm = 100.0 * np.linalg.norm(final_hand - targets, axis=1)
    return EvalReport(
        method=method,
        n_test=int(len(ids)),
        rms=rms_error(pred, truth),
        endpoint_mean_cm=float(np.mean(err_cm)),
        endpoint_max_cm=float(np.max(err_cm)),
        endpoint_p95_cm=float(np.percentile(err_cm, 95)),
        per_sample=[(int(i), float(r), float(e)) for i, r, e in zip(ids, per_rms, err_cm)],
        excluded=excluded,
        config_echo=config_echo,
        dataset_checksums=checksums,
        reference={"paper_rms": PAPER_RMS.get(method), "paper_endpoint_cm": PAPER_ENDPOINT_CM.get(method),
                   "baseline_endpoint_cm": BASELINE_ENDPOINT_CM},
    )


def evaluate_trajectories(ds: Dataset, trajs, arm: ArmParams | None = None, config_echo=None,
                          checksums=None) -> EvalReport:
    """Score arbitrary ``(n, 300)`` trajectories against the test split of ``ds``."""
    arm = arm or ds.arm
    test = ds.test
    pred = np.asarray(trajs, dtype=float).reshape(len(test), -1)
    excluded = []
    bad = np.any((pred < -1e-9) | (pred > 1 + 1e-9) | ~np.isfinite(pred), axis=1)
    for i in np.flatnonzero(bad):
        excluded.append((int(test.ids[i]), "DomainError: activations must lie in [0, 1]"))
    keep = [int(i) for i in np.flatnonzero(~bad)]
    finals = []
    if keep:
        try:
            _, fh = simulate_endpoints(arm, test.pairs[keep], pred[keep])
            finals = list(fh)
        except ReachgenError:
            # locate the offending samples one by one
            ok = []
            for i in keep:
                try:
                    _, fh = simulate_endpoints(arm, test.pairs[i], pred[i])
                except ReachgenError as exc:
                    excluded.append((int(test.ids[i]), f"{type(exc).__name__}: {exc}"))
                    continue
                ok.append(i)
                finals.append(fh[0])
            keep = ok
            excluded.sort()
    if not keep:
        raise ReachgenError("every test sample failed to simulate")
    keep = np.array(keep)
    return _summarize(ds.method, test.ids[keep], pred[keep], test.activations[keep],
                      np.array(finals), test.pairs[keep, 2:], config_echo or {}, checksums or {},
                      excluded)


def endpoint_errors(decoder: Network, ds: Dataset, arm: ArmParams | None = None,
                    train_cfg: TrainConfig | None = None, config_echo=None, checksums=None) -> EvalReport:
    """Predict, simulate and score every test sample of ``ds``."""
    test = ds.test
    if len(test) == 0:
        raise ReachgenError("dataset has no test split")
    pred = predict(decoder, test.pairs, train_cfg).reshape(len(test), -1)
    return evaluate_trajectories(ds, pred, arm, config_echo, checksums)


def write_report(report: EvalReport, path) -> None:
    Path(path).write_text(report.to_json())


def center_out_pairs(region, distance: float = 0.10, n: int = 8):
    xmin, xmax, ymin, ymax = region
    c = np.array([(xmin + xmax) / 2, (ymin + ymax) / 2])
    angles = np.arange(n) * (2 * np.pi / n)
    return [ReachPair(c.copy(), c + distance * np.array([np.cos(a), np.sin(a)])) for a in angles]


def export_plot_data(decoder: Network, ds: Dataset, arm: ArmParams, out_dir, train_cfg: TrainConfig | None = None,
                     sample_ids=None, ilqg_cfg=None, n_samples: int = 3) -> list[str]:
    """Write per-sample activation CSVs and center-out hand paths; return file names."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    test = ds.test
    if sample_ids is None:
        sample_ids = [int(i) for i in test.ids[:n_samples]]
    files = []
    t = np.arange(1, N_STEPS + 1) / N_STEPS
    for sid in sample_ids:
        idx = np.flatnonzero(ds.ids == sid)
        if idx.size == 0:
            raise ReachgenError(f"sample id {sid} not in dataset")
        i = idx[0]
        true = ds.trajectory(i)
        pred = predict(decoder, ds.pair(i), train_cfg)
        lines = ["t," + ",".join(f"m{m}_true" for m in range(N_MUSCLES)) + ","
                 + ",".join(f"m{m}_pred" for m in range(N_MUSCLES))]
        for k in range(N_STEPS):
            lines.append(",".join([fmt(t[k])] + [fmt(v) for v in true[k]] + [fmt(v) for v in pred[k]]))
        name = f"activations_{sid}.csv"
        (out / name).write_text("\n".join(lines) + "\n")
        files.append(name)

    lines = ["reach_index,t,x_true,y_true,x_pred,y_pred"]
    tt = np.arange(N_STEPS + 1) / N_STEPS
    reaches = center_out_pairs(ds.config.region, ds.config.max_reach_dist)
    vecs = np.array([p.as_vector() for p in reaches])
    true = np.array([label_pair(arm, p, ds.method, ilqg_cfg) for p in reaches])
    pred = predict(decoder, vecs, train_cfg)
    states, _ = simulate_endpoints(arm, np.vstack([vecs, vecs]), np.concatenate([true, pred]))
    hands = arm_model.forward_kinematics(arm, states[..., :2])
    n = len(reaches)
    for r in range(n):
        h_true, h_pred = hands[r], hands[n + r]
        for k in range(N_STEPS + 1):
            lines.append(",".join([str(r), fmt(tt[k])] + [fmt(v) for v in (*h_true[k], *h_pred[k])]))
    (out / "handpaths.csv").write_text("\n".join(lines) + "\n")
    files.append("handpaths.csv")
    return files
