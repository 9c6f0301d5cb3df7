"""Sigmoid feed-forward networks trained with mini-batch nonlinear CG.

Layers are stored as ``(W, b)`` with ``W`` of shape ``(out, in)``; every layer,
including the output and the 4-unit code layer, applies the logistic sigmoid.
"""
from __future__ import annotations

import hashlib
import logging
import struct
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
from scipy.special import expit

from .errors import DimensionMismatch, FormatError, NonFiniteLoss, VersionMismatch

log = logging.getLogger(__name__)

AUTOENCODER_DIMS = (300, 150, 50, 4)
DECODER_DIMS = (4, 50, 150, 300)

ARMIJO_C = 1e-4
RESTART_EVERY = 10


@dataclass
class Network:
    layers: list

    @property
    def dims(self) -> list[int]:
        if not self.layers:
            return []
        return [self.layers[0][0].shape[1]] + [W.shape[0] for W, _ in self.layers]

    def copy(self) -> "Network":
        return Network([(W.copy(), b.copy()) for W, b in self.layers])

    def n_params(self) -> int:
        return sum(W.size + b.size for W, b in self.layers)

    def flat(self) -> np.ndarray:
        return np.concatenate([np.concatenate([W.ravel(), b]) for W, b in self.layers])

    def with_flat(self, theta) -> "Network":
        layers, i = [], 0
        for W, b in self.layers:
            nW, nb = W.size, b.size
            layers.append((theta[i:i + nW].reshape(W.shape), theta[i + nW:i + nW + nb]))
            i += nW + nb
        return Network(layers)


@dataclass
class TrainConfig:
    batch_size: int = 100
    cg_iters_per_batch: int = 3
    pretrain_epochs: int = 50
    finetune_epochs: int = 100
    decoder_epochs: int = 400
    # decoder retraining fits a small input space; large batches converge faster
    decoder_batch_size: int = 4500
    decoder_cg_iters: int = 10
    seed: int = 0
    eps_clamp: float = 1e-12
    # affine map of the decoder input (x0, y0, xf, yf) onto [0, 1]^4
    input_lo: tuple = (-0.35, 0.15, -0.35, 0.15)
    input_hi: tuple = (0.35, 0.55, 0.35, 0.55)

    def problems(self) -> list[str]:
        out = []
        if self.batch_size < 1:
            out.append("train.batch_size must be >= 1")
        if self.cg_iters_per_batch < 1:
            out.append("train.cg_iters_per_batch must be >= 1")
        if self.decoder_batch_size < 1:
            out.append("train.decoder_batch_size must be >= 1")
        if self.decoder_cg_iters < 1:
            out.append("train.decoder_cg_iters must be >= 1")
        for name in ("pretrain_epochs", "finetune_epochs", "decoder_epochs"):
            if getattr(self, name) < 0:
                out.append(f"train.{name} must be >= 0")
        if not 0 < self.eps_clamp <= 1e-6:
            out.append("train.eps_clamp must lie in (0, 1e-6]")
        lo, hi = np.asarray(self.input_lo, float), np.asarray(self.input_hi, float)
        if lo.shape != (4,) or hi.shape != (4,) or np.any(hi <= lo):
            out.append("train.input_lo/input_hi must be 4-vectors with hi > lo")
        return out

    def to_dict(self):
        d = asdict(self)
        d["input_lo"] = list(self.input_lo)
        d["input_hi"] = list(self.input_hi)
        return d

    def normalize(self, pairs) -> np.ndarray:
        lo, hi = np.asarray(self.input_lo, float), np.asarray(self.input_hi, float)
        return (np.asarray(pairs, dtype=float) - lo) / (hi - lo)


def init_network(dims, rng: np.random.Generator) -> Network:
    layers = []
    for n_in, n_out in zip(dims[:-1], dims[1:]):
        r = 4.0 * np.sqrt(6.0 / (n_in + n_out))
        layers.append((rng.uniform(-r, r, size=(n_out, n_in)), np.zeros(n_out)))
    return Network(layers)


def _check_input(net: Network, X):
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != net.dims[0]:
        raise DimensionMismatch(f"input has shape {X.shape}, network expects {net.dims[0]} columns")
    return X


def _forward_all(net: Network, X):
    acts = [X]
    for W, b in net.layers:
        acts.append(expit(acts[-1] @ W.T + b))
    return acts


def forward(net: Network, X) -> np.ndarray:
    return _forward_all(net, _check_input(net, X))[-1]


def cross_entropy(pred, target, eps_clamp: float = 1e-12) -> float:
    """Binary cross-entropy summed over dimensions, averaged over rows."""
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise DimensionMismatch(f"prediction {pred.shape} vs target {target.shape}")
    y = np.clip(pred, eps_clamp, 1.0 - eps_clamp)
    rows = pred.shape[0] if pred.ndim > 1 else 1
    return float(-np.sum(target * np.log(y) + (1.0 - target) * np.log1p(-y)) / rows)


def entropy_floor(target, eps_clamp: float = 1e-12) -> float:
    """Smallest attainable cross-entropy: per-row entropy of the targets."""
    t = np.asarray(target, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        h = -(np.where(t > 0, t * np.log(t), 0.0) + np.where(t < 1, (1 - t) * np.log1p(-t), 0.0))
    rows = t.shape[0] if t.ndim > 1 else 1
    return float(np.sum(h) / rows)


def _backprop(net: Network, acts, T):
    n = T.shape[0]
    delta = (acts[-1] - T) / n
    grads = [None] * len(net.layers)
    for i in range(len(net.layers) - 1, -1, -1):
        W, _ = net.layers[i]
        grads[i] = (delta.T @ acts[i], delta.sum(axis=0))
        if i:
            a = acts[i]
            delta = (delta @ W) * a * (1.0 - a)
    return grads


def gradient(net: Network, X, T, eps_clamp: float = 1e-12):
    """Backpropagated gradients of :func:`cross_entropy` as ``[(dW, db), ...]``."""
    X = _check_input(net, X)
    T = np.asarray(T, dtype=float)
    if T.shape != (X.shape[0], net.dims[-1]):
        raise DimensionMismatch(f"target shape {T.shape} does not match output {(X.shape[0], net.dims[-1])}")
    return _backprop(net, _forward_all(net, X), T)


def _flatten_grads(grads):
    return np.concatenate([np.concatenate([dW.ravel(), db]) for dW, db in grads])


class _Objective:
    """Loss and gradient on one batch as functions of a flat parameter vector."""

    def __init__(self, template: Network, X, T, eps):
        self.template, self.X, self.T, self.eps = template, X, T, eps

    def loss(self, theta):
        net = self.template.with_flat(theta)
        return cross_entropy(_forward_all(net, self.X)[-1], self.T, self.eps)

    def loss_grad(self, theta):
        net = self.template.with_flat(theta)
        acts = _forward_all(net, self.X)
        return cross_entropy(acts[-1], self.T, self.eps), _flatten_grads(_backprop(net, acts, self.T))


def _line_search(obj, theta, f0, g, d, alpha0):
    """Backtracking Armijo search starting at ``alpha0``, doubling while it pays."""
    slope = g @ d
    alpha = alpha0
    f_a = obj.loss(theta + alpha * d)
    if np.isfinite(f_a) and f_a <= f0 + ARMIJO_C * alpha * slope:
        for _ in range(4):
            f_2 = obj.loss(theta + 2 * alpha * d)
            if np.isfinite(f_2) and f_2 < f_a and f_2 <= f0 + ARMIJO_C * 2 * alpha * slope:
                alpha, f_a = 2 * alpha, f_2
            else:
                break
        return alpha, f_a
    for _ in range(40):
        alpha *= 0.5
        f_a = obj.loss(theta + alpha * d)
        if np.isfinite(f_a) and f_a <= f0 + ARMIJO_C * alpha * slope:
            return alpha, f_a
    return 0.0, f0


def cg_minimize(obj, theta, n_iters: int, alpha0: float | None = None):
    """Polak-Ribiere+ nonlinear CG; returns ``(theta, alpha)`` for warm-starting the step size."""
    f, g = obj.loss_grad(theta)
    if not np.isfinite(f):
        raise NonFiniteLoss(f"non-finite loss {f} at start of CG")
    d = -g
    gg = g @ g
    if gg == 0.0:
        return theta, alpha0
    alpha = alpha0 if alpha0 else 1.0 / np.sqrt(gg)
    prev_slope = None
    for it in range(n_iters):
        slope = g @ d
        if prev_slope is not None:
            # carry the step scale across directions
            alpha = float(np.clip(alpha * prev_slope / slope, 1e-12, 1e12))
        step, f_new = _line_search(obj, theta, f, g, d, alpha)
        if step == 0.0:
            break
        theta = theta + step * d
        alpha = step
        f_new, g_new = obj.loss_grad(theta)
        if not np.isfinite(f_new):
            raise NonFiniteLoss(f"non-finite loss {f_new} during CG")
        beta = g_new @ (g_new - g) / gg
        restart = beta <= 0.0 or (it + 1) % RESTART_EVERY == 0
        d = -g_new if restart else -g_new + beta * d
        if g_new @ d >= 0.0:
            d = -g_new
        prev_slope = slope
        f, g, gg = f_new, g_new, g_new @ g_new
        if gg == 0.0:
            break
    return theta, alpha


def cg_train(net: Network, X, T, cfg: TrainConfig, epochs: int, seed: int | None = None,
             batch_size: int | None = None, cg_iters: int | None = None):
    """Mini-batch CG training; returns ``(trained_net, loss_curve)``.

    Each batch restarts the CG direction and runs ``cg_iters`` PR+ iterations
    (default ``cfg.cg_iters_per_batch``, batches of ``cfg.batch_size``).  ``loss_curve[0]`` is the full-data loss before training
    and ``loss_curve[e]`` the loss after epoch ``e``.  An epoch whose updates
    raise the full-data loss is discarded, so the curve never increases.
    """
    X = _check_input(net, X)
    T = np.asarray(T, dtype=float)
    if T.shape != (X.shape[0], net.dims[-1]):
        raise DimensionMismatch(f"target shape {T.shape} does not match output {(X.shape[0], net.dims[-1])}")
    if X.shape[0] == 0:
        raise DimensionMismatch("no training rows")
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    theta = net.flat()
    full = _Objective(net, X, T, cfg.eps_clamp)
    best = full.loss(theta)
    if not np.isfinite(best):
        raise NonFiniteLoss(f"initial loss is {best}")
    curve = [best]
    alpha = None
    n = X.shape[0]
    batch_size = cfg.batch_size if batch_size is None else batch_size
    cg_iters = cfg.cg_iters_per_batch if cg_iters is None else cg_iters
    for epoch in range(epochs):
        perm = rng.permutation(n)
        cand = theta
        for start in range(0, n, batch_size):
            idx = perm[start:start + batch_size]
            obj = _Objective(net, X[idx], T[idx], cfg.eps_clamp)
            cand, alpha = cg_minimize(obj, cand, cg_iters, alpha)
        loss = full.loss(cand)
        if not np.isfinite(loss):
            raise NonFiniteLoss(f"non-finite loss after epoch {epoch}")
        if loss <= best:
            theta, best = cand, loss
        else:
            log.debug("epoch %d rejected (%.6g > %.6g)", epoch, loss, best)
        curve.append(best)
    return net.with_flat(theta.copy()), curve


def _stream(seed, *key):
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=tuple(key)))


def pretrain_autoencoder(trajs, cfg: TrainConfig, dims=AUTOENCODER_DIMS, pretrain: bool = True):
    """Greedy layer-wise pretraining, then fine-tuning of the stacked autoencoder.

    Returns ``(network, info)``; ``info`` holds the loss curves and the
    reconstruction loss of the stacked initialization.  With ``pretrain=False``
    the full stack starts from random weights (used for A/B comparisons).
    """
    X = np.asarray(trajs, dtype=float)
    if X.ndim != 2 or X.shape[1] != dims[0]:
        raise DimensionMismatch(f"trajectories have shape {X.shape}, expected (n, {dims[0]})")
    encoders, decoders, curves = [], [], []
    codes = X
    for k, (n_in, n_code) in enumerate(zip(dims[:-1], dims[1:])):
        shallow = init_network((n_in, n_code, n_in), _stream(cfg.seed, 0, k))
        if pretrain:
            shallow, curve = cg_train(shallow, codes, codes, cfg, cfg.pretrain_epochs,
                                      seed=int(_stream(cfg.seed, 1, k).integers(2 ** 63)))
            curves.append(curve)
            log.info("pretrain stage %d (%d-%d-%d): loss %.6g -> %.6g", k + 1, n_in, n_code, n_in,
                     curve[0], curve[-1])
        encoders.append(shallow.layers[0])
        decoders.append(shallow.layers[1])
        codes = _forward_all(Network([shallow.layers[0]]), codes)[-1]
    net = Network(encoders + decoders[::-1])
    net, curve = cg_train(net, X, X, cfg, cfg.finetune_epochs,
                          seed=int(_stream(cfg.seed, 2).integers(2 ** 63)))
    log.info("fine-tune: loss %.6g -> %.6g", curve[0], curve[-1])
    return net, {"stage_curves": curves, "finetune_curve": curve, "stacked_loss": curve[0]}


def decoder_half(autoencoder: Network) -> Network:
    dims = autoencoder.dims
    if len(autoencoder.layers) != 6 or dims[:4] != dims[::-1][:4]:
        raise DimensionMismatch(f"expected a symmetric 7-layer autoencoder, got dims {dims}")
    return Network([(W.copy(), b.copy()) for W, b in autoencoder.layers[3:]])


def train_decoder(pretrained: Network, pairs, trajs, cfg: TrainConfig, fresh_first_layer: bool = False):
    """Retrain the decoder half to map normalized reach endpoints to activations.

    Returns ``(decoder, loss_curve)``.
    """
    if pretrained.dims != [300, 150, 50, 4, 50, 150, 300]:
        raise DimensionMismatch(f"pretrained network has dims {pretrained.dims}")
    dec = decoder_half(pretrained)
    if fresh_first_layer:
        dec.layers[0] = init_network(DECODER_DIMS[:2], _stream(cfg.seed, 3)).layers[0]
    X = cfg.normalize(pairs)
    dec, curve = cg_train(dec, X, trajs, cfg, cfg.decoder_epochs,
                          seed=int(_stream(cfg.seed, 4).integers(2 ** 63)),
                          batch_size=cfg.decoder_batch_size, cg_iters=cfg.decoder_cg_iters)
    log.info("decoder: loss %.6g -> %.6g", curve[0], curve[-1])
    return dec, curve


def predict(decoder: Network, pair, cfg: TrainConfig | None = None) -> np.ndarray:
    """Predicted ``(50, 6)`` activation trajectory (or ``(n, 50, 6)`` for stacked pairs)."""
    cfg = cfg or TrainConfig()
    if decoder.dims != list(DECODER_DIMS):
        raise DimensionMismatch(f"decoder has dims {decoder.dims}, expected {list(DECODER_DIMS)}")
    v = pair.as_vector() if hasattr(pair, "as_vector") else np.asarray(pair, dtype=float)
    single = v.ndim == 1
    out = forward(decoder, cfg.normalize(np.atleast_2d(v))).reshape(-1, 50, 6)
    return out[0] if single else out


# --- weights file ----------------------------------------------------------
# magic "RGNN", u32 version, u32 layer count, then per layer u32 in, u32 out,
# f64 weights (row-major, out x in), f64 biases; trailer is the SHA-256 of
# everything before it.  Little-endian throughout.

MAGIC = b"RGNN"
WEIGHTS_VERSION = 1


def weights_bytes(net: Network) -> bytes:
    parts = [MAGIC, struct.pack("<II", WEIGHTS_VERSION, len(net.layers))]
    for W, b in net.layers:
        parts.append(struct.pack("<II", W.shape[1], W.shape[0]))
        parts.append(np.ascontiguousarray(W, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
    body = b"".join(parts)
    return body + hashlib.sha256(body).digest()


def save_weights(net: Network, path) -> None:
    Path(path).write_bytes(weights_bytes(net))


def load_weights(path) -> Network:
    data = Path(path).read_bytes()
    if len(data) < 12 + 32 or data[:4] != MAGIC:
        raise FormatError("not an RGNN weights file", path)
    body, trailer = data[:-32], data[-32:]
    version, n_layers = struct.unpack_from("<II", body, 4)
    if version != WEIGHTS_VERSION:
        raise VersionMismatch(f"weights format version {version}, expected {WEIGHTS_VERSION}")
    if hashlib.sha256(body).digest() != trailer:
        raise FormatError("checksum trailer mismatch", path)
    off, layers, prev_out = 12, [], None
    for i in range(n_layers):
        if off + 8 > len(body):
            raise FormatError(f"truncated header of layer {i}", path)
        n_in, n_out = struct.unpack_from("<II", body, off)
        off += 8
        if prev_out is not None and n_in != prev_out:
            raise FormatError(f"layer {i} input dim {n_in} does not chain with {prev_out}", path)
        size = 8 * (n_in * n_out + n_out)
        if off + size > len(body):
            raise FormatError(f"layer {i} declares {n_in}x{n_out} but the file is too short", path)
        W = np.frombuffer(body, dtype="<f8", count=n_in * n_out, offset=off).reshape(n_out, n_in)
        b = np.frombuffer(body, dtype="<f8", count=n_out, offset=off + 8 * n_in * n_out)
        off += size
        layers.append((W.astype(float), b.astype(float)))
        prev_out = n_out
    if off != len(body):
        raise FormatError(f"{len(body) - off} trailing bytes after declared layers", path)
    return Network(layers)
