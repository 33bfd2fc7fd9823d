"""Supervised training of the relaxed network.

Gradients are computed over fixed-size chunks of each batch and reduced in
chunk order, so results do not depend on how many worker threads run the
chunks.
"""
from __future__ import annotations

import fnmatch
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import gates
from .errors import ConfigError, TrainingDiverged, UsageError
from .network import (HARD, SOFT, NetworkParams, all_logit_blocks, get_parameters,
                      harden_network, network_backward, network_forward, readout_count,
                      set_parameters, soft_readout, soften_network)

log = logging.getLogger(__name__)

EPS = 1e-7
CHUNK = 32
METRIC_COLUMNS = ("epoch", "loss", "soft_acc", "hard_acc", "entropy_mean", "lambda", "temperature")


@dataclass
class TrainConfig:
    learning_rate: float = 0.01
    optimizer: str = "adam"  # "adam" or "sgd"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 200
    batch_size: int = 32
    lambda_start: float = 2.0
    lambda_end: float = 50.0
    temperature_start: float = 1.0
    temperature_end: float = 0.1
    entropy_weight: float = 0.0
    ste_between_steps: bool = True
    seed: int = 0
    threads: int = 1
    frozen: tuple = ()
    stop_on_hard_exact: bool = False

    def __post_init__(self):
        self.frozen = tuple(self.frozen)
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if not (self.learning_rate > 0 and self.epochs >= 1 and self.batch_size >= 1):
            raise ConfigError("learning_rate, epochs and batch_size must be positive")
        if self.lambda_end < self.lambda_start or self.temperature_end > self.temperature_start:
            raise ConfigError("schedules must tighten: lambda non-decreasing, temperature non-increasing")
        if min(self.lambda_start, self.temperature_end) <= 0:
            raise ConfigError("lambda and temperature must stay positive")
        if self.entropy_weight < 0:
            raise ConfigError("entropy_weight must be non-negative")

    def schedule(self, epoch):
        """(lambda, temperature) for a 0-based epoch, geometric in between."""
        frac = epoch / (self.epochs - 1) if self.epochs > 1 else 1.0
        lam = self.lambda_start * (self.lambda_end / self.lambda_start) ** frac
        temp = self.temperature_start * (self.temperature_end / self.temperature_start) ** frac
        return lam, temp

    def to_dict(self):
        d = asdict(self)
        d["frozen"] = list(self.frozen)
        return d


@dataclass
class Dataset:
    """Input fields (N, H, W) of bits and either target fields (N, H, W) or
    scalar labels (N,)."""

    inputs: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.uint8)
        self.targets = np.asarray(self.targets, dtype=np.uint8)
        if self.inputs.ndim == 4 and self.inputs.shape[-1] == 1:
            self.inputs = self.inputs[..., 0]
        if self.targets.ndim == 4 and self.targets.shape[-1] == 1:
            self.targets = self.targets[..., 0]
        if self.inputs.ndim != 3:
            raise UsageError(f"inputs must be (N, H, W), got {self.inputs.shape}")
        if len(self.targets) != len(self.inputs):
            raise UsageError("inputs and targets differ in length")
        if self.targets.ndim not in (1, 3) or (
                self.targets.ndim == 3 and self.targets.shape != self.inputs.shape):
            raise UsageError("targets must be fields shaped like the inputs or scalar labels")
        if (self.inputs.size and self.inputs.max() > 1) or (self.targets.size and self.targets.max() > 1):
            raise UsageError("dataset values must be bits")

    def __len__(self):
        return len(self.inputs)

    @property
    def labels(self):
        return self.targets.ndim == 1

    def subset(self, idx):
        return Dataset(self.inputs[idx], self.targets[idx])


# ---------------------------------------------------------------- loss

def bce(p, y):
    p = np.clip(p, EPS, 1 - EPS)
    return -(y * np.log(p) + (1 - y) * np.log(1 - p))


def bce_grad(p, y):
    inside = (p > EPS) & (p < 1 - EPS)
    pc = np.clip(p, EPS, 1 - EPS)
    return np.where(inside, (pc - y) / (pc * (1 - pc)), 0.0)


def mean_entropy(net: NetworkParams):
    blocks = all_logit_blocks(net)
    if not blocks:
        return 0.0
    h = np.concatenate([gates.entropy_rows(gates.softmax(b, net.temperature)) for b in blocks])
    return float(h.mean())


def loss(prediction, target, net: NetworkParams | None = None, entropy_weight=0.0):
    """Mean bit-plane-0 binary cross-entropy plus the entropy penalty.

    ``prediction`` is a soft field (…, H, W, m) for field targets or a vector
    of probabilities for scalar labels.
    """
    prediction = np.asarray(prediction, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if target.ndim == prediction.ndim - 1 and prediction.shape[:-1] == target.shape:
        prediction = prediction[..., 0]
    if prediction.shape != target.shape:
        raise UsageError(f"prediction {prediction.shape} and target {target.shape} differ")
    value = float(bce(prediction, target).mean())
    if entropy_weight and net is not None:
        value += entropy_weight * mean_entropy(net)
    return value


def _entropy_grads(net, keys, weight):
    params = get_parameters(net)
    total = sum(params[k].shape[0] for k in keys)
    out = {}
    for k in keys:
        _, g = gates.entropy_grad(params[k], net.temperature)
        out[k] = weight * g / total
    return out


# ------------------------------------------------------------ gradients

def _chunk_grads(net, x, y, scale, ste):
    """Sum-form loss and gradients for one chunk; ``scale`` is 1/(batch pixels)."""
    out, tr = network_forward(x, net, SOFT, ste=ste)
    if y.ndim == 1:
        p, _ = soft_readout(out, net)
        value = bce(p, y).sum() * scale
        dp = bce_grad(p, y) * p * (1 - p) * net.readout_scale * scale
        dout = np.zeros_like(out)
        dout[..., 0] = dp[:, None, None]
    else:
        p = out[..., 0]
        value = bce(p, y).sum() * scale
        dout = np.zeros_like(out)
        dout[..., 0] = bce_grad(p, y) * scale
    return value, network_backward(net, tr, dout)


def compute_gradients(net: NetworkParams, inputs, targets, entropy_weight=0.0, ste=True,
                      threads=1):
    """Loss and gradients over one batch (mean over samples and pixels)."""
    inputs = np.asarray(inputs, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    n = len(inputs)
    units = n if targets.ndim == 1 else targets[0].size * n
    scale = 1.0 / units
    chunks = [slice(i, min(i + CHUNK, n)) for i in range(0, n, CHUNK)]

    def work(sl):
        return _chunk_grads(net, inputs[sl], targets[sl], scale, ste)

    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, chunks))
    else:
        results = [work(sl) for sl in chunks]
    value = 0.0
    grads = {}
    for v, g in results:
        value += v
        for k, arr in g.items():
            grads[k] = grads[k] + arr if k in grads else arr
    if entropy_weight:
        keys = [k for k in get_parameters(net) if not k.endswith(".bias")]
        value += entropy_weight * mean_entropy(net)
        for k, g in _entropy_grads(net, keys, entropy_weight).items():
            grads[k] = grads[k] + g
    return value, grads


def backprop(net, inputs, targets, cfg: TrainConfig | None = None):
    cfg = cfg or TrainConfig()
    return compute_gradients(net, inputs, targets, cfg.entropy_weight, cfg.ste_between_steps,
                             cfg.threads)


# ------------------------------------------------------------ optimizer

class Optimizer:
    def __init__(self, cfg: TrainConfig):
        self.cfg = cfg
        self.m = {}
        self.v = {}
        self.t = 0

    def step(self, params, grads):
        """Return updated copies of ``params``."""
        self.t += 1
        cfg = self.cfg
        out = {}
        for k, p in params.items():
            g = grads[k]
            if cfg.optimizer == "sgd":
                out[k] = p - cfg.learning_rate * g
                continue
            m = self.m.get(k, 0.0) * cfg.beta1 + (1 - cfg.beta1) * g
            v = self.v.get(k, 0.0) * cfg.beta2 + (1 - cfg.beta2) * g * g
            self.m[k], self.v[k] = m, v
            mhat = m / (1 - cfg.beta1 ** self.t)
            vhat = v / (1 - cfg.beta2 ** self.t)
            out[k] = p - cfg.learning_rate * mhat / (np.sqrt(vhat) + cfg.eps)
        return out


# ------------------------------------------------------------ train / eval

def _set_schedule(net, lam, temp):
    net.temperature = temp
    for lp in net.layers:
        lp.attn.lam = lam


def _trainable(net, frozen):
    return [k for k in get_parameters(net)
            if not any(fnmatch.fnmatchcase(k, pat) for pat in frozen)]


def train(net: NetworkParams, dataset: Dataset, cfg: TrainConfig, on_epoch=None):
    """Train ``net`` in place; returns (net, list of per-epoch metric dicts)."""
    if len(dataset) == 0:
        raise UsageError("empty dataset")
    if net.is_hard:
        raise UsageError("cannot train a hardened network")
    rng = np.random.default_rng(cfg.seed)
    opt = Optimizer(cfg)
    keys = _trainable(net, cfg.frozen)
    history = []
    n = len(dataset)
    for epoch in range(cfg.epochs):
        lam, temp = cfg.schedule(epoch)
        _set_schedule(net, lam, temp)
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            batch = dataset.subset(idx)
            value, grads = backprop(net, batch.inputs, batch.targets, cfg)
            if not math.isfinite(value):
                raise TrainingDiverged(
                    f"loss became {value} at epoch {epoch}, batch starting {start}; "
                    f"lambda={lam:.4g} temperature={temp:.4g}")
            total += value * len(idx)
            params = get_parameters(net)
            current = {k: params[k] for k in keys}
            set_parameters(net, opt.step(current, {k: grads[k] for k in keys}))
        soft = evaluate(net, dataset, SOFT)
        hard = evaluate(net, dataset, HARD)
        row = {"epoch": epoch, "loss": total / n, "soft_acc": soft["bit_accuracy"],
               "hard_acc": hard["bit_accuracy"], "entropy_mean": mean_entropy(net),
               "lambda": lam, "temperature": temp}
        history.append(row)
        log.debug("epoch %d loss %.5f soft %.4f hard %.4f", epoch, row["loss"],
                  row["soft_acc"], row["hard_acc"])
        if on_epoch is not None:
            on_epoch(row)
        if cfg.stop_on_hard_exact and hard["exact_match"] == 1.0:
            break
    return net, history


def _soft_forward(net, inputs):
    x = np.asarray(inputs, dtype=np.float64)
    if net.is_hard:
        # one-hot relaxation with crisp attention reproduces the hard path
        out, _ = network_forward(x, soften_network(net), SOFT, hard_attention=True)
    else:
        out, _ = network_forward(x, net, SOFT)
    return out


def predict(net: NetworkParams, inputs, mode=HARD):
    """Bit-plane-0 predictions (fields) in the given mode."""
    from .packed import packed_network_forward
    if mode == SOFT:
        return _soft_forward(net, inputs)
    hard = harden_network(net)
    if mode == HARD:
        return network_forward(np.asarray(inputs, dtype=np.uint8), hard, HARD)
    if mode == "packed":
        return packed_network_forward(np.asarray(inputs, dtype=np.uint8), net)
    raise UsageError(f"unknown mode {mode!r}")


def evaluate(net: NetworkParams, dataset: Dataset, mode=HARD):
    """Bit accuracy, loss and per-sample exact-match rate."""
    if len(dataset) == 0:
        raise UsageError("empty dataset")
    if mode == "packed" and not net.is_hard:
        raise UsageError("packed evaluation needs a hardened network")
    if mode == SOFT:
        out = _soft_forward(net, dataset.inputs)
        if dataset.labels:
            p, _ = soft_readout(out, net)
            pred = (p >= 0.5).astype(np.uint8)
        else:
            p = out[..., 0]
            pred = (p >= 0.5).astype(np.uint8)
    else:
        if mode == HARD:
            hard = harden_network(net)
            out = network_forward(dataset.inputs, hard, HARD)
        else:
            out = predict(net, dataset.inputs, "packed")
        if dataset.labels:
            pred = (readout_count(out) >= net.readout_threshold).astype(np.uint8)
        else:
            pred = out[..., 0]
        p = pred.astype(np.float64)
    y = dataset.targets
    correct = pred == y
    exact = correct if dataset.labels else correct.reshape(len(y), -1).all(axis=1)
    return {"bit_accuracy": float(correct.mean()), "loss": float(bce(p, y).mean()),
            "exact_match": float(exact.mean())}


def write_metric_log(history, path_or_file):
    lines = [",".join(METRIC_COLUMNS)]
    for row in history:
        lines.append(",".join(str(row[c]) if c == "epoch" else repr(float(row[c]))
                              for c in METRIC_COLUMNS))
    text = "\n".join(lines) + "\n"
    if hasattr(path_or_file, "write"):
        path_or_file.write(text)
    else:
        with open(path_or_file, "w") as f:
            f.write(text)
    return text
