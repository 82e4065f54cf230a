"""Small tanh autoencoder trained by every momentum scheme on synthetic data.

Parameters live in one flat vector so the optimisers below are the same
updates as in :mod:`momlab.schemes`, applied with minibatch gradients.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .analysis import RateReport, rate_from_errors
from .schemes import DIVERGENCE_THRESHOLD, lambda_mu

FIXED_LAMBDA_METHODS = ("GF", "HB", "NAG")
MU_METHODS = ("Wilson", "HB-mu", "NAG-mu")
METHODS = FIXED_LAMBDA_METHODS + MU_METHODS


class MLPAutoencoder:
    """Fully connected net with tanh hidden layers and a linear output layer."""

    def __init__(self, layer_sizes=(8, 4, 2, 4, 8), seed: int = 0, params=None):
        self.layer_sizes = tuple(int(n) for n in layer_sizes)
        if len(self.layer_sizes) < 2 or min(self.layer_sizes) < 1:
            raise ValueError("need at least two positive layer sizes")
        self._shapes = [(m, n) for n, m in zip(self.layer_sizes, self.layer_sizes[1:])]
        if params is None:
            rng = np.random.default_rng(seed)
            chunks = []
            for m, n in self._shapes:
                limit = math.sqrt(6.0 / (m + n))
                chunks.append(rng.uniform(-limit, limit, size=m * n))
                chunks.append(np.zeros(m))
            params = np.concatenate(chunks)
        params = np.asarray(params, dtype=float)
        if params.size != self.n_params:
            raise ValueError(f"expected {self.n_params} parameters, got {params.size}")
        self.params = params.copy()

    @property
    def n_params(self) -> int:
        return sum(m * n + m for m, n in self._shapes)

    def unpack(self, params=None):
        params = self.params if params is None else params
        out, i = [], 0
        for m, n in self._shapes:
            W = params[i:i + m * n].reshape(m, n)
            i += m * n
            b = params[i:i + m]
            i += m
            out.append((W, b))
        return out

    def forward(self, x, params=None) -> np.ndarray:
        h = np.atleast_2d(np.asarray(x, dtype=float))
        layers = self.unpack(params)
        for k, (W, b) in enumerate(layers):
            h = h @ W.T + b
            if k < len(layers) - 1:
                h = np.tanh(h)
        return h

    def with_params(self, params) -> "MLPAutoencoder":
        return MLPAutoencoder(self.layer_sizes, params=params)


def make_synthetic_dataset(seed: int, n: int = 512, d: int = 8) -> np.ndarray:
    """``n`` points in R^d that are smooth, mildly nonlinear functions of a 2-d latent."""
    if n <= 0 or d <= 0:
        raise ValueError("n and d must be positive")
    rng = np.random.default_rng(seed)
    z = rng.uniform(-1.0, 1.0, size=(n, 2))
    A = rng.normal(size=(2, d)) / math.sqrt(2.0)
    B = rng.normal(size=(2, d))
    return z @ A + 0.1 * np.sin(z @ B)


def loss_and_grad(net: MLPAutoencoder, batch, params=None):
    """Mean over the batch of half the squared reconstruction error, and its gradient."""
    x = np.atleast_2d(np.asarray(batch, dtype=float))
    if x.shape[0] == 0:
        raise ValueError("empty batch")
    layers = net.unpack(params)
    acts = [x]
    h = x
    for k, (W, b) in enumerate(layers):
        h = h @ W.T + b
        if k < len(layers) - 1:
            h = np.tanh(h)
        acts.append(h)
    m = x.shape[0]
    resid = acts[-1] - x
    loss = 0.5 * float(np.sum(resid * resid)) / m
    delta = resid / m
    grads = []
    for k in range(len(layers) - 1, -1, -1):
        W, _ = layers[k]
        grads.append((delta.T @ acts[k], delta.sum(axis=0)))
        if k > 0:
            delta = (delta @ W) * (1.0 - acts[k] ** 2)
    flat = np.concatenate([np.concatenate([gW.ravel(), gb]) for gW, gb in reversed(grads)])
    return loss, flat


def full_loss(net: MLPAutoencoder, data, params=None) -> float:
    x = np.asarray(data, dtype=float)
    r = net.forward(x, params) - x
    return 0.5 * float(np.sum(r * r)) / x.shape[0]


@dataclass(frozen=True)
class TrainConfig:
    method: str
    h: float
    lam: float | None = 0.9
    mu: float | None = 1.0
    batch_size: int = 20
    epochs: int = 50
    seed: int = 0
    fixed_order: bool = True

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; choose from {METHODS}")
        if not self.h > 0:
            raise ValueError("h must be positive")
        if self.method in FIXED_LAMBDA_METHODS:
            if self.lam is None or not 0.0 <= self.lam < 1.0:
                raise ValueError(f"{self.method} needs lambda in [0, 1)")
        elif self.mu is None or self.mu <= 0:
            raise ValueError(f"{self.method} needs mu > 0")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")


@dataclass
class TrainResult:
    config: TrainConfig
    losses: list
    params: np.ndarray
    diverged: bool = False
    path: np.ndarray | None = None

    @property
    def final_loss(self) -> float:
        return math.nan if self.diverged else self.losses[-1]


def _batches(n: int, size: int, epoch: int, config: TrainConfig):
    order = np.arange(n)
    if not config.fixed_order:
        order = np.random.default_rng([config.seed, epoch]).permutation(n)
    for i in range(0, n, size):
        yield order[i:i + size]


def _stepper(config: TrainConfig):
    """Return (lam, a, kind) for the chosen method."""
    m = config.method
    if m == "GF":
        return config.lam, 0.0, "gd"
    if m == "HB":
        return config.lam, 0.0, "momentum"
    if m == "NAG":
        return config.lam, config.lam, "momentum"
    if m == "Wilson":
        return None, None, "wilson"
    lam = lambda_mu(config.mu, config.h)
    return lam, (lam if m == "NAG-mu" else 0.0), "momentum"


def train(net: MLPAutoencoder, data, config: TrainConfig, record_path: bool = False,
          max_steps: int | None = None) -> TrainResult:
    """Run ``config.epochs`` epochs of minibatch updates; loss recorded after every epoch.

    ``max_steps`` stops early after that many parameter updates.  With
    ``record_path`` every iterate is kept.
    """
    data = np.asarray(data, dtype=float)
    lam, a, kind = _stepper(config)
    h = config.h
    theta = net.params.copy()
    v = np.zeros_like(theta)
    losses = [full_loss(net, data, theta)]
    path = [theta.copy()] if record_path else None
    if kind == "wilson":
        s = math.sqrt(config.mu)
        dt = math.sqrt(h)
        damp = math.exp(-2.0 * s * dt)
        drift = -math.expm1(-2.0 * s * dt) / (2.0 * s)
    elif kind == "gd":
        step = h * (1.0 / (1.0 - lam))
    steps = 0
    for epoch in range(config.epochs):
        for idx in _batches(len(data), config.batch_size, epoch, config):
            batch = data[idx]
            if kind == "gd":
                _, g = loss_and_grad(net, batch, theta)
                theta = theta - step * g
            elif kind == "momentum":
                _, g = loss_and_grad(net, batch, theta + h * a * v)
                theta = theta + h * lam * v - h * g
                v = lam * v - g
            else:
                theta = theta + drift * v
                _, g = loss_and_grad(net, batch, theta)
                v = damp * v - dt * g
            steps += 1
            if record_path:
                path.append(theta.copy())
            if not np.all(np.isfinite(theta)) or np.linalg.norm(theta) > DIVERGENCE_THRESHOLD:
                return TrainResult(config, losses, theta, True,
                                   np.array(path) if record_path else None)
            if max_steps is not None and steps >= max_steps:
                losses.append(full_loss(net, data, theta))
                return TrainResult(config, losses, theta, False,
                                   np.array(path) if record_path else None)
        loss = full_loss(net, data, theta)
        if not math.isfinite(loss):
            return TrainResult(config, losses, theta, True, np.array(path) if record_path else None)
        losses.append(loss)
    return TrainResult(config, losses, theta, False, np.array(path) if record_path else None)


def reference_method(method: str) -> str:
    """GF is the limit for the fixed-lambda schemes, Wilson for the mu schemes."""
    if method in ("HB", "NAG"):
        return "GF"
    if method in ("HB-mu", "NAG-mu"):
        return "Wilson"
    raise ValueError(f"no reference pairing for {method!r}")


def param_rate(method: str, h_list, net: MLPAutoencoder, data, T: float = 1.0,
               lam: float = 0.9, mu: float = 1.0, batch_size: int = 20,
               target=None) -> RateReport:
    """Sup over the first T time units of the parameter gap to the paired limit method.

    Time per step is h for GF, HB and NAG and sqrt(h) for the mu schemes.
    Both runs see the same minibatch sequence.
    """
    # the limit methods compared with themselves land on the noise floor
    ref = method if method in ("GF", "Wilson") else reference_method(method)
    errs, kept, diverged = [], [], []
    for h in h_list:
        dt = math.sqrt(h) if method in MU_METHODS else h
        n_steps = int(round(T / dt))
        epochs = math.ceil(n_steps / math.ceil(len(data) / batch_size))
        runs = []
        for m in (method, ref):
            cfg = TrainConfig(m, h, lam=lam, mu=mu, batch_size=batch_size, epochs=epochs)
            runs.append(train(net, data, cfg, record_path=True, max_steps=n_steps))
        if any(r.diverged for r in runs):
            diverged.append(h)
            continue
        gap = np.linalg.norm(runs[0].path[: n_steps + 1] - runs[1].path[: n_steps + 1], axis=-1)
        kept.append(h)
        errs.append(float(gap.max()))
    return rate_from_errors(kept, errs, target, diverged,
                            {"method": method, "reference": ref, "T": T})


def loss_table(net: MLPAutoencoder, data, methods, h_list, epochs: int = 50, lam: float = 0.9,
               mu: float = 1.0, batch_size: int = 20) -> dict:
    """Final loss for every (method, h); divergent runs and cells with mu h >= 1 map to nan."""
    table = {}
    for m in methods:
        for h in h_list:
            if m in ("HB-mu", "NAG-mu") and mu * h >= 1.0:
                table[(m, h)] = math.nan
                continue
            res = train(net, data, TrainConfig(m, h, lam=lam, mu=mu, batch_size=batch_size,
                                               epochs=epochs))
            table[(m, h)] = res.final_loss
    return table


def max_gap(table: dict, methods, h: float) -> float:
    vals = [table[(m, h)] for m in methods]
    if any(math.isnan(v) for v in vals):
        return math.nan
    return max(vals) - min(vals)


def write_final_table(path, table: dict, methods, h_list) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method"] + [f"{h:.17g}" for h in h_list])
        for m in methods:
            row = [m]
            for h in h_list:
                v = table[(m, h)]
                row.append("n/a" if math.isnan(v) else f"{v:.17g}")
            w.writerow(row)


def write_loss_history(path, result: TrainResult) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "loss"])
        for e, loss in enumerate(result.losses):
            w.writerow([e, f"{loss:.17g}"])
