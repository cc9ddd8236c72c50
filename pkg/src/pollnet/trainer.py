"""Momentum gradient descent, truncated BPTT, RBF clustering and early stopping.

Internal cost is ``E = 1/(2N) * sum_n sum_p (d - y)^2`` over the ``N``
exemplars of a batch; reported errors are MSE (mean over exemplars and
outputs). Weight updates follow ``dW(k) = momentum * dW(k-1) - step * dE/dW``
with separate step sizes and momenta for hidden and output parameters.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, fields, replace
from enum import Enum
from typing import Callable

import numpy as np

from .dataset import EncodedDataset, Role
from .network import (NetworkState, Topology, backward_chunk, build, forward_chunk,
                      new_context)

log = logging.getLogger(__name__)

DIVERGENCE_LIMIT = 1e12
STEP_BOUNDS = (0.001, 1.0)
GAMMA_FLOOR = 1e-3
DEFAULT_SEED = 20100


class Mode(str, Enum):
    ONLINE = "ONLINE"
    BATCH = "BATCH"


class StopReason(str, Enum):
    EPOCHS_EXHAUSTED = "EPOCHS_EXHAUSTED"
    EARLY_STOP = "EARLY_STOP"
    DIVERGED = "DIVERGED"


class CurveAction(str, Enum):
    INCREASE_STEP = "INCREASE_STEP"
    DECREASE_STEP = "DECREASE_STEP"
    RESET = "RESET"
    NONE = "NONE"


class DivergenceError(FloatingPointError):
    pass


@dataclass
class TrainConfig:
    step_size: float = 0.1
    output_step_size: float | None = None
    momentum: float = 0.7
    output_momentum: float = 0.9
    epochs: int = 1000
    mode: Mode = Mode.ONLINE
    patience: int = 50
    restarts: int = 5
    seed: int = DEFAULT_SEED
    trajectory_length: int = 10
    controller: bool = False
    controller_window: int = 50
    freeze_gamma: bool = False
    rbf_epochs: int = 20
    conscience: float = 10.0

    def __post_init__(self):
        if not isinstance(self.mode, Mode):
            self.mode = Mode(str(self.mode).upper())
        for mu in (self.step_size, self.output_step_size):
            if mu is not None and not 0.0 < mu <= 1.0:
                raise ValueError(f"step size must be in (0, 1], got {mu}")
        for gamma in (self.momentum, self.output_momentum):
            if not 0.0 <= gamma < 1.0:
                raise ValueError(f"momentum must be in [0, 1), got {gamma}")
        if self.epochs < 1 or self.restarts < 1 or self.trajectory_length < 1:
            raise ValueError("epochs, restarts and trajectory_length must be >= 1")
        if self.patience < 0:
            raise ValueError("patience must be >= 0")

    def step_for(self, group: str) -> float:
        if group == "output" and self.output_step_size is not None:
            return self.output_step_size
        return self.step_size

    def momentum_for(self, group: str) -> float:
        return self.output_momentum if group == "output" else self.momentum

    @classmethod
    def from_kv(cls, kv: dict[str, str], *, strict: bool = False) -> "TrainConfig":
        """Build from string key/values; unknown keys are ignored unless ``strict``."""
        known = {f.name: f for f in fields(cls)}
        kwargs = {}
        for key, raw in kv.items():
            if key not in known:
                if strict:
                    raise KeyError(f"unknown config key {key!r}")
                continue
            kwargs[key] = _coerce(key, raw)
        defaults = cls()
        for name in known:
            if name not in kwargs:
                log.info("config key %s not set; default %r", name, getattr(defaults, name))
        return cls(**kwargs)

    def to_kv(self) -> dict[str, str]:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = v.value if isinstance(v, Enum) else ("none" if v is None else str(v))
        return out


_INT_KEYS = {"epochs", "patience", "restarts", "seed", "trajectory_length", "controller_window", "rbf_epochs"}
_BOOL_KEYS = {"controller", "freeze_gamma"}


def _coerce(key, raw):
    if not isinstance(raw, str):
        return raw
    raw = raw.strip()
    if key in _INT_KEYS:
        return int(raw)
    if key in _BOOL_KEYS:
        return raw.lower() in ("1", "true", "yes", "on")
    if key == "mode":
        return Mode(raw.upper())
    if key == "output_step_size":
        return None if raw.lower() in ("", "none") else float(raw)
    return float(raw)


@dataclass
class LearningCurve:
    train_mse: list[float] = field(default_factory=list)
    cv_mse: list[float] = field(default_factory=list)
    actions: list[CurveAction] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.train_mse)

    def append(self, train, cv, action=CurveAction.NONE):
        self.train_mse.append(float(train))
        self.cv_mse.append(float(cv))
        self.actions.append(action)

    def diverged(self) -> bool:
        return any(not math.isfinite(v) for v in self.train_mse + self.cv_mse)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "train_mse", "cv_mse", "action"])
            for i, (t, c, a) in enumerate(zip(self.train_mse, self.cv_mse, self.actions), 1):
                w.writerow([i, repr(t), repr(c), a.value])


# --- gradients -----------------------------------------------------------------

def _loss_grad(outputs, targets, mask, n):
    diff = outputs - targets
    if mask is not None:
        diff = diff * mask[:, None]
    return diff / n, 0.5 * float(np.sum(diff**2)) / n


def cost(state: NetworkState, x, y, mask=None, ctx=None) -> float:
    """``E`` over the rows of ``x`` (run as one sequence for temporal nets)."""
    y = np.asarray(y, dtype=float)
    out = forward_chunk(state, x, ctx).outputs
    n = y.shape[0] if mask is None else int(np.sum(mask))
    diff = out - y
    if mask is not None:
        diff = diff * np.asarray(mask, dtype=float)[:, None]
    return 0.5 * float(np.sum(diff**2)) / max(n, 1)


def _finite_or_raise(values, what):
    if not np.all(np.isfinite(values)):
        raise DivergenceError(f"non-finite {what}")


def gradients(state: NetworkState, x, y, mask=None) -> dict[str, np.ndarray]:
    """Exact dE/dparam over a batch.

    Temporal networks treat the batch as one sequence, fully unrolled from a
    zeroed context. Frozen parameters get zero gradients.
    """
    y = np.asarray(y, dtype=float)
    chunk = forward_chunk(state, x)
    _finite_or_raise(chunk.outputs, "activation")
    m = None if mask is None else np.asarray(mask, dtype=float)
    n = y.shape[0] if m is None else max(int(m.sum()), 1)
    d_out, _ = _loss_grad(chunk.outputs, y, m, n)
    grads = backward_chunk(state, chunk, d_out)
    for k in state.frozen:
        grads[k][...] = 0.0
    return grads


def bptt_gradients(state: NetworkState, x, y, trajectory_length: int = 10, mask=None,
                   ctx=None) -> dict[str, np.ndarray]:
    """Truncated BPTT over consecutive windows of ``trajectory_length`` steps.

    The context flows forward across windows, but gradients stop at each
    window's start.
    """
    if not state.spec.topology.temporal:
        raise TypeError(f"bptt_gradients needs a temporal topology, got {state.spec.topology.value}")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    m = np.ones(len(x)) if mask is None else np.asarray(mask, dtype=float)
    n = max(int(m.sum()), 1)
    ctx = new_context(state.spec) if ctx is None else ctx
    total = {k: np.zeros_like(v) for k, v in state.params.items()}
    for start in range(0, len(x), trajectory_length):
        sl = slice(start, start + trajectory_length)
        chunk = forward_chunk(state, x[sl], ctx)
        _finite_or_raise(chunk.outputs, "activation")
        d_out, _ = _loss_grad(chunk.outputs, y[sl], m[sl], n)
        for k, g in backward_chunk(state, chunk, d_out).items():
            total[k] += g
        ctx = chunk.ctx
    for k in state.frozen:
        total[k][...] = 0.0
    return total


def momentum_update(prev_delta, grad, step_size, momentum):
    """``momentum * prev_delta - step_size * grad``; the caller adds it to the weight."""
    return momentum * prev_delta - step_size * grad


class MomentumOptimizer:
    def __init__(self, state: NetworkState, config: TrainConfig):
        self.config = config
        self.velocity = {k: np.zeros_like(state.params[k]) for k in state.trainable}
        self.scale = 1.0  # step multiplier driven by the curve controller

    def reset(self, state: NetworkState) -> None:
        self.velocity = {k: np.zeros_like(state.params[k]) for k in state.trainable}

    def apply(self, state: NetworkState, grads) -> None:
        for k, v in self.velocity.items():
            group = state.group(k)
            mu = min(max(self.config.step_for(group) * self.scale, STEP_BOUNDS[0]), STEP_BOUNDS[1])
            v[...] = momentum_update(v, grads[k], mu, self.config.momentum_for(group))
            state.params[k] += v
        if "g" in self.velocity:
            np.clip(state.params["g"], GAMMA_FLOOR, 1.0, out=state.params["g"])


# --- RBF phase one: competitive clustering ----------------------------------------

def competitive_learning(inputs, n_centers: int, conscience: float | None = 10.0, seed: int = 0,
                         epochs: int = 20, rate=(0.1, 0.01), freq_rate: float = 0.01):
    """Winner-take-all clustering with an optional conscience bias.

    The winner minimises ``distance - conscience * (1/N - win_frequency)``,
    so units that win too often are handicapped and idle ones get a bonus.
    Returns ``(centers, win_counts)``.
    """
    x = np.asarray(inputs, dtype=float)
    n = len(x)
    if n_centers > n:
        raise ValueError(f"n_centers ({n_centers}) exceeds the number of samples ({n})")
    if n_centers < 1:
        raise ValueError("n_centers must be >= 1")
    rng = np.random.default_rng(seed)
    centers = x[rng.choice(n, n_centers, replace=False)].copy()
    freq = np.full(n_centers, 1.0 / n_centers)
    wins = np.zeros(n_centers, dtype=int)
    for epoch in range(epochs):
        frac = epoch / max(epochs - 1, 1)
        lr = rate[0] * (rate[1] / rate[0]) ** frac
        for i in rng.permutation(n):
            dist = np.sqrt(np.sum((centers - x[i]) ** 2, axis=1))
            if conscience:
                dist = dist - conscience * (1.0 / n_centers - freq)
            w = int(np.argmin(dist))
            wins[w] += 1
            freq *= 1.0 - freq_rate
            freq[w] += freq_rate
            centers[w] += lr * (x[i] - centers[w])
    return centers, wins


def rbf_fit_centers(train_inputs, n_centers: int = 80, rule: str = "CONSCIENCE", seed: int = 0,
                    **kw) -> np.ndarray:
    conscience = kw.pop("conscience", 10.0) if rule.upper() == "CONSCIENCE" else None
    centers, _ = competitive_learning(train_inputs, n_centers, conscience, seed, **kw)
    return centers


def rbf_widths(centers, neighbours: int = 2, floor: float = 1e-3) -> np.ndarray:
    """Mean distance from each center to its nearest ``neighbours`` others."""
    c = np.asarray(centers, dtype=float)
    if len(c) < 2:
        return np.ones(len(c))
    d = np.sqrt(np.sum((c[:, None, :] - c[None, :, :]) ** 2, axis=2))
    np.fill_diagonal(d, np.inf)
    k = min(neighbours, len(c) - 1)
    nearest = np.sort(d, axis=1)[:, :k]
    return np.maximum(nearest.mean(axis=1), floor)


def fit_rbf_layer(state: NetworkState, train_inputs, config: TrainConfig) -> None:
    n_train = len(train_inputs)
    if state.spec.n_centers > n_train:
        raise ValueError(f"n_centers ({state.spec.n_centers}) exceeds training samples ({n_train})")
    centers, wins = competitive_learning(train_inputs, state.spec.n_centers, config.conscience,
                                         state.seed, epochs=config.rbf_epochs)
    idle = int(np.sum(wins == 0))
    if idle:
        log.warning("%d RBF centers never won during clustering", idle)
    state.params["centers"] = centers
    state.params["widths"] = rbf_widths(centers)


# --- learning-curve controller ------------------------------------------------------

def curve_controller(curve: LearningCurve | list, window: int = 50, flat_eps: float = 1e-5,
                     osc_threshold: float = 0.5) -> CurveAction:
    """Suggest a step-size action from the last ``window`` training errors."""
    values = curve.train_mse if isinstance(curve, LearningCurve) else list(curve)
    if len(values) < window or window < 2:
        return CurveAction.NONE
    tail = np.asarray(values[-window:], dtype=float)
    if not np.all(np.isfinite(tail)):
        return CurveAction.RESET
    slope = np.polyfit(np.arange(window, dtype=float), tail, 1)[0]
    if abs(slope) < flat_eps:
        return CurveAction.INCREASE_STEP
    diffs = np.diff(tail)
    signs = np.sign(diffs)
    flips = np.sum(signs[1:] * signs[:-1] < 0)
    if len(diffs) > 1 and flips / (len(diffs) - 1) > osc_threshold:
        return CurveAction.DECREASE_STEP
    if np.all(diffs > 0):
        return CurveAction.RESET
    return CurveAction.NONE


# --- training loop ---------------------------------------------------------------------

@dataclass
class TrainResult:
    state: NetworkState
    curve: LearningCurve
    stop_reason: StopReason
    best_epoch: int          # 1-based; 0 means the initial weights
    best_cv_mse: float
    epochs_run: int

    @property
    def diverged(self) -> bool:
        return self.stop_reason is StopReason.DIVERGED


def _mse(out, tgt, mask):
    if not np.any(mask):
        return float("nan")
    return float(np.mean((out[mask] - tgt[mask]) ** 2))


def predict(state: NetworkState, data: EncodedDataset) -> np.ndarray:
    """Outputs for every row; temporal models run each sequence from a fresh context."""
    if not state.spec.topology.temporal:
        return forward_chunk(state, data.inputs).outputs
    out = np.empty((len(data.inputs), state.spec.n_outputs))
    for idx in data.sequences:
        out[idx] = forward_chunk(state, data.inputs[idx]).outputs
    return out


def evaluate_errors(state: NetworkState, data: EncodedDataset) -> tuple[float, float]:
    """(train MSE, CV MSE); CV falls back to train when there are no CV rows."""
    out = predict(state, data)
    train = _mse(out, data.targets, data.mask(Role.TRAIN))
    cv_mask = data.mask(Role.CROSS_VALIDATION)
    cv = _mse(out, data.targets, cv_mask) if np.any(cv_mask) else train
    return train, cv


def _epoch(state, data, config, opt, rng):
    spec = state.spec
    train_mask = data.mask(Role.TRAIN).astype(float)
    batch = config.mode is Mode.BATCH
    acc = {k: np.zeros_like(v) for k, v in state.params.items()} if batch else None

    if not spec.topology.temporal:
        idx = np.flatnonzero(train_mask)
        x, y = data.inputs[idx], data.targets[idx]
        if batch:
            acc = gradients(state, x, y)
        else:
            for i in rng.permutation(len(idx)):
                opt.apply(state, gradients(state, x[i:i + 1], y[i:i + 1]))
    else:
        n_total = max(int(train_mask.sum()), 1)
        T = config.trajectory_length
        for s in rng.permutation(len(data.sequences)):
            seq = data.sequences[s]
            x, y, m = data.inputs[seq], data.targets[seq], train_mask[seq]
            ctx = new_context(spec)
            for start in range(0, len(seq), T):
                sl = slice(start, start + T)
                chunk = forward_chunk(state, x[sl], ctx)
                ctx = chunk.ctx
                n_win = int(m[sl].sum())
                if n_win == 0:
                    continue
                _finite_or_raise(chunk.outputs, "activation")
                d_out, _ = _loss_grad(chunk.outputs, y[sl], m[sl], n_total if batch else n_win)
                g = backward_chunk(state, chunk, d_out)
                if batch:
                    for k in acc:
                        acc[k] += g[k]
                else:
                    opt.apply(state, g)
    if batch:
        _finite_or_raise(np.concatenate([a.ravel() for a in acc.values()]), "gradient")
        opt.apply(state, acc)


def train(state: NetworkState, data: EncodedDataset, config: TrainConfig,
          evaluate: Callable[[NetworkState, int], tuple[float, float]] | None = None) -> TrainResult:
    """Train a copy of ``state``; returns the snapshot with the lowest CV MSE.

    ``evaluate(state, epoch)`` may replace the per-epoch (train, CV) error
    computation, e.g. to inject a synthetic curve in tests.
    """
    state = state.copy()
    rng = np.random.default_rng(np.random.SeedSequence([int(config.seed) & 0xFFFFFFFF, 1]))
    if state.spec.topology is Topology.RBF:
        fit_rbf_layer(state, data.select(Role.TRAIN)[0], config)
    if config.freeze_gamma and "g" in state.params:
        state.frozen = state.frozen | {"g"}
    opt = MomentumOptimizer(state, config)
    custom_eval = evaluate is not None
    evaluate = evaluate or (lambda st, _epoch: evaluate_errors(st, data))
    curve = LearningCurve()
    best = state.copy()
    best_cv, best_epoch = math.inf, 0
    resets = 0
    reason = StopReason.EPOCHS_EXHAUSTED
    epoch = 0
    for epoch in range(1, config.epochs + 1):
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                _epoch(state, data, config, opt, rng)
            if not state.is_finite():
                raise DivergenceError("non-finite parameters")
            train_mse, cv_mse = evaluate(state, epoch)
        except DivergenceError as exc:
            log.info("run seed=%d diverged at epoch %d: %s", state.seed, epoch, exc)
            curve.append(math.nan, math.nan)
            reason = StopReason.DIVERGED
            break
        if not (math.isfinite(train_mse) and math.isfinite(cv_mse)) or \
                max(train_mse, cv_mse) > DIVERGENCE_LIMIT:
            curve.append(train_mse, cv_mse)
            reason = StopReason.DIVERGED
            break
        action = CurveAction.NONE
        if config.controller and epoch % config.controller_window == 0:
            action = curve_controller(curve.train_mse + [train_mse], config.controller_window)
        curve.append(train_mse, cv_mse, action)
        if cv_mse < best_cv:
            best_cv, best_epoch = cv_mse, epoch
            best = state.copy()
        if action is CurveAction.INCREASE_STEP:
            opt.scale *= 1.05
        elif action is CurveAction.DECREASE_STEP:
            opt.scale *= 0.5
        elif action is CurveAction.RESET:
            resets += 1
            fresh = build(state.spec, int(np.random.SeedSequence([state.seed, resets]).generate_state(1)[0]),
                          freeze_gamma="g" in state.frozen)
            for k in ("centers", "widths"):
                if k in state.params:
                    fresh.params[k] = state.params[k]
            state.params = fresh.params
            opt.reset(state)
        if config.patience and epoch - best_epoch >= config.patience:
            reason = StopReason.EARLY_STOP
            break
    if best_epoch == 0 and not custom_eval:
        best_cv = evaluate_errors(best, data)[1]
    return TrainResult(best, curve, reason, best_epoch, best_cv, epoch)


@dataclass
class RestartResults:
    best: TrainResult
    best_index: int
    runs: list[TrainResult]
    seeds: list[int]


def multi_restart_train(spec, data: EncodedDataset, config: TrainConfig,
                        init: Callable[[object, int], NetworkState] | None = None) -> RestartResults:
    """Independent runs seeded ``config.seed + i``; the best has minimum CV MSE.

    Diverged runs are kept and flagged; they only win when every run diverged.
    """
    init = init or (lambda sp, seed: build(sp, seed, freeze_gamma=config.freeze_gamma))
    runs, seeds = [], []
    for i in range(config.restarts):
        seed = config.seed + i
        res = train(init(spec, seed), data, replace(config, seed=seed))
        runs.append(res)
        seeds.append(seed)
    pool = [i for i, r in enumerate(runs) if not r.diverged] or list(range(len(runs)))
    best_i = min(pool, key=lambda i: (_nan_high(runs[i].best_cv_mse), i))
    return RestartResults(runs[best_i], best_i, runs, seeds)


def _nan_high(v: float) -> float:
    return math.inf if not math.isfinite(v) else v
