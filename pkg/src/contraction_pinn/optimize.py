"""Adam, L-BFGS and the two-phase training loop."""
from __future__ import annotations

import logging
import time
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import loss as loss_mod
from . import network
from .exceptions import ConfigError, NumericError
from .sampling import batches

log = logging.getLogger(__name__)

ARMIJO_C1 = 1e-4
WOLFE_C2 = 0.9
MAX_LINE_SEARCH = 25
CURVATURE_EPS = 1e-10


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8

    @classmethod
    def zeros(cls, size, betas=(0.9, 0.999), eps=1e-8):
        return cls(np.zeros(size), np.zeros(size), 0, tuple(betas), eps)


def adam_step(state: AdamState, params, grad, alpha):
    """One bias-corrected Adam update. Returns ``(new_params, state)``; the state is updated in place."""
    grad = np.asarray(grad, dtype=float)
    if grad.shape != state.m.shape:
        raise ValueError(f"gradient shape {grad.shape} does not match state {state.m.shape}")
    if not np.all(np.isfinite(grad)):
        raise NumericError("non-finite gradient passed to adam_step")
    b1, b2 = state.betas
    state.t += 1
    state.m = b1 * state.m + (1.0 - b1) * grad
    state.v = b2 * state.v + (1.0 - b2) * grad * grad
    m_hat = state.m / (1.0 - b1 ** state.t)
    v_hat = state.v / (1.0 - b2 ** state.t)
    return params - alpha * m_hat / (np.sqrt(v_hat) + state.eps), state


@dataclass
class LbfgsState:
    history: int = 10
    s: deque = field(default_factory=deque)
    y: deque = field(default_factory=deque)
    f: float | None = None
    g: np.ndarray | None = None
    n_rejected: int = 0
    n_evals: int = 0

    def reset(self):
        self.s.clear()
        self.y.clear()


@dataclass
class LbfgsInfo:
    accepted: bool
    step: float
    trials: int
    f: float
    grad_norm: float


def two_loop_direction(g, s_hist, y_hist):
    """Search direction ``-H g`` from the stored curvature pairs (steepest descent when empty)."""
    q = g.copy()
    alphas = []
    for s, y in zip(reversed(s_hist), reversed(y_hist)):
        rho = 1.0 / (y @ s)
        a = rho * (s @ q)
        q -= a * y
        alphas.append((rho, a))
    if s_hist:
        s, y = s_hist[-1], y_hist[-1]
        q *= (s @ y) / (y @ y)
    for (s, y), (rho, a) in zip(zip(s_hist, y_hist), reversed(alphas)):
        b = rho * (y @ q)
        q += (a - b) * s
    return -q


def lbfgs_step(state: LbfgsState, params, loss_and_grad: Callable, beta=1.0):
    """One L-BFGS iteration with a line search started at ``beta``.

    The trial step is halved while the Armijo condition fails and doubled
    while the curvature condition (weak Wolfe, ``WOLFE_C2``) fails, bisecting
    once both bounds are known. Without the curvature condition, steps on
    nonconvex losses give ``s.y <= 0`` and the history stops updating.

    ``loss_and_grad(params) -> (f, g)``. A search that finds no Armijo point
    in ``MAX_LINE_SEARCH`` trials rejects the step and clears the history;
    this is reported through the returned info, not raised.
    Returns ``(params, state, info)``.
    """
    params = np.asarray(params, dtype=float)
    if state.g is None or state.g.shape != params.shape:
        state.f, state.g = loss_and_grad(params)
        state.n_evals += 1
    f0, g0 = state.f, state.g
    if not (np.isfinite(f0) and np.all(np.isfinite(g0))):
        raise NumericError("non-finite loss or gradient at the current L-BFGS iterate")
    d = two_loop_direction(g0, list(state.s), list(state.y))
    slope = g0 @ d
    if not slope < 0:
        state.reset()
        d = -g0
        slope = g0 @ d
    if slope == 0.0:
        return params, state, LbfgsInfo(False, 0.0, 0, f0, 0.0)

    lo, hi = 0.0, np.inf
    step = float(beta)
    best = None
    for trial in range(1, MAX_LINE_SEARCH + 1):
        candidate = params + step * d
        f1, g1 = loss_and_grad(candidate)
        state.n_evals += 1
        if not (np.isfinite(f1) and np.all(np.isfinite(g1))) or f1 > f0 + ARMIJO_C1 * step * slope:
            hi = step
        else:
            best = (step, trial, candidate, f1, g1)
            if g1 @ d >= WOLFE_C2 * slope:
                break
            lo = step
        step = 0.5 * (lo + hi) if np.isfinite(hi) else 2.0 * lo
    if best is not None:
        step, trial, candidate, f1, g1 = best
        s_vec = candidate - params
        y_vec = g1 - g0
        if s_vec @ y_vec > CURVATURE_EPS:
            state.s.append(s_vec)
            state.y.append(y_vec)
            while len(state.s) > state.history:
                state.s.popleft()
                state.y.popleft()
        state.f, state.g = f1, g1
        return candidate, state, LbfgsInfo(True, step, trial, f1, float(np.linalg.norm(g1)))
    state.reset()
    state.n_rejected += 1
    log.info("L-BFGS line search failed after %d halvings; history reset", MAX_LINE_SEARCH)
    return params, state, LbfgsInfo(False, 0.0, MAX_LINE_SEARCH, f0, float(np.linalg.norm(g0)))


@dataclass
class TrainConfig:
    adam_epochs: int = 500
    lbfgs_epochs: int = 500
    alpha: float = 1e-3
    beta: float = 1.0
    adam_betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8
    lbfgs_history: int = 10
    batch_size: int | None = None
    seed: int = 0
    checkpoint_every: int = 0
    grad_clip: float | None = None

    def __post_init__(self):
        self.adam_betas = tuple(float(b) for b in self.adam_betas)
        if self.adam_epochs < 0 or self.lbfgs_epochs < 0 or self.checkpoint_every < 0:
            raise ConfigError("epoch counts and checkpoint_every must be >= 0")
        if not (self.alpha > 0 and self.beta > 0 and self.adam_eps > 0):
            raise ConfigError("alpha, beta and adam_eps must be > 0")
        if not all(0 <= b < 1 for b in self.adam_betas) or len(self.adam_betas) != 2:
            raise ConfigError("adam_betas must be two values in [0, 1)")
        if self.lbfgs_history < 1:
            raise ConfigError("lbfgs_history must be >= 1")
        if self.batch_size is not None and self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.grad_clip is not None and not self.grad_clip > 0:
            raise ConfigError("grad_clip must be > 0 when set")


RECORD_COLUMNS = ("epoch", "phase", "total", "mpdi", "bc", "grad_norm", "seconds")


@dataclass
class TrainRecord:
    epoch: list = field(default_factory=list)
    phase: list = field(default_factory=list)
    total: list = field(default_factory=list)
    mpdi: list = field(default_factory=list)
    bc: list = field(default_factory=list)
    grad_norm: list = field(default_factory=list)
    seconds: list = field(default_factory=list)
    lbfgs_rejections: int = 0

    def append(self, epoch, phase, terms, grad_norm, seconds):
        self.epoch.append(epoch)
        self.phase.append(phase)
        self.total.append(terms[0])
        self.mpdi.append(terms[1])
        self.bc.append(terms[2])
        self.grad_norm.append(grad_norm)
        self.seconds.append(seconds)

    def __len__(self):
        return len(self.epoch)

    def to_csv(self, path, header_comment=None, include_seconds=True) -> Path:
        """Write the history as comma-separated text (one row per epoch)."""
        path = Path(path)
        cols = RECORD_COLUMNS if include_seconds else RECORD_COLUMNS[:-1]
        lines = []
        if header_comment:
            lines.extend(f"# {line}" for line in header_comment.splitlines())
        lines.append(",".join(cols))
        for i in range(len(self)):
            row = [
                str(self.epoch[i]),
                self.phase[i],
                repr(float(self.total[i])),
                repr(float(self.mpdi[i])),
                repr(float(self.bc[i])),
                repr(float(self.grad_norm[i])),
            ]
            if include_seconds:
                row.append(f"{self.seconds[i]:.3f}")
            lines.append(",".join(row))
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("\n".join(lines) + "\n")
        return path


class TrainingError(RuntimeError):
    """Training hit a numeric failure; ``net`` and ``record`` hold the last good state."""

    def __init__(self, message, net, record):
        super().__init__(message)
        self.net = net
        self.record = record


def train(system, net, collocation, loss_spec, config: TrainConfig,
          checkpoint_dir=None, callback=None):
    """Adam phase followed by a full-batch L-BFGS phase.

    Returns ``(trained_net, record)``. The input network is not modified.
    ``callback(epoch, phase, terms)`` is called after each epoch if given.
    """
    record = TrainRecord()
    theta = network.pack(net)
    template = net.copy()
    last_good = theta.copy()
    start = time.perf_counter()

    def evaluate(params, batch):
        terms = loss_mod.evaluate(system, network.unpack(template, params), batch, loss_spec,
                                  with_grad=True)
        return terms

    def maybe_checkpoint(epoch, params):
        if checkpoint_dir and config.checkpoint_every and epoch % config.checkpoint_every == 0:
            snapshot = network.unpack(template, params)
            network.save_checkpoint(
                snapshot, Path(checkpoint_dir) / f"checkpoint_{epoch:05d}.json",
                metadata={**template.metadata, "epoch": epoch},
            )

    def fail(message, params):
        raise TrainingError(message, network.unpack(template, params), record)

    adam = AdamState.zeros(theta.size, config.adam_betas, config.adam_eps)
    epoch = 0
    for q in range(config.adam_epochs):
        epoch += 1
        parts = batches(collocation, config.batch_size, seed=config.seed * 100003 + q)
        acc = np.zeros(3)
        gnorm_acc = 0.0
        for batch in parts:
            try:
                terms = evaluate(theta, batch)
            except NumericError as exc:
                fail(f"epoch {epoch} (adam): {exc}", last_good)
            g = terms.grad
            gnorm = float(np.linalg.norm(g))
            if config.grad_clip is not None and gnorm > config.grad_clip:
                g = g * (config.grad_clip / gnorm)
            w = len(batch) / len(collocation)
            acc += w * np.array([terms.total, terms.mpdi, terms.bc])
            gnorm_acc += w * gnorm
            theta, adam = adam_step(adam, theta, g, config.alpha)
            if not np.all(np.isfinite(theta)):
                fail(f"epoch {epoch} (adam): non-finite parameters", last_good)
            last_good = theta.copy()
        record.append(epoch, "adam", tuple(acc), gnorm_acc, time.perf_counter() - start)
        maybe_checkpoint(epoch, theta)
        if callback:
            callback(epoch, "adam", acc)

    if config.lbfgs_epochs:
        state = LbfgsState(history=config.lbfgs_history)
        last_terms = {}

        def loss_and_grad(params):
            try:
                terms = evaluate(params, collocation)
            except NumericError:
                return np.inf, np.full(params.shape, np.nan)
            last_terms[params.tobytes()] = terms
            return terms.total, terms.grad

        for q in range(config.lbfgs_epochs):
            epoch += 1
            try:
                theta, state, info = lbfgs_step(state, theta, loss_and_grad, config.beta)
            except NumericError as exc:
                fail(f"epoch {epoch} (lbfgs): {exc}", last_good)
            terms = last_terms.get(theta.tobytes())
            if terms is None:
                terms = evaluate(theta, collocation)
            last_terms.clear()
            last_terms[theta.tobytes()] = terms
            last_good = theta.copy()
            record.append(epoch, "lbfgs", (terms.total, terms.mpdi, terms.bc),
                          float(np.linalg.norm(terms.grad)), time.perf_counter() - start)
            maybe_checkpoint(epoch, theta)
            if callback:
                callback(epoch, "lbfgs", (terms.total, terms.mpdi, terms.bc))
        record.lbfgs_rejections = state.n_rejected

    trained = network.unpack(template, theta)
    return trained, record
