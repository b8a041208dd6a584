"""Collocation points over the (x_hat, y) training box."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import ConfigError


@dataclass(frozen=True)
class CollocationSet:
    x_hat: np.ndarray  # (N, n)
    y: np.ndarray  # (N, p)
    seed: int | None = None
    domain_x: np.ndarray | None = field(default=None, repr=False)
    domain_y: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        x = np.atleast_2d(np.asarray(self.x_hat, dtype=float))
        y = np.atleast_2d(np.asarray(self.y, dtype=float))
        if x.shape[0] != y.shape[0] or x.shape[0] < 1:
            raise ConfigError(
                f"collocation set needs matching nonempty x_hat/y, got {x.shape} and {y.shape}"
            )
        object.__setattr__(self, "x_hat", x)
        object.__setattr__(self, "y", y)

    def __len__(self):
        return self.x_hat.shape[0]

    @property
    def inputs(self) -> np.ndarray:
        """Network inputs, rows of ``(x_hat, y)``."""
        return np.hstack([self.x_hat, self.y])

    def subset(self, idx) -> "CollocationSet":
        return CollocationSet(self.x_hat[idx], self.y[idx], self.seed, self.domain_x, self.domain_y)


def _check_box(box, name):
    box = np.asarray(box, dtype=float)
    if box.ndim != 2 or box.shape[1] != 2:
        raise ConfigError(f"{name} must be an array of [low, high] rows")
    if not np.all(np.isfinite(box)) or np.any(box[:, 0] > box[:, 1]):
        raise ConfigError(f"{name} is empty or not finite: {box.tolist()}")
    return box


def sample_collocation(system, n_points, seed=0) -> CollocationSet:
    """Draw ``n_points`` i.i.d. uniform samples of x_hat in X and, independently, y in Y."""
    if int(n_points) < 1:
        raise ConfigError("n_points must be >= 1")
    n_points = int(n_points)
    dx = _check_box(system.domain_x, "domain_x")
    dy = _check_box(system.domain_y, "domain_y")
    rng = np.random.default_rng(seed)
    x = rng.uniform(dx[:, 0], dx[:, 1], size=(n_points, dx.shape[0]))
    y = rng.uniform(dy[:, 0], dy[:, 1], size=(n_points, dy.shape[0]))
    # uniform() can round up to the upper bound; clip guards the box invariant
    x = np.clip(x, dx[:, 0], dx[:, 1])
    y = np.clip(y, dy[:, 0], dy[:, 1])
    return CollocationSet(x, y, seed, dx, dy)


def batches(cset: CollocationSet, batch_size=None, seed=0) -> list[CollocationSet]:
    """Shuffled partition of ``cset`` into batches; the last one may be short.

    ``batch_size`` of None or >= N returns ``[cset]`` unchanged.
    """
    n = len(cset)
    if batch_size is None or batch_size >= n:
        return [cset]
    if batch_size < 1:
        raise ConfigError("batch_size must be >= 1")
    order = np.random.default_rng(seed).permutation(n)
    return [cset.subset(order[i:i + batch_size]) for i in range(0, n, batch_size)]


def save_collocation(cset: CollocationSet, path) -> Path:
    path = Path(path)
    n, p = cset.x_hat.shape[1], cset.y.shape[1]
    header = ",".join([f"xhat{i + 1}" for i in range(n)] + [f"y{i + 1}" for i in range(p)])
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(path, cset.inputs, delimiter=",", header=header, comments="", fmt="%.17g")
    return path
