"""Plant models: vector field, analytic Jacobian, output map and training boxes.

All callables are vectorised over leading axes: ``f(x)`` accepts ``(..., n)``
and returns ``(..., n)``; ``jac_f(x)`` returns ``(..., n, n)``; ``h(x)``
returns ``(..., p)``.

Forward invariance of the boxes is the caller's responsibility; nothing here
checks it.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .exceptions import ConfigError


@dataclass(frozen=True)
class SystemModel:
    name: str
    n: int
    p: int
    f: Callable
    jac_f: Callable
    h: Callable
    domain_x: np.ndarray  # (n, 2) rows of [low, high]
    domain_y: np.ndarray  # (p, 2)
    x0: tuple | None = None  # default plant initial state for simulation

    def __post_init__(self):
        dx = np.asarray(self.domain_x, dtype=float).reshape(self.n, 2)
        dy = np.asarray(self.domain_y, dtype=float).reshape(self.p, 2)
        for box in (dx, dy):
            if not np.all(np.isfinite(box)) or np.any(box[:, 0] > box[:, 1]):
                raise ConfigError(f"{self.name}: invalid domain box {box.tolist()}")
        dx.setflags(write=False)
        dy.setflags(write=False)
        object.__setattr__(self, "domain_x", dx)
        object.__setattr__(self, "domain_y", dy)

    @property
    def domain(self) -> np.ndarray:
        """Stacked box over (x_hat, y), shape ``(n + p, 2)``."""
        return np.vstack([self.domain_x, self.domain_y])


def _vdp_f(x):
    x = np.asarray(x, dtype=float)
    x1, x2 = x[..., 0], x[..., 1]
    return np.stack([x2, -x1 + x2 * (1.0 - x1 * x1)], axis=-1)


def _vdp_jac(x):
    x = np.asarray(x, dtype=float)
    x1, x2 = x[..., 0], x[..., 1]
    jac = np.zeros(x.shape[:-1] + (2, 2))
    jac[..., 0, 1] = 1.0
    jac[..., 1, 0] = -1.0 - 2.0 * x1 * x2
    jac[..., 1, 1] = 1.0 - x1 * x1
    return jac


def _first_state(x):
    x = np.asarray(x, dtype=float)
    return x[..., :1].copy()


def vanderpol() -> SystemModel:
    """Unforced Van der Pol oscillator with unit damping, measuring x1."""
    return SystemModel(
        name="vanderpol",
        n=2,
        p=1,
        f=_vdp_f,
        jac_f=_vdp_jac,
        h=_first_state,
        domain_x=[[-2.0, 2.0], [-3.0, 3.0]],
        domain_y=[[-2.0, 2.0]],
        x0=(-1.0, 2.5),
    )


def _duffing_f(x):
    x = np.asarray(x, dtype=float)
    x1, x2 = x[..., 0], x[..., 1]
    return np.stack([x2 ** 3, -x1], axis=-1)


def _duffing_jac(x):
    x = np.asarray(x, dtype=float)
    x2 = x[..., 1]
    jac = np.zeros(x.shape[:-1] + (2, 2))
    jac[..., 0, 1] = 3.0 * x2 * x2
    jac[..., 1, 0] = -1.0
    return jac


def reverse_duffing() -> SystemModel:
    """Reverse Duffing oscillator x1' = x2^3, x2' = -x1, measuring x1."""
    return SystemModel(
        name="reverse_duffing",
        n=2,
        p=1,
        f=_duffing_f,
        jac_f=_duffing_jac,
        h=_first_state,
        domain_x=[[-1.0, 1.0], [-1.0, 1.0]],
        domain_y=[[-1.0, 1.0]],
        x0=(-0.5, 0.5),
    )


def linear(a, c, domain_x, domain_y, name="linear") -> SystemModel:
    """Linear plant x' = A x, y = C x. Mostly useful for tests and sanity checks."""
    a = np.array(a, dtype=float)
    c = np.array(c, dtype=float)
    n, p = a.shape[0], c.shape[0]
    a.setflags(write=False)
    c.setflags(write=False)

    def f(x):
        return np.asarray(x, dtype=float) @ a.T

    def jac_f(x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(a, x.shape[:-1] + (n, n)).copy()

    def h(x):
        return np.asarray(x, dtype=float) @ c.T

    return SystemModel(name, n, p, f, jac_f, h, domain_x, domain_y)


_REGISTRY: dict[str, Callable[[], SystemModel]] = {
    "vanderpol": vanderpol,
    "reverse_duffing": reverse_duffing,
}


def register_system(name: str, factory: Callable[[], SystemModel]) -> None:
    """Make a user system available by name (CLI configs, checkpoints)."""
    _REGISTRY[name] = factory


def get_system(name: str) -> SystemModel:
    try:
        return _REGISTRY[name]()
    except KeyError:
        raise ConfigError(
            f"unknown system {name!r}; available: {sorted(_REGISTRY)}"
        ) from None


def available_systems() -> list[str]:
    return sorted(_REGISTRY)


@dataclass
class ValidationReport:
    name: str
    samples: int
    max_rel_error: float
    worst_point: list
    tolerance: float
    non_finite: int

    @property
    def ok(self) -> bool:
        return self.non_finite == 0 and self.max_rel_error < self.tolerance


def finite_difference_jacobian(f, x, step=1e-5) -> np.ndarray:
    """Central-difference Jacobian of ``f`` at a single point ``x``."""
    x = np.asarray(x, dtype=float)
    cols = []
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = step
        cols.append((np.asarray(f(x + e)) - np.asarray(f(x - e))) / (2.0 * step))
    return np.stack(cols, axis=-1)


def validate(model: SystemModel, samples=100, seed=0, tolerance=1e-6) -> ValidationReport:
    """Compare the analytic Jacobian against central differences at random domain points.

    The relative error is ``|J_fd - J|_F / max(|J|_F, 1)``. Mismatches are
    reported through ``ValidationReport.ok``, never raised.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    rng = np.random.default_rng(seed)
    lo, hi = model.domain_x[:, 0], model.domain_x[:, 1]
    pts = lo + (hi - lo) * rng.random((samples, model.n))
    worst, worst_pt, non_finite = 0.0, None, 0
    for x in pts:
        fx, hx = model.f(x), model.h(x)
        if not (np.all(np.isfinite(fx)) and np.all(np.isfinite(hx))):
            non_finite += 1
            continue
        jac = np.asarray(model.jac_f(x))
        fd = finite_difference_jacobian(model.f, x)
        err = np.linalg.norm(fd - jac) / max(np.linalg.norm(jac), 1.0)
        if not np.isfinite(err):
            non_finite += 1
            continue
        if worst_pt is None or err > worst:
            worst, worst_pt = float(err), x.tolist()
    return ValidationReport(model.name, samples, worst, worst_pt, tolerance, non_finite)
