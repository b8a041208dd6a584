"""Grid certification of a trained gain.

The ground truth for the contraction inequality is the largest eigenvalue of
D at each grid point, not the minor sign pattern used during training:
non-strict leading minors do not characterise semidefiniteness.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import network
from .loss import _contraction_d

CHUNK = 16384


@dataclass
class VerificationReport:
    system: str
    lam: float
    tolerance: float
    grid_shape: list
    n_points: int = 0
    n_non_finite: int = 0
    pass_rate: float | None = None
    worst_point: list | None = None
    worst_eigenvalue: float | None = None
    bc_grid_shape: list | None = None
    bc_residual_max: float | None = None
    bc_residual_mean: float | None = None
    eps_bar_estimate: float | None = None
    lipschitz_bound_L: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)

    def save(self, path, extra=None) -> Path:
        path = Path(path)
        doc = {"report": self.to_dict()}
        if extra:
            doc.update(extra)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
        return path


def grid_points(box, per_axis) -> np.ndarray:
    """Uniform tensor grid over an axis-aligned box (rows of ``[low, high]``)."""
    if per_axis < 2:
        raise ValueError("grid_per_axis must be >= 2")
    axes = [np.linspace(lo, hi, per_axis) for lo, hi in np.asarray(box, dtype=float)]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(axes))


def max_eigenvalue_2x2(d) -> np.ndarray:
    """Largest eigenvalue of symmetric 2x2 matrices: mean plus radius."""
    a, b, c = d[..., 0, 0], d[..., 0, 1], d[..., 1, 1]
    mean = 0.5 * (a + c)
    return mean + np.hypot(0.5 * (a - c), b)


def max_eigenvalue(d) -> np.ndarray:
    d = np.asarray(d, dtype=float)
    if d.shape[-1] == 1:
        return d[..., 0, 0]
    if d.shape[-1] == 2:
        return max_eigenvalue_2x2(d)
    return np.linalg.eigvalsh(d)[..., -1]


def check_mpdi_grid(system, net, lam, grid_per_axis=50, tol=1e-2) -> VerificationReport:
    """Fraction of (x_hat, y) grid points where the largest eigenvalue of D is <= tol.

    Points with non-finite D are counted as failures and reported separately.
    """
    pts = grid_points(system.domain, grid_per_axis)
    n = system.n
    eig = np.empty(pts.shape[0])
    for start in range(0, pts.shape[0], CHUNK):
        chunk = pts[start:start + CHUNK]
        d, _ = _contraction_d(system, net, chunk[:, :n], chunk[:, n:], lam)
        eig[start:start + CHUNK] = max_eigenvalue(d)
    finite = np.isfinite(eig)
    passed = finite & (eig <= tol)
    report = VerificationReport(
        system=system.name,
        lam=float(lam),
        tolerance=float(tol),
        grid_shape=[grid_per_axis] * pts.shape[1],
        n_points=int(pts.shape[0]),
        n_non_finite=int(np.sum(~finite)),
        pass_rate=float(np.mean(passed)),
    )
    if np.any(finite):
        masked = np.where(finite, eig, -np.inf)
        j = int(np.argmax(masked))
        report.worst_point = pts[j].tolist()
        report.worst_eigenvalue = float(eig[j])
    return report


def check_bc_grid(system, net, grid_per_axis=50):
    """(max, mean) of |k(x, h(x))| over a grid on the state box."""
    pts = grid_points(system.domain_x, grid_per_axis)
    out = network.forward(net, np.hstack([pts, system.h(pts)]))
    r = np.linalg.norm(out, axis=1)
    return float(r.max()), float(r.mean())


def domain_diameter(system) -> float:
    box = system.domain_x
    return float(np.linalg.norm(box[:, 1] - box[:, 0]))


def estimate_eps_bar(report: VerificationReport, system, scale=1.0) -> float:
    """Heuristic bound on the gain's approximation error.

    The exact gain is unknown, so this combines the worst boundary-condition
    residual with the worst positive eigenvalue of D scaled by the diameter
    of the state box. It is an estimate, not a certificate.
    """
    if report.bc_residual_max is None or report.worst_eigenvalue is None:
        raise ValueError("report needs both the MPDI and boundary-condition grid fields")
    gap = max(0.0, report.worst_eigenvalue)
    return float(report.bc_residual_max + scale * gap * domain_diameter(system))


def verify(system, net, lam, grid_per_axis=50, tol=1e-2) -> VerificationReport:
    """Run both grid checks and fill in the eps_bar estimate and Lipschitz bound."""
    report = check_mpdi_grid(system, net, lam, grid_per_axis, tol)
    report.bc_grid_shape = [grid_per_axis] * system.n
    report.bc_residual_max, report.bc_residual_mean = check_bc_grid(system, net, grid_per_axis)
    report.eps_bar_estimate = estimate_eps_bar(report, system)
    report.lipschitz_bound_L = network.lipschitz_bound(net, system.n)
    return report
