"""Contraction (MPDI) and boundary-condition losses.

With the identity metric the contraction matrix at a collocation point is

    D(x_hat, y) = He{J_f(x_hat) + dk/dx_hat(x_hat, y)} + 2 * lam * I,

and the training surrogate penalises leading principal minors that break the
negative-semidefinite sign pattern ``(-1)^i * Delta_i >= 0``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import network
from .exceptions import ConfigError, NumericError, ShapeError

PENALTY_FORMS = ("hinge", "squared_hinge")


@dataclass
class LossSpec:
    lam: float = 2.5
    mu1: float = 1.0
    mu2: float = 1.0
    rho: tuple = (1.0, 1.0)
    penalty_form: str = "hinge"

    def __post_init__(self):
        self.lam = float(self.lam)
        self.mu1 = float(self.mu1)
        self.mu2 = float(self.mu2)
        self.rho = tuple(float(r) for r in self.rho)
        if not self.lam > 0:
            raise ConfigError(f"lambda must be > 0, got {self.lam}")
        if self.mu1 < 0 or self.mu2 < 0 or any(r < 0 for r in self.rho):
            raise ConfigError("loss weights mu1, mu2 and rho must be nonnegative")
        if self.penalty_form not in PENALTY_FORMS:
            raise ConfigError(
                f"penalty_form must be one of {PENALTY_FORMS}, got {self.penalty_form!r}"
            )
        if self.lam <= 2.0:
            warnings.warn(
                f"lambda = {self.lam} <= 2: the input-to-state stability bound "
                "needs lambda > 2; training proceeds without that guarantee",
                stacklevel=2,
            )


@dataclass
class ContractionMatrix:
    d: np.ndarray
    point: np.ndarray = field(repr=False)


@dataclass
class LossTerms:
    total: float
    mpdi: float
    bc: float
    grad: np.ndarray | None = None


def hermitian_part(m):
    return 0.5 * (m + np.swapaxes(m, -1, -2))


def _contraction_d(system, net, x_hat, y, lam):
    """Batched D and the tape of the network pass that produced it."""
    u = np.hstack([x_hat, y])
    tape = network._forward_tape(net, u, directions=range(system.n))
    d = hermitian_part(system.jac_f(x_hat) + tape.jacobian)
    d = d + 2.0 * lam * np.eye(system.n)
    return d, tape


def contraction_matrix(system, net, x_hat, y, lam) -> ContractionMatrix:
    x_hat = np.asarray(x_hat, dtype=float)
    y = np.asarray(y, dtype=float)
    if x_hat.shape != (system.n,) or y.shape != (system.p,):
        raise ShapeError(
            f"expected x_hat of length {system.n} and y of length {system.p}, "
            f"got {x_hat.shape} and {y.shape}"
        )
    if net.n_inputs != system.n + system.p or net.n_outputs != system.n:
        raise ShapeError("network dimensions do not match the system")
    d, _ = _contraction_d(system, net, x_hat[None], y[None], lam)
    return ContractionMatrix(d[0], np.concatenate([x_hat, y]))


def _det(a):
    """Determinant over the last two axes: closed form up to 3x3, LU beyond."""
    k = a.shape[-1]
    if k == 1:
        return a[..., 0, 0]
    if k == 2:
        return a[..., 0, 0] * a[..., 1, 1] - a[..., 0, 1] * a[..., 1, 0]
    if k == 3:
        return (
            a[..., 0, 0] * (a[..., 1, 1] * a[..., 2, 2] - a[..., 1, 2] * a[..., 2, 1])
            - a[..., 0, 1] * (a[..., 1, 0] * a[..., 2, 2] - a[..., 1, 2] * a[..., 2, 0])
            + a[..., 0, 2] * (a[..., 1, 0] * a[..., 2, 1] - a[..., 1, 1] * a[..., 2, 0])
        )
    return np.linalg.det(a)


def _cofactors(a):
    """Cofactor matrix over the last two axes, i.e. d det(a) / d a."""
    k = a.shape[-1]
    if k == 1:
        return np.ones_like(a)
    if k == 2:
        c = np.empty_like(a)
        c[..., 0, 0] = a[..., 1, 1]
        c[..., 0, 1] = -a[..., 1, 0]
        c[..., 1, 0] = -a[..., 0, 1]
        c[..., 1, 1] = a[..., 0, 0]
        return c
    if k == 3:
        r0, r1, r2 = a[..., 0, :], a[..., 1, :], a[..., 2, :]
        return np.stack([np.cross(r1, r2), np.cross(r2, r0), np.cross(r0, r1)], axis=-2)
    c = np.empty_like(a)
    idx = np.arange(k)
    for i in range(k):
        rows = idx[idx != i]
        for j in range(k):
            cols = idx[idx != j]
            sub = a[..., rows[:, None], cols[None, :]]
            c[..., i, j] = (-1) ** (i + j) * _det(sub)
    return c


def leading_minors(d) -> np.ndarray:
    """Leading principal minors ``[det(d[:1,:1]), ..., det(d)]`` (batched over leading axes)."""
    d = np.asarray(d, dtype=float)
    if d.ndim < 2 or d.shape[-1] != d.shape[-2]:
        raise ShapeError(f"expected square matrices, got shape {d.shape}")
    n = d.shape[-1]
    return np.stack([_det(d[..., :i, :i]) for i in range(1, n + 1)], axis=-1)


def _signs(n):
    # +1 for odd (1-based) minors, -1 for even: violation when sign * Delta > 0
    return np.array([1.0 if i % 2 == 1 else -1.0 for i in range(1, n + 1)])


def minor_penalty(minors, i) -> float:
    """Hinge on the i-th (1-based) leading minor: ``max(0, D_i)`` for odd i, ``max(0, -D_i)`` for even i."""
    minors = np.asarray(minors, dtype=float)
    n = minors.shape[-1]
    if not 1 <= i <= n:
        raise IndexError(f"minor index {i} outside 1..{n}")
    s = 1.0 if i % 2 == 1 else -1.0
    return np.maximum(0.0, s * minors[..., i - 1])


def _check_finite(arr, what):
    bad = ~np.all(np.isfinite(arr.reshape(arr.shape[0], -1)), axis=1)
    if np.any(bad):
        j = int(np.flatnonzero(bad)[0])
        raise NumericError(f"non-finite {what} at collocation index {j}", index=j)


def _check_dims(system, net, batch, spec=None):
    if net.n_inputs != system.n + system.p or net.n_outputs != system.n:
        raise ShapeError(
            f"network maps {net.n_inputs} -> {net.n_outputs}, system needs "
            f"{system.n + system.p} -> {system.n}"
        )
    if batch.x_hat.shape[1] != system.n or batch.y.shape[1] != system.p:
        raise ShapeError("collocation set dimensions do not match the system")
    if spec is not None and len(spec.rho) != system.n:
        raise ConfigError(f"rho needs {system.n} entries, got {len(spec.rho)}")


def _mpdi_terms(system, net, batch, spec, with_grad):
    d, tape = _contraction_d(system, net, batch.x_hat, batch.y, spec.lam)
    _check_finite(d, "contraction matrix")
    n = system.n
    minors = leading_minors(d)
    s = _signs(n)
    rho = np.asarray(spec.rho)
    viol = np.maximum(0.0, s * minors)  # (N, n)
    if spec.penalty_form == "hinge":
        per_point = viol @ rho
        dl = (viol > 0) * s  # d l_i / d Delta_i
    else:
        per_point = (viol * viol) @ rho
        dl = 2.0 * viol * s
    n_pts = d.shape[0]
    value = float(per_point.sum() / n_pts)
    if not with_grad:
        return value, None, tape
    coef = dl * rho / n_pts  # (N, n)
    g_d = np.zeros_like(d)
    for i in range(1, n + 1):
        if not np.any(coef[:, i - 1]):
            continue
        g_d[:, :i, :i] += coef[:, i - 1, None, None] * _cofactors(d[:, :i, :i])
    # D = He{M}: dL/dM is the symmetric part of dL/dD
    return value, hermitian_part(g_d), tape


def _bc_terms(system, net, batch, with_grad):
    u = np.hstack([batch.x_hat, system.h(batch.x_hat)])
    tape = network._forward_tape(net, u, directions=())
    out = tape.output
    _check_finite(out, "boundary-condition gain")
    n_pts = out.shape[0]
    value = float(np.sum(out * out) / n_pts)
    g_out = 2.0 * out / n_pts if with_grad else None
    return value, g_out, tape


def evaluate(system, net, batch, spec: LossSpec, with_grad=False) -> LossTerms:
    """Value (and optionally flat parameter gradient) of ``mu1 * mpdi + mu2 * bc``."""
    _check_dims(system, net, batch, spec)
    mpdi, g_jac, tape_d = _mpdi_terms(system, net, batch, spec, with_grad)
    bc, g_out, tape_bc = _bc_terms(system, net, batch, with_grad)
    total = spec.mu1 * mpdi + spec.mu2 * bc
    grad = None
    if with_grad:
        grad = np.zeros(net.n_params)
        if spec.mu1 != 0.0:
            grad += network.backward(net, tape_d, None, spec.mu1 * g_jac)
        if spec.mu2 != 0.0:
            grad += network.backward(net, tape_bc, spec.mu2 * g_out, None)
        if not np.all(np.isfinite(grad)):
            raise NumericError("non-finite loss gradient")
    return LossTerms(total, mpdi, bc, grad)


def mpdi_loss(system, net, batch, spec: LossSpec) -> float:
    _check_dims(system, net, batch, spec)
    return _mpdi_terms(system, net, batch, spec, False)[0]


def bc_loss(system, net, batch) -> float:
    _check_dims(system, net, batch)
    return _bc_terms(system, net, batch, False)[0]


def total_loss(system, net, batch, spec: LossSpec) -> float:
    return evaluate(system, net, batch, spec).total
