"""Closed-loop simulation of plant and learned observer under measurement noise."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import network
from .exceptions import ConfigError, ShapeError

METHODS = ("rk4", "euler")


@dataclass
class SimConfig:
    """Integration settings.

    ``noise_sigma`` is the standard deviation of the zero-mean Gaussian
    measurement noise; one draw is held over each integration step.
    """

    x0: tuple
    xhat0: tuple
    t_final: float = 20.0
    dt: float = 1e-3
    noise_sigma: float = 0.15
    noise_seed: int = 0
    method: str = "rk4"

    def __post_init__(self):
        self.x0 = tuple(float(v) for v in self.x0)
        self.xhat0 = tuple(float(v) for v in self.xhat0)
        if not self.dt > 0:
            raise ConfigError("dt must be > 0")
        if not self.t_final >= self.dt:
            raise ConfigError("t_final must be >= dt")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be >= 0")
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}")


@dataclass
class Trajectory:
    t: np.ndarray
    x: np.ndarray
    x_hat: np.ndarray
    y_e: np.ndarray
    err_norm: np.ndarray
    noise: np.ndarray
    diagnostic: str | None = None
    config: dict = field(default_factory=dict)

    def __len__(self):
        return self.t.shape[0]

    def to_csv(self, path, header_comment=None) -> Path:
        """Delimited text: t, x1..xn, xhat1..xhatn, ye1..yep, err_norm."""
        path = Path(path)
        n, p = self.x.shape[1], self.y_e.shape[1]
        cols = (["t"] + [f"x{i + 1}" for i in range(n)] + [f"xhat{i + 1}" for i in range(n)]
                + [f"ye{i + 1}" for i in range(p)] + ["err_norm"])
        data = np.column_stack([self.t, self.x, self.x_hat, self.y_e, self.err_norm])
        header = ",".join(cols)
        if header_comment:
            header = "\n".join(f"# {line}" for line in header_comment.splitlines()) + "\n" + header
        path.parent.mkdir(parents=True, exist_ok=True)
        np.savetxt(path, data, delimiter=",", header=header, comments="", fmt="%.17g")
        return path


def _rhs(system, net, z, v):
    n = system.n
    x, xh = z[:n], z[n:]
    y_e = system.h(x) + v
    k = network.forward(net, np.concatenate([xh, y_e]))
    return np.concatenate([system.f(x), system.f(xh) + k])


def simulate(system, net, config: SimConfig) -> Trajectory:
    """Integrate plant and observer together on a fixed grid.

    A non-finite state stops the integration; the trajectory is truncated
    at the last finite sample and ``diagnostic`` says why.
    """
    n, p = system.n, system.p
    if len(config.x0) != n or len(config.xhat0) != n:
        raise ShapeError(f"x0 and xhat0 must have length {n}")
    if net.n_inputs != n + p or net.n_outputs != n:
        raise ShapeError("network dimensions do not match the system")
    steps = int(round(config.t_final / config.dt))
    dt = config.dt
    t = np.arange(steps + 1) * dt
    rng = np.random.default_rng(config.noise_seed)
    noise = config.noise_sigma * rng.standard_normal((steps + 1, p))
    z = np.concatenate([config.x0, config.xhat0])
    states = np.empty((steps + 1, 2 * n))
    states[0] = z
    diagnostic = None
    last = steps
    for i in range(steps):
        v = noise[i]
        if config.method == "rk4":
            k1 = _rhs(system, net, z, v)
            k2 = _rhs(system, net, z + 0.5 * dt * k1, v)
            k3 = _rhs(system, net, z + 0.5 * dt * k2, v)
            k4 = _rhs(system, net, z + dt * k3, v)
            z = z + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        else:
            z = z + dt * _rhs(system, net, z, v)
        if not np.all(np.isfinite(z)):
            diagnostic = f"non-finite state at t = {t[i + 1]:.6g}; trajectory truncated"
            last = i
            break
        states[i + 1] = z
    sl = slice(0, last + 1)
    x, x_hat = states[sl, :n], states[sl, n:]
    y_e = system.h(x) + noise[sl]
    return Trajectory(
        t=t[sl],
        x=x,
        x_hat=x_hat,
        y_e=y_e,
        err_norm=np.linalg.norm(x - x_hat, axis=1),
        noise=noise[sl],
        diagnostic=diagnostic,
        config={k: getattr(config, k) for k in config.__dataclass_fields__},
    )


def run_observer(system, net, y_meas, dt, xhat0, method="rk4") -> np.ndarray:
    """Drive the observer with a sampled measurement sequence (zero-order hold).

    Returns the estimates at the sample instants, shape ``(T, n)``.
    """
    y_meas = np.asarray(y_meas, dtype=float).reshape(len(y_meas), system.p)
    xh = np.asarray(xhat0, dtype=float).copy()
    out = np.empty((y_meas.shape[0], system.n))
    out[0] = xh

    def rhs(state, y):
        return system.f(state) + network.forward(net, np.concatenate([state, y]))

    for i in range(y_meas.shape[0] - 1):
        y = y_meas[i]
        if method == "rk4":
            k1 = rhs(xh, y)
            k2 = rhs(xh + 0.5 * dt * k1, y)
            k3 = rhs(xh + 0.5 * dt * k2, y)
            k4 = rhs(xh + dt * k3, y)
            xh = xh + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        else:
            xh = xh + dt * rhs(xh, y)
        out[i + 1] = xh
    return out


def mse_percent(traj: Trajectory, settle_fraction=0.0) -> float:
    """Error energy over signal energy, in percent, after discarding a settling window."""
    if not 0.0 <= settle_fraction < 1.0:
        raise ValueError("settle_fraction must be in [0, 1)")
    start = int(np.floor(settle_fraction * len(traj)))
    x = traj.x[start:]
    e = x - traj.x_hat[start:]
    signal = float(np.mean(np.sum(x * x, axis=1)))
    if signal == 0.0:
        raise ValueError("mean squared state is zero; normalised error is undefined")
    return 100.0 * float(np.mean(np.sum(e * e, axis=1))) / signal


@dataclass
class IssReport:
    bound: np.ndarray
    violations: np.ndarray  # boolean mask over the time grid
    violation_fraction: float
    eta: float
    eps_bar: float
    lipschitz: float
    v_bar: float


def iss_envelope(traj: Trajectory, eta, eps_bar, lipschitz, v_bar) -> IssReport:
    """Input-to-state stability envelope on the trajectory's grid.

    bound(t) = e(0) * exp(-eta t) + eps_bar / (2 sqrt(eta)) + L * v_bar / (2 sqrt(eta)),
    valid for ``eta = lambda - 2 > 0``.
    """
    if not eta > 0:
        raise ValueError(
            f"eta must be > 0 (contraction rate lambda > 2 is required for the "
            f"input-to-state stability bound), got {eta}"
        )
    root = 2.0 * np.sqrt(eta)
    bound = traj.err_norm[0] * np.exp(-eta * traj.t) + eps_bar / root + lipschitz * v_bar / root
    viol = traj.err_norm > bound
    return IssReport(bound, viol, float(np.mean(viol)), float(eta), float(eps_bar),
                     float(lipschitz), float(v_bar))
