"""scikit-learn style front end for training and running a learned observer."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from . import network, optimize, sampling, simulate, verify
from .exceptions import ConfigError
from .loss import LossSpec
from .systems import SystemModel, get_system

# loss weights tuned for the two built-in systems
BENCHMARK_WEIGHTS = {
    "vanderpol": {"mu1": 1e-3, "mu2": 1.0, "rho": (1.0, 0.1)},
    "reverse_duffing": {"mu1": 1.0, "mu2": 1.0, "rho": (1.0, 1.0)},
}


class ContractionObserver(TransformerMixin, BaseEstimator):
    """Observer whose correction gain is a network trained on the contraction inequality.

    ``fit`` needs no labels: collocation points are sampled from the
    system's box unless ``X`` (rows of ``(x_hat, y)``) is given. After
    fitting, ``predict`` evaluates the gain and ``transform`` runs the
    observer over a sampled measurement sequence.

    Parameters
    ----------
    system : str or SystemModel
        Registered system name or a model instance.
    hidden_layer_sizes : tuple of int
    contraction_rate : float
        Target rate ``lambda``; above 2 for the noise-robustness bound.
    mu1, mu2, rho : float, float, tuple or None
        Loss weights. ``None`` takes the benchmark values for the two built-in
        systems and 1 otherwise.
    penalty_form : {"hinge", "squared_hinge"}
    n_collocation : int
    adam_epochs, lbfgs_epochs : int
    learning_rate : float
        Adam step size.
    lbfgs_step : float
        Initial trial step of the L-BFGS line search.
    batch_size : int or None
        Adam minibatch size; None is full batch.
    dt : float
        Sampling interval assumed by ``transform``.
    random_state : int
    """

    def __init__(self, system="vanderpol", hidden_layer_sizes=(30, 30, 30, 30, 30),
                 contraction_rate=2.5, mu1=None, mu2=None, rho=None, penalty_form="hinge",
                 n_collocation=4000, adam_epochs=500, lbfgs_epochs=500, learning_rate=1e-3,
                 lbfgs_step=1.0, batch_size=None, dt=1e-3, random_state=0):
        self.system = system
        self.hidden_layer_sizes = hidden_layer_sizes
        self.contraction_rate = contraction_rate
        self.mu1 = mu1
        self.mu2 = mu2
        self.rho = rho
        self.penalty_form = penalty_form
        self.n_collocation = n_collocation
        self.adam_epochs = adam_epochs
        self.lbfgs_epochs = lbfgs_epochs
        self.learning_rate = learning_rate
        self.lbfgs_step = lbfgs_step
        self.batch_size = batch_size
        self.dt = dt
        self.random_state = random_state

    def _resolve_system(self) -> SystemModel:
        if isinstance(self.system, SystemModel):
            return self.system
        if isinstance(self.system, str):
            return get_system(self.system)
        raise ConfigError("system must be a registered name or a SystemModel")

    def _loss_spec(self, system) -> LossSpec:
        defaults = BENCHMARK_WEIGHTS.get(system.name, {"mu1": 1.0, "mu2": 1.0,
                                                       "rho": (1.0,) * system.n})
        return LossSpec(
            self.contraction_rate,
            defaults["mu1"] if self.mu1 is None else self.mu1,
            defaults["mu2"] if self.mu2 is None else self.mu2,
            defaults["rho"] if self.rho is None else self.rho,
            self.penalty_form,
        )

    def fit(self, X=None, y=None):
        """Train the gain. ``X`` optionally supplies the collocation rows; ``y`` is ignored."""
        system = self._resolve_system()
        spec = self._loss_spec(system)
        if len(spec.rho) != system.n:
            raise ConfigError(f"rho needs {system.n} entries")
        if X is None:
            colloc = sampling.sample_collocation(system, self.n_collocation, self.random_state)
        else:
            X = check_array(X, ensure_2d=True, dtype=float, ensure_all_finite=True)
            if X.shape[1] != system.n + system.p:
                raise ValueError(
                    f"X has {X.shape[1]} columns, expected {system.n + system.p} (x_hat, y)"
                )
            colloc = sampling.CollocationSet(X[:, :system.n], X[:, system.n:], None,
                                             system.domain_x, system.domain_y)
        dims = [system.n + system.p, *self.hidden_layer_sizes, system.n]
        net0 = network.init_params(dims, self.random_state)
        tcfg = optimize.TrainConfig(
            adam_epochs=self.adam_epochs, lbfgs_epochs=self.lbfgs_epochs,
            alpha=self.learning_rate, beta=self.lbfgs_step,
            batch_size=self.batch_size, seed=self.random_state,
        )
        net, record = optimize.train(system, net0, colloc, spec, tcfg)
        net.metadata = {"system": system.name, "lambda": spec.lam}
        self.system_ = system
        self.loss_spec_ = spec
        self.net_ = net
        self.history_ = record
        self.n_features_in_ = system.n + system.p
        return self

    def predict(self, X):
        """Gain values ``k(x_hat, y)`` for rows of ``(x_hat, y)``."""
        check_is_fitted(self, "net_")
        X = check_array(X, ensure_2d=True, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} columns, expected {self.n_features_in_}")
        return network.forward(self.net_, X)

    def transform(self, X, xhat0=None):
        """State estimates from a measurement sequence sampled every ``dt``.

        ``X`` has one row per sample and ``p`` columns. Returns ``(T, n)``.
        """
        check_is_fitted(self, "net_")
        X = check_array(X, ensure_2d=True, dtype=float)
        if X.shape[1] != self.system_.p:
            raise ValueError(f"measurements need {self.system_.p} columns, got {X.shape[1]}")
        if xhat0 is None:
            xhat0 = np.zeros(self.system_.n)
        return simulate.run_observer(self.system_, self.net_, X, self.dt, xhat0)

    def fit_transform(self, X, y=None, **fit_params):
        # fitting uses collocation points, not the measurement sequence
        return self.fit(**fit_params).transform(X)

    def verify(self, grid_per_axis=50, tol=1e-2):
        """Grid report for the fitted gain (see :func:`contraction_pinn.verify.verify`)."""
        check_is_fitted(self, "net_")
        return verify.verify(self.system_, self.net_, self.loss_spec_.lam, grid_per_axis, tol)

    def lipschitz_bound(self):
        check_is_fitted(self, "net_")
        return network.lipschitz_bound(self.net_, self.system_.n)
