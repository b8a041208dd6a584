"""Feed-forward network for the observer gain, written directly on numpy.

The network maps ``u = (x_hat, y)`` to a correction vector of length ``n``.
Besides the value it provides the input Jacobian (propagated in forward mode
alongside the activations) and a reverse pass through *both* the value and
the Jacobian, which is what the contraction loss needs: that loss depends
on ``d k / d x_hat`` so its parameter gradient involves mixed second
derivatives of the network.

Parameter layout of the flat vector: all weight matrices in layer order,
each row-major, followed by all bias vectors in layer order.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import CheckpointError, ShapeError

CHECKPOINT_VERSION = 1

# name -> (sigma, sigma', sigma'' as functions of the pre-activation z and
# the already computed a = sigma(z)), global Lipschitz constant
_ACTIVATIONS = {
    "tanh": (
        np.tanh,
        lambda z, a: 1.0 - a * a,
        lambda z, a: -2.0 * a * (1.0 - a * a),
        1.0,
    ),
    "identity": (
        lambda z: z,
        lambda z, a: np.ones_like(z),
        lambda z, a: np.zeros_like(z),
        1.0,
    ),
}


@dataclass
class Mlp:
    """Weights, biases and hidden-layer activation of the gain network.

    ``weights[l]`` has shape ``(layer_dims[l + 1], layer_dims[l])``. The
    activation is applied on hidden layers only; the output layer is affine.
    """

    layer_dims: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "tanh"
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.layer_dims = [int(d) for d in self.layer_dims]
        if len(self.layer_dims) < 2 or min(self.layer_dims) < 1:
            raise ShapeError(f"invalid layer_dims {self.layer_dims}")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(
                f"unknown activation {self.activation!r}; "
                f"expected one of {sorted(_ACTIVATIONS)}"
            )
        n_layers = len(self.layer_dims) - 1
        if len(self.weights) != n_layers or len(self.biases) != n_layers:
            raise ShapeError("number of weight/bias arrays does not match layer_dims")
        self.weights = [np.asarray(w, dtype=float) for w in self.weights]
        self.biases = [np.asarray(b, dtype=float) for b in self.biases]
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            expected = (self.layer_dims[l + 1], self.layer_dims[l])
            if w.shape != expected:
                raise ShapeError(f"layer {l} weight shape {w.shape}, expected {expected}")
            if b.shape != (expected[0],):
                raise ShapeError(f"layer {l} bias shape {b.shape}, expected {(expected[0],)}")

    @property
    def n_inputs(self) -> int:
        return self.layer_dims[0]

    @property
    def n_outputs(self) -> int:
        return self.layer_dims[-1]

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def copy(self) -> "Mlp":
        return Mlp(
            list(self.layer_dims),
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.activation,
            dict(self.metadata),
        )


def pack(net: Mlp) -> np.ndarray:
    """Flatten the parameters: weights (row-major, by layer) then biases."""
    return np.concatenate(
        [w.ravel() for w in net.weights] + [b.ravel() for b in net.biases]
    )


def unpack(net: Mlp, flat) -> Mlp:
    """Return a new network shaped like ``net`` holding the values in ``flat``."""
    flat = np.asarray(flat, dtype=float)
    if flat.shape != (net.n_params,):
        raise ShapeError(f"parameter vector has shape {flat.shape}, expected ({net.n_params},)")
    weights, biases, pos = [], [], 0
    for w in net.weights:
        weights.append(flat[pos:pos + w.size].reshape(w.shape).copy())
        pos += w.size
    for b in net.biases:
        biases.append(flat[pos:pos + b.size].copy())
        pos += b.size
    return Mlp(list(net.layer_dims), weights, biases, net.activation, dict(net.metadata))


def init_params(layer_dims, seed=0, activation="tanh") -> Mlp:
    """Glorot-uniform weights, zero biases; deterministic for a given seed."""
    rng = np.random.default_rng(seed)
    dims = [int(d) for d in layer_dims]
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return Mlp(dims, weights, biases, activation)


def zeros_like_shape(layer_dims, activation="tanh") -> Mlp:
    dims = [int(d) for d in layer_dims]
    return Mlp(
        dims,
        [np.zeros((o, i)) for i, o in zip(dims[:-1], dims[1:])],
        [np.zeros(o) for o in dims[1:]],
        activation,
    )


def _as_batch(net: Mlp, u):
    u = np.asarray(u, dtype=float)
    single = u.ndim == 1
    if single:
        u = u[None, :]
    if u.ndim != 2 or u.shape[1] != net.n_inputs:
        raise ShapeError(f"input has shape {u.shape}, network expects {net.n_inputs} features")
    return u, single


def forward(net: Mlp, u) -> np.ndarray:
    """Evaluate the network on one input vector or a batch of rows."""
    a, single = _as_batch(net, u)
    sigma = _ACTIVATIONS[net.activation][0]
    last = len(net.weights) - 1
    for l, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = a @ w.T + b
        a = z if l == last else sigma(z)
    return a[0] if single else a


class _Tape:
    """Activations and tangents kept from a forward pass for the reverse pass."""

    __slots__ = ("inputs", "pre", "post", "output", "jacobian")


def _forward_tape(net: Mlp, u, directions=None) -> _Tape:
    """Forward pass that also pushes input tangents through the network.

    ``directions`` selects which input coordinates the Jacobian is taken
    with respect to (default: all). ``tape.jacobian`` has shape
    ``(N, n_outputs, len(directions))``; ``directions=()`` skips tangents.
    Tangents are stored direction-major, ``(k, N, width)``, so every layer
    is a plain matrix product.
    """
    a = u
    n_in = net.n_inputs
    if directions is None:
        directions = range(n_in)
    directions = list(directions)
    sigma, dsigma, _, _ = _ACTIVATIONS[net.activation]
    tape = _Tape()
    tape.inputs, tape.pre, tape.post = [], [], []
    t = None
    if directions:
        # tangent of the input along each selected coordinate axis
        t = np.zeros((len(directions), u.shape[0], n_in))
        t[np.arange(len(directions)), :, directions] = 1.0
    last = len(net.weights) - 1
    for l, (w, b) in enumerate(zip(net.weights, net.biases)):
        tape.inputs.append((a, t))
        z = a @ w.T + b
        zt = None if t is None else t @ w.T
        tape.pre.append((z, zt))
        if l == last:
            a, t = z, zt
            tape.post.append(None)
        else:
            a = sigma(z)
            ds = dsigma(z, a)
            t = None if zt is None else ds * zt
            tape.post.append((a, ds))
    tape.output = a
    tape.jacobian = None if t is None else np.moveaxis(t, 0, -1)
    return tape


def input_jacobian(net: Mlp, u) -> np.ndarray:
    """Jacobian of the output w.r.t. the full input, shape ``(n, n + p)``.

    The leading ``n`` columns are the derivative with respect to ``x_hat``,
    the trailing ``p`` with respect to ``y``. Batched inputs give a leading
    batch axis.
    """
    u, single = _as_batch(net, u)
    jac = _forward_tape(net, u).jacobian
    return jac[0] if single else jac


def backward(net: Mlp, tape: _Tape, grad_output=None, grad_jacobian=None) -> np.ndarray:
    """Reverse pass returning the flat parameter gradient.

    ``grad_output`` (N, n_out) is the loss derivative w.r.t. the network
    output; ``grad_jacobian`` (N, n_out, k) w.r.t. ``tape.jacobian``.
    Either may be None. Contributions are summed over the batch.
    """
    d2sigma = _ACTIVATIONS[net.activation][2]
    n_layers = len(net.weights)
    gw = [None] * n_layers
    gb = [None] * n_layers
    g_z = np.zeros_like(tape.output) if grad_output is None else grad_output
    g_zt = None if grad_jacobian is None else np.moveaxis(grad_jacobian, -1, 0)
    for l in range(n_layers - 1, -1, -1):
        a_in, t_in = tape.inputs[l]
        w = net.weights[l]
        gw_l = g_z.T @ a_in
        gb[l] = g_z.sum(axis=0)
        if g_zt is not None:
            gw_l = gw_l + g_zt.reshape(-1, w.shape[0]).T @ t_in.reshape(-1, w.shape[1])
        gw[l] = gw_l
        if l == 0:
            break
        z_prev, zt_prev = tape.pre[l - 1]
        a_prev, ds_prev = tape.post[l - 1]
        g_z = ds_prev * (g_z @ w)
        if g_zt is not None:
            g_t = g_zt @ w
            # t = sigma'(z) * zt depends on the parameters through both factors
            g_z = g_z + d2sigma(z_prev, a_prev) * np.sum(zt_prev * g_t, axis=0)
            g_zt = ds_prev * g_t
    return np.concatenate([g.ravel() for g in gw] + [g.ravel() for g in gb])


def loss_gradient(net: Mlp, batch, spec, system) -> np.ndarray:
    """Gradient of the weighted contraction + boundary loss w.r.t. the flat parameters."""
    from .loss import evaluate

    return evaluate(system, net, batch, spec, with_grad=True).grad


def spectral_norm(a, tol=1e-6, max_iter=500) -> float:
    """Largest singular value by power iteration on ``a.T @ a``."""
    a = np.asarray(a, dtype=float)
    if a.size == 0 or not np.any(a):
        return 0.0
    ata = a.T @ a
    v = np.ones(ata.shape[0]) + 0.01 * np.arange(ata.shape[0])
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        w = ata @ v
        norm_w = np.linalg.norm(w)
        if norm_w == 0.0:
            # start vector in the null space; restart from a generic vector
            v = np.random.default_rng(0).standard_normal(ata.shape[0])
            v /= np.linalg.norm(v)
            continue
        v = w / norm_w
        lam_new = float(v @ ata @ v)
        if abs(lam_new - lam) <= tol * abs(lam_new):
            lam = lam_new
            break
        lam = lam_new
    return float(np.sqrt(max(lam, 0.0)))


def lipschitz_bound(net: Mlp, n_state=None) -> float:
    """Upper bound on the Lipschitz constant of the gain w.r.t. its output argument.

    Product of layer spectral norms, the first restricted to the columns fed
    by ``y`` (the last ``n_inputs - n_state`` inputs), times the activation's
    Lipschitz constant for every hidden layer.
    """
    if n_state is None:
        n_state = net.n_outputs
    lip_sigma = _ACTIVATIONS[net.activation][3]
    bound = spectral_norm(net.weights[0][:, n_state:])
    for w in net.weights[1:]:
        bound *= lip_sigma * spectral_norm(w)
    return float(bound)


def save_checkpoint(net: Mlp, path, metadata=None) -> Path:
    """Write the network as a versioned JSON document."""
    path = Path(path)
    doc = {
        "format": "contraction-pinn-checkpoint",
        "version": CHECKPOINT_VERSION,
        "layer_dims": list(net.layer_dims),
        "activation": net.activation,
        "weights": [w.tolist() for w in net.weights],
        "biases": [b.tolist() for b in net.biases],
        "metadata": metadata if metadata is not None else net.metadata,
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    # float repr is the shortest string that round-trips exactly
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    return path


def load_checkpoint(path) -> Mlp:
    path = Path(path)
    text = path.read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: not a JSON checkpoint ({exc})") from exc
    if not isinstance(doc, dict) or doc.get("format") != "contraction-pinn-checkpoint":
        raise CheckpointError(f"{path}: missing checkpoint format marker")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path}: unsupported checkpoint version {doc.get('version')!r} "
            f"(expected {CHECKPOINT_VERSION})"
        )
    try:
        net = Mlp(
            doc["layer_dims"],
            [np.array(w, dtype=float) for w in doc["weights"]],
            [np.array(b, dtype=float) for b in doc["biases"]],
            doc["activation"],
            doc.get("metadata", {}),
        )
    except (KeyError, ValueError, TypeError) as exc:
        raise CheckpointError(f"{path}: malformed checkpoint ({exc})") from exc
    if not np.all(np.isfinite(pack(net))):
        raise CheckpointError(f"{path}: checkpoint contains non-finite parameters")
    return net
