"""Residual MLPs with exact input jets and parameter gradients.

A network maps ``u = (t, x_1..x_d)`` to ``output_dim`` values.  Input
derivatives are propagated forward as Taylor coefficients along the
coordinate axes: one first-order tangent per input coordinate and one
second-order coefficient per *spatial* coordinate, which is all the
residual losses need (``d/dt``, ``grad_x``, ``Lap_x``).

Inside a layer all of these live in one stacked array of shape
``(slabs, B, width)``::

    slab 0             value
    slabs 1 .. 1+d     d/du_j          (j = 0 is time)
    slabs 2+d .. 1+2d  d^2/dx_k^2      (only when order == 2)

so the affine part of a layer is one matmul.  Parameter gradients are
obtained by reverse accumulation through exactly that computation.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, ndtr

_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


class Activation(enum.Enum):
    TANH = "Tanh"
    SOFTPLUS = "Softplus"
    SIN = "Sin"
    GELU = "Gelu"


class OutputTransform(enum.Enum):
    IDENTITY = "Identity"
    SOFTPLUS = "Softplus"


def _softplus(z):
    return np.logaddexp(0.0, z)


def activation_derivs(kind: Activation, z: np.ndarray, k: int) -> list[np.ndarray]:
    """``[f(z), f'(z), ..., f^(k)(z)]`` for ``k <= 3``."""
    if kind is Activation.TANH:
        f = np.tanh(z)
        f1 = 1 - f * f
        out = [f, f1, -2 * f * f1, f1 * (6 * f * f - 2)]
    elif kind is Activation.SOFTPLUS:
        s = expit(z)
        s1 = s * (1 - s)
        out = [_softplus(z), s, s1, s1 * (1 - 2 * s)]
    elif kind is Activation.SIN:
        sz, cz = np.sin(z), np.cos(z)
        out = [sz, cz, -sz, -cz]
    elif kind is Activation.GELU:
        cdf = ndtr(z)
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * z * z)
        out = [z * cdf, cdf + z * pdf, pdf * (2 - z * z), pdf * (z * z * z - 4 * z)]
    else:
        raise ValueError(kind)
    return out[: k + 1]


def _output_derivs(kind: OutputTransform, y: np.ndarray, k: int) -> list[np.ndarray] | None:
    if kind is OutputTransform.IDENTITY:
        return None
    return activation_derivs(Activation.SOFTPLUS, y, k)


@dataclass(frozen=True)
class NetworkSpec:
    input_dim: int
    output_dim: int
    hidden_widths: tuple[int, ...] = (100,)
    activation: Activation = Activation.TANH
    skip_weight: float = 0.5
    output_transform: OutputTransform = OutputTransform.IDENTITY

    def __post_init__(self):
        object.__setattr__(self, "hidden_widths", tuple(int(w) for w in self.hidden_widths))
        object.__setattr__(self, "activation", Activation(self.activation))
        object.__setattr__(self, "output_transform", OutputTransform(self.output_transform))
        if self.input_dim < 1 or self.output_dim < 1:
            raise ValueError("input and output dimensions must be >= 1")
        if not self.hidden_widths or min(self.hidden_widths) < 1:
            raise ValueError(f"hidden widths must be >= 1, got {self.hidden_widths}")
        if not 0.0 <= self.skip_weight <= 1.0:
            raise ValueError(f"skip_weight must lie in [0, 1], got {self.skip_weight}")

    @property
    def d(self) -> int:
        return self.input_dim - 1

    def layer_shapes(self) -> list[tuple[int, int]]:
        """``(fan_out, fan_in)`` of every affine map, output layer last."""
        widths = (self.input_dim,) + self.hidden_widths + (self.output_dim,)
        return [(widths[i + 1], widths[i]) for i in range(len(widths) - 1)]

    def n_params(self) -> int:
        return sum(o * i + o for o, i in self.layer_shapes())

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "output_dim": self.output_dim,
            "hidden_widths": list(self.hidden_widths),
            "activation": self.activation.value,
            "skip_weight": self.skip_weight,
            "output_transform": self.output_transform.value,
        }

    @classmethod
    def from_dict(cls, d: dict) -> NetworkSpec:
        return cls(**d)


@dataclass
class NetParams:
    """Flat parameter vector; ``layers()`` returns ``(W, b)`` views into it."""

    spec: NetworkSpec
    flat: np.ndarray

    def __post_init__(self):
        self.flat = np.asarray(self.flat, dtype=np.float64)
        if self.flat.shape != (self.spec.n_params(),):
            raise ValueError(f"expected {self.spec.n_params()} parameters, got {self.flat.shape}")

    def layers(self, flat: np.ndarray | None = None) -> list[tuple[np.ndarray, np.ndarray]]:
        flat = self.flat if flat is None else flat
        return unpack(self.spec, flat)

    def copy(self) -> NetParams:
        return NetParams(self.spec, self.flat.copy())


def unpack(spec: NetworkSpec, flat: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    out, pos = [], 0
    for o, i in spec.layer_shapes():
        W = flat[pos : pos + o * i].reshape(o, i)
        pos += o * i
        b = flat[pos : pos + o]
        pos += o
        out.append((W, b))
    return out


def init_network(spec: NetworkSpec, seed: int) -> NetParams:
    """Weights and biases ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in))."""
    rng = np.random.default_rng(seed)
    flat = np.empty(spec.n_params())
    for W, b in unpack(spec, flat):
        bound = 1.0 / np.sqrt(W.shape[1])
        W[...] = rng.uniform(-bound, bound, size=W.shape)
        b[...] = rng.uniform(-bound, bound, size=b.shape)
    return NetParams(spec, flat)


@dataclass
class Jet2:
    """Network outputs with their input derivatives at a batch of points.

    Shapes: ``value``, ``dt`` and ``lap_x`` are ``(B, m)``; ``grad_x`` is
    ``(B, m, d)``.  Derivatives not requested are ``None``.
    """

    value: np.ndarray
    dt: np.ndarray | None = None
    grad_x: np.ndarray | None = None
    lap_x: np.ndarray | None = None


@dataclass
class _Tape:
    order: int
    d: int
    inputs: list = field(default_factory=list)  # stacked layer inputs
    pre: list = field(default_factory=list)  # stacked pre-activations
    derivs: list = field(default_factory=list)  # activation derivatives
    skips: list = field(default_factory=list)
    out_pre: np.ndarray | None = None
    out_derivs: list | None = None


def _n_slabs(order: int, d: int) -> int:
    return 1 + (1 + d if order >= 1 else 0) + (d if order >= 2 else 0)


def _act_forward(derivs: list[np.ndarray], z: np.ndarray, order: int, d: int) -> np.ndarray:
    a = np.empty_like(z)
    a[0] = derivs[0][0]
    if order >= 1:
        f1 = derivs[1][0]
        a[1 : 2 + d] = f1 * z[1 : 2 + d]
    if order >= 2:
        f2 = derivs[2][0]
        dz = z[2 : 2 + d]  # spatial tangents
        a[2 + d :] = f2 * dz * dz + f1 * z[2 + d :]
    return a


def _act_backward(derivs: list[np.ndarray], z: np.ndarray, abar: np.ndarray, order: int, d: int) -> np.ndarray:
    zbar = np.empty_like(abar)
    f1 = derivs[1][0]
    zbar[0] = f1 * abar[0]
    if order >= 1:
        f2 = derivs[2][0]
        zbar[1 : 2 + d] = f1 * abar[1 : 2 + d]
        zbar[0] += np.sum(f2 * z[1 : 2 + d] * abar[1 : 2 + d], axis=0)
    if order >= 2:
        f3 = derivs[3][0]
        dz = z[2 : 2 + d]
        d2z = z[2 + d :]
        a2bar = abar[2 + d :]
        zbar[2 + d :] = f1 * a2bar
        zbar[2 : 2 + d] += 2 * f2 * dz * a2bar
        zbar[0] += np.sum((f3 * dz * dz + f2 * d2z) * a2bar, axis=0)
    return zbar


def _inputs(t, x, d: int) -> np.ndarray:
    t = np.atleast_1d(np.asarray(t, dtype=float))
    x = np.asarray(x, dtype=float)
    if x.ndim == 1 and d == 1 and x.shape[0] == t.shape[0]:
        x = x[:, None]
    x = np.atleast_2d(x)
    if x.shape[-1] != d:
        raise ValueError(f"expected points with {d} coordinates, got shape {x.shape}")
    if t.shape[0] != x.shape[0]:
        if t.shape[0] == 1:
            t = np.full(x.shape[0], t[0])
        else:
            raise ValueError(f"{t.shape[0]} times for {x.shape[0]} points")
    return np.concatenate([t[:, None], x], axis=1)


def jet_forward(params: NetParams, t, x, order: int = 2, flat: np.ndarray | None = None):
    """Evaluate the network and its input jet; returns ``(Jet2, tape)``.

    ``order`` 0 gives values only, 1 adds ``dt`` and ``grad_x``, 2 adds
    ``lap_x``.  ``flat`` overrides the stored parameter vector.
    """
    spec = params.spec
    d = spec.d
    u = _inputs(t, x, d)
    B = u.shape[0]
    S = np.zeros((_n_slabs(order, d), B, spec.input_dim))
    S[0] = u
    if order >= 1:
        for j in range(1 + d):
            S[1 + j, :, j] = 1.0
    tape = _Tape(order=order, d=d)
    layers = params.layers(flat)
    kmax = order + 1  # derivatives needed for the backward pass
    for li, (W, b) in enumerate(layers[:-1]):
        tape.inputs.append(S)
        z = S @ W.T
        z[0] += b
        derivs = activation_derivs(spec.activation, z[:1], kmax)
        a = _act_forward(derivs, z, order, d)
        skip = li > 0 and W.shape[0] == W.shape[1] and spec.skip_weight != 0.0
        if skip:
            a += spec.skip_weight * S
        tape.pre.append(z)
        tape.derivs.append(derivs)
        tape.skips.append(skip)
        S = a
    W, b = layers[-1]
    tape.inputs.append(S)
    y = S @ W.T
    y[0] += b
    out_derivs = _output_derivs(spec.output_transform, y[:1], kmax)
    tape.out_pre = y
    tape.out_derivs = out_derivs
    Y = y if out_derivs is None else _act_forward(out_derivs, y, order, d)
    jet = Jet2(value=Y[0])
    if order >= 1:
        jet.dt = Y[1]
        jet.grad_x = np.moveaxis(Y[2 : 2 + d], 0, -1)
    if order >= 2:
        jet.lap_x = Y[2 + d :].sum(axis=0)
    return jet, tape


def jet_backward(params: NetParams, tape: _Tape, adj: Jet2, flat: np.ndarray | None = None) -> np.ndarray:
    """Parameter gradient of ``sum(adj.value*value + adj.dt*dt + ...)``.

    ``adj`` holds the adjoints (cotangents) of the jet components; ``None``
    entries count as zero.
    """
    spec = params.spec
    d, order = tape.d, tape.order
    B = tape.out_pre.shape[1]
    m = spec.output_dim
    Ybar = np.zeros((_n_slabs(order, d), B, m))
    if adj.value is not None:
        Ybar[0] = adj.value
    if adj.dt is not None:
        _need(order, 1, "dt")
        Ybar[1] = adj.dt
    if adj.grad_x is not None:
        _need(order, 1, "grad_x")
        Ybar[2 : 2 + d] = np.moveaxis(adj.grad_x, -1, 0)
    if adj.lap_x is not None:
        _need(order, 2, "lap_x")
        Ybar[2 + d :] = adj.lap_x
    layers = params.layers(flat)
    grads = []
    ybar = Ybar if tape.out_derivs is None else _act_backward(tape.out_derivs, tape.out_pre, Ybar, order, d)
    W, _ = layers[-1]
    S = tape.inputs[-1]
    grads.append((_weight_grad(ybar, S), ybar[0].sum(axis=0)))
    Sbar = ybar @ W
    for li in range(len(layers) - 2, -1, -1):
        W, _ = layers[li]
        S = tape.inputs[li]
        zbar = _act_backward(tape.derivs[li], tape.pre[li], Sbar, order, d)
        grads.append((_weight_grad(zbar, S), zbar[0].sum(axis=0)))
        if li > 0:
            prev = zbar @ W
            if tape.skips[li]:
                prev += spec.skip_weight * Sbar
            Sbar = prev
    grads.reverse()
    return np.concatenate([np.concatenate([gW.ravel(), gb]) for gW, gb in grads])


def _need(order: int, k: int, name: str) -> None:
    if order < k:
        raise ValueError(f"adjoint for {name} given but the jet was evaluated with order {order}")


def _weight_grad(zbar: np.ndarray, S: np.ndarray) -> np.ndarray:
    n_out, n_in = zbar.shape[-1], S.shape[-1]
    return zbar.reshape(-1, n_out).T @ S.reshape(-1, n_in)


def forward(params: NetParams, t, x) -> np.ndarray:
    """Network values, shape ``(B, output_dim)``."""
    return jet_forward(params, t, x, order=0)[0].value


def input_jet(params: NetParams, t, x) -> Jet2:
    """Value, ``d/dt``, ``grad_x`` and ``Lap_x`` at a batch of points."""
    return jet_forward(params, t, x, order=2)[0]


class _Recorder:
    """Callable handed to loss evaluators; records tapes for the backward pass."""

    def __init__(self, params: NetParams, flat: np.ndarray | None = None):
        self.params = params
        self.flat = flat
        self.tapes = []

    def __call__(self, t, x, order: int = 2) -> Jet2:
        jet, tape = jet_forward(self.params, t, x, order, self.flat)
        self.tapes.append(tape)
        return jet


class NonFiniteLossError(FloatingPointError):
    pass


def loss_and_param_grad(evaluate, params: NetParams) -> tuple[float, np.ndarray]:
    """Scalar loss and its exact gradient with respect to ``params.flat``.

    ``evaluate(net)`` may call ``net(t, x, order)`` any number of times to
    obtain jets of the network and must return ``(loss, adjoints)`` where
    ``adjoints[i]`` is the :class:`Jet2` of partial derivatives of the
    loss with respect to the ``i``-th returned jet.
    """
    rec = _Recorder(params)
    loss, adjoints = evaluate(rec)
    if not np.isfinite(loss):
        raise NonFiniteLossError(f"non-finite loss {loss}")
    if len(adjoints) != len(rec.tapes):
        raise ValueError(f"{len(rec.tapes)} network calls but {len(adjoints)} adjoints")
    grad = np.zeros_like(params.flat)
    for tape, adj in zip(rec.tapes, adjoints):
        if adj is not None:
            grad += jet_backward(params, tape, adj)
    return float(loss), grad


def save_params(path, params: NetParams) -> None:
    """Write a ``.npz`` checkpoint holding the flat vector and the spec as JSON."""
    np.savez(path, flat=params.flat, spec=np.array(json.dumps(params.spec.to_dict())))


def load_params(path) -> NetParams:
    with np.load(path) as data:
        spec = NetworkSpec.from_dict(json.loads(str(data["spec"])))
        return NetParams(spec, data["flat"].copy())
