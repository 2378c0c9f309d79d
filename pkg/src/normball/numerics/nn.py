"""Encoder building blocks: an ELU MLP and a stacked GRU, both on the tape."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import ShapeError, Tape, Tensor, ops


def orthogonal_init(rows: int, cols: int, rng: np.random.Generator) -> np.ndarray:
    """(Semi-)orthogonal matrix from the QR factorization of a Gaussian draw.

    Columns are orthonormal when ``rows >= cols``, rows otherwise. The sign of
    each column follows ``diag(R)`` so the draw is Haar-distributed.
    """
    if rows < 1 or cols < 1:
        raise ValueError(f"orthogonal_init needs positive dims, got ({rows}, {cols})")
    flip = rows < cols
    a = rng.standard_normal((cols, rows) if flip else (rows, cols))
    q, r = np.linalg.qr(a)
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    q = q * signs
    return q.T.copy() if flip else q


def uniform_init(rows: int, cols: int, rng: np.random.Generator) -> np.ndarray:
    """U(-1/sqrt(fan_in), 1/sqrt(fan_in)); the non-orthogonal comparison init."""
    bound = 1.0 / np.sqrt(rows)
    return rng.uniform(-bound, bound, size=(rows, cols))


INITIALIZERS = {"orthogonal": orthogonal_init, "uniform": uniform_init}


def _initializer(name: str):
    try:
        return INITIALIZERS[name]
    except KeyError:
        raise ValueError(f"unknown init {name!r}; choose from {sorted(INITIALIZERS)}") from None


@dataclass(frozen=True)
class MlpSpec:
    """Stack of ``num_layers`` linear maps with ELU between them.

    ``num_layers=1`` is a single affine map from input to output.
    """

    input_dim: int
    output_dim: int = 3
    hidden_dim: int = 512
    num_layers: int = 8
    output_activation: str | None = "tanh"

    def __post_init__(self):
        if self.num_layers < 1:
            raise ValueError("num_layers must be >= 1")
        if self.output_dim < 1 or self.input_dim < 1 or self.hidden_dim < 1:
            raise ValueError("dimensions must be >= 1")
        if self.output_activation not in (None, "tanh"):
            raise ValueError(f"unsupported output activation {self.output_activation!r}")

    def layer_dims(self) -> list[tuple[int, int]]:
        dims = [self.input_dim] + [self.hidden_dim] * (self.num_layers - 1) + [self.output_dim]
        return list(zip(dims[:-1], dims[1:]))


@dataclass(frozen=True)
class GruSpec:
    input_dim: int
    hidden_dim: int = 128
    num_layers: int = 2
    horizon: int = 12

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.hidden_dim < 1 or self.num_layers < 1 or self.input_dim < 1:
            raise ValueError("dimensions must be >= 1")


GATES = ("z", "r", "n")


def init_mlp(spec: MlpSpec, rng: np.random.Generator, prefix: str = "mlp", init: str = "orthogonal") -> dict[str, np.ndarray]:
    make = _initializer(init)
    params = {}
    for i, (fan_in, fan_out) in enumerate(spec.layer_dims()):
        params[f"{prefix}.{i}.W"] = make(fan_in, fan_out, rng)
        params[f"{prefix}.{i}.b"] = np.zeros(fan_out)
    return params


def init_gru(spec: GruSpec, rng: np.random.Generator, prefix: str = "gru", init: str = "orthogonal") -> dict[str, np.ndarray]:
    make = _initializer(init)
    params = {}
    for layer in range(spec.num_layers):
        fan_in = spec.input_dim if layer == 0 else spec.hidden_dim
        for gate in GATES:
            params[f"{prefix}.{layer}.W{gate}"] = make(fan_in, spec.hidden_dim, rng)
            params[f"{prefix}.{layer}.U{gate}"] = make(spec.hidden_dim, spec.hidden_dim, rng)
            params[f"{prefix}.{layer}.b{gate}"] = np.zeros(spec.hidden_dim)
    return params


def _as_input(x, tape: Tape | None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if tape is None:
        return Tensor(x)
    return tape.constant(x)


def mlp_forward(spec: MlpSpec, params: dict, x, tape: Tape | None = None, prefix: str = "mlp") -> Tensor:
    """Apply the MLP to a batch ``x`` of shape (n, input_dim) or a single vector."""
    h = _as_input(x, tape)
    if h.shape[-1] != spec.input_dim:
        raise ShapeError(f"MLP expects last dim {spec.input_dim}, got {h.shape[-1]}")
    squeeze = h.ndim == 1
    if squeeze:
        h = ops.reshape(h, (1, spec.input_dim))
    n_layers = spec.num_layers
    for i in range(n_layers):
        h = ops.add(ops.matmul(h, params[f"{prefix}.{i}.W"]), params[f"{prefix}.{i}.b"])
        if i < n_layers - 1:
            h = ops.elu(h)
    if spec.output_activation == "tanh":
        h = ops.tanh(h)
    if squeeze:
        h = ops.reshape(h, (spec.output_dim,))
    return h


def gru_cell(x: Tensor, h: Tensor, params: dict, prefix: str) -> Tensor:
    """h' = (1-z)*n + z*h with z, r sigmoid gates and n = tanh(xWn + (r*h)Un + bn)."""
    p = lambda name: params[f"{prefix}.{name}"]  # noqa: E731
    z = ops.sigmoid(ops.add(ops.add(ops.matmul(x, p("Wz")), ops.matmul(h, p("Uz"))), p("bz")))
    r = ops.sigmoid(ops.add(ops.add(ops.matmul(x, p("Wr")), ops.matmul(h, p("Ur"))), p("br")))
    n = ops.tanh(ops.add(ops.add(ops.matmul(x, p("Wn")), ops.matmul(ops.mul(r, h), p("Un"))), p("bn")))
    return ops.add(ops.mul(ops.sub(1.0, z), n), ops.mul(z, h))


def gru_forward(spec: GruSpec, params: dict, sequence, tape: Tape | None = None, h0=None, prefix: str = "gru") -> Tensor:
    """Run the stacked GRU over ``sequence`` and return the top layer's final hidden state.

    ``sequence`` is (horizon, input_dim) or batched (n, horizon, input_dim).
    ``h0`` initializes every layer (zeros when omitted).
    """
    seq = np.asarray(sequence.data if isinstance(sequence, Tensor) else sequence, dtype=np.float64)
    squeeze = seq.ndim == 2
    if squeeze:
        seq = seq[None]
    if seq.ndim != 3 or seq.shape[1] != spec.horizon or seq.shape[2] != spec.input_dim:
        raise ShapeError(
            f"GRU expects (n, {spec.horizon}, {spec.input_dim}), got {np.shape(sequence)}"
        )
    n = seq.shape[0]
    if h0 is None:
        h_init = np.zeros((n, spec.hidden_dim))
    else:
        h_init = np.broadcast_to(np.asarray(h0, dtype=np.float64), (n, spec.hidden_dim)).copy()
    inputs = [_as_input(seq[:, t, :], tape) for t in range(spec.horizon)]
    for layer in range(spec.num_layers):
        h = _as_input(h_init, tape)
        outputs = []
        for x_t in inputs:
            h = gru_cell(x_t, h, params, f"{prefix}.{layer}")
            outputs.append(h)
        inputs = outputs
    h = inputs[-1]
    if squeeze:
        h = ops.reshape(h, (spec.hidden_dim,))
    return h
