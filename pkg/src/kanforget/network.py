"""Spline-branch networks with explicit forward traces and hand-written gradients.

Each layer maps ``in_dim`` coordinates to ``out_dim`` sums of univariate
branches; the branch from input ``p`` to output ``q`` is

    branch(z) = base_weights[q, p] * silu(z)
              + spline_scalers[q, p] * <spline_coeffs[q, p, :], basis(z)>

All arithmetic is float64 and backpropagation is written out by hand so
gradients can be validated directly against finite differences.  A plain
affine/silu network is included as the comparison baseline.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np

from .errors import UsageError
from .spline import KnotGrid, basis_derivative_matrix, basis_matrix, fit_coefficients

__all__ = [
    "silu",
    "silu_derivative",
    "KanLayer",
    "KanNetwork",
    "ForwardTrace",
    "LayerGradients",
    "GradientSet",
    "init_kan",
    "forward",
    "backward",
    "branch_eval",
    "MlpNetwork",
    "MlpTrace",
    "MlpGradients",
    "init_mlp",
    "mlp_forward",
    "mlp_backward",
    "save_checkpoint",
    "load_checkpoint",
]


def silu(z: np.ndarray) -> np.ndarray:
    """Sigmoid-weighted linear unit, z * sigmoid(z), overflow-safe."""
    z = np.asarray(z, dtype=np.float64)
    return z * _sigmoid(z)


def silu_derivative(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    s = _sigmoid(z)
    return s * (1.0 + z * (1.0 - s))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass
class KanLayer:
    grid: KnotGrid
    base_weights: np.ndarray  # [out_dim, in_dim]
    spline_coeffs: np.ndarray  # [out_dim, in_dim, n_basis]
    spline_scalers: np.ndarray  # [out_dim, in_dim]

    def __post_init__(self) -> None:
        self.base_weights = np.asarray(self.base_weights, dtype=np.float64)
        self.spline_coeffs = np.asarray(self.spline_coeffs, dtype=np.float64)
        self.spline_scalers = np.asarray(self.spline_scalers, dtype=np.float64)
        out_dim, in_dim = self.base_weights.shape
        if self.spline_coeffs.shape != (out_dim, in_dim, self.grid.n_basis):
            raise UsageError(
                f"spline_coeffs shape {self.spline_coeffs.shape} inconsistent with "
                f"base_weights {self.base_weights.shape} and grid {self.grid.n_basis}"
            )
        if self.spline_scalers.shape != (out_dim, in_dim):
            raise UsageError(f"spline_scalers shape {self.spline_scalers.shape} bad")
        for name in ("base_weights", "spline_coeffs", "spline_scalers"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise UsageError(f"{name} contains non-finite entries")

    @property
    def in_dim(self) -> int:
        return self.base_weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.base_weights.shape[0]


@dataclass
class KanNetwork:
    layers: list[KanLayer]

    def __post_init__(self) -> None:
        if not self.layers:
            raise UsageError("network needs at least one layer")
        for a, b in zip(self.layers, self.layers[1:]):
            if a.out_dim != b.in_dim:
                raise UsageError(
                    f"layer dims do not chain: {a.out_dim} -> {b.in_dim}"
                )

    @property
    def dims(self) -> list[int]:
        return [self.layers[0].in_dim] + [layer.out_dim for layer in self.layers]

    @property
    def grid(self) -> KnotGrid:
        return self.layers[0].grid

    def copy(self) -> "KanNetwork":
        return copy.deepcopy(self)

    def parameter_arrays(self) -> list[np.ndarray]:
        """Live views of all parameters in declared (checkpoint) order."""
        arrays: list[np.ndarray] = []
        for layer in self.layers:
            arrays.extend([layer.base_weights, layer.spline_coeffs, layer.spline_scalers])
        return arrays

    def flatten(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.parameter_arrays()])

    def load_flat(self, vec: np.ndarray) -> None:
        vec = np.asarray(vec, dtype=np.float64)
        offset = 0
        for array in self.parameter_arrays():
            chunk = vec[offset : offset + array.size]
            if chunk.size != array.size:
                raise UsageError("flat vector does not match parameter count")
            array[...] = chunk.reshape(array.shape)
            offset += array.size
        if offset != vec.size:
            raise UsageError(
                f"flat vector has {vec.size} entries, network holds {offset}"
            )

    @property
    def n_parameters(self) -> int:
        return sum(a.size for a in self.parameter_arrays())


@dataclass
class ForwardTrace:
    """Per-layer pre-activations (inputs to each layer) plus the final output."""

    pre_activations: list[np.ndarray]  # per layer: [batch, in_dim]
    output: np.ndarray  # [batch, last out_dim]
    branch_outputs: list[np.ndarray] | None = None  # per layer: [batch, out, in]


@dataclass
class LayerGradients:
    base_weights: np.ndarray
    spline_coeffs: np.ndarray
    spline_scalers: np.ndarray


@dataclass
class GradientSet:
    layers: list[LayerGradients]
    input_grad: np.ndarray

    def flatten(self) -> np.ndarray:
        chunks = []
        for g in self.layers:
            chunks.extend(
                [g.base_weights.ravel(), g.spline_coeffs.ravel(), g.spline_scalers.ravel()]
            )
        return np.concatenate(chunks)


def init_kan(
    dims: list[int],
    grid_size: int = 5,
    order: int = 3,
    grid_range: tuple[float, float] = (-1.0, 1.0),
    seed: int = 0,
    base_weight_scale: float = 1.0,
    spline_weight_scale: float = 1.0,
    noise_scale: float = 0.1,
) -> KanNetwork:
    """Seeded network construction.

    Base weights are uniform fan-in initialized and scaled by
    ``base_weight_scale``.  Spline coefficients are least-squares fitted to
    uniform noise in ``[-0.5, 0.5] * noise_scale`` sampled at the grid
    points, so each branch starts as a small random wiggle.  Scalers start
    at ``spline_weight_scale``.
    """
    if len(dims) < 2 or any(d < 1 for d in dims):
        raise UsageError(f"dims must list at least two positive sizes, got {dims}")
    rng = np.random.default_rng(seed)
    grid = KnotGrid(grid_range[0], grid_range[1], grid_size, order)
    pts = grid.grid_points()
    layers = []
    for in_dim, out_dim in zip(dims, dims[1:]):
        bound = base_weight_scale / np.sqrt(in_dim)
        base = rng.uniform(-bound, bound, size=(out_dim, in_dim))
        noise = (rng.uniform(size=(out_dim, in_dim, pts.shape[0])) - 0.5) * noise_scale
        targets = noise.reshape(out_dim * in_dim, pts.shape[0]).T
        coeffs = fit_coefficients(grid, pts, targets).T.reshape(
            out_dim, in_dim, grid.n_basis
        )
        scalers = np.full((out_dim, in_dim), spline_weight_scale, dtype=np.float64)
        layers.append(KanLayer(grid, base, coeffs, scalers))
    return KanNetwork(layers)


def _layer_apply(layer: KanLayer, z: np.ndarray, want_branches: bool):
    """Returns (output [b,q], branch values [b,q,p] or None, cached basis)."""
    batch = z.shape[0]
    basis = basis_matrix(layer.grid, z.ravel()).reshape(
        batch, layer.in_dim, layer.grid.n_basis
    )
    spline_branch = np.einsum("qpm,bpm->bqp", layer.spline_coeffs, basis)
    base_z = silu(z)
    out = base_z @ layer.base_weights.T + np.einsum(
        "qp,bqp->bq", layer.spline_scalers, spline_branch
    )
    branches = None
    if want_branches:
        branches = (
            layer.base_weights[None, :, :] * base_z[:, None, :]
            + layer.spline_scalers[None, :, :] * spline_branch
        )
    return out, branches


def forward(net: KanNetwork, batch, record_branches: bool = False) -> ForwardTrace:
    """Run the network, recording every layer's pre-activations.

    With ``record_branches=True`` the trace also carries each branch's
    output value per sample (used by support measurement).
    """
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2:
        raise UsageError(f"batch must be 2-D, got shape {batch.shape}")
    if batch.shape[1] != net.layers[0].in_dim:
        raise UsageError(
            f"batch has {batch.shape[1]} columns, first layer expects "
            f"{net.layers[0].in_dim}"
        )
    if not np.all(np.isfinite(batch)):
        raise UsageError("batch contains non-finite entries")

    pre_activations = []
    branch_outputs = [] if record_branches else None
    h = batch
    for layer in net.layers:
        pre_activations.append(h)
        h, branches = _layer_apply(layer, h, record_branches)
        if record_branches:
            branch_outputs.append(branches)
    return ForwardTrace(pre_activations, h, branch_outputs)


def branch_eval(layer: KanLayer, p: int, q: int, z: float) -> float:
    """Evaluate the single univariate branch from input p to output q."""
    if not (0 <= p < layer.in_dim and 0 <= q < layer.out_dim):
        raise UsageError(
            f"branch index (p={p}, q={q}) out of range for layer "
            f"{layer.in_dim}x{layer.out_dim}"
        )
    basis = basis_matrix(layer.grid, [z])[0]
    return float(
        layer.base_weights[q, p] * silu(np.float64(z))
        + layer.spline_scalers[q, p] * (layer.spline_coeffs[q, p] @ basis)
    )


def backward(net: KanNetwork, trace: ForwardTrace, output_grad) -> GradientSet:
    """Chain-rule gradients for every parameter plus the input gradient.

    ``trace`` must come from ``forward`` on this same network; shapes are
    checked to reject stale traces.
    """
    output_grad = np.asarray(output_grad, dtype=np.float64)
    if len(trace.pre_activations) != len(net.layers):
        raise UsageError("trace depth does not match network depth")
    if output_grad.shape != trace.output.shape:
        raise UsageError(
            f"output_grad shape {output_grad.shape} != output {trace.output.shape}"
        )

    grads: list[LayerGradients] = [None] * len(net.layers)  # type: ignore[list-item]
    g = output_grad
    for idx in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[idx]
        z = trace.pre_activations[idx]
        if z.shape != (output_grad.shape[0], layer.in_dim):
            raise UsageError("stale trace: pre-activation shape mismatch")
        batch = z.shape[0]
        basis = basis_matrix(layer.grid, z.ravel()).reshape(
            batch, layer.in_dim, layer.grid.n_basis
        )
        dbasis = basis_derivative_matrix(layer.grid, z.ravel()).reshape(
            batch, layer.in_dim, layer.grid.n_basis
        )
        base_z = silu(z)
        spline_branch = np.einsum("qpm,bpm->bqp", layer.spline_coeffs, basis)

        d_base = np.einsum("bq,bp->qp", g, base_z)
        d_scaler = np.einsum("bq,bqp->qp", g, spline_branch)
        d_coeffs = layer.spline_scalers[:, :, None] * np.einsum(
            "bq,bpm->qpm", g, basis
        )
        spline_slope = np.einsum("qpm,bpm->bqp", layer.spline_coeffs, dbasis)
        dz = silu_derivative(z) * (g @ layer.base_weights) + np.einsum(
            "bq,qp,bqp->bp", g, layer.spline_scalers, spline_slope
        )
        grads[idx] = LayerGradients(d_base, d_coeffs, d_scaler)
        g = dz
    return GradientSet(grads, g)


# --- Plain affine/silu baseline -------------------------------------------


@dataclass
class MlpNetwork:
    weights: list[np.ndarray]  # per layer [out, in]
    biases: list[np.ndarray]  # per layer [out]

    def __post_init__(self) -> None:
        if len(self.weights) != len(self.biases) or not self.weights:
            raise UsageError("weights and biases must pair up, one per layer")
        for w, b in zip(self.weights, self.biases):
            if w.shape[0] != b.shape[0]:
                raise UsageError("bias length must equal layer out_dim")
        for a, b in zip(self.weights, self.weights[1:]):
            if a.shape[0] != b.shape[1]:
                raise UsageError("layer dims do not chain")

    @property
    def dims(self) -> list[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    def copy(self) -> "MlpNetwork":
        return copy.deepcopy(self)

    def parameter_arrays(self) -> list[np.ndarray]:
        arrays: list[np.ndarray] = []
        for w, b in zip(self.weights, self.biases):
            arrays.extend([w, b])
        return arrays

    def flatten(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.parameter_arrays()])

    def load_flat(self, vec: np.ndarray) -> None:
        offset = 0
        for array in self.parameter_arrays():
            array[...] = vec[offset : offset + array.size].reshape(array.shape)
            offset += array.size
        if offset != np.asarray(vec).size:
            raise UsageError("flat vector does not match parameter count")

    @property
    def n_parameters(self) -> int:
        return sum(a.size for a in self.parameter_arrays())


@dataclass
class MlpTrace:
    pre_activations: list[np.ndarray]  # inputs to each affine layer
    output: np.ndarray


@dataclass
class MlpGradients:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    input_grad: np.ndarray

    def flatten(self) -> np.ndarray:
        chunks = []
        for w, b in zip(self.weights, self.biases):
            chunks.extend([w.ravel(), b.ravel()])
        return np.concatenate(chunks)


def init_mlp(dims: list[int], seed: int = 0, scale: float = 1.0) -> MlpNetwork:
    if len(dims) < 2 or any(d < 1 for d in dims):
        raise UsageError(f"dims must list at least two positive sizes, got {dims}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for in_dim, out_dim in zip(dims, dims[1:]):
        bound = scale / np.sqrt(in_dim)
        weights.append(rng.uniform(-bound, bound, size=(out_dim, in_dim)))
        biases.append(np.zeros(out_dim))
    return MlpNetwork(weights, biases)


def mlp_forward(net: MlpNetwork, batch) -> MlpTrace:
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2 or batch.shape[1] != net.weights[0].shape[1]:
        raise UsageError(f"batch shape {batch.shape} does not fit {net.dims}")
    pre = []
    h = batch
    last = len(net.weights) - 1
    for idx, (w, b) in enumerate(zip(net.weights, net.biases)):
        pre.append(h)
        h = h @ w.T + b
        if idx != last:
            h = silu(h)
    return MlpTrace(pre, h)


def mlp_backward(net: MlpNetwork, trace: MlpTrace, output_grad) -> MlpGradients:
    output_grad = np.asarray(output_grad, dtype=np.float64)
    if output_grad.shape != trace.output.shape:
        raise UsageError("output_grad shape does not match trace output")
    d_weights = [None] * len(net.weights)  # type: ignore[list-item]
    d_biases = [None] * len(net.biases)  # type: ignore[list-item]
    g = output_grad
    last = len(net.weights) - 1
    for idx in range(last, -1, -1):
        w = net.weights[idx]
        z = trace.pre_activations[idx]
        if idx != last:
            affine = z @ w.T + net.biases[idx]
            g = g * silu_derivative(affine)
        d_weights[idx] = np.einsum("bq,bp->qp", g, z)
        d_biases[idx] = g.sum(axis=0)
        g = g @ w
    return MlpGradients(d_weights, d_biases, g)


def network_from_flat(
    dims: list[int],
    grid_size: int,
    order: int,
    grid_range: tuple[float, float],
    flat: np.ndarray,
) -> KanNetwork:
    """Rebuild a network from its flattened parameter vector."""
    net = init_kan(dims, grid_size=grid_size, order=order, grid_range=grid_range,
                   seed=0, noise_scale=0.0)
    net.load_flat(np.asarray(flat, dtype=np.float64))
    return net


# --- Checkpoint persistence -------------------------------------------------

_CHECKPOINT_HEADER = "kanforget-checkpoint 1"


def save_checkpoint(path, net: KanNetwork, seed: int | None = None) -> None:
    """Versioned text checkpoint; 17 significant digits round-trip bitwise."""
    grid = net.grid
    lines = [
        _CHECKPOINT_HEADER,
        "dims " + " ".join(str(d) for d in net.dims),
        f"grid_size {grid.grid_size}",
        f"order {grid.order}",
        f"range {grid.range_lo:.17g} {grid.range_hi:.17g}",
        f"seed {'none' if seed is None else seed}",
    ]
    for array in net.parameter_arrays():
        for value in array.ravel():
            lines.append(f"{value:.17g}")
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def load_checkpoint(path) -> tuple[KanNetwork, dict]:
    with open(path, "r", encoding="ascii") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != _CHECKPOINT_HEADER:
        raise UsageError(f"not a recognized checkpoint file: {path}")
    dims = [int(tok) for tok in lines[1].split()[1:]]
    grid_size = int(lines[2].split()[1])
    order = int(lines[3].split()[1])
    lo, hi = (float(tok) for tok in lines[4].split()[1:])
    seed_tok = lines[5].split()[1]
    seed = None if seed_tok == "none" else int(seed_tok)
    values = np.array([float(v) for v in lines[6:]], dtype=np.float64)

    grid = KnotGrid(lo, hi, grid_size, order)
    layers = []
    offset = 0

    def take(shape):
        nonlocal offset
        size = int(np.prod(shape))
        chunk = values[offset : offset + size]
        if chunk.size != size:
            raise UsageError("checkpoint truncated: parameter payload too short")
        offset += size
        return chunk.reshape(shape).copy()

    for in_dim, out_dim in zip(dims, dims[1:]):
        base = take((out_dim, in_dim))
        coeffs = take((out_dim, in_dim, grid.n_basis))
        scalers = take((out_dim, in_dim))
        layers.append(KanLayer(grid, base, coeffs, scalers))
    if offset != values.size:
        raise UsageError("checkpoint has trailing unparsed values")
    return KanNetwork(layers), {
        "dims": dims,
        "grid_size": grid_size,
        "order": order,
        "range": (lo, hi),
        "seed": seed,
    }
