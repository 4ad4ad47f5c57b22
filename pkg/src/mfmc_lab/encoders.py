"""Small MLP encoders, fusion networks and their reverse-mode gradients.

Hidden layers are affine -> (batch norm) -> ReLU, the last layer is
affine. Weights are stored ``(fan_out, fan_in)`` so a layer computes
``x @ W.T + b``. ``backward`` takes the gradient of the loss with
respect to the network output (any 1/B factor already applied by the
loss) and returns ``dW = upstream.T @ layer_input``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .synthetic import make_rng

BN_EPS = 1e-5
BN_MOMENTUM = 0.1
CHECKPOINT_MAGIC = "mfmc-lab-params"
CHECKPOINT_VERSION = 1


class NonFiniteActivationError(ArithmeticError):
    def __init__(self, layer: int):
        super().__init__(f"non-finite activations at layer {layer}")
        self.layer = layer


@dataclass(frozen=True)
class MlpSpec:
    widths: tuple[int, ...]
    batch_norm: tuple[bool, ...] | bool = False

    def __post_init__(self):
        widths = tuple(int(w) for w in self.widths)
        if len(widths) < 2 or any(w < 1 for w in widths):
            raise ValueError(f"need >= 2 positive widths, got {self.widths}")
        object.__setattr__(self, "widths", widths)
        n_hidden = len(widths) - 2
        bn = self.batch_norm
        if isinstance(bn, bool):
            bn = (bn,) * n_hidden
        bn = tuple(bool(b) for b in bn)
        if len(bn) != n_hidden:
            raise ValueError(f"batch_norm needs {n_hidden} flags, got {len(bn)}")
        object.__setattr__(self, "batch_norm", bn)

    @property
    def n_layers(self) -> int:
        return len(self.widths) - 1

    @property
    def in_dim(self) -> int:
        return self.widths[0]

    @property
    def out_dim(self) -> int:
        return self.widths[-1]


@dataclass
class MlpParams:
    spec: MlpSpec
    arrays: dict[str, np.ndarray]
    buffers: dict[str, np.ndarray] = field(default_factory=dict)

    def weight(self, i: int) -> np.ndarray:
        return self.arrays[f"layer{i}.weight"]

    def bias(self, i: int) -> np.ndarray:
        return self.arrays[f"layer{i}.bias"]

    def copy(self) -> "MlpParams":
        return MlpParams(
            self.spec,
            {k: v.copy() for k, v in self.arrays.items()},
            {k: v.copy() for k, v in self.buffers.items()},
        )


def init_params(spec: MlpSpec, seed: int) -> MlpParams:
    """Glorot-uniform weights, zero biases, unit BN scale."""
    rng = make_rng(seed)
    arrays: dict[str, np.ndarray] = {}
    buffers: dict[str, np.ndarray] = {}
    for i, (fan_in, fan_out) in enumerate(zip(spec.widths[:-1], spec.widths[1:])):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        arrays[f"layer{i}.weight"] = rng.uniform(-limit, limit, size=(fan_out, fan_in))
        arrays[f"layer{i}.bias"] = np.zeros(fan_out)
        if i < len(spec.batch_norm) and spec.batch_norm[i]:
            arrays[f"layer{i}.bn_gamma"] = np.ones(fan_out)
            arrays[f"layer{i}.bn_beta"] = np.zeros(fan_out)
            buffers[f"layer{i}.bn_mean"] = np.zeros(fan_out)
            buffers[f"layer{i}.bn_var"] = np.ones(fan_out)
    return MlpParams(spec, arrays, buffers)


@dataclass
class ForwardCache:
    inputs: list[np.ndarray]  # input to each affine layer
    pre: list[np.ndarray]  # affine outputs
    normed: list[np.ndarray | None]  # BN-normalized pre-activations
    inv_std: list[np.ndarray | None]
    batch_mean: list[np.ndarray | None]
    batch_var: list[np.ndarray | None]
    post: list[np.ndarray]  # values fed to ReLU
    training: bool


def forward(params: MlpParams, x: np.ndarray, training: bool = True) -> tuple[np.ndarray, ForwardCache]:
    spec = params.spec
    h = np.asarray(x, dtype=float)
    if h.ndim != 2 or h.shape[1] != spec.in_dim:
        raise ValueError(f"input shape {h.shape} does not match input width {spec.in_dim}")
    cache = ForwardCache([], [], [], [], [], [], [], training)
    last = spec.n_layers - 1
    for i in range(spec.n_layers):
        cache.inputs.append(h)
        with np.errstate(over="ignore", invalid="ignore"):  # non-finite values are caught below
            z = h @ params.weight(i).T + params.bias(i)
        cache.pre.append(z)
        zn = inv_std = mu = var = None
        y = z
        if i < last and spec.batch_norm[i]:
            if training:
                mu = z.mean(axis=0)
                var = z.var(axis=0)
            else:
                mu = params.buffers[f"layer{i}.bn_mean"]
                var = params.buffers[f"layer{i}.bn_var"]
            inv_std = 1.0 / np.sqrt(var + BN_EPS)
            zn = (z - mu) * inv_std
            y = params.arrays[f"layer{i}.bn_gamma"] * zn + params.arrays[f"layer{i}.bn_beta"]
        cache.normed.append(zn)
        cache.inv_std.append(inv_std)
        cache.batch_mean.append(mu)
        cache.batch_var.append(var)
        cache.post.append(y)
        h = np.maximum(y, 0.0) if i < last else y
        if not np.all(np.isfinite(h)):
            raise NonFiniteActivationError(i)
    return h, cache


def update_running_stats(params: MlpParams, cache: ForwardCache, momentum: float = BN_MOMENTUM) -> None:
    """Fold a training-mode forward pass's batch statistics into the BN buffers."""
    if not cache.training:
        return
    for i, (mu, var) in enumerate(zip(cache.batch_mean, cache.batch_var)):
        if mu is None:
            continue
        b = cache.pre[i].shape[0]
        unbiased = var * b / max(b - 1, 1)
        rm = params.buffers[f"layer{i}.bn_mean"]
        rv = params.buffers[f"layer{i}.bn_var"]
        rm *= 1.0 - momentum
        rm += momentum * mu
        rv *= 1.0 - momentum
        rv += momentum * unbiased


def backward(
    params: MlpParams, cache: ForwardCache, upstream: np.ndarray
) -> tuple[dict[str, np.ndarray], np.ndarray]:
    spec = params.spec
    g = np.asarray(upstream, dtype=float)
    if g.shape != cache.post[-1].shape:
        raise ValueError(f"upstream gradient shape {g.shape} does not match cached output {cache.post[-1].shape}")
    grads: dict[str, np.ndarray] = {}
    last = spec.n_layers - 1
    for i in range(last, -1, -1):
        if i < last:
            g = g * (cache.post[i] > 0)
            zn = cache.normed[i]
            if zn is not None:
                grads[f"layer{i}.bn_gamma"] = np.sum(g * zn, axis=0)
                grads[f"layer{i}.bn_beta"] = g.sum(axis=0)
                gn = g * params.arrays[f"layer{i}.bn_gamma"]
                if cache.training:
                    b = gn.shape[0]
                    g = cache.inv_std[i] / b * (
                        b * gn - gn.sum(axis=0) - zn * np.sum(gn * zn, axis=0)
                    )
                else:
                    g = gn * cache.inv_std[i]
        grads[f"layer{i}.weight"] = g.T @ cache.inputs[i]
        grads[f"layer{i}.bias"] = g.sum(axis=0)
        g = g @ params.weight(i)
    return grads, g


def fusion_spec(k: int, hidden: int, batch_norm: bool = False) -> MlpSpec:
    return MlpSpec((2 * k, hidden, k), batch_norm)


def fuse(params: MlpParams, e_a: np.ndarray, e_b: np.ndarray, training: bool = True):
    """Fusion MLP on the row-wise concatenation [e_a | e_b] (lower modality index first)."""
    if e_a.shape != e_b.shape:
        raise ValueError(f"shape mismatch: {e_a.shape} vs {e_b.shape}")
    return forward(params, np.hstack([e_a, e_b]), training)


def fuse_backward(params: MlpParams, cache: ForwardCache, upstream: np.ndarray):
    grads, g_in = backward(params, cache, upstream)
    k = g_in.shape[1] // 2
    return grads, g_in[:, :k], g_in[:, k:]


# -- checkpoint file --------------------------------------------------------------


def save_params(params: MlpParams, path: str | Path) -> None:
    """Write a text checkpoint; layout is documented in the README."""
    spec = params.spec
    lines = [
        f"{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}",
        "widths " + " ".join(str(w) for w in spec.widths),
        "batch_norm " + " ".join(str(int(b)) for b in spec.batch_norm),
    ]
    for kind, store in (("param", params.arrays), ("buffer", params.buffers)):
        for name in sorted(store):
            arr = np.atleast_2d(store[name]) if store[name].ndim == 1 else store[name]
            shape = store[name].shape
            lines.append(f"{kind} {name} " + " ".join(str(s) for s in shape))
            for row in arr:
                lines.append(" ".join(repr(float(v)) for v in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_params(path: str | Path) -> MlpParams:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    magic, version = lines[0].split()
    if magic != CHECKPOINT_MAGIC or int(version) != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint header {lines[0]!r}")
    widths = tuple(int(w) for w in lines[1].split()[1:])
    bn = tuple(bool(int(b)) for b in lines[2].split()[1:])
    spec = MlpSpec(widths, bn)
    arrays: dict[str, np.ndarray] = {}
    buffers: dict[str, np.ndarray] = {}
    pos = 3
    while pos < len(lines):
        kind, name, *shape = lines[pos].split()
        shape = tuple(int(s) for s in shape)
        n_rows = shape[0] if len(shape) == 2 else 1
        rows = [[float(v) for v in ln.split()] for ln in lines[pos + 1 : pos + 1 + n_rows]]
        (arrays if kind == "param" else buffers)[name] = np.array(rows, dtype=float).reshape(shape)
        pos += 1 + n_rows
    return MlpParams(spec, arrays, buffers)


def param_count(params: MlpParams) -> int:
    return sum(a.size for a in params.arrays.values())


def flatten(params: Sequence[MlpParams]) -> dict[str, np.ndarray]:
    """Merge several networks' trainable arrays under ``net{j}.`` prefixes."""
    return {f"net{j}.{k}": v for j, p in enumerate(params) for k, v in p.arrays.items()}
