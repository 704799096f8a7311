"""Minimal dense feed-forward network with exact reverse-mode gradients and Adam.

Everything is float64 and immutable between steps: `forward`, `backward` and
`adam_step` never mutate their inputs, they return fresh arrays. This keeps
training bit-reproducible for a fixed seed in single-threaded mode.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, DivergenceError, ShapeError

DEFAULT_DIMS = (20, 100, 100, 100, 20)

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class LayerParams:
    weights: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str  # "relu" | "linear"


@dataclass(frozen=True)
class MlpModel:
    layers: tuple[LayerParams, ...]
    layer_dims: tuple[int, ...]
    bias_enabled: bool = True

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def output_dim(self) -> int:
        return self.layer_dims[-1]

    def n_params(self) -> int:
        return sum(lp.weights.size + lp.bias.size for lp in self.layers)

    def validate(self) -> None:
        if len(self.layer_dims) < 2:
            raise ConfigError("need at least 2 layer dims")
        for i, lp in enumerate(self.layers):
            d_out, d_in = self.layer_dims[i + 1], self.layer_dims[i]
            if lp.weights.shape != (d_out, d_in):
                raise ShapeError(
                    f"layer {i}: weights {lp.weights.shape} != ({d_out}, {d_in})"
                )
            if lp.bias.shape != (d_out,):
                raise ShapeError(f"layer {i}: bias {lp.bias.shape} != ({d_out},)")
            if not (np.isfinite(lp.weights).all() and np.isfinite(lp.bias).all()):
                raise DataError(f"layer {i}: non-finite parameters")


@dataclass(frozen=True)
class Gradients:
    """Per-layer (dW, db) pairs, shape-congruent with the model."""

    layers: tuple[tuple[np.ndarray, np.ndarray], ...]

    def __add__(self, other: "Gradients") -> "Gradients":
        return Gradients(
            tuple(
                (gw1 + gw2, gb1 + gb2)
                for (gw1, gb1), (gw2, gb2) in zip(self.layers, other.layers)
            )
        )

    def is_finite(self) -> bool:
        return all(
            np.isfinite(gw).all() and np.isfinite(gb).all() for gw, gb in self.layers
        )


@dataclass(frozen=True)
class ForwardTape:
    """Per-layer inputs and pre-activations recorded by `forward`."""

    inputs: tuple[np.ndarray, ...]  # input to each layer, (B, d_in_layer)
    preacts: tuple[np.ndarray, ...]  # z = x W^T + b per layer, (B, d_out_layer)


@dataclass
class AdamState:
    """Moment accumulators over the flattened parameter vector.

    `decay_mask` is 1 on weight-matrix entries and 0 on biases so L2 decay
    never touches biases.
    """

    m: np.ndarray  # first moments, flat
    v: np.ndarray  # second moments, flat
    decay_mask: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_init(model: MlpModel, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> AdamState:
    n = model.n_params()
    mask_parts = []
    for lp in model.layers:
        mask_parts.append(np.ones(lp.weights.size))
        mask_parts.append(np.zeros(lp.bias.size))
    return AdamState(m=np.zeros(n), v=np.zeros(n),
                     decay_mask=np.concatenate(mask_parts),
                     t=0, beta1=beta1, beta2=beta2, eps=eps)


def mlp_init(seed: int, layer_dims=DEFAULT_DIMS, bias_enabled: bool = True) -> MlpModel:
    """Seeded uniform(-a, a) init with a = sqrt(6 / (fan_in + fan_out)); zero biases.

    ReLU on every layer except the last, which is linear.
    """
    dims = tuple(int(d) for d in layer_dims)
    if len(dims) < 2:
        raise ConfigError(f"layer_dims needs >= 2 entries, got {dims}")
    if any(d < 1 for d in dims):
        raise ConfigError(f"layer dims must be >= 1, got {dims}")
    rng = np.random.default_rng(seed)
    layers = []
    n_layers = len(dims) - 1
    for i in range(n_layers):
        fan_in, fan_out = dims[i], dims[i + 1]
        a = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-a, a, size=(fan_out, fan_in))
        b = np.zeros(fan_out)
        act = "linear" if i == n_layers - 1 else "relu"
        layers.append(LayerParams(weights=w, bias=b, activation=act))
    return MlpModel(layers=tuple(layers), layer_dims=dims, bias_enabled=bias_enabled)


def forward(model: MlpModel, batch: np.ndarray) -> tuple[np.ndarray, ForwardTape]:
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2 or batch.shape[1] != model.input_dim:
        raise ShapeError(
            f"batch shape {batch.shape} incompatible with input dim {model.input_dim}"
        )
    if not np.isfinite(batch).all():
        raise DataError("non-finite values in forward input")
    inputs, preacts = [], []
    h = batch
    for lp in model.layers:
        inputs.append(h)
        z = h @ lp.weights.T
        if model.bias_enabled:
            z = z + lp.bias
        preacts.append(z)
        h = np.maximum(z, 0.0) if lp.activation == "relu" else z
    return h, ForwardTape(inputs=tuple(inputs), preacts=tuple(preacts))


def backward(model: MlpModel, tape: ForwardTape, grad_outputs: np.ndarray) -> Gradients:
    """Exact reverse-mode gradients of sum_b <grad_outputs_b, outputs_b> w.r.t. params."""
    grad_outputs = np.asarray(grad_outputs, dtype=np.float64)
    if grad_outputs.shape != tape.preacts[-1].shape:
        raise ShapeError(
            f"grad_outputs {grad_outputs.shape} != outputs {tape.preacts[-1].shape}"
        )
    grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(model.layers)
    delta = grad_outputs
    for i in range(len(model.layers) - 1, -1, -1):
        lp = model.layers[i]
        dz = delta * (tape.preacts[i] > 0.0) if lp.activation == "relu" else delta
        gw = dz.T @ tape.inputs[i]
        gb = dz.sum(axis=0) if model.bias_enabled else np.zeros_like(lp.bias)
        grads[i] = (gw, gb)
        if i > 0:
            delta = dz @ lp.weights
    return Gradients(layers=tuple(grads))


def adam_step(model: MlpModel, grads: Gradients, state: AdamState, lr: float,
              weight_decay: float = 0.0) -> tuple[MlpModel, AdamState]:
    """One Adam update. L2 decay is added to the weight gradients only, not biases."""
    if lr < 0:
        raise ConfigError(f"lr must be >= 0, got {lr}")
    g = flatten_grads(grads)
    if not np.isfinite(g).all():
        raise DivergenceError("non-finite gradients in adam_step")
    t = state.t + 1
    b1, b2, eps = state.beta1, state.beta2, state.eps
    p = get_flat_params(model)
    if weight_decay:
        g = g + weight_decay * (state.decay_mask * p)
    m = b1 * state.m + (1 - b1) * g
    v = b2 * state.v + (1 - b2) * g * g
    update = (m / (1.0 - b1 ** t)) / (np.sqrt(v / (1.0 - b2 ** t)) + eps)
    new_model = set_flat_params(model, p - lr * update)
    new_state = AdamState(m=m, v=v, decay_mask=state.decay_mask, t=t,
                          beta1=b1, beta2=b2, eps=eps)
    return new_model, new_state


# --- flat parameter views, used by finite-difference tests -------------------

def get_flat_params(model: MlpModel) -> np.ndarray:
    parts = []
    for lp in model.layers:
        parts.append(lp.weights.ravel())
        parts.append(lp.bias.ravel())
    return np.concatenate(parts)


def set_flat_params(model: MlpModel, flat: np.ndarray) -> MlpModel:
    flat = np.asarray(flat, dtype=np.float64)
    if flat.size != model.n_params():
        raise ShapeError(f"flat size {flat.size} != n_params {model.n_params()}")
    layers, off = [], 0
    for lp in model.layers:
        nw, nb = lp.weights.size, lp.bias.size
        w = flat[off:off + nw].reshape(lp.weights.shape).copy()
        off += nw
        b = flat[off:off + nb].copy()
        off += nb
        layers.append(LayerParams(weights=w, bias=b, activation=lp.activation))
    return MlpModel(layers=tuple(layers), layer_dims=model.layer_dims,
                    bias_enabled=model.bias_enabled)


def flatten_grads(grads: Gradients) -> np.ndarray:
    parts = []
    for gw, gb in grads.layers:
        parts.append(gw.ravel())
        parts.append(gb.ravel())
    return np.concatenate(parts)


class _FusedTrainer:
    """Training-loop fast path: preallocated buffers and in-place Adam.

    Mirrors the arithmetic of `forward`, `backward` and `adam_step`
    operation-for-operation (every elementwise expression and gemm uses the
    same operands in the same order), so trajectories are bit-identical to the
    public composition -- the harness tests assert this. It only avoids the
    per-step allocation and dataclass rebuilding, which otherwise dominate the
    epoch time at small batch sizes. Not part of the public API.
    """

    def __init__(self, model: MlpModel, max_batch: int):
        model.validate()
        self.template = model
        self.bias_enabled = model.bias_enabled
        n = model.n_params()
        self.p = get_flat_params(model)
        self.g = np.empty(n)
        self._s1 = np.empty(n)
        self._s2 = np.empty(n)
        self.state = adam_init(model)
        self.acts = [lp.activation for lp in model.layers]
        self.w_views, self.b_views = [], []
        self.gw_views, self.gb_views = [], []
        off = 0
        for lp in model.layers:
            nw, nb = lp.weights.size, lp.bias.size
            self.w_views.append(self.p[off:off + nw].reshape(lp.weights.shape))
            self.gw_views.append(self.g[off:off + nw].reshape(lp.weights.shape))
            off += nw
            self.b_views.append(self.p[off:off + nb])
            self.gb_views.append(self.g[off:off + nb])
            off += nb
        hidden = model.layer_dims[1:]
        self._z = [np.empty((max_batch, d)) for d in hidden]
        self._h = [np.empty((max_batch, d)) for d in hidden]
        self._mask = [np.empty((max_batch, d), dtype=bool) for d in hidden]
        self._dz = [np.empty((max_batch, d)) for d in hidden]
        self._delta = [np.empty((max_batch, d)) for d in hidden]
        d_out = model.layer_dims[-1]
        self._diff = np.empty((max_batch, d_out))
        self._sq = np.empty((max_batch, d_out))
        self._gradout = np.empty((max_batch, d_out))
        self._aux = None  # lazy buffers for the auxiliary (labeled) pass

    def model_view(self) -> MlpModel:
        """Current parameters as a model whose arrays alias the flat vector."""
        layers = tuple(
            LayerParams(weights=w, bias=b, activation=a)
            for w, b, a in zip(self.w_views, self.b_views, self.acts))
        return MlpModel(layers=layers, layer_dims=self.template.layer_dims,
                        bias_enabled=self.bias_enabled)

    def snapshot(self) -> MlpModel:
        """Detached copy of the current parameters."""
        return set_flat_params(self.template, self.p)

    def _forward(self, x: np.ndarray) -> np.ndarray:
        b = x.shape[0]
        h = x
        for i, act in enumerate(self.acts):
            z = self._z[i][:b]
            np.dot(h, self.w_views[i].T, out=z)
            if self.bias_enabled:
                np.add(z, self.b_views[i], out=z)
            h = np.maximum(z, 0.0, out=self._h[i][:b]) if act == "relu" else z
        return h

    def _backward(self, x: np.ndarray, b: int) -> None:
        delta = self._gradout[:b]
        for i in range(len(self.acts) - 1, -1, -1):
            if self.acts[i] == "relu":
                mask = np.greater(self._z[i][:b], 0.0, out=self._mask[i][:b])
                dz = np.multiply(delta, mask, out=self._dz[i][:b])
            else:
                dz = delta
            inp = x if i == 0 else self._h[i - 1][:b]
            np.dot(dz.T, inp, out=self.gw_views[i])
            if self.bias_enabled:
                np.sum(dz, axis=0, out=self.gb_views[i])
            else:
                self.gb_views[i][:] = 0.0
            if i > 0:
                delta = np.dot(dz, self.w_views[i], out=self._delta[i - 1][:b])

    def grad_center(self, x: np.ndarray, center: np.ndarray, denom: int) -> float:
        """Fill self.g with grads of sum ||phi(x)-c||^2 / denom; return the loss."""
        b = x.shape[0]
        out = self._forward(x)
        diff = np.subtract(out, center, out=self._diff[:b])
        np.multiply(diff, diff, out=self._sq[:b])
        loss = float(np.sum(self._sq[:b]) / denom)
        np.multiply(diff, 2.0 / denom, out=self._gradout[:b])
        self._backward(x, b)
        return loss

    def grad_ae(self, x: np.ndarray) -> float:
        """Fill self.g with grads of (1/b) sum ||phi(x)-x||^2; return the loss."""
        b = x.shape[0]
        out = self._forward(x)
        diff = np.subtract(out, x, out=self._diff[:b])
        np.multiply(diff, diff, out=self._sq[:b])
        loss = float(np.sum(self._sq[:b]) / b)
        np.multiply(diff, 2.0 / b, out=self._gradout[:b])
        self._backward(x, b)
        return loss

    def ensure_aux(self, max_batch: int) -> None:
        """Allocate buffers for a second forward/backward whose gradients are
        accumulated into self.g (used for the labeled term of the SAD loss)."""
        if self._aux is not None and self._aux["max_batch"] >= max_batch:
            return
        hidden = self.template.layer_dims[1:]
        self._aux = {
            "max_batch": max_batch,
            "z": [np.empty((max_batch, d)) for d in hidden],
            "h": [np.empty((max_batch, d)) for d in hidden],
            "mask": [np.empty((max_batch, d), dtype=bool) for d in hidden],
            "dz": [np.empty((max_batch, d)) for d in hidden],
            "delta": [np.empty((max_batch, d)) for d in hidden],
            "gw": [np.empty_like(w) for w in self.gw_views],
            "gb": [np.empty_like(b) for b in self.gb_views],
        }

    def forward_aux(self, x: np.ndarray) -> np.ndarray:
        b = x.shape[0]
        a = self._aux
        h = x
        for i, act in enumerate(self.acts):
            z = a["z"][i][:b]
            np.dot(h, self.w_views[i].T, out=z)
            if self.bias_enabled:
                np.add(z, self.b_views[i], out=z)
            h = np.maximum(z, 0.0, out=a["h"][i][:b]) if act == "relu" else z
        return h

    def backward_aux_add(self, x: np.ndarray, grad_outputs: np.ndarray) -> None:
        """Accumulate the auxiliary pass's gradients into self.g."""
        b = x.shape[0]
        a = self._aux
        delta = grad_outputs
        for i in range(len(self.acts) - 1, -1, -1):
            if self.acts[i] == "relu":
                mask = np.greater(a["z"][i][:b], 0.0, out=a["mask"][i][:b])
                dz = np.multiply(delta, mask, out=a["dz"][i][:b])
            else:
                dz = delta
            inp = x if i == 0 else a["h"][i - 1][:b]
            np.dot(dz.T, inp, out=a["gw"][i])
            self.gw_views[i] += a["gw"][i]
            if self.bias_enabled:
                np.sum(dz, axis=0, out=a["gb"][i])
                self.gb_views[i] += a["gb"][i]
            if i > 0:
                delta = np.dot(dz, self.w_views[i], out=a["delta"][i - 1][:b])

    def adam_apply(self, lr: float, weight_decay: float = 0.0) -> None:
        """In-place mirror of `adam_step` on the accumulated self.g."""
        if not np.isfinite(self.g).all():
            raise DivergenceError("non-finite gradients in adam_step")
        st = self.state
        st.t += 1
        if weight_decay:
            np.multiply(st.decay_mask, self.p, out=self._s1)
            self._s1 *= weight_decay
            self.g += self._s1
        np.multiply(st.m, st.beta1, out=st.m)
        np.multiply(self.g, 1.0 - st.beta1, out=self._s1)
        st.m += self._s1
        np.multiply(st.v, st.beta2, out=st.v)
        np.multiply(self.g, 1.0 - st.beta2, out=self._s1)
        self._s1 *= self.g
        st.v += self._s1
        np.divide(st.m, 1.0 - st.beta1 ** st.t, out=self._s1)
        np.divide(st.v, 1.0 - st.beta2 ** st.t, out=self._s2)
        np.sqrt(self._s2, out=self._s2)
        self._s2 += st.eps
        self._s1 /= self._s2
        self._s1 *= lr
        self.p -= self._s1


# --- checkpoints -------------------------------------------------------------

def _encode(arr: np.ndarray) -> dict:
    a = np.ascontiguousarray(arr, dtype="<f8")
    return {"shape": list(a.shape),
            "data": base64.b64encode(a.tobytes()).decode("ascii")}


def _decode(obj: dict) -> np.ndarray:
    raw = base64.b64decode(obj["data"])
    return np.frombuffer(raw, dtype="<f8").reshape(obj["shape"]).copy()


def save_checkpoint(model: MlpModel, path, seed: int | None = None,
                    extra: dict | None = None) -> None:
    """Write a versioned JSON checkpoint; f64 round-trips are bit-exact.

    `extra` may hold additional named arrays (e.g. hypersphere center,
    normalizer statistics) alongside the model parameters.
    """
    doc = {
        "version": CHECKPOINT_VERSION,
        "layer_dims": list(model.layer_dims),
        "bias_enabled": model.bias_enabled,
        "seed": seed,
        "layers": [
            {"weights": _encode(lp.weights), "bias": _encode(lp.bias),
             "activation": lp.activation}
            for lp in model.layers
        ],
        "extra": {k: _encode(np.asarray(v)) for k, v in (extra or {}).items()},
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def load_checkpoint(path) -> tuple[MlpModel, dict]:
    """Read a checkpoint; returns (model, meta) where meta has seed and extras."""
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ConfigError(f"unsupported checkpoint version {doc.get('version')!r}")
    layers = tuple(
        LayerParams(weights=_decode(l["weights"]), bias=_decode(l["bias"]),
                    activation=l["activation"])
        for l in doc["layers"]
    )
    model = MlpModel(layers=layers, layer_dims=tuple(doc["layer_dims"]),
                     bias_enabled=doc["bias_enabled"])
    model.validate()
    meta = {"seed": doc.get("seed"),
            "extra": {k: _decode(v) for k, v in doc.get("extra", {}).items()}}
    return model, meta
