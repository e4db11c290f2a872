"""Minimal dense MLP stack: forward pass, reverse-mode gradients, Adam.

Everything here is pure: functions return fresh arrays and never mutate their
inputs, so parameter stores can be shared read-only across rollout workers.
Arrays are float32 by default; passing float64 stores switches the whole
computation to float64 (used by the finite-difference checks).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

_ACTIVATIONS = ("tanh", "relu", "elu")


class ShapeError(ValueError):
    """Raised when an input or parameter shape does not match the spec."""


@dataclass(frozen=True)
class MlpSpec:
    """Layer sizes plus the hidden activation; output activation is identity."""

    layer_sizes: tuple[int, ...]
    activation: str = "tanh"

    def __post_init__(self):
        if len(self.layer_sizes) < 2:
            raise ShapeError(f"need >= 2 layer sizes, got {self.layer_sizes}")
        if any(s < 1 for s in self.layer_sizes):
            raise ShapeError(f"layer sizes must be >= 1, got {self.layer_sizes}")
        if self.activation not in _ACTIVATIONS:
            raise ShapeError(f"unknown activation {self.activation!r}")
        object.__setattr__(self, "layer_sizes", tuple(int(s) for s in self.layer_sizes))

    @property
    def in_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def out_dim(self) -> int:
        return self.layer_sizes[-1]

    @property
    def n_linear(self) -> int:
        return len(self.layer_sizes) - 1

    def weight_name(self, i: int) -> str:
        return f"l{i}.w"

    def bias_name(self, i: int) -> str:
        return f"l{i}.b"


class ParamStore:
    """Ordered mapping of unique names to finite float arrays."""

    def __init__(self, entries: dict[str, np.ndarray], check: bool = True):
        self._entries: dict[str, np.ndarray] = {}
        for name, value in entries.items():
            arr = np.asarray(value)
            if check and not np.all(np.isfinite(arr)):
                raise ValueError(f"non-finite values in parameter {name!r}")
            self._entries[str(name)] = arr

    def __getitem__(self, name: str) -> np.ndarray:
        return self._entries[name]

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __iter__(self):
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def names(self) -> list[str]:
        return list(self._entries)

    def items(self):
        return self._entries.items()

    def copy(self) -> "ParamStore":
        return ParamStore({k: v.copy() for k, v in self._entries.items()}, check=False)

    def astype(self, dtype) -> "ParamStore":
        return ParamStore({k: v.astype(dtype) for k, v in self._entries.items()}, check=False)

    def zeros_like(self) -> "ParamStore":
        return ParamStore({k: np.zeros_like(v) for k, v in self._entries.items()}, check=False)

    def n_values(self) -> int:
        return sum(v.size for v in self._entries.values())

    def allclose(self, other: "ParamStore", atol: float = 0.0) -> bool:
        if self.names() != other.names():
            return False
        return all(np.allclose(self[k], other[k], atol=atol, rtol=0.0) for k in self)

    def validate_finite(self) -> None:
        for name, value in self._entries.items():
            if not np.all(np.isfinite(value)):
                raise ValueError(f"non-finite values in parameter {name!r}")


def _orthogonal(rng: np.random.Generator, rows: int, cols: int, gain: float) -> np.ndarray:
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return np.ascontiguousarray(gain * q[:rows, :cols])


def init_mlp_params(
    spec: MlpSpec,
    rng: np.random.Generator,
    dtype=np.float32,
    output_gain: float = 1.0,
    prefix: str = "",
) -> ParamStore:
    """Orthogonal weight init (gain 1.0 hidden, output_gain last), zero biases."""
    entries: dict[str, np.ndarray] = {}
    for i in range(spec.n_linear):
        fan_in, fan_out = spec.layer_sizes[i], spec.layer_sizes[i + 1]
        gain = output_gain if i == spec.n_linear - 1 else 1.0
        entries[prefix + spec.weight_name(i)] = _orthogonal(rng, fan_in, fan_out, gain).astype(dtype)
        entries[prefix + spec.bias_name(i)] = np.zeros(fan_out, dtype=dtype)
    return ParamStore(entries, check=False)


def _activate(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "tanh":
        return np.tanh(z)
    if kind == "relu":
        return np.maximum(z, 0.0)
    # elu
    return np.where(z > 0.0, z, np.expm1(np.minimum(z, 0.0)))


def _activate_grad_from_output(y: np.ndarray, kind: str) -> np.ndarray:
    # All three activations are monotone with f(0)=0, so the sign of the
    # pre-activation is recoverable from the output.
    if kind == "tanh":
        return 1.0 - y * y
    if kind == "relu":
        return (y > 0.0).astype(y.dtype)
    return np.where(y > 0.0, np.asarray(1.0, dtype=y.dtype), y + 1.0)


def _check_input(spec: MlpSpec, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    if x.shape[-1] != spec.in_dim:
        raise ShapeError(
            f"input has {x.shape[-1]} features, layer 0 expects {spec.in_dim}"
        )
    return x


def _layer_params(spec: MlpSpec, params: ParamStore, i: int, prefix: str):
    wname, bname = prefix + spec.weight_name(i), prefix + spec.bias_name(i)
    for name in (wname, bname):
        if name not in params:
            raise ShapeError(f"missing parameter {name!r}")
    w, b = params[wname], params[bname]
    if w.shape != (spec.layer_sizes[i], spec.layer_sizes[i + 1]):
        raise ShapeError(
            f"{wname} has shape {w.shape}, expected "
            f"{(spec.layer_sizes[i], spec.layer_sizes[i + 1])}"
        )
    if b.shape != (spec.layer_sizes[i + 1],):
        raise ShapeError(f"{bname} has shape {b.shape}, expected ({spec.layer_sizes[i + 1]},)")
    return w, b


def mlp_forward_cached(
    spec: MlpSpec, params: ParamStore, x: np.ndarray, prefix: str = ""
) -> tuple[np.ndarray, list[np.ndarray]]:
    """Forward pass returning the output and per-layer activations for backprop.

    `x` is a single vector or a (batch, features) matrix.
    """
    h = _check_input(spec, x)
    acts = [h]
    for i in range(spec.n_linear):
        w, b = _layer_params(spec, params, i, prefix)
        z = h @ w + b
        h = _activate(z, spec.activation) if i < spec.n_linear - 1 else z
        acts.append(h)
    return h, acts


def mlp_forward(spec: MlpSpec, params: ParamStore, x: np.ndarray, prefix: str = "") -> np.ndarray:
    out, _ = mlp_forward_cached(spec, params, x, prefix)
    return out


def mlp_backward_from_cache(
    spec: MlpSpec,
    params: ParamStore,
    acts: list[np.ndarray],
    upstream: np.ndarray,
    prefix: str = "",
) -> tuple[ParamStore, np.ndarray]:
    """Backprop given cached activations; returns (parameter grads, input grad)."""
    g = np.asarray(upstream)
    if g.shape != acts[-1].shape:
        raise ShapeError(f"upstream grad shape {g.shape} != output shape {acts[-1].shape}")
    grads: dict[str, np.ndarray] = {}
    for i in reversed(range(spec.n_linear)):
        w, _ = _layer_params(spec, params, i, prefix)
        if i < spec.n_linear - 1:
            g = g * _activate_grad_from_output(acts[i + 1], spec.activation)
        h = acts[i]
        if h.ndim == 1:
            grads[prefix + spec.weight_name(i)] = np.outer(h, g)
            grads[prefix + spec.bias_name(i)] = g.copy()
        else:
            grads[prefix + spec.weight_name(i)] = h.T @ g
            grads[prefix + spec.bias_name(i)] = g.sum(axis=0)
        g = g @ w.T
    ordered = {
        name: grads[name]
        for i in range(spec.n_linear)
        for name in (prefix + spec.weight_name(i), prefix + spec.bias_name(i))
    }
    return ParamStore(ordered, check=False), g


def mlp_backward(
    spec: MlpSpec,
    params: ParamStore,
    x: np.ndarray,
    upstream: np.ndarray,
    prefix: str = "",
) -> tuple[ParamStore, np.ndarray]:
    """Gradients of sum(upstream * output) w.r.t. every parameter and the input.

    Recomputes the forward pass; use the cached variant inside training loops.
    """
    if not np.all(np.isfinite(np.asarray(upstream))):
        raise ValueError("non-finite upstream gradient")
    _, acts = mlp_forward_cached(spec, params, x, prefix)
    return mlp_backward_from_cache(spec, params, acts, upstream, prefix)


@dataclass
class AdamState:
    """Bias-corrected Adam accumulators; shapes mirror the parameter store."""

    m: ParamStore
    v: ParamStore
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_init(params: ParamStore, lr: float = 1e-3, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    return AdamState(m=params.zeros_like(), v=params.zeros_like(),
                     step=0, lr=lr, beta1=beta1, beta2=beta2, eps=eps)


def adam_step(params: ParamStore, grads: ParamStore, state: AdamState,
              lr: float | None = None) -> tuple[ParamStore, AdamState]:
    """One standard Adam update; returns fresh params and state."""
    if params.names() != state.m.names():
        raise ShapeError("optimizer state does not mirror the parameter store")
    step = state.step + 1
    lr_t = state.lr if lr is None else lr
    new_p, new_m, new_v = {}, {}, {}
    c1 = 1.0 - state.beta1**step
    c2 = 1.0 - state.beta2**step
    for name in params:
        g = grads[name]
        if g.shape != params[name].shape:
            raise ShapeError(f"gradient shape mismatch for {name!r}")
        m = state.beta1 * state.m[name] + (1.0 - state.beta1) * g
        v = state.beta2 * state.v[name] + (1.0 - state.beta2) * (g * g)
        m_hat = m / c1
        v_hat = v / c2
        new_p[name] = params[name] - lr_t * m_hat / (np.sqrt(v_hat) + state.eps)
        new_m[name] = m
        new_v[name] = v
    return (
        ParamStore(new_p, check=False),
        replace(state, m=ParamStore(new_m, check=False), v=ParamStore(new_v, check=False), step=step),
    )


LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0


def clamp_log_std(log_std: np.ndarray) -> np.ndarray:
    return np.clip(log_std, LOG_STD_MIN, LOG_STD_MAX)


def log_std_grad_mask(log_std: np.ndarray) -> np.ndarray:
    """Zero subgradient outside the clamp interval."""
    return ((log_std > LOG_STD_MIN) & (log_std < LOG_STD_MAX)).astype(log_std.dtype)


def merge_stores(*stores: ParamStore) -> ParamStore:
    entries: dict[str, np.ndarray] = {}
    for store in stores:
        for name, value in store.items():
            if name in entries:
                raise ValueError(f"duplicate parameter name {name!r}")
            entries[name] = value
    return ParamStore(entries, check=False)
