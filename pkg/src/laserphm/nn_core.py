"""Small numpy LSTM engine: forward, backpropagation through time, Adam.

Parameters live in a flat ``dict[str, np.ndarray]`` (``"lstm0.W"``,
``"dense.b"``...), which is what gradients, optimizer state and gradient
checks all key on. LSTM gates are stacked in the order i, f, o, g along the
first axis of ``W`` (4H x D), ``U`` (4H x H) and ``b`` (4H).

Everything runs in float64 on batches shaped (batch, time, features).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1
GATE_ORDER = ("i", "f", "o", "g")
ACTIVATIONS = ("softmax", "sigmoid", "identity")
PROB_FLOOR = 1e-12
CLIP_NORM = 5.0


class ShapeError(ValueError):
    pass


class StateError(RuntimeError):
    pass


class ModelFormatError(ValueError):
    pass


def sigmoid(x):
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=float)))


def softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=float)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(probs, target) -> float:
    """-log p[target]; ``target`` is a class index or a one-hot vector."""
    probs = np.asarray(probs, dtype=float)
    if np.ndim(target) > 0:
        target = int(np.argmax(target))
    return float(-np.log(max(probs[int(target)], PROB_FLOOR)))


def mse(pred, labels) -> float:
    pred = np.asarray(pred, dtype=float)
    labels = np.asarray(labels, dtype=float)
    if pred.shape != labels.shape:
        raise ShapeError(f"mse shape mismatch {pred.shape} vs {labels.shape}")
    return float(np.mean((pred - labels) ** 2))


@dataclass
class LstmLayerParams:
    W: np.ndarray  # (4H, D)
    U: np.ndarray  # (4H, H)
    b: np.ndarray  # (4H,)

    def __post_init__(self):
        h4, d = self.W.shape
        if h4 % 4 or self.U.shape != (h4, h4 // 4) or self.b.shape != (h4,):
            raise ShapeError("inconsistent LSTM parameter shapes")

    @property
    def input_dim(self) -> int:
        return self.W.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.U.shape[1]

    def gate(self, name: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Views (W_x, U_x, b_x) of one gate."""
        H = self.hidden_dim
        k = GATE_ORDER.index(name)
        s = slice(k * H, (k + 1) * H)
        return self.W[s], self.U[s], self.b[s]

    @classmethod
    def zeros(cls, input_dim: int, hidden_dim: int) -> "LstmLayerParams":
        return cls(
            np.zeros((4 * hidden_dim, input_dim)),
            np.zeros((4 * hidden_dim, hidden_dim)),
            np.zeros(4 * hidden_dim),
        )


@dataclass
class DenseLayerParams:
    W: np.ndarray  # (out, in)
    b: np.ndarray  # (out,)
    activation: str = "identity"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ShapeError(f"unknown activation {self.activation!r}")
        if self.W.ndim != 2 or self.b.shape != (self.W.shape[0],):
            raise ShapeError("inconsistent dense parameter shapes")


@dataclass
class LstmNetwork:
    """Stacked LSTM layers feeding a dense head.

    A softmax head reads the last hidden state only (sequence classification);
    any other head is applied at every time step.
    """

    layers: list[LstmLayerParams]
    dense: DenseLayerParams
    purpose: str = ""
    input_channels: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.layers:
            raise ShapeError("network needs at least one LSTM layer")
        for lower, upper in zip(self.layers, self.layers[1:]):
            if upper.input_dim != lower.hidden_dim:
                raise ShapeError("LSTM layer dimensions do not chain")
        if self.dense.W.shape[1] != self.layers[-1].hidden_dim:
            raise ShapeError("dense input dim must equal last hidden dim")

    @property
    def input_dim(self) -> int:
        return self.layers[0].input_dim

    @property
    def output_dim(self) -> int:
        return self.dense.W.shape[0]

    @property
    def per_step(self) -> bool:
        return self.dense.activation != "softmax"

    def params(self) -> dict[str, np.ndarray]:
        out = {}
        for n, layer in enumerate(self.layers):
            out[f"lstm{n}.W"] = layer.W
            out[f"lstm{n}.U"] = layer.U
            out[f"lstm{n}.b"] = layer.b
        out["dense.W"] = self.dense.W
        out["dense.b"] = self.dense.b
        return out

    def copy(self) -> "LstmNetwork":
        return LstmNetwork(
            [LstmLayerParams(l.W.copy(), l.U.copy(), l.b.copy()) for l in self.layers],
            DenseLayerParams(self.dense.W.copy(), self.dense.b.copy(), self.dense.activation),
            self.purpose,
            list(self.input_channels),
        )


def init_network(
    input_dim: int,
    hidden_dims: list[int],
    output_dim: int,
    activation: str,
    rng: np.random.Generator,
    purpose: str = "",
    input_channels: list[str] | None = None,
    forget_bias: float = 1.0,
) -> LstmNetwork:
    """Uniform(+-1/sqrt(fan_in)) weights, zero biases, forget-gate bias 1."""
    layers = []
    d = input_dim
    for h in hidden_dims:
        lim_w, lim_u = 1 / np.sqrt(d), 1 / np.sqrt(h)
        W = rng.uniform(-lim_w, lim_w, size=(4 * h, d))
        U = rng.uniform(-lim_u, lim_u, size=(4 * h, h))
        b = np.zeros(4 * h)
        b[h : 2 * h] = forget_bias
        layers.append(LstmLayerParams(W, U, b))
        d = h
    lim = 1 / np.sqrt(d)
    dense = DenseLayerParams(
        rng.uniform(-lim, lim, size=(output_dim, d)), np.zeros(output_dim), activation
    )
    return LstmNetwork(layers, dense, purpose, list(input_channels or []))


def zeros_network(input_dim, hidden_dims, output_dim, activation, purpose="") -> LstmNetwork:
    layers, d = [], input_dim
    for h in hidden_dims:
        layers.append(LstmLayerParams.zeros(d, h))
        d = h
    dense = DenseLayerParams(np.zeros((output_dim, d)), np.zeros(output_dim), activation)
    return LstmNetwork(layers, dense, purpose)


# --- forward / backward ------------------------------------------------------


@dataclass
class LstmCache:
    x: np.ndarray  # (B, T, D)
    gates: np.ndarray  # (B, T, 4H) post-activation i, f, o, g
    c: np.ndarray  # (B, T, H)
    tanh_c: np.ndarray  # (B, T, H)
    h: np.ndarray  # (B, T, H)


@dataclass
class ForwardCache:
    layers: list[LstmCache]
    head_input: np.ndarray  # (B, H) or (B, T, H)
    output: np.ndarray
    param_ids: tuple = ()


def _as_batch(inputs) -> tuple[np.ndarray, bool]:
    x = np.asarray(getattr(inputs, "features", inputs), dtype=float)
    if x.ndim == 2:
        return x[None], True
    if x.ndim != 3:
        raise ShapeError(f"expected (T, D) or (B, T, D) input, got shape {x.shape}")
    return x, False


def lstm_forward(layer: LstmLayerParams, inputs) -> tuple[np.ndarray, LstmCache]:
    """Run one LSTM layer from h0 = c0 = 0. Returns hidden states and cache."""
    x, single = _as_batch(inputs)
    B, T, D = x.shape
    if D != layer.input_dim:
        raise ShapeError(f"layer expects input dim {layer.input_dim}, got {D}")
    if T < 1:
        raise ShapeError("need at least one time step")
    H = layer.hidden_dim
    xw = x @ layer.W.T + layer.b  # (B, T, 4H)
    UT = layer.U.T
    gates = np.empty((B, T, 4 * H))
    cs = np.empty((B, T, H))
    tcs = np.empty((B, T, H))
    hs = np.empty((B, T, H))
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    for t in range(T):
        z = xw[:, t] + h @ UT
        a = gates[:, t]
        a[:, : 3 * H] = sigmoid(z[:, : 3 * H])
        a[:, 3 * H :] = np.tanh(z[:, 3 * H :])
        i, f, o, g = a[:, :H], a[:, H : 2 * H], a[:, 2 * H : 3 * H], a[:, 3 * H :]
        c = f * c + i * g
        tc = np.tanh(c)
        h = o * tc
        cs[:, t], tcs[:, t], hs[:, t] = c, tc, h
    cache = LstmCache(x, gates, cs, tcs, hs)
    return (hs[0] if single else hs), cache


def lstm_backward(layer: LstmLayerParams, cache: LstmCache, dh_seq: np.ndarray):
    """BPTT through one layer. ``dh_seq`` is dL/dh_t from above, (B, T, H).

    Returns (dx, dW, dU, db).
    """
    B, T, H = cache.h.shape
    U = layer.U
    dz_all = np.empty((B, T, 4 * H))
    dh_next = np.zeros((B, H))
    dc_next = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        a = cache.gates[:, t]
        i, f, o, g = a[:, :H], a[:, H : 2 * H], a[:, 2 * H : 3 * H], a[:, 3 * H :]
        tc = cache.tanh_c[:, t]
        dh = dh_seq[:, t] + dh_next
        dc = dc_next + dh * o * (1.0 - tc * tc)
        c_prev = cache.c[:, t - 1] if t > 0 else np.zeros((B, H))
        dz = dz_all[:, t]
        dz[:, :H] = dc * g * i * (1.0 - i)
        dz[:, H : 2 * H] = dc * c_prev * f * (1.0 - f)
        dz[:, 2 * H : 3 * H] = dh * tc * o * (1.0 - o)
        dz[:, 3 * H :] = dc * i * (1.0 - g * g)
        dh_next = dz @ U
        dc_next = dc * f
    h_prev = np.concatenate([np.zeros((B, 1, H)), cache.h[:, :-1]], axis=1)
    dW = np.einsum("btk,btd->kd", dz_all, cache.x)
    dU = np.einsum("btk,bth->kh", dz_all, h_prev)
    db = dz_all.sum(axis=(0, 1))
    dx = dz_all @ layer.W
    return dx, dW, dU, db


def _activate(z: np.ndarray, activation: str) -> np.ndarray:
    if activation == "softmax":
        return softmax(z)
    if activation == "sigmoid":
        return sigmoid(z)
    return z


def network_forward(net: LstmNetwork, inputs) -> tuple[np.ndarray, ForwardCache]:
    """Forward pass.

    ``inputs`` is a FeatureWindow, a (T, D) array or a (B, T, D) batch. The
    output is (B, classes) for a softmax head and (B, T) for a scalar
    per-step head (leading batch axis dropped for single inputs).
    """
    x, single = _as_batch(inputs)
    if x.shape[2] != net.input_dim:
        raise ShapeError(f"network expects {net.input_dim} channels, got {x.shape[2]}")
    caches = []
    h = x
    for layer in net.layers:
        h, cache = lstm_forward(layer, h)
        caches.append(cache)
    head_in = h if net.per_step else h[:, -1]
    out = _activate(head_in @ net.dense.W.T + net.dense.b, net.dense.activation)
    if net.per_step and net.output_dim == 1:
        out = out[..., 0]
    fc = ForwardCache(caches, head_in, out, tuple(id(p) for p in net.params().values()))
    return (out[0] if single else out), fc


def network_backward(net: LstmNetwork, cache: ForwardCache, grad_output) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss given dL/d(output) of ``network_forward``."""
    if cache.param_ids != tuple(id(p) for p in net.params().values()) or len(
        cache.layers
    ) != len(net.layers):
        raise StateError("cache does not belong to this network")
    out = cache.output
    g = np.asarray(grad_output, dtype=float).reshape(out.shape)
    if net.per_step and net.output_dim == 1:
        out, g = out[..., None], g[..., None]
    act = net.dense.activation
    if act == "softmax":
        dz = out * (g - np.sum(g * out, axis=-1, keepdims=True))
    elif act == "sigmoid":
        dz = g * out * (1.0 - out)
    else:
        dz = g
    grads = {}
    hin = cache.head_input
    if net.per_step:
        grads["dense.W"] = np.einsum("bto,bth->oh", dz, hin)
        grads["dense.b"] = dz.sum(axis=(0, 1))
        dh = dz @ net.dense.W
    else:
        grads["dense.W"] = dz.T @ hin
        grads["dense.b"] = dz.sum(axis=0)
        B, T, H = cache.layers[-1].h.shape
        dh = np.zeros((B, T, H))
        dh[:, -1] = dz @ net.dense.W
    for n in range(len(net.layers) - 1, -1, -1):
        dh, dW, dU, db = lstm_backward(net.layers[n], cache.layers[n], dh)
        grads[f"lstm{n}.W"], grads[f"lstm{n}.U"], grads[f"lstm{n}.b"] = dW, dU, db
    return {k: grads[k] for k in net.params()}


# --- losses with gradients for batches -------------------------------------


def batch_loss_and_grad(net: LstmNetwork, x, targets) -> tuple[float, dict[str, np.ndarray]]:
    """Mean loss over the batch and its parameter gradients.

    Softmax heads take integer class targets (B,) and use cross-entropy;
    per-step heads take (B, T) targets and use MSE over all steps.
    """
    if np.ndim(x) != 3:
        raise ShapeError("batch_loss_and_grad expects a (B, T, D) batch")
    out, cache = network_forward(net, x)
    B = out.shape[0]
    if net.dense.activation == "softmax":
        targets = np.asarray(targets, dtype=int)
        p = np.maximum(out[np.arange(B), targets], PROB_FLOOR)
        loss = float(-np.mean(np.log(p)))
        g = np.zeros_like(out)
        g[np.arange(B), targets] = -1.0 / (B * p)
    else:
        targets = np.asarray(targets, dtype=float).reshape(out.shape)
        diff = out - targets
        loss = float(np.mean(diff**2))
        g = 2.0 * diff / diff.size
    return loss, network_backward(net, cache, g)


def clip_by_global_norm(grads: dict[str, np.ndarray], max_norm: float = CLIP_NORM) -> float:
    """Scale ``grads`` in place so their joint L2 norm is at most ``max_norm``."""
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
    if norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


# --- Adam ----------------------------------------------------------------------


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState):
    """One bias-corrected Adam update, applied to ``params`` in place."""
    if params.keys() != grads.keys():
        raise ShapeError("params and grads have different keys")
    for k, g in grads.items():
        if g.shape != params[k].shape:
            raise ShapeError(f"gradient shape mismatch for {k}")
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    for k, p in params.items():
        g = grads[k]
        if k not in state.m:
            state.m[k] = np.zeros_like(p)
            state.v[k] = np.zeros_like(p)
        m, v = state.m[k], state.v[k]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return params, state


# --- gradient check ----------------------------------------------------------------


@dataclass
class GradCheckReport:
    max_rel_error: float
    mean_rel_error: float
    per_param: dict[str, float]  # max relative error per tensor
    n_checked: int

    def passed(self, tolerance: float) -> bool:
        return self.max_rel_error < tolerance


def relative_error(a, b, floor: float = 1e-6):
    a, b = np.asarray(a), np.asarray(b)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def gradient_check(
    net: LstmNetwork,
    window,
    label,
    step: float = 1e-5,
    tolerance: float = 1e-4,
    max_params: int = 10_000,
    seed: int = 0,
) -> GradCheckReport:
    """Compare BPTT gradients with central differences of the same loss.

    Every parameter entry is perturbed unless the network has more than
    ``max_params`` entries, in which case a seeded random subset is used.
    ``tolerance`` is informational; see ``GradCheckReport.passed``.
    """
    if step <= 0:
        raise ValueError("step must be > 0")
    x, _ = _as_batch(window)
    targets = np.asarray([label]) if net.dense.activation == "softmax" else np.asarray(label)[None]

    def loss_of():
        return batch_loss_and_grad(net, x, targets)[0]

    _, analytic = batch_loss_and_grad(net, x, targets)
    params = net.params()
    sizes = {k: p.size for k, p in params.items()}
    total = sum(sizes.values())
    index = [(k, j) for k in params for j in range(sizes[k])]
    if total > max_params:
        rng = np.random.default_rng(seed)
        pick = np.sort(rng.choice(total, size=max_params, replace=False))
        index = [index[i] for i in pick]
    errors: dict[str, list[float]] = {k: [] for k in params}
    for k, j in index:
        flat = params[k].reshape(-1)
        orig = flat[j]
        flat[j] = orig + step
        lp = loss_of()
        flat[j] = orig - step
        lm = loss_of()
        flat[j] = orig
        numeric = (lp - lm) / (2 * step)
        errors[k].append(float(relative_error(analytic[k].reshape(-1)[j], numeric)))
    all_err = np.array([e for v in errors.values() for e in v])
    return GradCheckReport(
        max_rel_error=float(all_err.max()) if all_err.size else 0.0,
        mean_rel_error=float(all_err.mean()) if all_err.size else 0.0,
        per_param={k: max(v) for k, v in errors.items() if v},
        n_checked=int(all_err.size),
    )


# --- serialization ---------------------------------------------------------------


def network_to_dict(net: LstmNetwork) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "purpose": net.purpose,
        "input_channels": list(net.input_channels),
        "gate_order": "".join(GATE_ORDER),
        "lstm_layers": [
            {
                "input_dim": l.input_dim,
                "hidden_dim": l.hidden_dim,
                "W": l.W.tolist(),
                "U": l.U.tolist(),
                "b": l.b.tolist(),
            }
            for l in net.layers
        ],
        "dense": {
            "input_dim": net.dense.W.shape[1],
            "output_dim": net.dense.W.shape[0],
            "activation": net.dense.activation,
            "W": net.dense.W.tolist(),
            "b": net.dense.b.tolist(),
        },
    }


def network_from_dict(data: dict) -> LstmNetwork:
    version = data.get("format_version")
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported model format_version {version!r}")
    try:
        if data.get("gate_order", "ifog") != "".join(GATE_ORDER):
            raise ModelFormatError("unsupported gate order")
        layers = []
        for spec in data["lstm_layers"]:
            layer = LstmLayerParams(
                np.array(spec["W"], dtype=float).reshape(4 * spec["hidden_dim"], spec["input_dim"]),
                np.array(spec["U"], dtype=float).reshape(4 * spec["hidden_dim"], spec["hidden_dim"]),
                np.array(spec["b"], dtype=float).reshape(4 * spec["hidden_dim"]),
            )
            layers.append(layer)
        d = data["dense"]
        dense = DenseLayerParams(
            np.array(d["W"], dtype=float).reshape(d["output_dim"], d["input_dim"]),
            np.array(d["b"], dtype=float).reshape(d["output_dim"]),
            d["activation"],
        )
        return LstmNetwork(layers, dense, data.get("purpose", ""), list(data.get("input_channels", [])))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ModelFormatError):
            raise
        raise ModelFormatError(f"malformed model file: {exc}") from exc


def save_network(net: LstmNetwork, path) -> None:
    Path(path).write_text(json.dumps(network_to_dict(net)) + "\n", encoding="utf-8")


def load_network(path) -> LstmNetwork:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{path}: not valid JSON ({exc})") from exc
    return network_from_dict(data)
