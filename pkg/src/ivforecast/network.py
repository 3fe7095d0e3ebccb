"""Att-LSTM surface forecaster plus plain-LSTM and MLP baselines.

All models take a batch of feature windows shaped (B, 3, 45) (daily, weekly,
monthly rows) and emit (B, 45) surfaces.  Gradients are hand-derived
reverse-mode; parameters live in a flat ``dict[str, ndarray]`` so the
optimizer, checkpoints and gradient checks treat every model alike.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionError, StateError
from .numerics import Rng, bernoulli_mask, make_rng, sigmoid, softmax

N_STEPS = 3
N_IN = 45
HIDDEN = 135

_GATES = ("i", "f", "o", "g")


# ---------------------------------------------------------------------------
# parameter containers


@dataclass
class LstmCellParams:
    """Peephole LSTM weights with the four gates stacked in (i, f, o, g) order.

    ``W_x`` is (4H, n), ``W_h`` is (4H, H), ``W_c`` holds the diagonal
    peepholes of the i, f, o gates as (3H,), ``b`` is (4H,).  Per-gate blocks
    (``W_ix``, ``W_fh``, ``W_oc``, ``b_g``, ...) are exposed as views.
    """

    W_x: np.ndarray
    W_h: np.ndarray
    W_c: np.ndarray
    b: np.ndarray

    @staticmethod
    def names() -> tuple[str, ...]:
        return ("W_x", "W_h", "W_c", "b")

    @classmethod
    def view(cls, params: dict, prefix: str) -> "LstmCellParams":
        return cls(**{n: params[prefix + n] for n in cls.names()})

    @classmethod
    def init(cls, rng: Rng, n_in: int, hidden: int) -> "LstmCellParams":
        w_x = np.concatenate([_glorot(rng, hidden, n_in) for _ in _GATES])
        w_h = np.concatenate([_glorot(rng, hidden, hidden) for _ in _GATES])
        b = np.zeros(4 * hidden)
        b[hidden: 2 * hidden] = 1.0  # forget gate
        return cls(w_x, w_h, np.zeros(3 * hidden), b)

    @classmethod
    def zeros(cls, n_in: int, hidden: int) -> "LstmCellParams":
        return cls(np.zeros((4 * hidden, n_in)), np.zeros((4 * hidden, hidden)),
                   np.zeros(3 * hidden), np.zeros(4 * hidden))

    def as_dict(self, prefix: str) -> dict[str, np.ndarray]:
        return {prefix + n: getattr(self, n) for n in self.names()}

    @property
    def hidden(self) -> int:
        return self.W_h.shape[1]

    def gate(self, name: str, part: str) -> np.ndarray:
        """Block of one gate: ``part`` is "x", "h", "c" (peephole) or "b"."""
        k = _GATES.index(name)
        if part == "c" and name == "g":
            raise KeyError("the cell-input gate has no peephole")
        arr = {"x": self.W_x, "h": self.W_h, "c": self.W_c, "b": self.b}[part]
        return arr[k * self.hidden: (k + 1) * self.hidden]

    def __getattr__(self, item):
        # W_ix, W_fh, W_oc, b_g, ...
        if len(item) == 4 and item.startswith("W_") and item[2] in _GATES:
            return self.gate(item[2], item[3])
        if len(item) == 3 and item.startswith("b_") and item[2] in _GATES:
            return self.gate(item[2], "b")
        raise AttributeError(item)


@dataclass
class AttentionParams:
    """Single-layer perceptron alignment; ``lam`` maps tanh output to a score."""

    W_ah: np.ndarray
    W_as: np.ndarray
    b_a: np.ndarray
    lam: np.ndarray

    @staticmethod
    def names() -> tuple[str, ...]:
        return ("W_ah", "W_as", "b_a", "lam")

    @classmethod
    def view(cls, params: dict, prefix: str = "attn.") -> "AttentionParams":
        return cls(**{n: params[prefix + n] for n in cls.names()})

    def as_dict(self, prefix: str = "attn.") -> dict[str, np.ndarray]:
        return {prefix + n: getattr(self, n) for n in self.names()}


def _glorot(rng: Rng, fan_out: int, fan_in: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_out, fan_in))


# ---------------------------------------------------------------------------
# building blocks


def _lstm_forward(p: LstmCellParams, x, h_prev, c_prev):
    hidden = p.hidden
    if x.shape[-1] != p.W_x.shape[1] or h_prev.shape[-1] != hidden or c_prev.shape != h_prev.shape:
        raise DimensionError(
            f"LSTM cell expects input {p.W_x.shape[1]} and state {hidden}, "
            f"got {x.shape}, {h_prev.shape}, {c_prev.shape}"
        )
    z = x @ p.W_x.T + h_prev @ p.W_h.T + p.b
    z[..., : 3 * hidden] += np.concatenate([c_prev, c_prev, c_prev], axis=-1) * p.W_c
    gates = sigmoid(z[..., : 3 * hidden])
    i = gates[..., :hidden]
    f = gates[..., hidden: 2 * hidden]
    o = gates[..., 2 * hidden:]
    g = np.tanh(z[..., 3 * hidden:])
    c = f * c_prev + i * g
    tc = np.tanh(c)
    h = o * tc
    return h, c, (x, h_prev, c_prev, i, f, o, g, tc)


def lstm_cell_step(params: LstmCellParams, x_t, h_prev, c_prev):
    """One peephole-LSTM step; works on single vectors or batches of rows."""
    h, c, _ = _lstm_forward(params, np.asarray(x_t, float), np.asarray(h_prev, float), np.asarray(c_prev, float))
    return h, c


def _lstm_backward(p: LstmCellParams, cache, dh, dc, grads: dict, prefix: str):
    """Accumulate parameter grads; return (dx, dh_prev, dc_prev)."""
    x, h_prev, c_prev, i, f, o, g, tc = cache
    hidden = p.hidden
    dc = dc + dh * o * (1.0 - tc * tc)
    da = np.concatenate([
        dc * g * i * (1.0 - i),
        dc * c_prev * f * (1.0 - f),
        dh * tc * o * (1.0 - o),
        dc * i * (1.0 - g * g),
    ], axis=-1)
    da_peep = da[:, : 3 * hidden]
    w_c = p.W_c
    dc_prev = (dc * f + da_peep[:, :hidden] * w_c[:hidden]
               + da_peep[:, hidden: 2 * hidden] * w_c[hidden: 2 * hidden]
               + da_peep[:, 2 * hidden:] * w_c[2 * hidden:])
    grads[prefix + "W_x"] += da.T @ x
    grads[prefix + "W_h"] += da.T @ h_prev
    grads[prefix + "b"] += da.sum(axis=0)
    grads[prefix + "W_c"] += (da_peep * np.concatenate([c_prev, c_prev, c_prev], axis=-1)).sum(axis=0)
    return da @ p.W_x, da @ p.W_h, dc_prev


def _lstm_sequence(p: LstmCellParams, xs):
    """Run a layer over (B, T, n) inputs from zero state."""
    b, steps = xs.shape[0], xs.shape[1]
    h = np.zeros((b, p.hidden))
    c = np.zeros((b, p.hidden))
    hs, caches = [], []
    for t in range(steps):
        h, c, cache = _lstm_forward(p, xs[:, t], h, c)
        hs.append(h)
        caches.append(cache)
    return np.stack(hs, axis=1), caches


def _lstm_sequence_backward(p: LstmCellParams, caches, dhs, grads, prefix):
    """BPTT for :func:`_lstm_sequence`; ``dhs`` is (B, T, H) external grads."""
    dh_next = np.zeros_like(dhs[:, 0])
    dc_next = np.zeros_like(dh_next)
    dxs = [None] * len(caches)
    for t in reversed(range(len(caches))):
        dxs[t], dh_next, dc_next = _lstm_backward(p, caches[t], dhs[:, t] + dh_next, dc_next, grads, prefix)
    return np.stack(dxs, axis=1)


def _attention_scores(h_proj, s_prev, attn: AttentionParams):
    """tanh pre-activations for every (batch, source step) pair."""
    return np.tanh(h_proj + (s_prev @ attn.W_as.T)[..., None, :] + attn.b_a)


def attention_layer(h_seq, s_prev, attn: AttentionParams):
    """Context vector and alignment weights over the source states ``h_seq``.

    ``h_seq`` is (m, H) (or (B, m, H)); ``s_prev`` is (H,) (or (B, H)).
    """
    h_seq = np.asarray(h_seq, dtype=np.float64)
    s_prev = np.asarray(s_prev, dtype=np.float64)
    hidden = attn.W_ah.shape[0]
    if h_seq.ndim < 2 or h_seq.shape[-2] < 1 or h_seq.shape[-1] != hidden or s_prev.shape[-1] != hidden:
        raise DimensionError(f"attention expects (m>=1, {hidden}) states, got {h_seq.shape}, {s_prev.shape}")
    u = _attention_scores(h_seq @ attn.W_ah.T, s_prev, attn)
    weights = softmax(u @ attn.lam, axis=-1)
    context = np.einsum("...j,...jh->...h", weights, h_seq)
    return context, weights


def dropout_apply(h, p: float, rng: Rng | None, mode: str = "train") -> np.ndarray:
    """Inverted dropout: keep with probability ``p`` and rescale by 1/p in
    training; identity at inference."""
    if not 0.0 < p <= 1.0:
        raise ValueError(f"keep probability must lie in (0, 1], got {p}")
    h = np.asarray(h, dtype=np.float64)
    if mode == "infer" or p == 1.0:
        return h
    if mode != "train":
        raise ValueError(f"unknown mode {mode!r}")
    return h * bernoulli_mask(rng, h.shape, p) / p


def _dropout_mask(shape, p, rng, mode):
    if mode == "infer" or p == 1.0:
        return None
    return bernoulli_mask(rng, shape, p) / p


def mse_loss(y_hat, y):
    """Mean squared error over every entry and its gradient w.r.t. ``y_hat``."""
    diff = y_hat - y
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


# ---------------------------------------------------------------------------
# models


@dataclass
class Tape:
    mode: str
    cache: dict = field(default_factory=dict)


class Model:
    """Shared contract: ``forward(x, mode, rng) -> (y_hat, tape)`` and
    ``backward(tape, dy) -> grads`` keyed like ``params``."""

    kind: str = ""

    def __init__(self, params: dict[str, np.ndarray], hidden: int, keep_prob: float = 1.0):
        self.params = params
        self.hidden = hidden
        self.keep_prob = keep_prob

    def param_count(self) -> int:
        return int(sum(v.size for v in self.params.values()))

    def zero_grads(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.params.items()}

    def predict(self, x) -> np.ndarray:
        return self.forward(x, mode="infer")[0]

    def _check_input(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 2:
            x = x[None]
        if x.ndim != 3 or x.shape[1:] != (N_STEPS, N_IN):
            raise DimensionError(f"expected inputs (B, {N_STEPS}, {N_IN}), got {x.shape}")
        return x

    def _dense(self, h, tape_cache):
        tape_cache["dense_in"] = h
        return h @ self.params["dense.W"].T + self.params["dense.b"]

    def _dense_backward(self, tape_cache, dy, grads):
        h = tape_cache["dense_in"]
        grads["dense.W"] += dy.T @ h
        grads["dense.b"] += dy.sum(axis=0)
        return dy @ self.params["dense.W"]

    def _check_tape(self, tape: Tape, dy):
        if tape.mode != "train":
            raise StateError("backward needs a tape recorded in train mode")
        dy = np.asarray(dy, dtype=np.float64)
        if dy.shape != tape.cache["y_shape"]:
            raise DimensionError(f"loss gradient shape {dy.shape} != output shape {tape.cache['y_shape']}")
        return dy


def _dense_params(rng: Rng | None, hidden: int) -> dict[str, np.ndarray]:
    if rng is None:
        return {"dense.W": np.zeros((N_IN, hidden)), "dense.b": np.zeros(N_IN)}
    return {"dense.W": _glorot(rng, N_IN, hidden), "dense.b": np.zeros(N_IN)}


class AttLSTM(Model):
    """input -> LSTM -> dropout -> attention -> LSTM (last step) -> dropout -> dense."""

    kind = "att_lstm"

    @classmethod
    def create(cls, seed: int | None = 0, hidden: int = HIDDEN, keep_prob: float = 0.8) -> "AttLSTM":
        """Randomly initialized network; ``seed=None`` gives all-zero parameters."""
        params: dict[str, np.ndarray] = {}
        if seed is None:
            params.update(LstmCellParams.zeros(N_IN, hidden).as_dict("lstm1."))
            params.update(AttentionParams(np.zeros((hidden, hidden)), np.zeros((hidden, hidden)),
                                          np.zeros(hidden), np.zeros(hidden)).as_dict())
            params.update(LstmCellParams.zeros(hidden, hidden).as_dict("lstm2."))
            params.update(_dense_params(None, hidden))
        else:
            rng = make_rng(seed)
            params.update(LstmCellParams.init(rng, N_IN, hidden).as_dict("lstm1."))
            bound = np.sqrt(6.0 / (hidden + 1))
            params.update(AttentionParams(_glorot(rng, hidden, hidden), _glorot(rng, hidden, hidden),
                                          np.zeros(hidden), rng.uniform(-bound, bound, hidden)).as_dict())
            params.update(LstmCellParams.init(rng, hidden, hidden).as_dict("lstm2."))
            params.update(_dense_params(rng, hidden))
        return cls(params, hidden, keep_prob)

    def forward(self, x, mode: str = "infer", rng: Rng | None = None):
        x = self._check_input(x)
        p1 = LstmCellParams.view(self.params, "lstm1.")
        p2 = LstmCellParams.view(self.params, "lstm2.")
        attn = AttentionParams.view(self.params)
        b = x.shape[0]
        cache: dict = {}

        h1, cache["lstm1"] = _lstm_sequence(p1, x)
        mask1 = _dropout_mask(h1.shape, self.keep_prob, rng, mode)
        hs = h1 if mask1 is None else h1 * mask1
        h_proj = hs @ attn.W_ah.T

        s = np.zeros((b, self.hidden))
        c2 = np.zeros_like(s)
        steps = []
        for _ in range(N_STEPS):
            u = _attention_scores(h_proj, s, attn)
            alpha = softmax(u @ attn.lam, axis=1)
            ctx = np.einsum("bj,bjh->bh", alpha, hs)
            s_prev = s
            s, c2, lstm_cache = _lstm_forward(p2, ctx, s, c2)
            steps.append((s_prev, u, alpha, lstm_cache))

        mask2 = _dropout_mask(s.shape, self.keep_prob, rng, mode)
        hd = s if mask2 is None else s * mask2
        y = self._dense(hd, cache)
        cache.update(mask1=mask1, mask2=mask2, hs=hs, steps=steps, y_shape=y.shape)
        return y, Tape(mode, cache)

    def attention_weights(self, x) -> np.ndarray:
        """(B, 3 target steps, 3 source steps) inference-mode alignment weights."""
        _, tape = self.forward(x, mode="infer")
        return np.stack([st[2] for st in tape.cache["steps"]], axis=1)

    def backward(self, tape: Tape, dy) -> dict[str, np.ndarray]:
        dy = self._check_tape(tape, dy)
        cache = tape.cache
        grads = self.zero_grads()
        p1 = LstmCellParams.view(self.params, "lstm1.")
        p2 = LstmCellParams.view(self.params, "lstm2.")
        attn = AttentionParams.view(self.params)
        hs = cache["hs"]

        dhd = self._dense_backward(cache, dy, grads)
        ds = dhd if cache["mask2"] is None else dhd * cache["mask2"]
        dc2 = np.zeros_like(ds)
        dhs = np.zeros_like(hs)
        dh_proj = np.zeros_like(hs)
        for s_prev, u, alpha, lstm_cache in reversed(cache["steps"]):
            dctx, ds_prev, dc2 = _lstm_backward(p2, lstm_cache, ds, dc2, grads, "lstm2.")
            # context = sum_j alpha_j h_j
            dhs += alpha[..., None] * dctx[:, None, :]
            dalpha = np.einsum("bjh,bh->bj", hs, dctx)
            de = alpha * (dalpha - np.sum(alpha * dalpha, axis=1, keepdims=True))
            grads["attn.lam"] += np.einsum("bj,bjh->h", de, u)
            dz = de[..., None] * attn.lam * (1.0 - u * u)
            grads["attn.b_a"] += dz.sum(axis=(0, 1))
            dz_s = dz.sum(axis=1)
            grads["attn.W_as"] += dz_s.T @ s_prev
            ds = ds_prev + dz_s @ attn.W_as
            dh_proj += dz
        grads["attn.W_ah"] += np.einsum("bjk,bjh->kh", dh_proj, hs)
        dhs += dh_proj @ attn.W_ah
        dh1 = dhs if cache["mask1"] is None else dhs * cache["mask1"]
        _lstm_sequence_backward(p1, cache["lstm1"], dh1, grads, "lstm1.")
        return grads


class LSTMBaseline(Model):
    """Three stacked LSTM layers (last emits its final step) and a dense head."""

    kind = "lstm"
    n_layers = 3

    @classmethod
    def create(cls, seed: int | None = 0, hidden: int = HIDDEN, keep_prob: float = 1.0) -> "LSTMBaseline":
        params: dict[str, np.ndarray] = {}
        rng = None if seed is None else make_rng(seed)
        for k in range(cls.n_layers):
            n_in = N_IN if k == 0 else hidden
            layer = LstmCellParams.zeros(n_in, hidden) if rng is None else LstmCellParams.init(rng, n_in, hidden)
            params.update(layer.as_dict(f"lstm{k + 1}."))
        params.update(_dense_params(rng, hidden))
        return cls(params, hidden, 1.0)

    def forward(self, x, mode: str = "infer", rng: Rng | None = None):
        x = self._check_input(x)
        cache: dict = {"layers": []}
        seq = x
        for k in range(self.n_layers):
            seq, layer_cache = _lstm_sequence(LstmCellParams.view(self.params, f"lstm{k + 1}."), seq)
            cache["layers"].append(layer_cache)
        y = self._dense(seq[:, -1], cache)
        cache["y_shape"] = y.shape
        cache["seq_shape"] = seq.shape
        return y, Tape(mode, cache)

    def backward(self, tape: Tape, dy) -> dict[str, np.ndarray]:
        dy = self._check_tape(tape, dy)
        grads = self.zero_grads()
        dlast = self._dense_backward(tape.cache, dy, grads)
        dseq = np.zeros(tape.cache["seq_shape"])
        dseq[:, -1] = dlast
        for k in reversed(range(self.n_layers)):
            prefix = f"lstm{k + 1}."
            dseq = _lstm_sequence_backward(LstmCellParams.view(self.params, prefix),
                                           tape.cache["layers"][k], dseq, grads, prefix)
        return grads


class MLPBaseline(Model):
    """Flattened 3x45 input, three tanh layers, linear dense head."""

    kind = "mlp"
    n_layers = 3

    @classmethod
    def create(cls, seed: int | None = 0, hidden: int = HIDDEN, keep_prob: float = 1.0) -> "MLPBaseline":
        rng = None if seed is None else make_rng(seed)
        params: dict[str, np.ndarray] = {}
        for k in range(cls.n_layers):
            n_in = N_STEPS * N_IN if k == 0 else hidden
            params[f"mlp{k + 1}.W"] = np.zeros((hidden, n_in)) if rng is None else _glorot(rng, hidden, n_in)
            params[f"mlp{k + 1}.b"] = np.zeros(hidden)
        params.update(_dense_params(rng, hidden))
        return cls(params, hidden, 1.0)

    def forward(self, x, mode: str = "infer", rng: Rng | None = None):
        x = self._check_input(x)
        a = x.reshape(x.shape[0], -1)
        acts = [a]
        for k in range(self.n_layers):
            a = np.tanh(a @ self.params[f"mlp{k + 1}.W"].T + self.params[f"mlp{k + 1}.b"])
            acts.append(a)
        cache = {"acts": acts}
        y = self._dense(a, cache)
        cache["y_shape"] = y.shape
        return y, Tape(mode, cache)

    def backward(self, tape: Tape, dy) -> dict[str, np.ndarray]:
        dy = self._check_tape(tape, dy)
        grads = self.zero_grads()
        acts = tape.cache["acts"]
        da = self._dense_backward(tape.cache, dy, grads)
        for k in reversed(range(self.n_layers)):
            dz = da * (1.0 - acts[k + 1] ** 2)
            grads[f"mlp{k + 1}.W"] += dz.T @ acts[k]
            grads[f"mlp{k + 1}.b"] += dz.sum(axis=0)
            da = dz @ self.params[f"mlp{k + 1}.W"]
        return grads


MODELS = {AttLSTM.kind: AttLSTM, LSTMBaseline.kind: LSTMBaseline, MLPBaseline.kind: MLPBaseline}


def build_model(kind: str, seed: int | None = 0, hidden: int = HIDDEN, keep_prob: float = 0.8) -> Model:
    """Att-LSTM (``att_lstm``) or a baseline (``lstm`` / ``mlp``); baselines never use dropout."""
    try:
        cls = MODELS[kind]
    except KeyError:
        raise ValueError(f"unknown model kind {kind!r}; choose from {sorted(MODELS)}") from None
    return cls.create(seed=seed, hidden=hidden, keep_prob=keep_prob)


def build_baseline(kind: str, seed: int | None = 0, hidden: int = HIDDEN) -> Model:
    if kind not in ("lstm", "mlp"):
        raise ValueError(f"baseline kind must be 'lstm' or 'mlp', got {kind!r}")
    return build_model(kind, seed=seed, hidden=hidden)


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class TrainState:
    model: Model
    rng: Rng
    lr: float = 1e-3
    rho: float = 0.9
    eps: float = 1e-8
    step: int = 0
    acc: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if not self.acc:
            self.acc = {k: np.zeros_like(v) for k, v in self.model.params.items()}

    @property
    def params(self) -> dict[str, np.ndarray]:
        return self.model.params

    @property
    def keep_prob(self) -> float:
        return self.model.keep_prob


def rmsprop_step(state: TrainState, grads: dict[str, np.ndarray]) -> TrainState:
    """In-place RMSProp update of ``state.params``; returns ``state``."""
    for k, theta in state.params.items():
        g = grads[k]
        if g.shape != theta.shape:
            raise DimensionError(f"gradient for {k} has shape {g.shape}, expected {theta.shape}")
        acc = state.acc[k]
        acc *= state.rho
        acc += (1.0 - state.rho) * g * g
        theta -= state.lr * g / (np.sqrt(acc) + state.eps)
    state.step += 1
    return state


# ---------------------------------------------------------------------------
# checkpoints

CHECKPOINT_FORMAT = "ivforecast-checkpoint"
CHECKPOINT_VERSION = 1


def save_checkpoint(model: Model, path, extra: dict | None = None) -> None:
    """JSON map of named tensors; ``repr`` floats make the round trip bit-exact."""
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "kind": model.kind,
        "hidden": model.hidden,
        "keep_prob": model.keep_prob,
        "tensors": {k: {"shape": list(v.shape), "values": v.reshape(-1).tolist()}
                    for k, v in sorted(model.params.items())},
        "extra": extra or {},
    }
    Path(path).write_text(json.dumps(doc, separators=(",", ":")) + "\n", encoding="utf-8")


def load_checkpoint(path) -> tuple[Model, dict]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != CHECKPOINT_FORMAT or doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path} is not a version-{CHECKPOINT_VERSION} checkpoint")
    cls = MODELS[doc["kind"]]
    params = {k: np.array(t["values"], dtype=np.float64).reshape(t["shape"]) for k, t in doc["tensors"].items()}
    template = cls.create(seed=None, hidden=doc["hidden"])
    if set(params) != set(template.params):
        raise ValueError("checkpoint tensors do not match the model layout")
    for k, v in template.params.items():
        if params[k].shape != v.shape:
            raise DimensionError(f"checkpoint tensor {k} has shape {params[k].shape}, expected {v.shape}")
    return cls(params, doc["hidden"], doc["keep_prob"]), doc.get("extra", {})
