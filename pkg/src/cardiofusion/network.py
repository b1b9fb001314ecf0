"""From-scratch trainable classifier: conv1d/ReLU/maxpool/dense/softmax.

Everything runs in float64 with a fixed order of operations so that
identical (data, spec, config, seed) reproduce identical weights bit for
bit. Gradients are exact analytic derivatives of the mean categorical
cross-entropy; the test suite checks every parameter against central
finite differences.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataio import EXACT_FLOAT_FMT, render_json, _write_text
from .errors import FormatError, ParamError, SpecError, TrainError, VersionError

N_CLASSES = 4
INPUT_LEN = 196
PROB_CLAMP = 1e-12
PIPELINES = ("fft-emd", "wt", "hog")


# ---------------------------------------------------------------------------
# Specs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LayerSpec:
    kind: str
    out_channels: int = 0
    kernel: int = 0
    out_dim: int = 0


@dataclass
class NetworkSpec:
    input_len: int
    layers: list[LayerSpec]
    seed: int = 0


@dataclass
class TrainConfig:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 150
    batch_size: int = 16
    seed: int = 0

    def __post_init__(self) -> None:
        if self.lr <= 0:
            raise ParamError("learning rate must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ParamError("Adam betas must lie in [0, 1)")
        if self.batch_size < 1 or self.epochs < 0:
            raise ParamError("batch_size >= 1 and epochs >= 0 required")


def default_spec(seed: int = 0, input_len: int = INPUT_LEN) -> NetworkSpec:
    """Two conv/pool blocks over the fused feature vector, then dense head."""
    return NetworkSpec(
        input_len=input_len,
        layers=[
            LayerSpec("conv1d", out_channels=8, kernel=5),
            LayerSpec("relu"),
            LayerSpec("maxpool"),
            LayerSpec("conv1d", out_channels=16, kernel=5),
            LayerSpec("relu"),
            LayerSpec("maxpool"),
            LayerSpec("flatten"),
            LayerSpec("dense", out_dim=64),
            LayerSpec("relu"),
            LayerSpec("dense", out_dim=N_CLASSES),
            LayerSpec("softmax"),
        ],
        seed=seed,
    )


def assemble_input(mode: str, ecg_spec=None, fundus_spec=None, emd4=None,
                   wt=None, hog=None) -> np.ndarray:
    """Build the fixed 196-long classifier input for any pipeline mode.

    fft-emd: ecg spectrum weights (128) + fundus radial weights (64) +
    the four transport distances. wt: the six wavelet energies zero-padded.
    hog: the 576-long descriptor mean-pooled in groups of three down to 192
    plus four zeros. The common length keeps one network layout valid for
    every method comparison row.
    """
    def weights_of(s):
        return np.asarray(s.weights if hasattr(s, "weights") else s, dtype=np.float64)

    if mode == "fft-emd":
        if ecg_spec is None or fundus_spec is None or emd4 is None:
            raise ParamError("fft-emd input needs ecg_spec, fundus_spec, and emd4")
        e, f, d = weights_of(ecg_spec), weights_of(fundus_spec), np.asarray(emd4, float)
        if e.size != 128 or f.size != 64 or d.size != 4:
            raise ParamError("fft-emd components must have sizes 128, 64, and 4")
        return np.concatenate([e, f, d])
    if mode == "wt":
        if wt is None:
            raise ParamError("wt input needs the wavelet energy vector")
        w = np.asarray(wt, dtype=np.float64)
        if w.size > INPUT_LEN:
            raise ParamError("wavelet energy vector too long")
        return np.concatenate([w, np.zeros(INPUT_LEN - w.size)])
    if mode == "hog":
        if hog is None:
            raise ParamError("hog input needs the descriptor")
        h = np.asarray(hog, dtype=np.float64)
        if h.size != 576:
            raise ParamError(f"hog descriptor must have 576 values, got {h.size}")
        pooled = h.reshape(192, 3).mean(axis=1)
        return np.concatenate([pooled, np.zeros(INPUT_LEN - pooled.size)])
    raise ParamError(f"unknown pipeline mode {mode!r}")


def emd_mlp_spec(seed: int = 0) -> NetworkSpec:
    """Small dense head over the four transport distances alone."""
    return NetworkSpec(
        input_len=4,
        layers=[
            LayerSpec("flatten"),
            LayerSpec("dense", out_dim=16),
            LayerSpec("relu"),
            LayerSpec("dense", out_dim=16),
            LayerSpec("relu"),
            LayerSpec("dense", out_dim=N_CLASSES),
            LayerSpec("softmax"),
        ],
        seed=seed,
    )


def validate_spec(spec: NetworkSpec) -> list[tuple[int, int] | int]:
    """Chain shapes through the layer stack; returns the shape after each layer.

    Conv-stage shapes are (length, channels) tuples, dense-stage shapes are
    plain feature counts. Raises SpecError on any inconsistency.
    """
    if spec.input_len < 1:
        raise SpecError("input_len must be >= 1")
    if not spec.layers or spec.layers[-1].kind != "softmax":
        raise SpecError("the last layer must be softmax")
    shape: tuple[int, int] | int = (spec.input_len, 1)
    shapes: list[tuple[int, int] | int] = []
    for i, layer in enumerate(spec.layers):
        last = i == len(spec.layers) - 1
        if layer.kind == "softmax" and not last:
            raise SpecError("softmax may only appear as the final layer")
        if layer.kind == "conv1d":
            if not isinstance(shape, tuple):
                raise SpecError(f"layer {i}: conv1d after flatten")
            if layer.out_channels < 1 or layer.kernel < 1:
                raise SpecError(f"layer {i}: conv1d needs positive channels and kernel")
            shape = (shape[0], layer.out_channels)
        elif layer.kind == "relu":
            pass
        elif layer.kind == "maxpool":
            if not isinstance(shape, tuple):
                raise SpecError(f"layer {i}: maxpool after flatten")
            if shape[0] < 2:
                raise SpecError(f"layer {i}: maxpool on length-{shape[0]} input")
            shape = (shape[0] // 2, shape[1])
        elif layer.kind == "flatten":
            if not isinstance(shape, tuple):
                raise SpecError(f"layer {i}: flatten applied twice")
            shape = shape[0] * shape[1]
        elif layer.kind == "dense":
            if isinstance(shape, tuple):
                raise SpecError(f"layer {i}: dense before flatten")
            if layer.out_dim < 1:
                raise SpecError(f"layer {i}: dense needs a positive out_dim")
            shape = layer.out_dim
        elif layer.kind == "softmax":
            if isinstance(shape, tuple) or shape != N_CLASSES:
                raise SpecError(f"softmax input must be {N_CLASSES} logits, got {shape}")
        else:
            raise SpecError(f"layer {i}: unknown kind {layer.kind!r}")
        shapes.append(shape)
    return shapes


# ---------------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------------

@dataclass
class LayerParams:
    w: np.ndarray
    b: np.ndarray


ModelWeights = list  # list[LayerParams | None], aligned with spec.layers


def init_network(spec: NetworkSpec) -> ModelWeights:
    """He-normal weights, zero biases, drawn from a counter-based PRNG.

    Philox is counter-based, so the stream depends only on the seed, never
    on allocation order elsewhere in the process.
    """
    validate_spec(spec)
    rng = np.random.Generator(np.random.Philox(key=spec.seed))
    weights: ModelWeights = []
    in_channels = 1
    flat_dim = spec.input_len
    length = spec.input_len
    for layer in spec.layers:
        if layer.kind == "conv1d":
            fan_in = in_channels * layer.kernel
            w = rng.normal(0.0, np.sqrt(2.0 / fan_in),
                           size=(layer.out_channels, in_channels, layer.kernel))
            weights.append(LayerParams(w=w, b=np.zeros(layer.out_channels)))
            in_channels = layer.out_channels
        elif layer.kind == "maxpool":
            length //= 2
            weights.append(None)
        elif layer.kind == "flatten":
            flat_dim = length * in_channels
            weights.append(None)
        elif layer.kind == "dense":
            w = rng.normal(0.0, np.sqrt(2.0 / flat_dim), size=(layer.out_dim, flat_dim))
            weights.append(LayerParams(w=w, b=np.zeros(layer.out_dim)))
            flat_dim = layer.out_dim
        else:
            weights.append(None)
    return weights


# ---------------------------------------------------------------------------
# Forward / backward
# ---------------------------------------------------------------------------

def _conv_forward(x: np.ndarray, p: LayerParams) -> tuple[np.ndarray, np.ndarray]:
    """Same-padded convolution y[z] = sum_a W[a] * x[z - a + c] + b.

    x is (batch, length, in_ch); W is (out_ch, in_ch, kernel). Returns the
    output and the sliding-window view used again in the backward pass.
    """
    kernel = p.w.shape[2]
    center = (kernel - 1) // 2
    pad_left = kernel - 1 - center
    xp = np.pad(x, ((0, 0), (pad_left, center), (0, 0)))
    cols = np.lib.stride_tricks.sliding_window_view(xp, kernel, axis=1)
    y = np.einsum("blck,ock->blo", cols, p.w[:, :, ::-1]) + p.b
    return y, cols


def _conv_backward(dy: np.ndarray, cols: np.ndarray, p: LayerParams,
                   in_len: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    kernel = p.w.shape[2]
    center = (kernel - 1) // 2
    pad_left = kernel - 1 - center
    w_rev = p.w[:, :, ::-1]
    dw_rev = np.einsum("blo,blck->ock", dy, cols)
    dw = dw_rev[:, :, ::-1]
    db = dy.sum(axis=(0, 1))
    dcols = np.einsum("blo,ock->blck", dy, w_rev)
    dxp = np.zeros((dy.shape[0], in_len + kernel - 1, p.w.shape[1]))
    for t in range(kernel):
        dxp[:, t : t + dy.shape[1], :] += dcols[:, :, :, t]
    dx = dxp[:, pad_left : pad_left + in_len, :]
    return dx, dw, db


def forward_batch(weights: ModelWeights, spec: NetworkSpec, x: np.ndarray,
                  with_cache: bool = False):
    """Probabilities for a batch of inputs; optionally keep layer caches."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != spec.input_len:
        raise SpecError(f"expected inputs of length {spec.input_len}, got shape {x.shape}")
    a = x[:, :, None]  # (batch, length, channels)
    caches: list = []
    for layer, p in zip(spec.layers, weights):
        if layer.kind == "conv1d":
            a, cols = _conv_forward(a, p)
            caches.append(("conv1d", cols, p, a.shape[1]))
        elif layer.kind == "relu":
            mask = a > 0
            a = a * mask
            caches.append(("relu", mask))
        elif layer.kind == "maxpool":
            in_len = a.shape[1]
            length = (in_len // 2) * 2
            pairs = a[:, :length, :].reshape(a.shape[0], length // 2, 2, a.shape[2])
            arg = np.argmax(pairs, axis=2)
            a = np.take_along_axis(pairs, arg[:, :, None, :], axis=2)[:, :, 0, :]
            caches.append(("maxpool", arg, a.shape, in_len))
        elif layer.kind == "flatten":
            caches.append(("flatten", a.shape))
            a = a.reshape(a.shape[0], -1)
        elif layer.kind == "dense":
            caches.append(("dense", a, p))
            a = a @ p.w.T + p.b
        elif layer.kind == "softmax":
            logits = a
            shifted = logits - logits.max(axis=1, keepdims=True)
            expz = np.exp(shifted)
            a = expz / expz.sum(axis=1, keepdims=True)
            caches.append(("softmax", a))
    if with_cache:
        return a, caches
    return a


def forward(weights: ModelWeights, spec: NetworkSpec, x) -> np.ndarray:
    """Class probabilities for a single feature vector."""
    return forward_batch(weights, spec, np.asarray(x, dtype=np.float64)[None, :])[0]


def loss(probs, label_index: int) -> float:
    """Cross-entropy -log p_correct for one sample; p clamped at 1e-12."""
    p = float(np.asarray(probs)[label_index])
    return -float(np.log(max(p, PROB_CLAMP)))


def batch_loss(probs: np.ndarray, labels: np.ndarray) -> tuple[float, int]:
    """Mean cross-entropy over a batch; also reports how many were clamped."""
    p = probs[np.arange(len(labels)), labels]
    clamped = int(np.count_nonzero(p < PROB_CLAMP))
    return float(-np.log(np.maximum(p, PROB_CLAMP)).mean()), clamped


def backward(weights: ModelWeights, spec: NetworkSpec, batch) -> list:
    """Gradients of the mean cross-entropy; layout mirrors the weights."""
    x, labels = batch
    x = np.asarray(x, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.intp)
    if x.shape[0] == 0:
        raise ParamError("empty batch")
    probs, caches = forward_batch(weights, spec, x, with_cache=True)
    n = x.shape[0]
    onehot = np.zeros_like(probs)
    onehot[np.arange(n), labels] = 1.0

    grads: list = [None] * len(spec.layers)
    d = None
    for i in range(len(spec.layers) - 1, -1, -1):
        cache = caches[i]
        kind = cache[0]
        if kind == "softmax":
            d = (cache[1] - onehot) / n  # combined softmax + cross-entropy gradient
        elif kind == "dense":
            _, a_in, p = cache
            grads[i] = LayerParams(w=d.T @ a_in, b=d.sum(axis=0))
            d = d @ p.w
        elif kind == "flatten":
            d = d.reshape(cache[1])
        elif kind == "maxpool":
            _, arg, out_shape, in_len = cache
            b, half, ch = out_shape
            dpairs = np.zeros((b, half, 2, ch))
            np.put_along_axis(dpairs, arg[:, :, None, :], d[:, :, None, :], axis=2)
            d = dpairs.reshape(b, half * 2, ch)
            if in_len > half * 2:  # a dropped odd trailing sample gets zero gradient
                d = np.pad(d, ((0, 0), (0, in_len - half * 2), (0, 0)))
        elif kind == "relu":
            d = d * cache[1]
        elif kind == "conv1d":
            _, cols, p, out_len = cache
            d, dw, db = _conv_backward(d, cols, p, out_len)
            grads[i] = LayerParams(w=dw, b=db)
    return grads


# ---------------------------------------------------------------------------
# Optimizer and training loop
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0


def init_adam(weights: ModelWeights) -> AdamState:
    zeros = lambda p: LayerParams(w=np.zeros_like(p.w), b=np.zeros_like(p.b))
    return AdamState(
        m=[zeros(p) if p is not None else None for p in weights],
        v=[zeros(p) if p is not None else None for p in weights],
    )


def adam_step(state: AdamState, weights: ModelWeights, grads: list,
              config: TrainConfig) -> tuple[ModelWeights, AdamState]:
    """One Adam update with bias correction; mutates weights and state."""
    for g in grads:
        if g is not None and not (np.all(np.isfinite(g.w)) and np.all(np.isfinite(g.b))):
            raise TrainError("non-finite gradient encountered; aborting training")
    state.t += 1
    b1, b2 = config.beta1, config.beta2
    corr1 = 1.0 - b1**state.t
    corr2 = 1.0 - b2**state.t
    for p, g, m, v in zip(weights, grads, state.m, state.v):
        if p is None:
            continue
        for attr in ("w", "b"):
            pw, gw = getattr(p, attr), getattr(g, attr)
            mw, vw = getattr(m, attr), getattr(v, attr)
            mw *= b1
            mw += (1 - b1) * gw
            vw *= b2
            vw += (1 - b2) * gw * gw
            pw -= config.lr * (mw / corr1) / (np.sqrt(vw / corr2) + config.eps)
    return weights, state


def _stratified_order(labels: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Shuffle within classes, then interleave round-robin across classes."""
    buckets = [rng.permutation(np.flatnonzero(labels == c)) for c in range(N_CLASSES)]
    order: list[int] = []
    longest = max((len(b) for b in buckets), default=0)
    for i in range(longest):
        for b in buckets:
            if i < len(b):
                order.append(int(b[i]))
    return np.asarray(order, dtype=np.intp)


def train(x: np.ndarray, labels: np.ndarray, spec: NetworkSpec,
          config: TrainConfig) -> tuple[ModelWeights, list[dict]]:
    """Mini-batch Adam training; returns final weights and per-epoch history."""
    x = np.asarray(x, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.intp)
    if x.ndim != 2 or x.shape[0] == 0 or x.shape[0] != labels.size:
        raise ParamError("training data must be a non-empty (n, features) array with labels")
    weights = init_network(spec)
    state = init_adam(weights)
    rng = np.random.Generator(np.random.Philox(key=config.seed))
    history: list[dict] = []
    for epoch in range(config.epochs):
        order = _stratified_order(labels, rng)
        losses: list[float] = []
        clamped = 0
        for start in range(0, len(order), config.batch_size):
            idx = order[start : start + config.batch_size]
            xb, yb = x[idx], labels[idx]
            probs = forward_batch(weights, spec, xb)
            lval, cl = batch_loss(probs, yb)
            losses.append(lval * len(idx))
            clamped += cl
            grads = backward(weights, spec, (xb, yb))
            weights, state = adam_step(state, weights, grads, config)
        probs = forward_batch(weights, spec, x)
        acc = float(np.mean(probs.argmax(axis=1) == labels))
        history.append({
            "epoch": epoch + 1,
            "loss": float(np.sum(losses) / len(order)),
            "train_acc": acc,
            "clamped": clamped,
        })
    return weights, history


def predict(weights: ModelWeights, spec: NetworkSpec, x) -> tuple[int, np.ndarray]:
    """(class index, probabilities); ties break toward the lowest index."""
    probs = forward(weights, spec, x)
    return int(np.argmax(probs)), probs


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

MODEL_VERSION = "1"


def save_model(path: str | Path, spec: NetworkSpec, weights: ModelWeights,
               pipeline: str, templates_path: str | None = None,
               train_seed: int = 0) -> None:
    if pipeline not in PIPELINES:
        raise ParamError(f"unknown pipeline tag {pipeline!r}")
    layer_payload = []
    for layer, p in zip(spec.layers, weights):
        entry: dict = {"kind": layer.kind}
        if layer.kind == "conv1d":
            entry.update(out_channels=layer.out_channels, kernel=layer.kernel)
        if layer.kind == "dense":
            entry.update(out_dim=layer.out_dim)
        if p is not None:
            entry["w"] = p.w.tolist()
            entry["b"] = p.b.tolist()
        layer_payload.append(entry)
    payload = {
        "version": MODEL_VERSION,
        "pipeline": pipeline,
        "spec": {"input_len": spec.input_len, "seed": spec.seed, "layers": layer_payload},
        "templates_path": templates_path,
        "train_seed": train_seed,
    }
    _write_text(path, render_json(payload, float_fmt=EXACT_FLOAT_FMT) + "\n")


def load_model(path: str | Path) -> tuple[NetworkSpec, ModelWeights, str | None, str]:
    """Returns (spec, weights, templates_path, pipeline tag)."""
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise FormatError(f"cannot read model {path}: {e}") from e
    if not isinstance(raw, dict) or "version" not in raw:
        raise FormatError(f"{path}: not a model file")
    if raw["version"] != MODEL_VERSION:
        raise VersionError(f"{path}: unsupported model version {raw['version']!r}")
    try:
        pipeline = raw["pipeline"]
        spec_raw = raw["spec"]
        layers: list[LayerSpec] = []
        weights: ModelWeights = []
        for entry in spec_raw["layers"]:
            kind = entry["kind"]
            layers.append(LayerSpec(
                kind,
                out_channels=int(entry.get("out_channels", 0)),
                kernel=int(entry.get("kernel", 0)),
                out_dim=int(entry.get("out_dim", 0)),
            ))
            if "w" in entry:
                weights.append(LayerParams(
                    w=np.asarray(entry["w"], dtype=np.float64),
                    b=np.asarray(entry["b"], dtype=np.float64),
                ))
            else:
                weights.append(None)
        spec = NetworkSpec(input_len=int(spec_raw["input_len"]),
                           layers=layers, seed=int(spec_raw["seed"]))
    except (KeyError, TypeError, ValueError) as e:
        raise FormatError(f"{path}: malformed model file ({e})") from e
    if pipeline not in PIPELINES:
        raise FormatError(f"{path}: unknown pipeline tag {pipeline!r}")
    validate_spec(spec)
    tp = raw.get("templates_path")
    return spec, weights, (str(tp) if tp is not None else None), pipeline
