"""Dense MLP engine: forward/backward passes, softmax cross-entropy, gradient
reversal, and bias-corrected Adam.

Everything runs in float64 and is bit-reproducible for a fixed seed: identical
inputs yield identical parameter trajectories.  Networks are plain layer lists
so that composites (feature extractor + heads) can share parameter arrays.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, FormatError, InputError, UsageError
from .seeding import Seed, seed_seq

ACTIVATIONS = ("identity", "relu")


@dataclass
class Layer:
    """One affine map plus elementwise activation.

    weight has shape (out_dim, in_dim), bias has shape (out_dim,).
    """

    weight: np.ndarray
    bias: np.ndarray
    activation: str = "identity"

    def __post_init__(self):
        self.weight = np.ascontiguousarray(self.weight, dtype=np.float64)
        self.bias = np.ascontiguousarray(self.bias, dtype=np.float64)
        if self.weight.ndim != 2 or self.bias.ndim != 1:
            raise ConfigurationError("layer weight must be 2-d and bias 1-d")
        if self.weight.shape[0] != self.bias.shape[0]:
            raise ConfigurationError(
                f"bias length {self.bias.shape[0]} does not match "
                f"weight rows {self.weight.shape[0]}"
            )
        if self.activation not in ACTIVATIONS:
            raise ConfigurationError(f"unknown activation {self.activation!r}")

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]


@dataclass
class Mlp:
    """A stack of layers applied in order."""

    layers: list[Layer]

    def __post_init__(self):
        if not self.layers:
            raise ConfigurationError("an Mlp needs at least one layer")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.out_dim != nxt.in_dim:
                raise ConfigurationError(
                    f"layer dims do not chain: {prev.out_dim} -> {nxt.in_dim}"
                )

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].out_dim


def new_mlp(dims, seed: Seed, hidden_activation: str = "relu",
            final_activation: str = "identity") -> Mlp:
    """Build an MLP with the given layer widths and seeded init.

    Weights are uniform in +-sqrt(6 / (fan_in + fan_out)), biases start at
    zero.  ``dims`` is [input, hidden..., output].
    """
    dims = [int(d) for d in dims]
    if len(dims) < 2 or any(d < 1 for d in dims):
        raise ConfigurationError(f"need at least [in, out] positive dims, got {dims}")
    rng = np.random.default_rng(seed_seq(seed))
    layers = []
    last = len(dims) - 2
    for i, (fan_in, fan_out) in enumerate(zip(dims, dims[1:])):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weight = rng.uniform(-limit, limit, size=(fan_out, fan_in))
        act = final_activation if i == last else hidden_activation
        layers.append(Layer(weight, np.zeros(fan_out), act))
    return Mlp(layers)


@dataclass
class ForwardCache:
    """Intermediates needed by backward: per-layer inputs and pre-activations."""

    inputs: list[np.ndarray]
    preacts: list[np.ndarray]


@dataclass
class Gradients:
    """Parameter gradients mirroring an Mlp, plus the gradient at its input."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    input_grad: np.ndarray


def _as_batch(x) -> np.ndarray:
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise InputError(f"expected a 2-d batch, got shape {x.shape}")
    return x


def forward(net: Mlp, x) -> tuple[np.ndarray, ForwardCache]:
    """Run the batch through the net; returns (output, cache for backward)."""
    x = _as_batch(x)
    if x.shape[1] != net.input_dim:
        raise ConfigurationError(
            f"input has {x.shape[1]} features but the net expects {net.input_dim}"
        )
    inputs, preacts = [], []
    a = x
    for layer in net.layers:
        inputs.append(a)
        z = a @ layer.weight.T + layer.bias
        preacts.append(z)
        a = np.maximum(z, 0.0) if layer.activation == "relu" else z
    if not np.all(np.isfinite(a)):
        raise ArithmeticError("non-finite values in forward pass")
    return a, ForwardCache(inputs, preacts)


def softmax_cross_entropy(logits, labels) -> tuple[float, np.ndarray]:
    """Mean cross-entropy of softmax(logits) against integer labels.

    Returns (loss, d_loss/d_logits).  The softmax is max-shifted, and the
    log-sum-exp keeps full precision near saturation by feeding only the
    non-maximal terms through log1p, so the loss stays strictly positive for
    any finite non-saturated logits.  Gradient rows sum to zero.
    """
    logits = _as_batch(logits)
    n, c = logits.shape
    labels = np.asarray(labels)
    if labels.shape == ():
        labels = np.full(n, int(labels))
    if labels.ndim != 1 or labels.shape[0] != n:
        raise InputError(f"labels shape {labels.shape} does not match batch of {n}")
    if not np.issubdtype(labels.dtype, np.integer):
        raise InputError(f"labels must be integers, got dtype {labels.dtype}")
    if labels.min() < 0 or labels.max() >= c:
        raise InputError(f"labels must lie in [0, {c}), got range "
                         f"[{labels.min()}, {labels.max()}]")

    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    total = e.sum(axis=1)
    # exp(0) == 1 exactly for each row maximum; log1p over the remainder keeps
    # resolution when every other term underflows.
    is_max = shifted == 0.0
    rest = np.where(is_max, 0.0, e).sum(axis=1)
    log_total = np.log1p((is_max.sum(axis=1) - 1.0) + rest)
    rows = np.arange(n)
    loss = float((log_total - shifted[rows, labels]).mean())

    grad = e / total[:, None]
    grad[rows, labels] -= 1.0
    grad /= n
    return loss, grad


def backward(net: Mlp, cache: ForwardCache, d_out) -> Gradients:
    """Backpropagate d_out through the net using a cache from forward.

    The cache must come from a forward call on this net with unchanged
    shapes; anything stale raises UsageError.  relu' at exactly 0 is 0.
    """
    if len(cache.inputs) != len(net.layers) or len(cache.preacts) != len(net.layers):
        raise UsageError("cache does not match the network's layer count")
    for layer, z in zip(net.layers, cache.preacts):
        if z.shape[1] != layer.out_dim:
            raise UsageError("cache is stale: layer shapes changed since forward")
    d_out = np.ascontiguousarray(d_out, dtype=np.float64)
    if d_out.shape != cache.preacts[-1].shape:
        raise UsageError(
            f"upstream gradient shape {d_out.shape} does not match "
            f"output shape {cache.preacts[-1].shape}"
        )
    weights: list[np.ndarray] = [None] * len(net.layers)  # type: ignore[list-item]
    biases: list[np.ndarray] = [None] * len(net.layers)  # type: ignore[list-item]
    delta = d_out
    for i in reversed(range(len(net.layers))):
        layer = net.layers[i]
        if layer.activation == "relu":
            delta = delta * (cache.preacts[i] > 0.0)
        weights[i] = delta.T @ cache.inputs[i]
        biases[i] = delta.sum(axis=0)
        delta = delta @ layer.weight
    return Gradients(weights, biases, input_grad=delta)


def grad_reversal(upstream, lam: float) -> np.ndarray:
    """Identity in the forward direction; multiplies gradients by -lam.

    With lam == 1 the result is the exact bit-level negation of upstream.
    """
    return (-float(lam)) * np.asarray(upstream, dtype=np.float64)


@dataclass
class AdamState:
    """First/second moment buffers plus hyperparameters for Adam."""

    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0
    learning_rate: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon_stab: float = 1e-8


def adam_init(params, learning_rate: float = 0.01, beta1: float = 0.9,
              beta2: float = 0.999, epsilon_stab: float = 1e-8) -> AdamState:
    if not 0.0 < learning_rate:
        raise ConfigurationError(f"learning rate must be positive, got {learning_rate}")
    if not (0.0 <= beta1 < 1.0 and 0.0 <= beta2 < 1.0):
        raise ConfigurationError("Adam betas must lie in [0, 1)")
    return AdamState(
        m=[np.zeros_like(p) for p in params],
        v=[np.zeros_like(p) for p in params],
        learning_rate=learning_rate,
        beta1=beta1,
        beta2=beta2,
        epsilon_stab=epsilon_stab,
    )


def adam_step(params, grads, state: AdamState) -> None:
    """One bias-corrected Adam update, applied to params in place.

    update = lr * m_hat / (sqrt(v_hat) + eps).  A zero gradient applied to a
    fresh state leaves the parameters bitwise unchanged while t still
    advances.
    """
    if len(params) != len(state.m) or len(grads) != len(state.m):
        raise UsageError(
            f"parameter/gradient/state counts differ: "
            f"{len(params)}/{len(grads)}/{len(state.m)}"
        )
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape or p.shape != m.shape:
            raise UsageError(
                f"buffer shape mismatch: param {p.shape}, grad {g.shape}, state {m.shape}"
            )
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * np.square(g)
        p -= state.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon_stab)


def mlp_parameters(net: Mlp) -> list[np.ndarray]:
    """Flat [W1, b1, W2, b2, ...] views of the net's parameter arrays."""
    out: list[np.ndarray] = []
    for layer in net.layers:
        out.append(layer.weight)
        out.append(layer.bias)
    return out


def gradient_list(grads: Gradients) -> list[np.ndarray]:
    """Gradients flattened in the same order as mlp_parameters."""
    out: list[np.ndarray] = []
    for w, b in zip(grads.weights, grads.biases):
        out.append(w)
        out.append(b)
    return out


def add_gradients(acc: Gradients, extra: Gradients) -> None:
    """Accumulate parameter gradients of ``extra`` into ``acc`` in place."""
    if len(acc.weights) != len(extra.weights):
        raise UsageError("gradient structures differ")
    for a, e in zip(acc.weights, extra.weights):
        a += e
    for a, e in zip(acc.biases, extra.biases):
        a += e


# --------------------------------------------------------------------------
# Model persistence: a versioned flat binary holding named MLP components.
#
# offset  size        field
# 0       4           magic  b"HDAM"
# 4       4           format version (u32 LE)
# 8       4           component count (u32 LE)
# then per component:
#         4           name length (u32 LE), followed by that many utf-8 bytes
#         4           layer count (u32 LE)
#         per layer:  in_dim u32, out_dim u32, activation u8 (0=identity,
#                     1=relu), weight float64 LE row-major (out*in values),
#                     bias float64 LE (out values)
# --------------------------------------------------------------------------

MODEL_MAGIC = b"HDAM"
MODEL_VERSION = 1
_ACT_CODE = {"identity": 0, "relu": 1}
_CODE_ACT = {v: k for k, v in _ACT_CODE.items()}


def write_components(path, components: dict[str, Mlp]) -> None:
    """Serialize named MLPs to ``path`` in the flat binary model format."""
    blob = bytearray()
    blob += struct.pack("<4sII", MODEL_MAGIC, MODEL_VERSION, len(components))
    for name, net in components.items():
        raw = name.encode("utf-8")
        blob += struct.pack("<I", len(raw)) + raw
        blob += struct.pack("<I", len(net.layers))
        for layer in net.layers:
            blob += struct.pack("<IIB", layer.in_dim, layer.out_dim,
                                _ACT_CODE[layer.activation])
            blob += layer.weight.astype("<f8").tobytes()
            blob += layer.bias.astype("<f8").tobytes()
    Path(path).write_bytes(bytes(blob))


class _Reader:
    def __init__(self, data: bytes, path):
        self.data = data
        self.off = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.data):
            raise FormatError(
                f"{self.path}: truncated model file, needed {self.off + n} bytes "
                f"but only {len(self.data)} are present"
            )
        chunk = self.data[self.off:self.off + n]
        self.off += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def read_components(path) -> dict[str, Mlp]:
    """Parse a model file written by write_components."""
    reader = _Reader(Path(path).read_bytes(), path)
    magic, version, count = reader.unpack("<4sII")
    if magic != MODEL_MAGIC:
        raise FormatError(f"{path}: bad model magic {magic!r}, expected {MODEL_MAGIC!r}")
    if version != MODEL_VERSION:
        raise FormatError(
            f"{path}: unsupported model format version {version}, expected {MODEL_VERSION}"
        )
    components: dict[str, Mlp] = {}
    for _ in range(count):
        (name_len,) = reader.unpack("<I")
        name = reader.take(name_len).decode("utf-8")
        (n_layers,) = reader.unpack("<I")
        layers = []
        for _ in range(n_layers):
            in_dim, out_dim, act_code = reader.unpack("<IIB")
            if act_code not in _CODE_ACT:
                raise FormatError(f"{path}: unknown activation code {act_code}")
            weight = np.frombuffer(reader.take(8 * in_dim * out_dim), dtype="<f8")
            bias = np.frombuffer(reader.take(8 * out_dim), dtype="<f8")
            layers.append(Layer(weight.reshape(out_dim, in_dim).copy(),
                                bias.copy(), _CODE_ACT[act_code]))
        components[name] = Mlp(layers)
    if reader.off != len(reader.data):
        raise FormatError(
            f"{path}: {len(reader.data) - reader.off} trailing bytes after model data"
        )
    return components


def save_mlp(net: Mlp, path) -> None:
    """Persist a single MLP (e.g. a domain discriminator)."""
    write_components(path, {"mlp": net})


def load_mlp(path) -> Mlp:
    components = read_components(path)
    if set(components) != {"mlp"}:
        raise FormatError(
            f"{path}: expected a single-MLP model file, found components "
            f"{sorted(components)}"
        )
    return components["mlp"]
