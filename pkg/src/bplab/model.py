"""Feed-forward probability estimator with embedding inputs, written directly
on numpy: forward pass, analytic backprop, Adagrad updates, and a versioned
text serialization.

The network input is the concatenation of the encoded dense vector with the
embedding rows for the taken-side callee, the not-taken-side callee, and the
file name. Hidden layers use ReLU; the scalar output goes through a sigmoid,
so predictions always land strictly inside (0, 1).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dataset import LabeledExample
from .features import (
    CompiledExamples,
    EmbedSpec,
    EmptyDataset,
    EncodedExample,
    Encoder,
    NUMERIC_FEATURES,
    RawFeatures,
    compile_examples,
    fit_encoder,
)

LOSSES = ("mae", "mse", "ce")
CE_EPS = 1e-7


class LayoutMismatch(Exception):
    pass


class VersionMismatch(Exception):
    pass


class CorruptModel(Exception):
    def __init__(self, section: str, message: str = ""):
        super().__init__(f"[{section}] {message}".strip())
        self.section = section


@dataclass(frozen=True)
class ModelSpec:
    hidden_layers: int = 5
    hidden_width: int = 64
    embed: EmbedSpec = field(default_factory=EmbedSpec)
    loss: str = "ce"
    batch_size: int = 200
    epochs: int = 100
    learning_rate: float = 0.05
    adagrad_epsilon: float = 1e-8
    seed: int = 0
    weight_by_count: bool = False

    def validate(self) -> None:
        if not 0 <= self.hidden_layers <= 5:
            raise ValueError("hidden_layers must be between 0 and 5")
        if self.hidden_width <= 0:
            raise ValueError("hidden_width must be positive")
        if self.embed.callee_dim <= 0 or self.embed.file_dim <= 0:
            raise ValueError("embedding dimensions must be positive")
        if self.embed.min_count < 1:
            raise ValueError("min_count must be at least 1")
        if self.loss not in LOSSES:
            raise ValueError(f"loss must be one of {LOSSES}")
        if self.batch_size <= 0:
            raise ValueError("batch_size must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be nonnegative")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.adagrad_epsilon <= 0:
            raise ValueError("adagrad_epsilon must be positive")


@dataclass
class AdagradState:
    embed_callee: np.ndarray
    embed_file: np.ndarray
    weights: list[np.ndarray]
    biases: list[np.ndarray]


@dataclass
class Network:
    """Learnable parameters. `layer k` is the k-th affine transform; the last
    one produces the scalar logit."""

    embed_callee: np.ndarray  # (callee vocab + 1, dim); row 0 = OOV/none
    embed_file: np.ndarray
    weights: list[np.ndarray]  # (in, out) per layer
    biases: list[np.ndarray]  # (out,) per layer
    adagrad: AdagradState | None = None

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    def ensure_adagrad(self) -> AdagradState:
        if self.adagrad is None:
            self.adagrad = AdagradState(
                embed_callee=np.zeros_like(self.embed_callee),
                embed_file=np.zeros_like(self.embed_file),
                weights=[np.zeros_like(w) for w in self.weights],
                biases=[np.zeros_like(b) for b in self.biases],
            )
        return self.adagrad


@dataclass
class Gradients:
    embed_callee: np.ndarray
    embed_file: np.ndarray
    weights: list[np.ndarray]
    biases: list[np.ndarray]


@dataclass
class Model:
    spec: ModelSpec
    encoder: Encoder
    net: Network


def sigmoid(z: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function."""
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def init_network(dense_len: int, callee_rows: int, file_rows: int, spec: ModelSpec) -> Network:
    """Glorot-uniform weights, zero biases, small uniform embeddings.

    All draws come from one generator seeded with spec.seed, in a fixed
    order, so initialization is bit-reproducible.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    embed_callee = rng.uniform(-0.05, 0.05, size=(callee_rows, spec.embed.callee_dim))
    embed_file = rng.uniform(-0.05, 0.05, size=(file_rows, spec.embed.file_dim))
    input_dim = dense_len + 2 * spec.embed.callee_dim + spec.embed.file_dim
    dims = [input_dim] + [spec.hidden_width] * spec.hidden_layers + [1]
    weights = []
    biases = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return Network(embed_callee, embed_file, weights, biases)


def init_model(spec: ModelSpec, encoder: Encoder) -> Model:
    net = init_network(
        encoder.dense_len, len(encoder.callee_vocab) + 1, len(encoder.file_vocab) + 1, spec
    )
    return Model(spec=spec, encoder=encoder, net=net)


@dataclass
class ForwardCache:
    dense: np.ndarray
    embed_idx: np.ndarray  # (B, 3)
    x0: np.ndarray
    pre_activations: list[np.ndarray]
    activations: list[np.ndarray]  # inputs to each layer
    prob: np.ndarray


def _assemble_input(net: Network, dense: np.ndarray, embed_idx: np.ndarray) -> np.ndarray:
    return np.concatenate(
        [
            dense,
            net.embed_callee[embed_idx[:, 0]],
            net.embed_callee[embed_idx[:, 1]],
            net.embed_file[embed_idx[:, 2]],
        ],
        axis=1,
    )


def forward_batch(net: Network, dense: np.ndarray, embed_idx: np.ndarray) -> ForwardCache:
    x = _assemble_input(net, dense, embed_idx)
    if x.shape[1] != net.input_dim:
        raise LayoutMismatch(f"input dim {x.shape[1]} does not match network {net.input_dim}")
    x0 = x
    pre = []
    acts = []
    for w, b in zip(net.weights[:-1], net.biases[:-1]):
        acts.append(x)
        z = x @ w + b
        pre.append(z)
        x = np.maximum(z, 0.0)
    acts.append(x)
    logit = x @ net.weights[-1] + net.biases[-1]
    prob = sigmoid(logit[:, 0])
    return ForwardCache(dense, embed_idx, x0, pre, acts, prob)


def forward(model: Model, example: EncodedExample) -> float:
    """Probability for one encoded example."""
    if example.dense.shape[0] != model.encoder.dense_len:
        raise LayoutMismatch(
            f"dense length {example.dense.shape[0]} does not match encoder "
            f"layout {model.encoder.dense_len}"
        )
    cache = forward_batch(
        model.net,
        example.dense[None, :],
        np.asarray([example.embed_indices], dtype=np.int64),
    )
    return float(cache.prob[0])


def loss_values(kind: str, preds: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Per-example loss vector."""
    preds = np.asarray(preds, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if kind == "mae":
        return np.abs(preds - labels)
    if kind == "mse":
        return (preds - labels) ** 2
    if kind == "ce":
        p = np.clip(preds, CE_EPS, 1.0 - CE_EPS)
        return -(labels * np.log(p) + (1.0 - labels) * np.log(1.0 - p))
    raise ValueError(f"unknown loss {kind!r}")


def loss(kind: str, pred: float, label: float) -> float:
    return float(loss_values(kind, np.asarray([pred]), np.asarray([label]))[0])


def _dloss_dp(kind: str, preds: np.ndarray, labels: np.ndarray) -> np.ndarray:
    if kind == "mae":
        return np.sign(preds - labels)
    if kind == "mse":
        return 2.0 * (preds - labels)
    if kind == "ce":
        p = np.clip(preds, CE_EPS, 1.0 - CE_EPS)
        grad = -labels / p + (1.0 - labels) / (1.0 - p)
        # The clamp flattens the loss outside its range.
        grad[(preds < CE_EPS) | (preds > 1.0 - CE_EPS)] = 0.0
        return grad
    raise ValueError(f"unknown loss {kind!r}")


def backward_batch(
    net: Network,
    cache: ForwardCache,
    labels: np.ndarray,
    kind: str,
    sample_weights: np.ndarray | None = None,
) -> Gradients:
    """Mean-over-batch analytic gradients for all parameters.

    With sample_weights given, each example's loss is scaled before the
    batch mean is taken.
    """
    n = cache.prob.shape[0]
    p = cache.prob
    dp = _dloss_dp(kind, p, labels) / n
    if sample_weights is not None:
        dp = dp * sample_weights
    dz = (dp * p * (1.0 - p))[:, None]

    d_weights: list[np.ndarray] = [None] * len(net.weights)
    d_biases: list[np.ndarray] = [None] * len(net.biases)

    d_weights[-1] = cache.activations[-1].T @ dz
    d_biases[-1] = dz.sum(axis=0)
    dx = dz @ net.weights[-1].T
    for k in range(len(net.weights) - 2, -1, -1):
        dz_k = dx * (cache.pre_activations[k] > 0.0)
        d_weights[k] = cache.activations[k].T @ dz_k
        d_biases[k] = dz_k.sum(axis=0)
        dx = dz_k @ net.weights[k].T

    dense_len = cache.dense.shape[1]
    dc = net.embed_callee.shape[1]
    d_embed_callee = np.zeros_like(net.embed_callee)
    d_embed_file = np.zeros_like(net.embed_file)
    taken_slice = dx[:, dense_len: dense_len + dc]
    nottaken_slice = dx[:, dense_len + dc: dense_len + 2 * dc]
    file_slice = dx[:, dense_len + 2 * dc:]
    np.add.at(d_embed_callee, cache.embed_idx[:, 0], taken_slice)
    np.add.at(d_embed_callee, cache.embed_idx[:, 1], nottaken_slice)
    np.add.at(d_embed_file, cache.embed_idx[:, 2], file_slice)

    return Gradients(d_embed_callee, d_embed_file, d_weights, d_biases)


def adagrad_step(net: Network, grads: Gradients, lr: float, eps: float) -> Network:
    """In-place Adagrad update: accumulate squared gradients, then scale."""
    state = net.ensure_adagrad()

    def update(param: np.ndarray, grad: np.ndarray, accum: np.ndarray) -> None:
        accum += grad * grad
        param -= lr * grad / (np.sqrt(accum) + eps)

    update(net.embed_callee, grads.embed_callee, state.embed_callee)
    update(net.embed_file, grads.embed_file, state.embed_file)
    for w, g, a in zip(net.weights, grads.weights, state.weights):
        update(w, g, a)
    for b, g, a in zip(net.biases, grads.biases, state.biases):
        update(b, g, a)
    return net


def _predict_compiled(net: Network, compiled: CompiledExamples, chunk: int = 4096) -> np.ndarray:
    out = np.empty(len(compiled))
    for start in range(0, len(compiled), chunk):
        rows = np.arange(start, min(start + chunk, len(compiled)))
        cache = forward_batch(net, compiled.dense_batch(rows), compiled.embed_idx[rows])
        out[rows] = cache.prob
    return out


def predict_batch(model: Model, examples: list[RawFeatures]) -> np.ndarray:
    """Encode with the stored encoder and run the network; order-preserving."""
    if not examples:
        return np.zeros(0)
    compiled = compile_examples(model.encoder, examples)
    return _predict_compiled(model.net, compiled)


def train(
    spec: ModelSpec,
    train_set: list[LabeledExample],
    valid_set: list[LabeledExample],
    const_threshold: int = 64,
) -> tuple[Model, list[dict[str, float]]]:
    """Fit the encoder on the training set, then run seeded minibatch Adagrad.

    Returns the final-epoch model and one {train_loss, valid_loss} record per
    epoch. Shuffling is reseeded from spec.seed, independent of the
    initialization stream; the last short batch of an epoch is used.
    """
    spec.validate()
    if not train_set:
        raise EmptyDataset("training requires at least one example")

    encoder = fit_encoder([ex.raw for ex in train_set], spec.embed, const_threshold)
    model = init_model(spec, encoder)
    net = model.net

    compiled = compile_examples(encoder, [ex.raw for ex in train_set])
    labels = np.asarray([ex.label for ex in train_set])
    weights = None
    if spec.weight_by_count:
        weights = np.asarray([float(ex.sample_count) for ex in train_set])

    compiled_valid = None
    valid_labels = None
    if valid_set:
        compiled_valid = compile_examples(encoder, [ex.raw for ex in valid_set])
        valid_labels = np.asarray([ex.label for ex in valid_set])

    shuffle_rng = np.random.default_rng(spec.seed + 1)
    history: list[dict[str, float]] = []
    n = len(train_set)
    for _ in range(spec.epochs):
        perm = shuffle_rng.permutation(n)
        total = 0.0
        for start in range(0, n, spec.batch_size):
            rows = perm[start: start + spec.batch_size]
            cache = forward_batch(net, compiled.dense_batch(rows), compiled.embed_idx[rows])
            batch_losses = loss_values(spec.loss, cache.prob, labels[rows])
            w = weights[rows] if weights is not None else None
            if w is not None:
                batch_losses = batch_losses * w
            total += float(batch_losses.sum())
            grads = backward_batch(net, cache, labels[rows], spec.loss, w)
            adagrad_step(net, grads, spec.learning_rate, spec.adagrad_epsilon)
        if compiled_valid is not None:
            valid_preds = _predict_compiled(net, compiled_valid)
            valid_loss = float(loss_values(spec.loss, valid_preds, valid_labels).mean())
        else:
            valid_loss = float("nan")
        history.append({"train_loss": total / n, "valid_loss": valid_loss})
    return model, history


# ---------------------------------------------------------------------------
# Serialization: versioned UTF-8 text, matrices row-major with shortest
# round-trip float representation.

MAGIC = "BPMODEL v1"


def _fmt(x: float) -> str:
    return repr(float(x))


def _matrix_lines(name: str, m: np.ndarray) -> list[str]:
    m = np.atleast_2d(m)
    lines = [f"[{name}]", f"shape {m.shape[0]} {m.shape[1]}"]
    lines.extend(" ".join(_fmt(v) for v in row) for row in m)
    return lines


def save_model(model: Model, path) -> None:
    spec = model.spec
    enc = model.encoder
    net = model.net
    lines = [MAGIC, "[spec]"]
    lines.append(f"hidden_layers={spec.hidden_layers}")
    lines.append(f"hidden_width={spec.hidden_width}")
    lines.append(f"embed_callee_dim={spec.embed.callee_dim}")
    lines.append(f"embed_file_dim={spec.embed.file_dim}")
    lines.append(f"min_count={spec.embed.min_count}")
    lines.append(f"loss={spec.loss}")
    lines.append(f"batch_size={spec.batch_size}")
    lines.append(f"epochs={spec.epochs}")
    lines.append(f"learning_rate={_fmt(spec.learning_rate)}")
    lines.append(f"adagrad_epsilon={_fmt(spec.adagrad_epsilon)}")
    lines.append(f"seed={spec.seed}")
    lines.append(f"weight_by_count={'true' if spec.weight_by_count else 'false'}")
    lines.append("[encoder.config]")
    lines.append(f"const_threshold={enc.const_threshold}")
    lines.append("[encoder.numeric]")
    for i, name in enumerate(NUMERIC_FEATURES):
        lines.append(f"{name},{_fmt(enc.numeric_means[i])},{_fmt(enc.numeric_stds[i])}")
    lines.append("[encoder.vocab.callee]")
    for name, idx in sorted(enc.callee_vocab.items(), key=lambda kv: kv[1]):
        lines.append(f"{idx},{name}")
    lines.append("[encoder.vocab.file]")
    for name, idx in sorted(enc.file_vocab.items(), key=lambda kv: kv[1]):
        lines.append(f"{idx},{name}")
    lines.extend(_matrix_lines("embed.callee", net.embed_callee))
    lines.extend(_matrix_lines("embed.file", net.embed_file))
    for k, (w, b) in enumerate(zip(net.weights, net.biases)):
        lines.extend(_matrix_lines(f"layer.{k}.W", w))
        lines.extend(_matrix_lines(f"layer.{k}.b", b))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def _split_sections(lines: list[str]) -> dict[str, list[str]]:
    sections: dict[str, list[str]] = {}
    current = None
    for line in lines:
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1]
            if current in sections:
                raise CorruptModel(current, "duplicate section")
            sections[current] = []
        elif current is not None:
            sections[current].append(line)
        elif line.strip():
            raise CorruptModel("header", f"unexpected content {line!r}")
    return sections


def _parse_kv(section: str, lines: list[str]) -> dict[str, str]:
    out = {}
    for line in lines:
        if not line.strip():
            continue
        if "=" not in line:
            raise CorruptModel(section, f"expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        out[key] = value
    return out


def _parse_matrix(section: str, sections: dict[str, list[str]]) -> np.ndarray:
    if section not in sections:
        raise CorruptModel(section, "missing section")
    lines = [ln for ln in sections[section] if ln.strip()]
    if not lines or not lines[0].startswith("shape "):
        raise CorruptModel(section, "missing shape line")
    try:
        rows, cols = (int(t) for t in lines[0].split()[1:])
    except ValueError:
        raise CorruptModel(section, "bad shape line") from None
    data = lines[1:]
    if len(data) != rows:
        raise CorruptModel(section, f"expected {rows} rows, found {len(data)}")
    try:
        m = np.asarray([[float(v) for v in row.split()] for row in data])
    except ValueError:
        raise CorruptModel(section, "bad float value") from None
    if rows == 0:
        m = np.zeros((0, cols))
    if m.shape != (rows, cols):
        raise CorruptModel(section, f"shape mismatch: {m.shape} vs ({rows}, {cols})")
    return m


def _parse_vocab(section: str, sections: dict[str, list[str]]) -> dict[str, int]:
    if section not in sections:
        raise CorruptModel(section, "missing section")
    vocab: dict[str, int] = {}
    for line in sections[section]:
        if not line.strip():
            continue
        try:
            idx_text, name = line.split(",", 1)
            vocab[name] = int(idx_text)
        except ValueError:
            raise CorruptModel(section, f"bad vocab line {line!r}") from None
    return vocab


def load_model(path) -> Model:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != MAGIC:
        raise VersionMismatch(f"expected {MAGIC!r} header")
    sections = _split_sections(lines[1:])

    for required in ("spec", "encoder.config", "encoder.numeric"):
        if required not in sections:
            raise CorruptModel(required, "missing section")
    kv = _parse_kv("spec", sections["spec"])
    try:
        spec = ModelSpec(
            hidden_layers=int(kv["hidden_layers"]),
            hidden_width=int(kv["hidden_width"]),
            embed=EmbedSpec(
                callee_dim=int(kv["embed_callee_dim"]),
                file_dim=int(kv["embed_file_dim"]),
                min_count=int(kv["min_count"]),
            ),
            loss=kv["loss"],
            batch_size=int(kv["batch_size"]),
            epochs=int(kv["epochs"]),
            learning_rate=float(kv["learning_rate"]),
            adagrad_epsilon=float(kv["adagrad_epsilon"]),
            seed=int(kv["seed"]),
            weight_by_count=kv["weight_by_count"] == "true",
        )
    except (KeyError, ValueError) as exc:
        raise CorruptModel("spec", str(exc)) from exc

    cfg = _parse_kv("encoder.config", sections["encoder.config"])
    try:
        const_threshold = int(cfg["const_threshold"])
    except (KeyError, ValueError) as exc:
        raise CorruptModel("encoder.config", str(exc)) from exc

    means = np.zeros(len(NUMERIC_FEATURES))
    stds = np.zeros(len(NUMERIC_FEATURES))
    seen = set()
    for line in sections["encoder.numeric"]:
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 3 or parts[0] not in NUMERIC_FEATURES:
            raise CorruptModel("encoder.numeric", f"bad line {line!r}")
        i = NUMERIC_FEATURES.index(parts[0])
        try:
            means[i], stds[i] = float(parts[1]), float(parts[2])
        except ValueError:
            raise CorruptModel("encoder.numeric", f"bad line {line!r}") from None
        seen.add(parts[0])
    if seen != set(NUMERIC_FEATURES):
        raise CorruptModel("encoder.numeric", "missing numeric features")

    encoder = Encoder(
        const_threshold=const_threshold,
        embed_spec=spec.embed,
        numeric_means=means,
        numeric_stds=stds,
        callee_vocab=_parse_vocab("encoder.vocab.callee", sections),
        file_vocab=_parse_vocab("encoder.vocab.file", sections),
    )

    embed_callee = _parse_matrix("embed.callee", sections)
    embed_file = _parse_matrix("embed.file", sections)
    weights = []
    biases = []
    for k in range(spec.hidden_layers + 1):
        weights.append(_parse_matrix(f"layer.{k}.W", sections))
        biases.append(_parse_matrix(f"layer.{k}.b", sections)[0])
    expected_input = encoder.dense_len + 2 * spec.embed.callee_dim + spec.embed.file_dim
    if weights[0].shape[0] != expected_input:
        raise CorruptModel("layer.0.W", "input width does not match the encoder layout")

    return Model(spec=spec, encoder=encoder, net=Network(embed_callee, embed_file, weights, biases))
