"""Small from-scratch transformer tagger driven by a binary attention mask.

Everything is plain float64 numpy with hand-written gradients, so the
masked-softmax path can be verified coordinate by coordinate against
central finite differences. Per layer:

    Q, K, V = X Wq, X Wk, X Wv          (split into H heads)
    S = Q K^T / sqrt(d_head),  S[i, j] = -inf where mask[i, j] = 0
    A = softmax(S)                       (masked weights are exactly 0)
    X = X + concat_heads(A V) Wo         (residual)
    X = X + tanh(X W1 + b1) W2 + b2      (residual)

followed by a linear classifier per position. The feed-forward activation
is tanh on purpose: the loss stays smooth in every parameter, so central
finite differences agree with the analytic gradients at any point (a relu
kink inside the difference interval would not). Training is plain
per-sentence gradient descent with a fixed seed: two runs with the same
seed and data produce bit-identical parameters.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from propner.augmenter import AttentionMask, AugmentedInput

UNK_TOKEN = "[UNK]"


class DegenerateMaskError(ValueError):
    """A query row of the mask has no attendable key, so softmax is undefined."""


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite during training."""


@dataclass
class TrainConfig:
    d_model: int = 32
    n_heads: int = 4
    n_layers: int = 2
    ff_dim: int = 64
    max_len: int = 256
    lr: float = 0.05
    epochs: int = 50
    seed: int = 0


@dataclass
class ToyEncoderModel:
    vocab: dict[str, int]
    labels: list[str]
    d_model: int
    n_heads: int
    n_layers: int
    ff_dim: int
    max_len: int
    seed: int
    params: dict[str, np.ndarray]
    epoch_losses: list[float] = field(default_factory=list)

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    def token_ids(self, tokens: list[str]) -> np.ndarray:
        unk = self.vocab[UNK_TOKEN]
        return np.array([self.vocab.get(token, unk) for token in tokens], dtype=np.int64)


def build_vocab(datasets: list[AugmentedInput]) -> dict[str, int]:
    tokens = sorted({token for aug in datasets for token in aug.tokens})
    vocab = {UNK_TOKEN: 0}
    for token in tokens:
        if token != UNK_TOKEN:
            vocab[token] = len(vocab)
    return vocab


def init_model(vocab: dict[str, int], labels: list[str], config: TrainConfig) -> ToyEncoderModel:
    if not labels:
        raise ValueError("label set is empty")
    if config.d_model % config.n_heads:
        raise ValueError(f"d_model {config.d_model} not divisible by n_heads {config.n_heads}")
    rng = np.random.default_rng(config.seed)
    d, ff = config.d_model, config.ff_dim
    scale = 1.0 / np.sqrt(d)
    params: dict[str, np.ndarray] = {
        "embed": rng.normal(0.0, 0.1, size=(len(vocab), d)),
        "pos": rng.normal(0.0, 0.1, size=(config.max_len, d)),
    }
    for layer in range(config.n_layers):
        prefix = f"layers.{layer}."
        for name in ("wq", "wk", "wv", "wo"):
            params[prefix + name] = rng.normal(0.0, scale, size=(d, d))
        params[prefix + "w1"] = rng.normal(0.0, scale, size=(d, ff))
        params[prefix + "b1"] = np.zeros(ff)
        params[prefix + "w2"] = rng.normal(0.0, 1.0 / np.sqrt(ff), size=(ff, d))
        params[prefix + "b2"] = np.zeros(d)
    params["cls.w"] = rng.normal(0.0, 0.1, size=(d, len(labels)))
    params["cls.b"] = np.zeros(len(labels))
    return ToyEncoderModel(
        vocab=dict(vocab),
        labels=list(labels),
        d_model=d,
        n_heads=config.n_heads,
        n_layers=config.n_layers,
        ff_dim=ff,
        max_len=config.max_len,
        seed=config.seed,
        params=params,
    )


def _masked_softmax(scores: np.ndarray, bits: np.ndarray, allow_empty_rows: bool) -> np.ndarray:
    """Row softmax restricted to positions where bits = 1.

    Masked weights come out exactly 0. Rows with no set bit either raise or
    (with ``allow_empty_rows``) become all-zero weight rows, which makes the
    attention output of such a query 0 and leaves its residual untouched.
    """
    keep = bits.astype(bool)
    neg = np.where(keep, scores, -np.inf)
    empty = ~keep.any(axis=-1)
    if empty.any() and not allow_empty_rows:
        raise DegenerateMaskError("attention mask has an all-zero query row")
    rowmax = np.where(empty, 0.0, np.max(neg, axis=-1, initial=-np.inf))
    weights = np.exp(neg - rowmax[..., None])
    denom = weights.sum(axis=-1, keepdims=True)
    return weights / np.where(denom == 0.0, 1.0, denom)


def masked_attention(
    q: np.ndarray,
    k: np.ndarray,
    v: np.ndarray,
    mask: AttentionMask | np.ndarray,
    allow_empty_rows: bool = False,
) -> np.ndarray:
    """Scaled dot-product attention over the keys each query may see."""
    bits = mask.bits if isinstance(mask, AttentionMask) else np.asarray(mask)
    scores = q @ k.T / np.sqrt(k.shape[-1])
    weights = _masked_softmax(scores, bits, allow_empty_rows)
    return weights @ v


def _split_heads(x: np.ndarray, n_heads: int) -> np.ndarray:
    t, d = x.shape
    return x.reshape(t, n_heads, d // n_heads).transpose(1, 0, 2)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    h, t, dk = x.shape
    return x.transpose(1, 0, 2).reshape(t, h * dk)


def _forward_pass(model: ToyEncoderModel, aug: AugmentedInput, want_cache: bool):
    if len(aug.tokens) > model.max_len:
        raise ValueError(f"input of length {len(aug.tokens)} exceeds max_len {model.max_len}")
    p = model.params
    ids = model.token_ids(aug.tokens)
    t = len(ids)
    bits = aug.mask.bits
    x = p["embed"][ids] + p["pos"][:t]
    cache = {"ids": ids, "layers": []} if want_cache else None
    for layer in range(model.n_layers):
        prefix = f"layers.{layer}."
        q = x @ p[prefix + "wq"]
        k = x @ p[prefix + "wk"]
        v = x @ p[prefix + "wv"]
        qh = _split_heads(q, model.n_heads)
        kh = _split_heads(k, model.n_heads)
        vh = _split_heads(v, model.n_heads)
        scores = qh @ kh.swapaxes(1, 2) / np.sqrt(model.head_dim)
        weights = _masked_softmax(scores, bits, allow_empty_rows=True)
        heads = weights @ vh
        merged = _merge_heads(heads)
        attn_out = merged @ p[prefix + "wo"]
        x1 = x + attn_out
        pre = x1 @ p[prefix + "w1"] + p[prefix + "b1"]
        hidden = np.tanh(pre)
        x2 = x1 + hidden @ p[prefix + "w2"] + p[prefix + "b2"]
        if want_cache:
            cache["layers"].append(
                {"x": x, "qh": qh, "kh": kh, "vh": vh, "weights": weights, "merged": merged, "x1": x1, "hidden": hidden}
            )
        x = x2
    logits = x @ p["cls.w"] + p["cls.b"]
    if want_cache:
        cache["final"] = x
    return logits, x, cache


def forward(model: ToyEncoderModel, aug: AugmentedInput) -> np.ndarray:
    """Per-position label logits, shape (len(tokens), len(labels))."""
    logits, _, _ = _forward_pass(model, aug, want_cache=False)
    return logits


def hidden_states(model: ToyEncoderModel, aug: AugmentedInput) -> np.ndarray:
    """Final-layer hidden states, shape (len(tokens), d_model)."""
    _, final, _ = _forward_pass(model, aug, want_cache=False)
    return final


def _label_targets(model: ToyEncoderModel, aug: AugmentedInput) -> tuple[np.ndarray, np.ndarray]:
    index = {label: i for i, label in enumerate(model.labels)}
    positions = []
    targets = []
    for pos, tag in enumerate(aug.label_alignment):
        if tag is None:
            continue
        if tag not in index:
            raise ValueError(f"tag {tag!r} not in model label set")
        positions.append(pos)
        targets.append(index[tag])
    return np.array(positions, dtype=np.int64), np.array(targets, dtype=np.int64)


def _loss_only(model: ToyEncoderModel, aug: AugmentedInput) -> float:
    positions, targets = _label_targets(model, aug)
    if len(positions) == 0:
        raise ValueError(f"input {aug.sentence_id!r} has no labeled positions")
    logits, _, _ = _forward_pass(model, aug, want_cache=False)
    picked = logits[positions]
    shifted = picked - picked.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(shifted).sum(axis=1))
    return float(np.mean(logsumexp - shifted[np.arange(len(targets)), targets]))


def _loss_and_grads(model: ToyEncoderModel, aug: AugmentedInput) -> tuple[float, dict[str, np.ndarray]]:
    """Mean cross-entropy over labeled positions and its full gradient."""
    positions, targets = _label_targets(model, aug)
    if len(positions) == 0:
        raise ValueError(f"input {aug.sentence_id!r} has no labeled positions")
    p = model.params
    logits, _, cache = _forward_pass(model, aug, want_cache=True)

    picked = logits[positions]
    shifted = picked - picked.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    denom = exp.sum(axis=1, keepdims=True)
    probs = exp / denom
    logsumexp = np.log(denom[:, 0])
    loss = float(np.mean(logsumexp - shifted[np.arange(len(targets)), targets]))

    grads = {name: np.zeros_like(value) for name, value in p.items()}
    d_logits = np.zeros_like(logits)
    d_picked = probs.copy()
    d_picked[np.arange(len(targets)), targets] -= 1.0
    d_logits[positions] = d_picked / len(targets)

    final = cache["final"]
    grads["cls.w"] += final.T @ d_logits
    grads["cls.b"] += d_logits.sum(axis=0)
    dx = d_logits @ p["cls.w"].T

    inv_sqrt = 1.0 / np.sqrt(model.head_dim)
    for layer in reversed(range(model.n_layers)):
        prefix = f"layers.{layer}."
        c = cache["layers"][layer]
        # x2 = x1 + tanh(x1 w1 + b1) w2 + b2
        d_hidden = dx @ p[prefix + "w2"].T
        grads[prefix + "w2"] += c["hidden"].T @ dx
        grads[prefix + "b2"] += dx.sum(axis=0)
        d_pre = d_hidden * (1.0 - c["hidden"] ** 2)
        grads[prefix + "w1"] += c["x1"].T @ d_pre
        grads[prefix + "b1"] += d_pre.sum(axis=0)
        dx1 = dx + d_pre @ p[prefix + "w1"].T
        # x1 = x + merge(A vh) wo
        grads[prefix + "wo"] += c["merged"].T @ dx1
        d_merged = dx1 @ p[prefix + "wo"].T
        d_heads = _split_heads(d_merged, model.n_heads)
        weights = c["weights"]
        d_weights = d_heads @ c["vh"].swapaxes(1, 2)
        d_vh = weights.swapaxes(1, 2) @ d_heads
        # softmax backward; zero rows and masked cells have weights 0, so
        # their score gradient vanishes as well
        d_scores = weights * (d_weights - (d_weights * weights).sum(axis=-1, keepdims=True))
        d_scores *= inv_sqrt
        d_qh = d_scores @ c["kh"]
        d_kh = d_scores.swapaxes(1, 2) @ c["qh"]
        dq = _merge_heads(d_qh)
        dk = _merge_heads(d_kh)
        dv = _merge_heads(d_vh)
        x = c["x"]
        grads[prefix + "wq"] += x.T @ dq
        grads[prefix + "wk"] += x.T @ dk
        grads[prefix + "wv"] += x.T @ dv
        dx = dx1 + dq @ p[prefix + "wq"].T + dk @ p[prefix + "wk"].T + dv @ p[prefix + "wv"].T

    t = len(cache["ids"])
    grads["pos"][:t] += dx
    np.add.at(grads["embed"], cache["ids"], dx)
    return loss, grads


def train(dataset: list[AugmentedInput], config: TrainConfig) -> ToyEncoderModel:
    """Fit a tagger by per-sentence gradient descent.

    The vocabulary and label set are read off the training data. Sentence
    order is reshuffled every epoch from the run seed; given one seed and
    one platform the resulting parameters are bit-reproducible.
    """
    if not dataset:
        raise ValueError("training dataset is empty")
    vocab = build_vocab(dataset)
    labels = sorted({tag for aug in dataset for tag in aug.label_alignment if tag is not None})
    model = init_model(vocab, labels, config)

    rng = np.random.default_rng(config.seed)
    for epoch in range(config.epochs):
        order = rng.permutation(len(dataset))
        epoch_loss = 0.0
        for idx in order:
            loss, grads = _loss_and_grads(model, dataset[idx])
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}: lower the learning rate (current {config.lr})"
                )
            for name, grad in grads.items():
                model.params[name] -= config.lr * grad
            epoch_loss += loss
        model.epoch_losses.append(epoch_loss / len(dataset))
    return model


def predict(model: ToyEncoderModel, aug: AugmentedInput) -> np.ndarray:
    """Label distributions for sentence tokens, shape (n_sentence, len(labels)).

    Softmax over the logits at positions 1..n_sentence; appended context
    positions are discarded.
    """
    logits = forward(model, aug)[1 : aug.n_sentence + 1]
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=1, keepdims=True)


def predict_tags(model: ToyEncoderModel, aug: AugmentedInput) -> list[str]:
    """Argmax tags per sentence token; ties go to the lexicographically
    smallest label (the label list is sorted at training time)."""
    dist = predict(model, aug)
    return [model.labels[i] for i in dist.argmax(axis=1)]


def gradient_check(model: ToyEncoderModel, aug: AugmentedInput, epsilon: float, n_coords: int = 120, seed: int = 0) -> float:
    """Max relative error between analytic and central-difference gradients.

    Samples at least one coordinate from every parameter group (and
    ``n_coords`` in total) with a seeded generator. The relative error uses
    a small absolute floor so coordinates whose true gradient is 0, e.g.
    value rows visible to no query, compare cleanly against the
    finite-difference noise.
    """
    if not 1e-6 <= epsilon <= 1e-3:
        raise ValueError(f"epsilon {epsilon} outside [1e-6, 1e-3]")
    _, analytic = _loss_and_grads(model, aug)
    rng = np.random.default_rng(seed)
    names = sorted(model.params)
    per_group = max(1, -(-n_coords // len(names)))

    worst = 0.0
    for name in names:
        param = model.params[name]
        flat_indices = rng.integers(0, param.size, size=per_group)
        for flat in flat_indices:
            original = param.flat[flat]
            param.flat[flat] = original + epsilon
            loss_plus = _loss_only(model, aug)
            param.flat[flat] = original - epsilon
            loss_minus = _loss_only(model, aug)
            param.flat[flat] = original
            numeric = (loss_plus - loss_minus) / (2.0 * epsilon)
            exact = analytic[name].flat[flat]
            rel = abs(exact - numeric) / max(abs(exact), abs(numeric), 1e-3)
            worst = max(worst, rel)
    return worst


_MODEL_FORMAT = "toy-encoder"
_MODEL_VERSION = 1


def save_model(model: ToyEncoderModel, path: str | Path) -> None:
    """Single-file dump: one JSON header line, then raw little-endian float64
    array bytes in header order. Byte-identical across runs."""
    names = sorted(model.params)
    header = {
        "format": _MODEL_FORMAT,
        "version": _MODEL_VERSION,
        "hyperparams": {
            "d_model": model.d_model,
            "n_heads": model.n_heads,
            "n_layers": model.n_layers,
            "ff_dim": model.ff_dim,
            "max_len": model.max_len,
            "seed": model.seed,
            "labels": model.labels,
            "vocab": model.vocab,
        },
        "epoch_losses": model.epoch_losses,
        "arrays": [{"name": name, "shape": list(model.params[name].shape)} for name in names],
    }
    with open(path, "wb") as handle:
        handle.write(json.dumps(header, sort_keys=True, ensure_ascii=False).encode("utf-8") + b"\n")
        for name in names:
            handle.write(np.ascontiguousarray(model.params[name], dtype="<f8").tobytes())


def load_model(path: str | Path) -> ToyEncoderModel:
    with open(path, "rb") as handle:
        header = json.loads(handle.readline().decode("utf-8"))
        if header.get("format") != _MODEL_FORMAT or header.get("version") != _MODEL_VERSION:
            raise ValueError(f"unsupported model file {path}")
        params = {}
        for spec in header["arrays"]:
            shape = tuple(spec["shape"])
            count = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(handle.read(count * 8), dtype="<f8").astype(np.float64)
            if not np.isfinite(data).all():
                raise ValueError(f"model file {path} has non-finite values in {spec['name']!r}")
            params[spec["name"]] = data.reshape(shape)
    hp = header["hyperparams"]
    return ToyEncoderModel(
        vocab={token: int(idx) for token, idx in hp["vocab"].items()},
        labels=list(hp["labels"]),
        d_model=hp["d_model"],
        n_heads=hp["n_heads"],
        n_layers=hp["n_layers"],
        ff_dim=hp["ff_dim"],
        max_len=hp["max_len"],
        seed=hp["seed"],
        params=params,
        epoch_losses=list(header.get("epoch_losses", [])),
    )
