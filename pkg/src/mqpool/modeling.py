"""Desk-scale model: toy frame encoders, per-modality pooling, concat fusion,
an MLP classifier head, and the class-weighted focal loss.

Encoders are frame-wise (frame t of the output depends only on frame t of
the input) so attention weights over the pooled sequence stay interpretable.
Layers carry contiguous indices from 0 upward; the trainer unfreezes suffixes
of that ordering.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import GradientTape, Var
from .core import SequenceBatch, Tensor, seeded_rng, tensor_read, tensor_write, validate_batch
from .errors import (
    ConfigError,
    ContractError,
    DegenerateClassError,
    LabelError,
    ShapeError,
)
from .pooling import (
    PoolingConfig,
    PoolKind,
    mqmha_forward,
    statistics_forward,
    xavier_uniform,
)


@dataclass
class ToyEncoder:
    """Stack of frame-wise affine+tanh layers; layer i params live in
    layers[i] under keys "w" [in, out] and "b" [out]."""

    n_inputs: int
    n_outputs: int
    layers: list[dict[str, np.ndarray]]

    @classmethod
    def create(
        cls,
        n_inputs: int,
        n_outputs: int = 16,
        n_layers: int = 2,
        hidden: int = 32,
        seed: int = 0,
        name: str = "enc",
    ) -> "ToyEncoder":
        if n_layers < 1:
            raise ConfigError(f"encoder needs at least 1 layer, got {n_layers}")
        rng = seeded_rng(seed, f"{name}.init")
        widths = [n_inputs] + [hidden] * (n_layers - 1) + [n_outputs]
        layers = []
        for i in range(n_layers):
            fi, fo = widths[i], widths[i + 1]
            layers.append({"w": xavier_uniform(rng, (fi, fo), fi, fo), "b": np.zeros(fo)})
        return cls(n_inputs=n_inputs, n_outputs=n_outputs, layers=layers)

    @property
    def n_layers(self) -> int:
        return len(self.layers)


@dataclass
class FusionClassifier:
    """Two pooling configs plus a two-layer MLP head over their concatenation."""

    pool_audio: PoolingConfig
    pool_text: PoolingConfig
    head: list[dict[str, np.ndarray]]
    n_classes: int

    @classmethod
    def create(
        cls,
        pool_audio: PoolingConfig,
        pool_text: PoolingConfig,
        n_inputs: int,
        n_classes: int,
        hidden: int = 32,
        seed: int = 0,
    ) -> "FusionClassifier":
        if n_classes < 2:
            raise ConfigError(f"need at least 2 classes, got {n_classes}")
        rng = seeded_rng(seed, "head.init")
        head = [
            {"w": xavier_uniform(rng, (n_inputs, hidden), n_inputs, hidden), "b": np.zeros(hidden)},
            {"w": xavier_uniform(rng, (hidden, n_classes), hidden, n_classes), "b": np.zeros(n_classes)},
        ]
        return cls(pool_audio=pool_audio, pool_text=pool_text, head=head, n_classes=n_classes)


@dataclass
class FocalLossConfig:
    alpha: np.ndarray
    gamma: float = 2.0

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=np.float64)
        if self.alpha.ndim != 1:
            raise ConfigError(f"alpha must be a vector, got shape {self.alpha.shape}")
        if not (self.alpha > 0).all():
            raise ConfigError("every class weight alpha_c must be > 0")
        if self.gamma < 0:
            raise ConfigError(f"gamma must be >= 0, got {self.gamma}")


@dataclass
class ModelOutput:
    logits: np.ndarray
    attention_audio: np.ndarray | None
    attention_text: np.ndarray | None


# ---------------------------------------------------------------------------
# parameter flattening: one flat dict of live arrays, names are stable


def encoder_params(enc: ToyEncoder, prefix: str) -> dict[str, np.ndarray]:
    out = {}
    for i, layer in enumerate(enc.layers):
        out[f"{prefix}.layer{i}.w"] = layer["w"]
        out[f"{prefix}.layer{i}.b"] = layer["b"]
    return out


def model_params(clf: FusionClassifier, enc_a: ToyEncoder, enc_t: ToyEncoder) -> dict[str, np.ndarray]:
    """Flat name -> array view of every trainable block (live, not copies)."""
    out = {}
    out.update(encoder_params(enc_a, "enc_audio"))
    out.update(encoder_params(enc_t, "enc_text"))
    for prefix, cfg in (("pool_audio", clf.pool_audio), ("pool_text", clf.pool_text)):
        for k, v in cfg.scorer_params.items():
            out[f"{prefix}.{k}"] = v
    for i, layer in enumerate(clf.head):
        out[f"head.fc{i}.w"] = layer["w"]
        out[f"head.fc{i}.b"] = layer["b"]
    return out


# ---------------------------------------------------------------------------
# tape composition


def encoder_forward(tape: GradientTape, enc: ToyEncoder, x: Var, params: dict[str, Var], prefix: str) -> Var:
    h = x
    for i in range(enc.n_layers):
        h = tape.tanh(tape.affine(h, params[f"{prefix}.layer{i}.w"], params[f"{prefix}.layer{i}.b"]))
    return h


def _pool_forward(tape: GradientTape, h: Var, mask: np.ndarray, cfg: PoolingConfig, params: dict[str, Var], prefix: str):
    """Dispatch on pooling kind; returns (pooled Var, attention Var or None)."""
    if cfg.kind is PoolKind.MAX:
        return tape.masked_max_pool(h, mask), None
    if cfg.kind is PoolKind.AVERAGE:
        return tape.masked_mean_pool(h, mask), None
    if cfg.kind is PoolKind.STATISTICS:
        y, _, _ = statistics_forward(tape, h, mask)
        return y, None
    pv = {k: params[f"{prefix}.{k}"] for k in cfg.scorer_params}
    y, w, _, _ = mqmha_forward(tape, h, mask, cfg, pv)
    return y, w


def _modality_forward(
    tape: GradientTape,
    batch: SequenceBatch,
    enc: ToyEncoder,
    cfg: PoolingConfig,
    params: dict[str, Var],
    enc_prefix: str,
    pool_prefix: str,
):
    if batch.feature_size != enc.n_inputs:
        raise ShapeError(
            f"{enc_prefix}: batch feature size {batch.feature_size} != encoder input {enc.n_inputs}"
        )
    x = tape.constant(batch.features)
    h = encoder_forward(tape, enc, x, params, enc_prefix)
    h = tape.mask_features(h, batch.mask)
    return _pool_forward(tape, h, batch.mask, cfg, params, pool_prefix)


def model_forward(
    tape: GradientTape,
    audio: SequenceBatch,
    text: SequenceBatch,
    clf: FusionClassifier,
    enc_a: ToyEncoder,
    enc_t: ToyEncoder,
    params: dict[str, Var],
    input_drop=None,
):
    """Logits plus retained attention Vars; shared by training and eval.

    input_drop: optional [B, D] multiplier applied to the concatenated pooled
    embedding (inverted-dropout mask supplied by the trainer; None at eval).
    """
    ya, wa = _modality_forward(tape, audio, enc_a, clf.pool_audio, params, "enc_audio", "pool_audio")
    yt, wt = _modality_forward(tape, text, enc_t, clf.pool_text, params, "enc_text", "pool_text")
    z = tape.concat([ya, yt], axis=1)
    if input_drop is not None:
        z = tape.mul_const(z, input_drop)
    h = tape.tanh(tape.affine(z, params["head.fc0.w"], params["head.fc0.b"]))
    logits = tape.affine(h, params["head.fc1.w"], params["head.fc1.b"])
    return logits, wa, wt


def forward(
    audio: SequenceBatch,
    text: SequenceBatch,
    clf: FusionClassifier,
    enc_a: ToyEncoder,
    enc_t: ToyEncoder,
) -> ModelOutput:
    """Pure inference pass over one batch."""
    validate_batch(audio)
    validate_batch(text)
    tape = GradientTape()
    params = {k: tape.constant(v) for k, v in model_params(clf, enc_a, enc_t).items()}
    logits, wa, wt = model_forward(tape, audio, text, clf, enc_a, enc_t, params)
    return ModelOutput(
        logits=logits.value,
        attention_audio=None if wa is None else wa.value,
        attention_text=None if wt is None else wt.value,
    )


@dataclass
class FusionModel:
    """Bundle of the two encoders and the fusion classifier, as trained."""

    clf: FusionClassifier
    enc_audio: ToyEncoder
    enc_text: ToyEncoder
    seed: int = 0

    def params(self) -> dict[str, np.ndarray]:
        return model_params(self.clf, self.enc_audio, self.enc_text)

    def forward(self, audio: SequenceBatch, text: SequenceBatch) -> ModelOutput:
        return forward(audio, text, self.clf, self.enc_audio, self.enc_text)

    def save(self, path) -> None:
        save_checkpoint(path, self.clf, self.enc_audio, self.enc_text, self.seed)

    @classmethod
    def load(cls, path) -> "FusionModel":
        clf, enc_a, enc_t, seed = load_checkpoint(path)
        return cls(clf=clf, enc_audio=enc_a, enc_text=enc_t, seed=seed)


# ---------------------------------------------------------------------------
# loss and metric


def check_labels(labels, n_classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.ndim != 1:
        raise LabelError(f"labels must be a vector, got shape {labels.shape}")
    if not np.issubdtype(labels.dtype, np.integer):
        raise LabelError(f"labels must be integers, got dtype {labels.dtype}")
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        bad = labels[(labels < 0) | (labels >= n_classes)][0]
        raise LabelError(f"label {bad} outside [0, {n_classes})")
    return labels.astype(np.int64)


def focal_loss(logits: np.ndarray, labels, cfg: FocalLossConfig) -> float:
    """Mean over the batch of -alpha_c (1-p_c)^gamma log(p_c), log floored at 1e-12."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 2:
        raise ShapeError(f"logits must be [B, C], got shape {logits.shape}")
    if logits.shape[1] != cfg.alpha.shape[0]:
        raise ConfigError(
            f"alpha has {cfg.alpha.shape[0]} classes, logits have {logits.shape[1]}"
        )
    labels = check_labels(labels, logits.shape[1])
    tape = GradientTape()
    out = tape.focal_loss(tape.constant(logits), labels, cfg.alpha, cfg.gamma)
    return float(out.value)


def alpha_from_frequencies(counts) -> np.ndarray:
    """Inverse-frequency class weights, normalized to mean 1."""
    counts = np.asarray(counts, dtype=np.float64)
    if counts.ndim != 1 or counts.size == 0:
        raise ConfigError(f"counts must be a non-empty vector, got shape {counts.shape}")
    if (counts < 1).any():
        c = int(np.argwhere(counts < 1)[0][0])
        raise DegenerateClassError(f"class {c} has count {counts[c]}, need >= 1")
    alpha = counts.sum() / counts
    return alpha / alpha.mean()


def macro_f1(preds, labels, n_classes: int) -> float:
    """Unweighted mean of per-class F1; a class absent from preds and labels
    contributes 0."""
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    if preds.size == 0 or labels.size == 0:
        raise ContractError("macro_f1 needs at least one prediction")
    if preds.shape != labels.shape:
        raise ShapeError(f"preds shape {preds.shape} != labels shape {labels.shape}")
    preds = check_labels(preds, n_classes)
    labels = check_labels(labels, n_classes)
    total = 0.0
    for c in range(n_classes):
        tp = int(np.sum((preds == c) & (labels == c)))
        fp = int(np.sum((preds == c) & (labels != c)))
        fn = int(np.sum((preds != c) & (labels == c)))
        denom = 2 * tp + fp + fn
        total += (2.0 * tp / denom) if denom else 0.0
    return total / n_classes


# ---------------------------------------------------------------------------
# checkpoints: MQT1 tensors plus a JSON manifest


def save_checkpoint(path, clf: FusionClassifier, enc_a: ToyEncoder, enc_t: ToyEncoder, seed: int) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    params = model_params(clf, enc_a, enc_t)
    manifest = {
        "class_count": clf.n_classes,
        "seed": seed,
        "encoders": {
            "audio": _encoder_meta(enc_a),
            "text": _encoder_meta(enc_t),
        },
        "pooling": {
            "audio": json.loads(clf.pool_audio.to_json()),
            "text": json.loads(clf.pool_text.to_json()),
        },
        "head_widths": [list(layer["w"].shape) for layer in clf.head],
        "params": {name: list(arr.shape) for name, arr in sorted(params.items())},
    }
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    for name, arr in params.items():
        tensor_write(Tensor.from_array(arr), path / f"{name}.mqt")


def _encoder_meta(enc: ToyEncoder) -> dict:
    return {
        "n_inputs": enc.n_inputs,
        "n_outputs": enc.n_outputs,
        "widths": [list(layer["w"].shape) for layer in enc.layers],
    }


def _encoder_from_meta(meta: dict) -> ToyEncoder:
    layers = [
        {"w": np.zeros((int(wi), int(wo))), "b": np.zeros(int(wo))} for wi, wo in meta["widths"]
    ]
    return ToyEncoder(n_inputs=int(meta["n_inputs"]), n_outputs=int(meta["n_outputs"]), layers=layers)


def load_checkpoint(path):
    """Returns (clf, enc_audio, enc_text, seed). Values are the stored 32-bit
    tensors widened back to float64."""
    path = Path(path)
    try:
        manifest = json.loads((path / "manifest.json").read_text())
    except FileNotFoundError as e:
        raise ConfigError(f"no checkpoint manifest under {path}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"corrupt checkpoint manifest: {e}") from e
    enc_a = _encoder_from_meta(manifest["encoders"]["audio"])
    enc_t = _encoder_from_meta(manifest["encoders"]["text"])
    pool_audio = PoolingConfig.from_json(json.dumps(manifest["pooling"]["audio"]))
    pool_text = PoolingConfig.from_json(json.dumps(manifest["pooling"]["text"]))
    head = [
        {"w": np.zeros((int(wi), int(wo))), "b": np.zeros(int(wo))}
        for wi, wo in manifest["head_widths"]
    ]
    clf = FusionClassifier(
        pool_audio=pool_audio,
        pool_text=pool_text,
        head=head,
        n_classes=int(manifest["class_count"]),
    )
    params = model_params(clf, enc_a, enc_t)
    for name, dims in manifest["params"].items():
        if name not in params:
            raise ConfigError(f"checkpoint names unknown parameter {name!r}")
        arr = tensor_read(path / f"{name}.mqt").to_array()
        if list(arr.shape) != [int(d) for d in dims] or arr.shape != params[name].shape:
            raise ShapeError(f"checkpoint tensor {name!r} has shape {arr.shape}, expected {params[name].shape}")
        params[name][...] = arr
    return clf, enc_a, enc_t, int(manifest["seed"])
