"""Dataset handling, the synthetic planted-cue generator, AdamW with warmup
plus cosine decay, and the three-phase gradual-unfreezing protocol.

Phase 1 trains the poolers and MLP head with both encoders frozen, phase 2
adds the upper half of each encoder's layers, phase 3 trains everything.
Phase transitions are driven by early stopping on dev macro-F1 and restore
the best-dev weights seen within the phase. Everything randomized draws from
named seeded generators, so a run is a pure function of (inputs, seed).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import GradientTape, backward
from .core import SequenceBatch, Tensor, seeded_rng, tensor_read, tensor_write
from .errors import (
    ConfigError,
    ContractError,
    DegenerateClassError,
    LabelError,
    SamplingError,
    ShapeError,
)
from .kernels import impl as K
from .modeling import (
    FocalLossConfig,
    FusionModel,
    alpha_from_frequencies,
    macro_f1,
    model_forward,
    model_params,
)
from .pooling import PoolKind

PHASE_ORDER = ("HeadOnly", "UpperLayersPlusHead", "All")


# ---------------------------------------------------------------------------
# datasets


@dataclass
class DatasetItem:
    uid: str
    audio: np.ndarray  # [T_audio, K], valid frames only
    text: np.ndarray  # [T_text, K], valid frames only
    label: int
    spans: list[dict] | None = None  # [{"sym", "start", "end"}) over audio frames
    energy: np.ndarray | None = None  # [T_audio]


@dataclass
class LabeledDataset:
    items: list[DatasetItem]
    n_classes: int

    def __post_init__(self):
        seen = set()
        for it in self.items:
            if not (0 <= it.label < self.n_classes):
                raise LabelError(f"item {it.uid!r} has label {it.label} outside [0, {self.n_classes})")
            if it.uid in seen:
                raise ContractError(f"duplicate utterance id {it.uid!r}")
            seen.add(it.uid)

    def __len__(self) -> int:
        return len(self.items)

    def counts(self) -> np.ndarray:
        c = np.zeros(self.n_classes, dtype=np.int64)
        for it in self.items:
            c[it.label] += 1
        return c

    def select(self, indices) -> "LabeledDataset":
        return LabeledDataset([self.items[i] for i in indices], self.n_classes)


def save_dataset(d: LabeledDataset, out_dir) -> None:
    """manifest.jsonl plus one MQT1 file per tensor; dataset.json holds C."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "dataset.json").write_text(
        json.dumps({"class_count": d.n_classes, "n_items": len(d.items)}, sort_keys=True)
    )
    lines = []
    for it in d.items:
        rec = {
            "id": it.uid,
            "label": int(it.label),
            "audio": f"{it.uid}.audio.mqt",
            "audio_mask": f"{it.uid}.audio_mask.mqt",
            "text": f"{it.uid}.text.mqt",
            "text_mask": f"{it.uid}.text_mask.mqt",
            "spans": it.spans,
            "energy": f"{it.uid}.energy.mqt" if it.energy is not None else None,
        }
        tensor_write(Tensor.from_array(it.audio), out / rec["audio"])
        tensor_write(Tensor.from_array(np.ones(it.audio.shape[0])), out / rec["audio_mask"])
        tensor_write(Tensor.from_array(it.text), out / rec["text"])
        tensor_write(Tensor.from_array(np.ones(it.text.shape[0])), out / rec["text_mask"])
        if it.energy is not None:
            tensor_write(Tensor.from_array(it.energy), out / rec["energy"])
        lines.append(json.dumps(rec, sort_keys=True))
    (out / "manifest.jsonl").write_text("\n".join(lines) + "\n")


def load_dataset(in_dir) -> LabeledDataset:
    src = Path(in_dir)
    try:
        meta = json.loads((src / "dataset.json").read_text())
        manifest = (src / "manifest.jsonl").read_text().splitlines()
    except FileNotFoundError as e:
        raise ConfigError(f"no dataset under {src}: {e}") from e
    items = []
    for line in manifest:
        if not line.strip():
            continue
        rec = json.loads(line)
        items.append(
            DatasetItem(
                uid=rec["id"],
                audio=tensor_read(src / rec["audio"]).to_array(),
                text=tensor_read(src / rec["text"]).to_array(),
                label=int(rec["label"]),
                spans=rec.get("spans"),
                energy=(
                    tensor_read(src / rec["energy"]).to_array()
                    if rec.get("energy")
                    else None
                ),
            )
        )
    return LabeledDataset(items, int(meta["class_count"]))


def subsample_majority(d: LabeledDataset, max_ratio: float, seed: int) -> LabeledDataset:
    """Cap every class at ceil(max_ratio * min_count) items, sampled without
    replacement; minority classes are untouched."""
    if max_ratio < 1:
        raise ConfigError(f"max_ratio must be >= 1, got {max_ratio}")
    counts = d.counts()
    if (counts == 0).any():
        c = int(np.argwhere(counts == 0)[0][0])
        raise DegenerateClassError(f"class {c} has no items")
    cap = math.ceil(max_ratio * counts.min())
    rng = seeded_rng(seed, "subsample")
    keep: list[int] = []
    for c in range(d.n_classes):
        idxs = np.array([i for i, it in enumerate(d.items) if it.label == c])
        if len(idxs) > cap:
            idxs = rng.choice(idxs, size=cap, replace=False)
        keep.extend(int(i) for i in idxs)
    return d.select(sorted(keep))


def balanced_dev_split(d: LabeledDataset, per_class: int, seed: int):
    """(dev, rest): dev holds exactly per_class seeded draws per class."""
    if per_class < 1:
        raise ConfigError(f"per_class must be >= 1, got {per_class}")
    rng = seeded_rng(seed, "devsplit")
    dev_idx: set[int] = set()
    for c in range(d.n_classes):
        idxs = np.array([i for i, it in enumerate(d.items) if it.label == c])
        if len(idxs) < per_class:
            raise SamplingError(
                f"class {c} has {len(idxs)} items, need {per_class} for the dev split"
            )
        dev_idx.update(int(i) for i in rng.choice(idxs, size=per_class, replace=False))
    dev = d.select(sorted(dev_idx))
    rest = d.select([i for i in range(len(d.items)) if i not in dev_idx])
    return dev, rest


def synth_dataset(
    n_classes: int,
    n_items: int,
    t_audio: int,
    t_text: int,
    n_features: int,
    cue_len: int,
    noise: float,
    seed: int,
    min_len_frac: float = 0.7,
    amp_marker: float = 1.0,
    amp_class: float = 1.0,
    amp_slope: float = 0.0,
    n_profiles: int = 1,
    amp_sigma: float = 0.0,
    amp_color: float = 0.0,
    amp_text: float = 0.5,
    amp_text_color: float = 0.0,
) -> LabeledDataset:
    """Planted-cue synthetic corpus.

    Audio: background noise frames with one contiguous cue window whose mean
    is a class pattern amp_marker*u0 + amp_class*z_c; u0 is a shared marker
    direction (so any scorer can find cues) and z_c are class directions, all
    orthonormal. On top of that mean, cue frame j carries amp_slope times a
    stack of zero-mean position profiles (ramp, then higher-order polynomial
    shapes, n_profiles of them), each multiplied by its own class direction:
    the window mean is unchanged, so uniform averaging of the window cannot
    see the profile directions, while scorers that place different weight on
    different window positions can, and each profile rewards a differently
    shaped attention pattern. amp_sigma adds white jitter inside the window,
    demeaned per feature so the window mean is untouched, with an amplitude
    set by label parity (0.4 or 1.0 of amp_sigma): a second-moment signature
    with no preferred direction, so mean pooling sees at most a one-dimensional
    curvature trace of it while a statistics reader gets the level itself. The
    parity bit deliberately complements the coarse text group below: text says
    which pair, the jitter level says which member of the pair.
    amp_color plants a variance signature along a class direction w_c over
    every valid audio frame (demeaned per item); note that a global signature
    on the audio side rewards diffuse audio attention, so it is off by
    default. Text: every valid frame carries a coarse group pattern
    (group = label // 2), so averaging text alone cannot separate classes
    within a group; amp_text_color plants a frame-to-frame variance signature
    over the text frames along one of two style directions keyed by label
    parity (demeaned per item, so the text mean is untouched). The parity
    styles complement the group pattern: the mean says which pair, the
    variance direction says which member, and only a reader with access to
    second moments or frame-selective weighting can use it. Spans label cue
    frames CUE, the rest BG; energy is the per-frame mean squared feature
    value.
    """
    if n_classes < 2:
        raise ConfigError(f"need at least 2 classes, got {n_classes}")
    if not (1 <= cue_len < min(t_audio, t_text)):
        raise ConfigError(
            f"cue_len must be in [1, min(t_audio, t_text)), got {cue_len} with "
            f"t_audio={t_audio}, t_text={t_text}"
        )
    if not 0 < min_len_frac <= 1:
        raise ConfigError(f"min_len_frac must be in (0, 1], got {min_len_frac}")
    if noise < 0:
        raise ConfigError(f"noise must be >= 0, got {noise}")
    if n_profiles < 0:
        raise ConfigError(f"n_profiles must be >= 0, got {n_profiles}")
    n_prof = n_profiles if (amp_slope != 0 and cue_len > 1) else 0
    if n_prof > cue_len - 1:
        raise ConfigError(
            f"a window of length {cue_len} supports at most {cue_len - 1} "
            f"zero-mean profiles, got n_profiles={n_profiles}"
        )
    n_sig = 1 if (amp_sigma != 0 and cue_len > 1) else 0
    n_col = 1 if amp_color != 0 else 0
    n_tc = 2 if amp_text_color != 0 else 0
    n_groups = (n_classes + 1) // 2
    n_dirs = 1 + n_classes * (1 + n_prof + n_col) + n_groups + n_tc
    if n_features < n_dirs:
        raise ConfigError(
            f"n_features={n_features} too small for {n_classes} classes with "
            f"{n_prof} profiles; need >= {n_dirs}"
        )
    rng = seeded_rng(seed, "synth")
    # orthonormal directions: marker, per-class mean, per-class-and-profile,
    # per-class color, per-group
    basis, _ = np.linalg.qr(rng.normal(size=(n_features, n_dirs)))
    u0 = basis[:, 0]
    z = basis[:, 1 : 1 + n_classes].T
    s = basis[:, 1 + n_classes : 1 + n_classes * (1 + n_prof)].T.reshape(
        n_classes, n_prof, n_features
    )
    lo = 1 + n_classes * (1 + n_prof)
    w = basis[:, lo : lo + n_classes * n_col].T
    lo += n_classes * n_col
    g = basis[:, lo : lo + n_groups].T
    r = basis[:, lo + n_groups :].T
    patterns = amp_marker * u0[None, :] + amp_class * z

    # zero-mean position profiles: centered powers, Gram-Schmidt against the
    # constant and each other, scaled to peak 1. The ramp's pairs cancel
    # exactly; higher orders are zero-sum to rounding.
    centered = np.arange(cue_len) - (cue_len - 1) / 2.0
    prev = [np.full(cue_len, 1.0 / math.sqrt(cue_len))]
    profiles = np.zeros((n_prof, cue_len))
    for k in range(n_prof):
        pv = centered ** (k + 1)
        for pu in prev:
            pv = pv - (pv @ pu) * pu
        prev.append(pv / np.linalg.norm(pv))
        profiles[k] = pv / np.max(np.abs(pv))

    items = []
    for i in range(n_items):
        label = int(rng.integers(n_classes))
        la = int(rng.integers(math.ceil(min_len_frac * t_audio), t_audio + 1))
        lt = int(rng.integers(math.ceil(min_len_frac * t_text), t_text + 1))
        la = max(la, cue_len + 1)
        start = int(rng.integers(0, la - cue_len + 1))
        audio = noise * rng.normal(size=(la, n_features))
        audio[start : start + cue_len] += patterns[label]
        for k in range(n_prof):
            audio[start : start + cue_len] += amp_slope * profiles[k][:, None] * s[label, k]
        if n_sig:
            lvl = 0.4 + 0.6 * (label % 2)
            jit = rng.normal(size=(cue_len, n_features))
            jit -= jit.mean(axis=0, keepdims=True)
            audio[start : start + cue_len] += amp_sigma * lvl * jit
        if n_col:
            eta = rng.normal(size=la)
            eta -= eta.mean()
            audio += amp_color * eta[:, None] * w[label]
        text = noise * rng.normal(size=(lt, n_features))
        text += amp_text * g[label // 2]
        if n_tc:
            zeta = rng.normal(size=lt)
            zeta -= zeta.mean()
            text += amp_text_color * zeta[:, None] * r[label % 2]
        spans = []
        if start > 0:
            spans.append({"sym": "BG", "start": 0, "end": start})
        spans.append({"sym": "CUE", "start": start, "end": start + cue_len})
        if start + cue_len < la:
            spans.append({"sym": "BG", "start": start + cue_len, "end": la})
        items.append(
            DatasetItem(
                uid=f"utt{i:05d}",
                audio=audio,
                text=text,
                label=label,
                spans=spans,
                energy=np.mean(audio * audio, axis=1),
            )
        )
    return LabeledDataset(items, n_classes)


def collate(items: list[DatasetItem]):
    """Pad a batch to its own max lengths; returns (audio, text, labels)."""
    if not items:
        raise ContractError("cannot collate an empty batch")
    ta = max(it.audio.shape[0] for it in items)
    tt = max(it.text.shape[0] for it in items)
    ka = items[0].audio.shape[1]
    kt = items[0].text.shape[1]
    B = len(items)
    audio = np.zeros((B, ta, ka))
    amask = np.zeros((B, ta))
    text = np.zeros((B, tt, kt))
    tmask = np.zeros((B, tt))
    labels = np.zeros(B, dtype=np.int64)
    for i, it in enumerate(items):
        na, nt = it.audio.shape[0], it.text.shape[0]
        audio[i, :na] = it.audio
        amask[i, :na] = 1.0
        text[i, :nt] = it.text
        tmask[i, :nt] = 1.0
        labels[i] = it.label
    return SequenceBatch(audio, amask), SequenceBatch(text, tmask), labels


# ---------------------------------------------------------------------------
# optimizer and schedule


@dataclass
class OptimizerState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def create(cls, params: dict[str, np.ndarray], weight_decay: float = 0.01) -> "OptimizerState":
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
            weight_decay=weight_decay,
        )


def adamw_step(
    state: OptimizerState,
    grads: dict[str, np.ndarray],
    params: dict[str, np.ndarray],
    lr: float,
) -> None:
    """One decoupled-weight-decay Adam step, in place. Decay is applied to the
    parameters before the moment update."""
    state.step += 1
    for name in sorted(params):
        p = params[name]
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeError(f"gradient for {name!r} has shape {g.shape}, param {p.shape}")
        K.adamw_update(
            p.reshape(-1),
            np.ascontiguousarray(g, dtype=np.float64).reshape(-1),
            state.m[name].reshape(-1),
            state.v[name].reshape(-1),
            state.step,
            lr,
            state.beta1,
            state.beta2,
            state.eps,
            state.weight_decay,
        )


def lr_at(step: int, total: int, warmup_frac: float, eta: float) -> float:
    """Linear ramp 0 -> eta over warmup_frac*total steps, then cosine to 0."""
    if total <= 0:
        raise ContractError(f"schedule needs total > 0, got {total}")
    if not 0 <= step <= total:
        raise ContractError(f"step {step} outside [0, {total}]")
    warm = warmup_frac * total
    if step < warm:
        return eta * step / warm
    if total == warm:
        return 0.0
    progress = (step - warm) / (total - warm)
    return eta * 0.5 * (1.0 + math.cos(math.pi * progress))


# ---------------------------------------------------------------------------
# unfreezing protocol


@dataclass
class PhaseSpec:
    trainable: str  # one of PHASE_ORDER
    lr: float
    warmup_frac: float = 0.1
    max_epochs: int = 20

    def __post_init__(self):
        if self.trainable not in PHASE_ORDER:
            raise ConfigError(f"unknown trainable set {self.trainable!r}; choose from {PHASE_ORDER}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be > 0, got {self.lr}")
        if not 0 <= self.warmup_frac <= 1:
            raise ConfigError(f"warmup_frac must be in [0, 1], got {self.warmup_frac}")
        if self.max_epochs < 1:
            raise ConfigError(f"max_epochs must be >= 1, got {self.max_epochs}")


@dataclass
class UnfreezeSchedule:
    phases: list[PhaseSpec]
    patience: int = 3
    min_delta: float = 1e-4

    def __post_init__(self):
        if len(self.phases) != 3:
            raise ConfigError(f"the protocol has exactly 3 phases, got {len(self.phases)}")
        got = tuple(p.trainable for p in self.phases)
        if got != PHASE_ORDER:
            raise ConfigError(f"phases must grow {PHASE_ORDER}, got {got}")
        if self.patience < 1:
            raise ConfigError(f"patience must be >= 1, got {self.patience}")
        if self.min_delta < 0:
            raise ConfigError(f"min_delta must be >= 0, got {self.min_delta}")

    @classmethod
    def paper_defaults(cls, max_epochs: int = 20) -> "UnfreezeSchedule":
        """Phase learning rates 1e-5, 3e-6, 1e-6 with warmup fraction 0.1."""
        return cls(
            phases=[
                PhaseSpec("HeadOnly", 1e-5, max_epochs=max_epochs),
                PhaseSpec("UpperLayersPlusHead", 3e-6, max_epochs=max_epochs),
                PhaseSpec("All", 1e-6, max_epochs=max_epochs),
            ]
        )


def trainable_names(model: FusionModel, phase: str) -> set[str]:
    """Which parameter blocks a phase may update."""
    names = set(model.params())
    head = {n for n in names if n.startswith(("head.", "pool_audio.", "pool_text."))}
    if phase == "HeadOnly":
        return head
    if phase == "All":
        return names
    out = set(head)
    for prefix, enc in (("enc_audio", model.enc_audio), ("enc_text", model.enc_text)):
        n_layers = enc.n_layers
        first_upper = n_layers - math.ceil(n_layers / 2)
        for i in range(first_upper, n_layers):
            out.add(f"{prefix}.layer{i}.w")
            out.add(f"{prefix}.layer{i}.b")
    return out


@dataclass
class LogRow:
    epoch: int
    phase: str
    lr: float
    train_loss: float
    dev_macro_f1: float


@dataclass
class TrainingLog:
    rows: list[LogRow] = field(default_factory=list)
    notes: dict[str, str] = field(default_factory=dict)

    def to_csv(self, timestamp: str | None = None) -> str:
        lines = []
        if timestamp:
            lines.append(f"# generated {timestamp}")
        for k in sorted(self.notes):
            lines.append(f"# {k}: {self.notes[k]}")
        lines.append("epoch,phase,lr,train_loss,dev_macro_f1")
        for r in self.rows:
            lines.append(
                f"{r.epoch},{r.phase},{r.lr:.10g},{r.train_loss:.10g},{r.dev_macro_f1:.10g}"
            )
        return "\n".join(lines) + "\n"


def predict_dataset(model: FusionModel, d: LabeledDataset, batch_size: int = 32):
    """Argmax predictions plus per-item audio attention trimmed to valid frames
    (None when the audio pooler is not attentive)."""
    preds = np.zeros(len(d.items), dtype=np.int64)
    attentive = model.clf.pool_audio.kind is PoolKind.ATTENTIVE
    attentions: list[np.ndarray] | None = [] if attentive else None
    for lo in range(0, len(d.items), batch_size):
        chunk = d.items[lo : lo + batch_size]
        audio, text, _ = collate(chunk)
        out = model.forward(audio, text)
        preds[lo : lo + len(chunk)] = np.argmax(out.logits, axis=1)
        if attentive:
            for i, it in enumerate(chunk):
                attentions.append(out.attention_audio[i, :, :, : it.audio.shape[0]].copy())
    return preds, attentions


def evaluate_macro_f1(model: FusionModel, d: LabeledDataset, batch_size: int = 32) -> float:
    preds, _ = predict_dataset(model, d, batch_size)
    labels = np.array([it.label for it in d.items], dtype=np.int64)
    return macro_f1(preds, labels, d.n_classes)


def run_protocol(
    d_train: LabeledDataset,
    d_dev: LabeledDataset,
    model: FusionModel,
    sched: UnfreezeSchedule,
    seed: int,
    batch_size: int = 32,
    gamma: float = 2.0,
    drop_p: float = 0.0,
    dev_metric_fn=None,
) -> TrainingLog:
    """Run the three phases; the model ends at the best-dev weights of the
    last phase. dev_metric_fn(model, d_dev) -> float overrides the default
    dev macro-F1 (used by tests to force metric sequences). drop_p applies
    inverted dropout to the pooled embedding during training steps only;
    without it a redundant attention row can stop receiving gradient once
    the head has learned to read the remaining rows, and decay then parks
    it at uniform weights. A scalar rate applies to every phase; a sequence
    gives one rate per phase."""
    drops = list(drop_p) if isinstance(drop_p, (list, tuple)) else [drop_p] * len(sched.phases)
    if len(drops) != len(sched.phases):
        raise ConfigError(
            f"drop_p needs one rate per phase ({len(sched.phases)}), got {len(drops)}"
        )
    for p in drops:
        if not 0 <= p < 1:
            raise ConfigError(f"drop_p must be in [0, 1), got {p}")
    if len(d_train.items) == 0 or len(d_dev.items) == 0:
        raise ContractError("training and dev sets must be non-empty")
    params = model.params()
    alpha = alpha_from_frequencies(d_train.counts())
    loss_cfg = FocalLossConfig(alpha, gamma)
    metric = dev_metric_fn if dev_metric_fn is not None else evaluate_macro_f1
    log = TrainingLog(
        notes={
            "early_stop": (
                f"metric=dev_macro_f1 patience={sched.patience} min_delta={sched.min_delta}"
            ),
            "optimizer": "adamw wd=0.01 beta1=0.9 beta2=0.999 eps=1e-8",
            **(
                {"dropout": "input_drop=" + "/".join(f"{p:g}" for p in drops)}
                if any(p > 0 for p in drops)
                else {}
            ),
        }
    )
    n = len(d_train.items)
    steps_per_epoch = math.ceil(n / batch_size)
    epoch_no = 0
    for pi, phase in enumerate(sched.phases):
        train_names = sorted(trainable_names(model, phase.trainable))
        train_params = {k: params[k] for k in train_names}
        opt = OptimizerState.create(train_params)
        total_steps = steps_per_epoch * phase.max_epochs
        shuffle_rng = seeded_rng(seed, f"shuffle.phase{pi}")
        drop_rng = seeded_rng(seed, f"dropout.phase{pi}")
        emb_width = params["head.fc0.w"].shape[0]
        best_metric = -np.inf
        best_params = {k: p.copy() for k, p in train_params.items()}
        bad_epochs = 0
        step = 0
        for _ in range(phase.max_epochs):
            epoch_no += 1
            order = shuffle_rng.permutation(n)
            loss_sum = 0.0
            lr = 0.0
            for lo in range(0, n, batch_size):
                batch_items = [d_train.items[i] for i in order[lo : lo + batch_size]]
                audio, text, labels = collate(batch_items)
                tape = GradientTape()
                vs = {
                    k: (tape.leaf(p, name=k) if k in train_params else tape.constant(p))
                    for k, p in params.items()
                }
                drop = None
                if drops[pi] > 0.0:
                    keep = drop_rng.random((len(batch_items), emb_width)) >= drops[pi]
                    drop = keep.astype(np.float64) / (1.0 - drops[pi])
                logits, _, _ = model_forward(
                    tape, audio, text, model.clf, model.enc_audio, model.enc_text, vs,
                    input_drop=drop,
                )
                loss = tape.focal_loss(logits, labels, loss_cfg.alpha, loss_cfg.gamma)
                grads = backward(tape)
                lr = lr_at(step, total_steps, phase.warmup_frac, phase.lr)
                adamw_step(opt, grads, train_params, lr)
                step += 1
                loss_sum += float(loss.value) * len(batch_items)
            dev_value = float(metric(model, d_dev))
            log.rows.append(
                LogRow(
                    epoch=epoch_no,
                    phase=phase.trainable,
                    lr=lr,
                    train_loss=loss_sum / n,
                    dev_macro_f1=dev_value,
                )
            )
            if dev_value > best_metric + sched.min_delta:
                best_metric = dev_value
                bad_epochs = 0
                for k, p in train_params.items():
                    best_params[k] = p.copy()
            else:
                bad_epochs += 1
                if bad_epochs >= sched.patience:
                    break
        for k, p in train_params.items():
            p[...] = best_params[k]
    return log
