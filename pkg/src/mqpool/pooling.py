"""Pooling operators over masked frame sequences.

Four kinds: max, average, statistics (mean plus population std), and the
attentive family parameterized by (Q, H, n, p). Every forward pass is the
tape composition in mqmha_forward / statistics_forward run on constants, so
the trainer and the public functions cannot drift apart.

Shapes: features [B, T, K], mask [B, T], attention weights [B, Q, H, T].
The head split partitions the feature axis into H contiguous blocks of
K' = K/H, in order.
"""

from __future__ import annotations

import base64
import enum
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import GradientTape, Var
from .core import SequenceBatch, seeded_rng, validate_batch
from .errors import ConfigError, EmptySequenceError, ShapeError

# Masked positions in a score tensor carry this value instead of -inf so the
# tensor stays finite; the softmax zeroes those slots exactly.
SCORE_SENTINEL = float(np.finfo(np.float64).min)


class PoolKind(enum.Enum):
    MAX = "Max"
    AVERAGE = "Average"
    STATISTICS = "Statistics"
    ATTENTIVE = "Attentive"


# name -> (queries, heads, scorer_depth)
NAMED_VARIANTS = {
    "AS": (1, 1, 2),
    "SA": (2, 1, 2),
    "MHA": (1, 2, 1),
    "MQMHA_2_2": (2, 2, 1),
    "MQMHA_2_4": (2, 4, 1),
    "MQMHA_4_4": (4, 4, 1),
}

_PARAM_KEYS = {1: ("w", "b"), 2: ("w1", "b1", "w2", "b2")}


@dataclass
class PoolingConfig:
    kind: PoolKind
    queries: int = 1
    heads: int = 1
    scorer_depth: int = 1
    hidden_size: int = 1
    seed: int = 0
    scorer_params: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.queries < 1 or self.heads < 1:
            raise ConfigError(f"queries and heads must be >= 1, got {self.queries}, {self.heads}")
        if self.scorer_depth not in (1, 2):
            raise ConfigError(f"scorer_depth must be 1 or 2, got {self.scorer_depth}")
        if self.hidden_size < 1:
            raise ConfigError(f"hidden_size must be >= 1, got {self.hidden_size}")
        if self.kind is not PoolKind.ATTENTIVE:
            if self.queries != 1 or self.heads != 1:
                raise ConfigError(f"{self.kind.value} pooling requires queries=heads=1")
            if self.scorer_params:
                raise ConfigError(f"{self.kind.value} pooling takes no scorer parameters")
            return
        expected = _PARAM_KEYS[self.scorer_depth]
        if set(self.scorer_params) != set(expected):
            raise ConfigError(
                f"scorer_depth={self.scorer_depth} needs params {sorted(expected)}, "
                f"got {sorted(self.scorer_params)}"
            )
        self.scorer_params = {
            k: np.ascontiguousarray(v, dtype=np.float64) for k, v in self.scorer_params.items()
        }
        q, h, p = self.queries, self.heads, self.hidden_size
        kp = self.part_size
        if self.scorer_depth == 1:
            shapes = {"w": (q, h, kp), "b": (q, h)}
        else:
            shapes = {"w1": (q, h, kp, p), "b1": (q, h, p), "w2": (q, h, p), "b2": (q, h)}
        for name, want in shapes.items():
            got = self.scorer_params[name].shape
            if got != want:
                raise ConfigError(f"scorer param {name!r} has shape {got}, expected {want}")

    @property
    def part_size(self) -> int:
        """K' = K/H, read off the scorer weights."""
        if self.kind is not PoolKind.ATTENTIVE:
            raise ConfigError(f"{self.kind.value} pooling has no head parts")
        key = "w" if self.scorer_depth == 1 else "w1"
        arr = self.scorer_params[key]
        if arr.ndim < 3:
            raise ConfigError(f"scorer param {key!r} has {arr.ndim} axes, expected at least 3")
        return int(arr.shape[2])

    @property
    def feature_size(self) -> int:
        return self.part_size * self.heads

    def embedding_size(self, n_features: int) -> int:
        if self.kind is PoolKind.MAX or self.kind is PoolKind.AVERAGE:
            return n_features
        if self.kind is PoolKind.STATISTICS:
            return 2 * n_features
        return 2 * self.queries * n_features

    def to_json(self) -> str:
        doc = {
            "kind": self.kind.value,
            "queries": self.queries,
            "heads": self.heads,
            "scorer_depth": self.scorer_depth,
            "hidden_size": self.hidden_size,
            "seed": self.seed,
            "scorer_params": {
                name: {
                    "dims": list(arr.shape),
                    "data": base64.b64encode(arr.astype("<f8").tobytes()).decode("ascii"),
                }
                for name, arr in sorted(self.scorer_params.items())
            },
        }
        return json.dumps(doc, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "PoolingConfig":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"pooling config is not valid JSON: {e}") from e
        try:
            kind = PoolKind(doc["kind"])
            params = {}
            for name, entry in doc["scorer_params"].items():
                raw = base64.b64decode(entry["data"])
                arr = np.frombuffer(raw, dtype="<f8").astype(np.float64)
                params[name] = arr.reshape(entry["dims"])
            return cls(
                kind=kind,
                queries=int(doc["queries"]),
                heads=int(doc["heads"]),
                scorer_depth=int(doc["scorer_depth"]),
                hidden_size=int(doc["hidden_size"]),
                seed=int(doc["seed"]),
                scorer_params=params,
            )
        except (KeyError, ValueError, TypeError) as e:
            raise ConfigError(f"malformed pooling config: {e}") from e


@dataclass
class PooledOutput:
    """embedding [B, D]; attention [B, Q, H, T] for attentive pooling only;
    mu / sigma [B, Q, H, K'] where the operator defines them."""

    embedding: np.ndarray
    attention: np.ndarray | None = None
    mu: np.ndarray | None = None
    sigma: np.ndarray | None = None


def xavier_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def attentive_config(
    n_features: int,
    queries: int,
    heads: int,
    scorer_depth: int,
    hidden_size: int,
    seed: int,
) -> PoolingConfig:
    """Build an attentive config with Xavier-uniform weights and zero biases."""
    if heads < 1 or n_features % heads != 0:
        raise ConfigError(f"heads={heads} does not divide feature size {n_features}")
    kp = n_features // heads
    rng = seeded_rng(seed, "pooling.init")
    if scorer_depth == 1:
        params = {
            "w": xavier_uniform(rng, (queries, heads, kp), kp, 1),
            "b": np.zeros((queries, heads)),
        }
    elif scorer_depth == 2:
        p = hidden_size
        params = {
            "w1": xavier_uniform(rng, (queries, heads, kp, p), kp, p),
            "b1": np.zeros((queries, heads, p)),
            "w2": xavier_uniform(rng, (queries, heads, p), p, 1),
            "b2": np.zeros((queries, heads)),
        }
    else:
        raise ConfigError(f"scorer_depth must be 1 or 2, got {scorer_depth}")
    return PoolingConfig(
        kind=PoolKind.ATTENTIVE,
        queries=queries,
        heads=heads,
        scorer_depth=scorer_depth,
        hidden_size=hidden_size,
        seed=seed,
        scorer_params=params,
    )


def named_config(name: str, n_features: int, hidden_size: int, seed: int) -> PoolingConfig:
    """AS, SA, MHA, MQMHA_2_2, MQMHA_2_4, or MQMHA_4_4 for a given K."""
    key = name.upper()
    if key not in NAMED_VARIANTS:
        raise ConfigError(f"unknown pooling variant {name!r}; choose from {sorted(NAMED_VARIANTS)}")
    q, h, n = NAMED_VARIANTS[key]
    return attentive_config(n_features, q, h, n, hidden_size, seed)


# ---------------------------------------------------------------------------
# tape compositions; the public pool_* functions run these on constants


def statistics_forward(tape: GradientTape, x: Var, mask: np.ndarray):
    mu = tape.masked_mean_pool(x, mask)
    sigma = tape.masked_std_pool(x, mu, mask)
    y = tape.concat([mu, sigma], axis=1)
    return y, mu, sigma


def scores_forward(tape: GradientTape, xh: Var, cfg: PoolingConfig, params: dict[str, Var]) -> Var:
    if cfg.scorer_depth == 1:
        return tape.scores_linear(xh, params["w"], params["b"])
    z = tape.scores_hidden(xh, params["w1"], params["b1"])
    return tape.scores_out(tape.relu(z), params["w2"], params["b2"])


def mqmha_forward(
    tape: GradientTape, x: Var, mask: np.ndarray, cfg: PoolingConfig, params: dict[str, Var]
):
    """Full attentive pooling pass; returns (y, weights, mu, sigma) Vars."""
    xh = tape.split_heads(x, cfg.heads)
    e = scores_forward(tape, xh, cfg, params)
    w = tape.masked_softmax(e, mask)
    mu = tape.weighted_mean(w, xh)
    s2 = tape.weighted_sqmean(w, xh)
    sigma = tape.stats_sigma(s2, mu)
    y = tape.stats_concat(mu, sigma)
    return y, w, mu, sigma


def _check_attentive(batch: SequenceBatch, cfg: PoolingConfig) -> None:
    if cfg.kind is not PoolKind.ATTENTIVE:
        raise ConfigError(f"expected an Attentive config, got kind={cfg.kind.value}")
    if cfg.feature_size != batch.feature_size:
        raise ConfigError(
            f"config built for feature size {cfg.feature_size}, batch has {batch.feature_size}"
        )


# ---------------------------------------------------------------------------
# public operators


def pool_max(batch: SequenceBatch) -> PooledOutput:
    """Per-feature max over valid frames; masked frames are excluded outright."""
    validate_batch(batch)
    tape = GradientTape()
    y = tape.masked_max_pool(tape.constant(batch.features), batch.mask)
    return PooledOutput(embedding=y.value)


def pool_average(batch: SequenceBatch) -> PooledOutput:
    validate_batch(batch)
    tape = GradientTape()
    mu = tape.masked_mean_pool(tape.constant(batch.features), batch.mask)
    B, K = mu.value.shape
    return PooledOutput(embedding=mu.value, mu=mu.value.reshape(B, 1, 1, K))


def pool_statistics(batch: SequenceBatch) -> PooledOutput:
    """Masked mean concatenated with masked population standard deviation."""
    validate_batch(batch)
    tape = GradientTape()
    y, mu, sigma = statistics_forward(tape, tape.constant(batch.features), batch.mask)
    B, K = mu.value.shape
    return PooledOutput(
        embedding=y.value,
        mu=mu.value.reshape(B, 1, 1, K),
        sigma=sigma.value.reshape(B, 1, 1, K),
    )


def score_frames(batch: SequenceBatch, cfg: PoolingConfig) -> np.ndarray:
    """Raw scorer outputs [B, Q, H, T], sentinel-valued at masked positions."""
    validate_batch(batch)
    _check_attentive(batch, cfg)
    tape = GradientTape()
    xh = tape.split_heads(tape.constant(batch.features), cfg.heads)
    params = {k: tape.constant(v) for k, v in cfg.scorer_params.items()}
    e = scores_forward(tape, xh, cfg, params)
    return np.where(batch.mask[:, None, None, :] == 1.0, e.value, SCORE_SENTINEL)


def attention_weights(scores: np.ndarray) -> np.ndarray:
    """Softmax over frames per (b, q, h); sentinel positions come out exactly 0."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 4:
        raise ShapeError(f"scores must be [B,Q,H,T], got shape {scores.shape}")
    valid = scores != SCORE_SENTINEL
    alive = valid.any(axis=3)
    if not alive.all():
        b, q, h = np.argwhere(~alive)[0]
        raise EmptySequenceError(f"all scores are the sentinel for (b={b}, q={q}, h={h})")
    neg = np.where(valid, scores, -np.inf)
    m = neg.max(axis=3, keepdims=True)
    ex = np.exp(neg - m)
    w = ex / ex.sum(axis=3, keepdims=True)
    return np.where(valid, w, 0.0)


def pool_mqmha(batch: SequenceBatch, cfg: PoolingConfig) -> PooledOutput:
    """Attentive pooling: weighted mean and std per (q, h), concatenated to [B, 2QK]."""
    validate_batch(batch)
    _check_attentive(batch, cfg)
    tape = GradientTape()
    params = {k: tape.constant(v) for k, v in cfg.scorer_params.items()}
    y, w, mu, sigma = mqmha_forward(tape, tape.constant(batch.features), batch.mask, cfg, params)
    return PooledOutput(embedding=y.value, attention=w.value, mu=mu.value, sigma=sigma.value)
