"""Pooling operators against independent numpy references, reduction
identities, invariances, and config validation."""

import numpy as np
import pytest

from mqpool.core import SequenceBatch
from mqpool.errors import ConfigError, EmptySequenceError, MaskDomainError, ShapeError
from mqpool.pooling import (
    NAMED_VARIANTS,
    SCORE_SENTINEL,
    PoolingConfig,
    PoolKind,
    attention_weights,
    attentive_config,
    named_config,
    pool_average,
    pool_max,
    pool_mqmha,
    pool_statistics,
    score_frames,
)


def rand_batch(seed, B=3, T=8, K=6):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(B, T, K))
    mask = np.zeros((B, T))
    for b in range(B):
        mask[b, : int(rng.integers(1, T + 1))] = 1.0
    return SequenceBatch(x, mask), rng


# --- reference implementations, plain loops -------------------------------


def ref_stats(x, mask):
    B, T, K = x.shape
    mu = np.zeros((B, K))
    sig = np.zeros((B, K))
    for b in range(B):
        rows = x[b][mask[b] == 1.0]
        mu[b] = rows.mean(axis=0)
        sig[b] = np.sqrt(((rows - mu[b]) ** 2).mean(axis=0))
    return mu, sig


def ref_attentive_stats(x, mask, cfg):
    """Single-query single-head two-layer-scorer pooling, straight numpy."""
    w1 = cfg.scorer_params["w1"][0, 0]
    b1 = cfg.scorer_params["b1"][0, 0]
    w2 = cfg.scorer_params["w2"][0, 0]
    b2 = cfg.scorer_params["b2"][0, 0]
    B, T, K = x.shape
    out = np.zeros((B, 2 * K))
    for b in range(B):
        valid = mask[b] == 1.0
        e = np.maximum(x[b] @ w1 + b1, 0.0) @ w2 + b2
        e = e[valid]
        e -= e.max()
        w = np.exp(e) / np.exp(e).sum()
        rows = x[b][valid]
        mu = w @ rows
        sigma = np.sqrt(np.maximum(w @ (rows * rows) - mu * mu, 0.0))
        out[b] = np.concatenate([mu, sigma])
    return out


def test_max_average_statistics_match_references():
    batch, _ = rand_batch(0)
    x, mask = batch.features, batch.mask
    B, T, K = x.shape

    ref_max = np.array([x[b][mask[b] == 1.0].max(axis=0) for b in range(B)])
    np.testing.assert_array_equal(pool_max(batch).embedding, ref_max)

    mu, sig = ref_stats(x, mask)
    np.testing.assert_allclose(pool_average(batch).embedding, mu, atol=1e-13)
    got = pool_statistics(batch)
    np.testing.assert_allclose(got.embedding[:, :K], mu, atol=1e-13)
    np.testing.assert_allclose(got.embedding[:, K:], sig, atol=1e-13)
    np.testing.assert_allclose(got.mu[:, 0, 0], mu, atol=1e-13)
    np.testing.assert_allclose(got.sigma[:, 0, 0], sig, atol=1e-13)


def test_as_equals_handrolled_attentive_statistics():
    batch, _ = rand_batch(1, K=6)
    cfg = named_config("AS", 6, hidden_size=5, seed=3)
    got = pool_mqmha(batch, cfg)
    want = ref_attentive_stats(batch.features, batch.mask, cfg)
    np.testing.assert_allclose(got.embedding, want, atol=1e-12)


def test_zero_scorer_mqmha_equals_statistics_per_head():
    # uniform attention: each (q, h) block must reproduce plain statistics
    # pooling of that head's feature slice
    batch, _ = rand_batch(2, K=8)
    H, Q = 2, 2
    kp = 8 // H
    cfg = attentive_config(8, Q, H, 1, hidden_size=1, seed=0)
    for k in cfg.scorer_params:
        cfg.scorer_params[k][...] = 0.0
    out = pool_mqmha(batch, cfg)
    for h in range(H):
        sl = batch.features[:, :, h * kp : (h + 1) * kp]
        mu, sig = ref_stats(sl, batch.mask)
        for q in range(Q):
            np.testing.assert_allclose(out.mu[:, q, h], mu, atol=1e-9)
            np.testing.assert_allclose(out.sigma[:, q, h], sig, atol=1e-9)
    # and the attention itself is uniform over valid frames
    n = batch.mask.sum(axis=1)
    expect = batch.mask / n[:, None]
    np.testing.assert_allclose(
        out.attention, np.broadcast_to(expect[:, None, None, :], out.attention.shape), atol=1e-12
    )


@pytest.mark.parametrize("name", sorted(NAMED_VARIANTS))
def test_named_variant_geometry(name):
    q, h, depth = NAMED_VARIANTS[name]
    K = 8
    cfg = named_config(name, K, hidden_size=4, seed=1)
    assert (cfg.queries, cfg.heads, cfg.scorer_depth) == (q, h, depth)
    assert cfg.embedding_size(K) == 2 * q * K
    batch, _ = rand_batch(4, K=K)
    out = pool_mqmha(batch, cfg)
    assert out.embedding.shape == (batch.batch_size, 2 * q * K)
    assert out.attention.shape == (batch.batch_size, q, h, batch.max_frames)
    assert out.mu.shape == (batch.batch_size, q, h, K // h)
    # every attention row is a distribution over valid frames
    sums = out.attention.sum(axis=3)
    np.testing.assert_allclose(sums, 1.0, atol=1e-9)
    pad = np.broadcast_to((batch.mask == 0.0)[:, None, None, :], out.attention.shape)
    assert (out.attention[pad] == 0).all()


def test_named_config_case_insensitive_and_unknown_rejected():
    a = named_config("mqmha_2_2", 8, hidden_size=2, seed=5)
    b = named_config("MQMHA_2_2", 8, hidden_size=2, seed=5)
    np.testing.assert_array_equal(a.scorer_params["w"], b.scorer_params["w"])
    with pytest.raises(ConfigError):
        named_config("MQMHA_3_3", 8, hidden_size=2, seed=5)


def test_embedding_size_law():
    stats = PoolingConfig(kind=PoolKind.STATISTICS)
    avg = PoolingConfig(kind=PoolKind.AVERAGE)
    mx = PoolingConfig(kind=PoolKind.MAX)
    assert avg.embedding_size(10) == 10
    assert mx.embedding_size(10) == 10
    assert stats.embedding_size(10) == 20
    att = attentive_config(10, 3, 2, 1, hidden_size=1, seed=0)
    assert att.embedding_size(10) == 60


def test_padding_invariance_bit_exact():
    batch, rng = rand_batch(5)
    padded = SequenceBatch(
        np.concatenate([batch.features, rng.normal(size=(3, 4, 6))], axis=1),
        np.concatenate([batch.mask, np.zeros((3, 4))], axis=1),
    )
    np.testing.assert_array_equal(pool_max(batch).embedding, pool_max(padded).embedding)
    np.testing.assert_array_equal(pool_average(batch).embedding, pool_average(padded).embedding)
    np.testing.assert_array_equal(
        pool_statistics(batch).embedding, pool_statistics(padded).embedding
    )
    cfg = named_config("MQMHA_2_2", 6, hidden_size=2, seed=2)
    a = pool_mqmha(batch, cfg)
    b = pool_mqmha(padded, cfg)
    np.testing.assert_array_equal(a.embedding, b.embedding)
    np.testing.assert_array_equal(b.attention[:, :, :, batch.max_frames :], 0.0)
    np.testing.assert_array_equal(a.attention, b.attention[:, :, :, : batch.max_frames])


def test_masked_value_invariance_bit_exact():
    batch, rng = rand_batch(6)
    poisoned = SequenceBatch(
        np.where(batch.mask[:, :, None] == 1.0, batch.features, 1e9 * rng.normal(size=batch.features.shape)),
        batch.mask,
    )
    cfg = named_config("AS", 6, hidden_size=3, seed=7)
    for op in (pool_max, pool_average, pool_statistics):
        np.testing.assert_array_equal(op(batch).embedding, op(poisoned).embedding)
    np.testing.assert_array_equal(
        pool_mqmha(batch, cfg).embedding, pool_mqmha(poisoned, cfg).embedding
    )


def test_permutation_of_valid_frames():
    batch, rng = rand_batch(7, B=2, T=6)
    perm_feats = batch.features.copy()
    for b in range(2):
        n = int(batch.mask[b].sum())
        p = rng.permutation(n)
        perm_feats[b, :n] = batch.features[b, :n][p]
    permuted = SequenceBatch(perm_feats, batch.mask)
    np.testing.assert_array_equal(pool_max(batch).embedding, pool_max(permuted).embedding)
    np.testing.assert_allclose(
        pool_average(batch).embedding, pool_average(permuted).embedding, atol=1e-12
    )
    np.testing.assert_allclose(
        pool_statistics(batch).embedding, pool_statistics(permuted).embedding, atol=1e-12
    )
    cfg = named_config("MQMHA_2_2", 6, hidden_size=2, seed=8)
    np.testing.assert_allclose(
        pool_mqmha(batch, cfg).embedding, pool_mqmha(permuted, cfg).embedding, atol=1e-12
    )


def test_score_frames_sentinel_and_softmax():
    batch, _ = rand_batch(9)
    cfg = named_config("MHA", 6, hidden_size=2, seed=4)
    scores = score_frames(batch, cfg)
    masked = batch.mask[:, None, None, :] == 0.0
    assert (scores[np.broadcast_to(masked, scores.shape)] == SCORE_SENTINEL).all()
    assert (scores[~np.broadcast_to(masked, scores.shape)] != SCORE_SENTINEL).all()
    w = attention_weights(scores)
    np.testing.assert_allclose(w.sum(axis=3), 1.0, atol=1e-12)
    assert (w[np.broadcast_to(masked, w.shape)] == 0.0).all()


def test_attention_weights_rejects_bad_input():
    with pytest.raises(ShapeError):
        attention_weights(np.zeros((2, 3, 4)))
    scores = np.full((1, 1, 1, 4), SCORE_SENTINEL)
    with pytest.raises(EmptySequenceError):
        attention_weights(scores)


def test_empty_row_and_bad_mask_rejected():
    x = np.zeros((2, 3, 4))
    empty = SequenceBatch(x, np.array([[1.0, 0.0, 0.0], [0.0, 0.0, 0.0]]))
    with pytest.raises(EmptySequenceError):
        pool_average(empty)
    halves = SequenceBatch(x, np.full((2, 3), 0.5))
    with pytest.raises(MaskDomainError):
        pool_max(halves)


def test_config_validation():
    with pytest.raises(ConfigError):
        PoolingConfig(kind=PoolKind.ATTENTIVE, queries=0)
    with pytest.raises(ConfigError):
        PoolingConfig(kind=PoolKind.ATTENTIVE, scorer_depth=3)
    with pytest.raises(ConfigError):
        PoolingConfig(kind=PoolKind.AVERAGE, queries=2)  # non-attentive, q must be 1
    with pytest.raises(ConfigError):
        PoolingConfig(kind=PoolKind.STATISTICS, scorer_params={"w": np.zeros((1, 1, 2))})
    with pytest.raises(ConfigError):
        PoolingConfig(kind=PoolKind.ATTENTIVE)  # missing scorer params
    with pytest.raises(ConfigError):
        PoolingConfig(
            kind=PoolKind.ATTENTIVE,
            queries=2,
            scorer_params={"w": np.zeros((1, 1, 3)), "b": np.zeros((1, 1))},  # wrong q
        )
    with pytest.raises(ConfigError):
        PoolingConfig(kind=PoolKind.AVERAGE).part_size


def test_heads_must_divide_features():
    with pytest.raises(ConfigError):
        attentive_config(10, 1, 3, 1, hidden_size=1, seed=0)
    with pytest.raises(ConfigError):
        pool_mqmha(rand_batch(0, K=6)[0], attentive_config(8, 1, 2, 1, hidden_size=1, seed=0))


def test_attentive_init_is_seeded_with_zero_biases():
    a = attentive_config(8, 2, 2, 2, hidden_size=4, seed=11)
    b = attentive_config(8, 2, 2, 2, hidden_size=4, seed=11)
    c = attentive_config(8, 2, 2, 2, hidden_size=4, seed=12)
    np.testing.assert_array_equal(a.scorer_params["w1"], b.scorer_params["w1"])
    assert (a.scorer_params["w1"] != c.scorer_params["w1"]).any()
    assert (a.scorer_params["b1"] == 0).all()
    assert (a.scorer_params["b2"] == 0).all()
    # xavier bound for w1: sqrt(6 / (kp + hidden))
    kp = 8 // 2
    limit = np.sqrt(6.0 / (kp + 4))
    assert np.abs(a.scorer_params["w1"]).max() <= limit


def test_config_json_roundtrip_bit_exact():
    cfg = attentive_config(6, 2, 1, 2, hidden_size=3, seed=13)
    back = PoolingConfig.from_json(cfg.to_json())
    assert back.kind is PoolKind.ATTENTIVE
    assert (back.queries, back.heads, back.scorer_depth) == (2, 1, 2)
    for k, v in cfg.scorer_params.items():
        np.testing.assert_array_equal(back.scorer_params[k], v)

    simple = PoolingConfig(kind=PoolKind.STATISTICS)
    back = PoolingConfig.from_json(simple.to_json())
    assert back.kind is PoolKind.STATISTICS

    with pytest.raises(ConfigError):
        PoolingConfig.from_json("{not json")
    with pytest.raises(ConfigError):
        PoolingConfig.from_json('{"kind": "Attentive"}')


def test_pool_mqmha_rejects_non_attentive_config():
    batch, _ = rand_batch(10)
    with pytest.raises(ConfigError):
        pool_mqmha(batch, PoolingConfig(kind=PoolKind.AVERAGE))
    with pytest.raises(ConfigError):
        score_frames(batch, PoolingConfig(kind=PoolKind.STATISTICS))
