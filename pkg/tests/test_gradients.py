"""The finite-difference verifier: it passes on correct adjoints, catches a
planted sign flip, tolerates constant sequences, and reports honestly."""

import numpy as np
import pytest

import mqpool.autodiff
from mqpool.autodiff import GradientTape, backward
from mqpool.core import seeded_rng
from mqpool.errors import ContractError, DeterminismError
from mqpool.gradcheck import finite_diff_check, merge_reports, standard_suite
from mqpool.pooling import attentive_config, mqmha_forward, statistics_forward


def test_square_has_gradient_six_at_three():
    # f(x) = x^2 via a unit-weight squared mean over a single frame
    w = np.ones((1, 1, 1, 1))
    tape = GradientTape()
    x = tape.leaf(np.full((1, 1, 1, 1), 3.0), name="x")
    s2 = tape.weighted_sqmean(tape.constant(w), x)
    tape.reduce_sum(s2)
    g = backward(tape)["x"]
    assert g[0, 0, 0, 0] == pytest.approx(6.0, abs=1e-12)


def test_masked_entries_get_zero_gradient_in_every_operator():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(2, 6, 4))
    mask = np.array([[1, 1, 0, 1, 0, 1], [1, 0, 0, 1, 1, 0]], dtype=float)
    hole = np.broadcast_to((mask == 0.0)[:, :, None], x.shape)

    def grad_of(build):
        tape = GradientTape()
        vx = tape.leaf(x, name="x")
        tape.reduce_sum(build(tape, vx))
        return backward(tape)["x"]

    assert (grad_of(lambda t, v: t.masked_max_pool(v, mask))[hole] == 0).all()
    assert (grad_of(lambda t, v: t.masked_mean_pool(v, mask))[hole] == 0).all()
    assert (grad_of(lambda t, v: statistics_forward(t, v, mask)[0])[hole] == 0).all()

    cfg = attentive_config(4, 2, 2, 1, hidden_size=2, seed=0)

    def mq(t, v):
        params = {k: t.constant(p) for k, p in cfg.scorer_params.items()}
        return mqmha_forward(t, v, mask, cfg, params)[0]

    assert (grad_of(mq)[hole] == 0).all()


def test_mqmha_passes_at_default_eps():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(2, 5, 4))
    mask = np.array([[1, 1, 1, 1, 0], [1, 1, 0, 0, 0]], dtype=float)
    cfg = attentive_config(4, 2, 2, 2, hidden_size=3, seed=1)

    def f(tape, vs):
        params = {k: vs[k] for k in cfg.scorer_params}
        y, _, _, _ = mqmha_forward(tape, vs["x"], mask, cfg, params)
        return tape.mul_const(tape.reduce_sum(y), 1.0 / y.value.size)

    report = finite_diff_check(f, {"x": x, **cfg.scorer_params}, eps=1e-5, tol=1e-4)
    assert report.passed, report.to_csv()
    assert report.max_rel_err < 1e-4


def test_focal_loss_gamma_two_matches_numeric():
    rng = np.random.default_rng(2)
    logits = rng.normal(size=(3, 4))
    labels = rng.integers(0, 4, size=3)
    alpha = rng.uniform(0.5, 2.0, size=4)

    def f(tape, vs):
        return tape.focal_loss(vs["z"], labels, alpha, 2.0)

    report = finite_diff_check(f, {"z": logits}, eps=1e-5, tol=1e-4)
    assert report.passed, report.to_csv()


def test_corrupted_sigma_backward_is_caught(monkeypatch):
    true_bwd = mqpool.autodiff.K.masked_std_bwd

    def flipped(g, x, mask, mu, sigma):
        dx, dmu = true_bwd(g, x, mask, mu, sigma)
        return -dx, -dmu

    monkeypatch.setattr(mqpool.autodiff.K, "masked_std_bwd", flipped)
    rng = np.random.default_rng(3)
    x = rng.normal(size=(2, 5, 3))
    mask = np.ones((2, 5))

    def f(tape, vs):
        y, _, _ = statistics_forward(tape, vs["x"], mask)
        return tape.mul_const(tape.reduce_sum(y), 1.0 / y.value.size)

    report = finite_diff_check(f, {"x": x}, eps=1e-5, tol=1e-4)
    assert not report.passed
    assert report.max_rel_err > 0.1


def test_constant_sequence_still_passes():
    # sigma -> 0: the guarded sqrt keeps adjoints finite and the check green
    x = np.full((2, 4, 3), 0.75)
    mask = np.ones((2, 4))

    def f(tape, vs):
        y, _, _ = statistics_forward(tape, vs["x"], mask)
        return tape.mul_const(tape.reduce_sum(y), 1.0 / 64.0)

    report = finite_diff_check(f, {"x": x}, eps=1e-4, tol=1e-4)
    assert report.passed, report.to_csv()
    for b in report.blocks:
        assert np.isfinite(b.max_rel_err)


def test_nondeterministic_function_raises():
    calls = []

    def f(tape, vs):
        calls.append(1)
        return tape.mul_const(tape.reduce_sum(vs["x"]), float(len(calls)))

    with pytest.raises(DeterminismError):
        finite_diff_check(f, {"x": np.ones(3)})


def test_non_scalar_function_rejected():
    def f(tape, vs):
        return tape.tanh(vs["x"])

    with pytest.raises(ContractError):
        finite_diff_check(f, {"x": np.ones(3)})


def test_small_blocks_swept_fully_large_blocks_sampled():
    big = seeded_rng(0, "test.big").normal(size=600)
    small = np.arange(5.0)

    def f(tape, vs):
        s = tape.concat([vs["big"], vs["small"]], axis=0)
        return tape.mul_const(tape.reduce_sum(tape.tanh(s)), 1e-3)

    report = finite_diff_check(f, {"big": big, "small": small}, eps=1e-4)
    by_name = {b.name: b for b in report.blocks}
    assert by_name["small"].n_checked == 5
    assert by_name["big"].n_checked == 64
    assert report.passed


def test_sampled_coordinates_are_reproducible():
    big = seeded_rng(0, "test.big2").normal(size=600)

    def f(tape, vs):
        return tape.mul_const(tape.reduce_sum(tape.tanh(vs["x"])), 1e-3)

    r1 = finite_diff_check(f, {"x": big}, seed=7)
    r2 = finite_diff_check(f, {"x": big}, seed=7)
    assert r1.blocks[0].max_rel_err == r2.blocks[0].max_rel_err
    assert r1.blocks[0].numeric_norm == r2.blocks[0].numeric_norm


def test_merge_reports_prefixes_block_names():
    def f(tape, vs):
        return tape.reduce_sum(tape.tanh(vs["x"]))

    r1 = finite_diff_check(f, {"x": np.array([0.3])})
    r2 = finite_diff_check(f, {"x": np.array([-0.2])})
    merged = merge_reports([r1, r2], ["a", "b"])
    assert [b.name for b in merged.blocks] == ["a.x", "b.x"]
    assert merged.passed
    with pytest.raises(ContractError):
        merge_reports([], [])


def test_report_csv_has_one_line_per_block():
    def f(tape, vs):
        return tape.reduce_sum(tape.tanh(vs["x"]))

    report = finite_diff_check(f, {"x": np.array([0.1, 0.2])})
    lines = report.to_csv().strip().splitlines()
    assert lines[0] == "block,max_rel_err,status"
    assert len(lines) == 2
    assert lines[1].startswith("x,") and lines[1].endswith(",pass")


def test_standard_suite_single_seed_quick():
    report = standard_suite([0])
    assert report.passed, report.to_csv()
    names = [b.name for b in report.blocks]
    # one entry per operator family, the losses, and the full model
    for fragment in ("max.s0", "avg.s0", "stats.s0", "mqmha.n1", "mqmha.n2",
                     "focal.g0", "focal.g2", "model.s0"):
        assert any(fragment in n for n in names), fragment
