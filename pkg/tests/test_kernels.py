"""Backend parity: the numba kernels must agree with the numpy reference.

Every forward/backward pair is exercised on random shapes with random
(non-prefix) masks. The two backends reduce in different orders, so parity
is checked at 1e-12 rather than bit-exactly; mask invariance, by contrast,
must hold bit-exactly within each backend.
"""

import numpy as np
import pytest

pytest.importorskip("numba")

from mqpool.kernels import backend_name, np_kernels, nb_kernels  # noqa: E402

BACKENDS = {"numpy": np_kernels, "numba": nb_kernels}


def rand_case(seed, B=3, T=9, K=8, Q=2, H=2, P=3):
    rng = np.random.default_rng(seed)
    kp = K // H
    x = rng.normal(size=(B, T, K))
    # arbitrary mask patterns, at least one valid frame per row
    mask = (rng.random((B, T)) < 0.7).astype(np.float64)
    for b in range(B):
        if mask[b].sum() == 0:
            mask[b, int(rng.integers(T))] = 1.0
    xh = np.where(mask[:, :, None] == 1.0, x, 0.0).reshape(B, T, H, kp)
    e = rng.normal(size=(B, Q, H, T))
    return rng, x, mask, xh, e


def close(a, b, tol=1e-12):
    np.testing.assert_allclose(a, b, rtol=tol, atol=tol)


@pytest.mark.parametrize("seed", range(5))
def test_static_pool_parity(seed):
    rng, x, mask, _, _ = rand_case(seed)
    y_np, arg_np = np_kernels.masked_max_fwd(x, mask)
    y_nb, arg_nb = nb_kernels.masked_max_fwd(x, mask)
    np.testing.assert_array_equal(y_np, y_nb)
    np.testing.assert_array_equal(arg_np, arg_nb)
    g = rng.normal(size=y_np.shape)
    np.testing.assert_array_equal(
        np_kernels.masked_max_bwd(g, arg_np, x.shape[1]),
        nb_kernels.masked_max_bwd(g, arg_nb, x.shape[1]),
    )

    mu_np = np_kernels.masked_mean_fwd(x, mask)
    mu_nb = nb_kernels.masked_mean_fwd(x, mask)
    close(mu_np, mu_nb)
    close(np_kernels.masked_mean_bwd(g, mask), nb_kernels.masked_mean_bwd(g, mask))

    sig_np = np_kernels.masked_std_fwd(x, mask, mu_np)
    sig_nb = nb_kernels.masked_std_fwd(x, mask, mu_np)
    close(sig_np, sig_nb)
    dx_np, dmu_np = np_kernels.masked_std_bwd(g, x, mask, mu_np, sig_np)
    dx_nb, dmu_nb = nb_kernels.masked_std_bwd(g, x, mask, mu_np, sig_np)
    close(dx_np, dx_nb)
    close(dmu_np, dmu_nb)


@pytest.mark.parametrize("seed", range(5))
def test_scorer_parity(seed):
    rng, x, mask, xh, e = rand_case(seed)
    B, T, H, kp = xh.shape
    Q, P = 2, 3
    w = rng.normal(size=(Q, H, kp))
    b = rng.normal(size=(Q, H))
    close(np_kernels.scores_linear_fwd(xh, w, b), nb_kernels.scores_linear_fwd(xh, w, b))
    g = rng.normal(size=(B, Q, H, T))
    for a_np, a_nb in zip(
        np_kernels.scores_linear_bwd(g, xh, w), nb_kernels.scores_linear_bwd(g, xh, w)
    ):
        close(a_np, a_nb)

    w1 = rng.normal(size=(Q, H, kp, P))
    b1 = rng.normal(size=(Q, H, P))
    z_np = np_kernels.scores_hidden_fwd(xh, w1, b1)
    close(z_np, nb_kernels.scores_hidden_fwd(xh, w1, b1))
    gz = rng.normal(size=z_np.shape)
    for a_np, a_nb in zip(
        np_kernels.scores_hidden_bwd(gz, xh, w1), nb_kernels.scores_hidden_bwd(gz, xh, w1)
    ):
        close(a_np, a_nb)

    w2 = rng.normal(size=(Q, H, P))
    b2 = rng.normal(size=(Q, H))
    a = np.maximum(z_np, 0.0)
    close(np_kernels.scores_out_fwd(a, w2, b2), nb_kernels.scores_out_fwd(a, w2, b2))
    for a_np, a_nb in zip(
        np_kernels.scores_out_bwd(g, a, w2), nb_kernels.scores_out_bwd(g, a, w2)
    ):
        close(a_np, a_nb)


@pytest.mark.parametrize("seed", range(5))
def test_softmax_and_weighted_stats_parity(seed):
    rng, x, mask, xh, e = rand_case(seed)
    w_np = np_kernels.masked_softmax_fwd(e, mask)
    w_nb = nb_kernels.masked_softmax_fwd(e, mask)
    close(w_np, w_nb)
    # masked slots are exactly zero in both
    masked = mask[:, None, None, :] == 0.0
    assert (w_np[np.broadcast_to(masked, w_np.shape)] == 0.0).all()
    assert (w_nb[np.broadcast_to(masked, w_nb.shape)] == 0.0).all()

    g = rng.normal(size=w_np.shape)
    close(np_kernels.masked_softmax_bwd(g, w_np), nb_kernels.masked_softmax_bwd(g, w_np))

    close(np_kernels.weighted_mean_fwd(w_np, xh), nb_kernels.weighted_mean_fwd(w_np, xh))
    gm = rng.normal(size=(x.shape[0], 2, 2, xh.shape[3]))
    for a_np, a_nb in zip(
        np_kernels.weighted_mean_bwd(gm, w_np, xh), nb_kernels.weighted_mean_bwd(gm, w_np, xh)
    ):
        close(a_np, a_nb)
    close(np_kernels.weighted_sqmean_fwd(w_np, xh), nb_kernels.weighted_sqmean_fwd(w_np, xh))
    for a_np, a_nb in zip(
        np_kernels.weighted_sqmean_bwd(gm, w_np, xh),
        nb_kernels.weighted_sqmean_bwd(gm, w_np, xh),
    ):
        close(a_np, a_nb)


def test_adamw_parity():
    rng = np.random.default_rng(11)
    n = 257
    p0 = rng.normal(size=n)
    g = rng.normal(size=n)
    m0 = rng.normal(size=n) * 0.1
    v0 = np.abs(rng.normal(size=n)) * 0.01
    states = {}
    for name, mod in BACKENDS.items():
        p, m, v = p0.copy(), m0.copy(), v0.copy()
        for step in range(1, 6):
            mod.adamw_update(p, g, m, v, step, 1e-3, 0.9, 0.999, 1e-8, 0.01)
        states[name] = (p, m, v)
    for a, b in zip(states["numpy"], states["numba"]):
        close(a, b, tol=1e-14)


def test_adamw_decays_before_moment_update():
    # one step from zero moments against the closed form
    p = np.array([2.0])
    g = np.array([0.5])
    m = np.zeros(1)
    v = np.zeros(1)
    lr, b1, b2, eps, wd = 0.1, 0.9, 0.999, 1e-8, 0.01
    np_kernels.adamw_update(p, g, m, v, 1, lr, b1, b2, eps, wd)
    expect = 2.0 * (1 - lr * wd)
    mhat = (1 - b1) * 0.5 / (1 - b1)
    vhat = (1 - b2) * 0.25 / (1 - b2)
    expect -= lr * mhat / (np.sqrt(vhat) + eps)
    assert abs(p[0] - expect) < 1e-15


@pytest.mark.parametrize("mod_name", list(BACKENDS))
def test_masked_frames_never_contribute(mod_name):
    mod = BACKENDS[mod_name]
    rng, x, mask, xh, e = rand_case(1234)
    x2 = x.copy()
    e2 = e.copy()
    x2[mask == 0.0] += rng.normal(size=x2[mask == 0.0].shape) * 1e6
    e2[np.broadcast_to((mask == 0.0)[:, None, None, :], e2.shape)] = 1e9

    y1, a1 = mod.masked_max_fwd(x, mask)
    y2, a2 = mod.masked_max_fwd(x2, mask)
    np.testing.assert_array_equal(y1, y2)
    np.testing.assert_array_equal(a1, a2)
    np.testing.assert_array_equal(mod.masked_mean_fwd(x, mask), mod.masked_mean_fwd(x2, mask))
    mu = mod.masked_mean_fwd(x, mask)
    np.testing.assert_array_equal(
        mod.masked_std_fwd(x, mask, mu), mod.masked_std_fwd(x2, mask, mu)
    )
    np.testing.assert_array_equal(
        mod.masked_softmax_fwd(e, mask), mod.masked_softmax_fwd(e2, mask)
    )


def test_max_tie_breaks_to_lowest_index():
    x = np.array([[[1.0], [3.0], [3.0], [2.0]]])
    mask = np.ones((1, 4))
    for mod in BACKENDS.values():
        y, arg = mod.masked_max_fwd(x, mask)
        assert y[0, 0] == 3.0
        assert arg[0, 0] == 1

    # the leading tie is masked out: next index wins
    mask2 = np.array([[0.0, 0.0, 1.0, 1.0]])
    for mod in BACKENDS.values():
        y, arg = mod.masked_max_fwd(x, mask2)
        assert arg[0, 0] == 2


def test_active_backend_is_one_of_the_two():
    assert backend_name() in BACKENDS
