"""Finite-difference verification of tape gradients.

Central differences against the analytic adjoints, block by block. Small
blocks are swept exhaustively; large ones get a seeded coordinate sample,
so a check is reproducible for a given seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import GradientTape, backward
from .core import seeded_rng
from .errors import ContractError, DeterminismError

# Blocks with fewer coordinates than this are swept in full.
FULL_SWEEP_BELOW = 512
SAMPLED_COORDS = 64


@dataclass
class BlockReport:
    name: str
    n_checked: int
    max_rel_err: float
    max_abs_err: float
    analytic_norm: float
    numeric_norm: float
    passed: bool


@dataclass
class GradReport:
    tol: float
    eps: float
    blocks: list[BlockReport] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(b.passed for b in self.blocks)

    @property
    def max_rel_err(self) -> float:
        return max((b.max_rel_err for b in self.blocks), default=0.0)

    def to_csv(self) -> str:
        lines = ["block,max_rel_err,status"]
        for b in self.blocks:
            lines.append(f"{b.name},{b.max_rel_err:.3e},{'pass' if b.passed else 'fail'}")
        return "\n".join(lines) + "\n"


def _evaluate(f, params: dict[str, np.ndarray]) -> float:
    tape = GradientTape()
    vs = {name: tape.leaf(arr, name=name) for name, arr in params.items()}
    out = f(tape, vs)
    if out.value.shape != ():
        raise ContractError(f"checked function returned shape {out.value.shape}, expected scalar")
    return float(out.value)


def merge_reports(reports: list[GradReport], prefixes: list[str]) -> GradReport:
    """One flat report; block names get 'prefix.' prepended."""
    if not reports:
        raise ContractError("nothing to merge")
    merged = GradReport(tol=reports[0].tol, eps=reports[0].eps)
    for rep, prefix in zip(reports, prefixes):
        for b in rep.blocks:
            merged.blocks.append(
                BlockReport(
                    name=f"{prefix}.{b.name}",
                    n_checked=b.n_checked,
                    max_rel_err=b.max_rel_err,
                    max_abs_err=b.max_abs_err,
                    analytic_norm=b.analytic_norm,
                    numeric_norm=b.numeric_norm,
                    passed=b.passed,
                )
            )
    return merged


def standard_suite(seeds, tol: float = 1e-4) -> GradReport:
    """Finite-difference checks for every pooling operator, the focal loss at
    gamma 0 and 2, and the full fusion model, across the given seeds.

    Shapes are drawn small (B<=3, T<=7, K<=8, Q,H<=2) so full coordinate
    sweeps stay fast. Checks use scaled-down mean losses and eps=1e-4 rather
    than the 1e-5 default. Some coordinates have structurally zero gradients
    (attentive score biases under softmax shift invariance; the smaller of
    two valid frames under statistics pooling, where mu+sigma equals the
    max), so central differences there measure only rounding noise of size
    ~|f|*u/(2*eps); that noise gets divided by the 1e-8 floor of the
    relative-error formula. Keeping |f| small and eps at 1e-4 pushes the
    noise well below the floor. The scale leaves relative errors on live
    coordinates unchanged, so a wrong adjoint is still caught.
    """
    from .modeling import FocalLossConfig, FusionClassifier, ToyEncoder, model_forward
    from .pooling import PoolingConfig, PoolKind, attentive_config, mqmha_forward, statistics_forward

    reports: list[GradReport] = []
    prefixes: list[str] = []

    def add(name: str, f, params, eps=1e-4, seed=0):
        reports.append(finite_diff_check(f, params, eps=eps, tol=tol, seed=seed))
        prefixes.append(name)

    def mean_of(tape, y):
        # small loss scale keeps rounding noise on structurally flat
        # coordinates below the rel-error floor of 1e-8
        return tape.mul_const(tape.reduce_sum(y), 1.0 / (64.0 * float(y.value.size)))

    for seed in seeds:
        rng = seeded_rng(seed, "gradcheck.suite")
        B = int(rng.integers(1, 4))
        T = int(rng.integers(2, 8))
        Q = int(rng.integers(1, 3))
        H = int(rng.integers(1, 3))
        kp = int(rng.integers(1, 5))
        Kf = H * kp
        x = rng.normal(size=(B, T, Kf))
        mask = np.ones((B, T))
        for b in range(B):
            valid = int(rng.integers(1, T + 1))
            mask[b, valid:] = 0.0

        def f_max(tape, vs):
            return mean_of(tape, tape.masked_max_pool(vs["x"], mask))

        def f_avg(tape, vs):
            return mean_of(tape, tape.masked_mean_pool(vs["x"], mask))

        def f_stats(tape, vs):
            y, _, _ = statistics_forward(tape, vs["x"], mask)
            return mean_of(tape, y)

        add(f"max.s{seed}", f_max, {"x": x}, seed=seed)
        add(f"avg.s{seed}", f_avg, {"x": x}, seed=seed)
        add(f"stats.s{seed}", f_stats, {"x": x}, seed=seed)

        for depth in (1, 2):
            cfg = attentive_config(Kf, Q, H, depth, hidden_size=3, seed=seed)

            def f_mq(tape, vs, cfg=cfg):
                pv = {k: vs[k] for k in cfg.scorer_params}
                y, _, _, _ = mqmha_forward(tape, vs["x"], mask, cfg, pv)
                return mean_of(tape, y)

            params = {"x": x, **cfg.scorer_params}
            add(f"mqmha.n{depth}.s{seed}", f_mq, params, seed=seed)

        C = int(rng.integers(2, 5))
        labels = rng.integers(0, C, size=B)
        alpha = rng.uniform(0.5, 2.0, size=C)
        logits = rng.normal(size=(B, C))
        for gamma in (0.0, 2.0):

            def f_focal(tape, vs, gamma=gamma):
                return tape.mul_const(tape.focal_loss(vs["z"], labels, alpha, gamma), 1.0 / 64.0)

            add(f"focal.g{gamma:g}.s{seed}", f_focal, {"z": logits}, seed=seed)

        # full model, kept tiny so the sweep is exhaustive
        enc_a = ToyEncoder.create(3, n_outputs=4, n_layers=2, hidden=4, seed=seed, name="enc_audio")
        enc_t = ToyEncoder.create(3, n_outputs=4, n_layers=2, hidden=4, seed=seed + 1, name="enc_text")
        pa = attentive_config(4, 2, 2, 1, hidden_size=2, seed=seed + 2)
        pt = PoolingConfig(kind=PoolKind.STATISTICS)
        clf = FusionClassifier.create(
            pa, pt, pa.embedding_size(4) + pt.embedding_size(4), n_classes=3, hidden=5, seed=seed + 3
        )
        from .core import SequenceBatch

        audio = SequenceBatch(rng.normal(size=(2, 5, 3)), np.array([[1, 1, 1, 1, 0], [1, 1, 1, 0, 0]], dtype=float))
        text = SequenceBatch(rng.normal(size=(2, 3, 3)), np.ones((2, 3)))
        mlabels = rng.integers(0, 3, size=2)
        lcfg = FocalLossConfig(np.ones(3), 2.0)
        from .modeling import model_params

        mp = {k: v.copy() for k, v in model_params(clf, enc_a, enc_t).items()}

        def f_model(tape, vs):
            logits_var, _, _ = model_forward(tape, audio, text, clf, enc_a, enc_t, vs)
            return tape.mul_const(tape.focal_loss(logits_var, mlabels, lcfg.alpha, lcfg.gamma), 1.0 / 64.0)

        add(f"model.s{seed}", f_model, mp, seed=seed)

    return merge_reports(reports, prefixes)


def finite_diff_check(
    f,
    params: dict[str, np.ndarray],
    eps: float = 1e-5,
    tol: float = 1e-4,
    seed: int = 0,
) -> GradReport:
    """Compare tape gradients of f against central differences.

    f takes (tape, vars_dict) and returns a scalar Var built on that tape.
    Relative error per coordinate is |a - n| / max(1e-8, |a| + |n|).
    """
    params = {name: np.asarray(arr, dtype=np.float64) for name, arr in params.items()}

    v1 = _evaluate(f, params)
    v2 = _evaluate(f, params)
    if v1 != v2:
        raise DeterminismError(
            f"function value changed across identical evaluations: {v1!r} vs {v2!r}"
        )

    tape = GradientTape()
    vs = {name: tape.leaf(arr, name=name) for name, arr in params.items()}
    f(tape, vs)
    analytic = backward(tape)

    report = GradReport(tol=tol, eps=eps)
    work = {name: arr.copy() for name, arr in params.items()}
    for name, arr in params.items():
        n = arr.size
        if n < FULL_SWEEP_BELOW:
            idxs = np.arange(n)
        else:
            rng = seeded_rng(seed, f"fdcheck.{name}")
            idxs = rng.choice(n, size=SAMPLED_COORDS, replace=False)
        flat = work[name].reshape(-1)
        ana = analytic[name].reshape(-1)
        max_rel = 0.0
        max_abs = 0.0
        num_sq = 0.0
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + eps
            fp = _evaluate(f, work)
            flat[i] = orig - eps
            fm = _evaluate(f, work)
            flat[i] = orig
            num = (fp - fm) / (2.0 * eps)
            diff = abs(ana[i] - num)
            max_abs = max(max_abs, diff)
            max_rel = max(max_rel, diff / max(1e-8, abs(ana[i]) + abs(num)))
            num_sq += num * num
        report.blocks.append(
            BlockReport(
                name=name,
                n_checked=int(len(idxs)),
                max_rel_err=max_rel,
                max_abs_err=max_abs,
                analytic_norm=float(np.linalg.norm(analytic[name])),
                numeric_norm=float(np.sqrt(num_sq)),
                passed=max_rel <= tol,
            )
        )
    return report
