"""Attention-weight analysis: concentration of cumulative mass, correlation
with per-frame energy, and phoneme-salience likelihood ratios.

All measures run on an AttentionDump, the per-utterance weights retained by
an evaluation pass. Multi-query/multi-head weights are aggregated to one
per-frame series w_bar[t] by an arithmetic mean over (q, h); "attended
frames" are the smallest descending-weight prefix reaching a mass threshold.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import Tensor, tensor_read, tensor_write
from .errors import (
    ConfigError,
    ContractError,
    CoverageError,
    DegenerateInputError,
    ShapeError,
    UtteranceNotFoundError,
)

NO_SPAN_SYMBOL = "NONE"


@dataclass
class AttentionEntry:
    uid: str
    weights: np.ndarray  # [Q, H, T_valid]

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.ndim != 3:
            raise ShapeError(
                f"utterance {self.uid!r}: weights must be [Q,H,T], got shape {self.weights.shape}"
            )
        if (self.weights < 0).any():
            raise ContractError(f"utterance {self.uid!r}: negative attention weight")
        sums = self.weights.sum(axis=2)
        if np.abs(sums - 1.0).max() > 1e-9:
            raise ContractError(
                f"utterance {self.uid!r}: attention rows sum to "
                f"{sums.flatten()} rather than 1"
            )

    @property
    def n_frames(self) -> int:
        return self.weights.shape[2]

    def mean_weights(self, aggregate: str = "mean") -> np.ndarray:
        """Aggregate (q, h) weights to one series; mean keeps the sum at 1."""
        if aggregate == "mean":
            return self.weights.mean(axis=(0, 1))
        if aggregate == "max":
            w = self.weights.max(axis=(0, 1))
            return w / w.sum()
        raise ConfigError(f"unknown aggregate {aggregate!r}; use 'mean' or 'max'")


@dataclass
class AttentionDump:
    entries: list[AttentionEntry] = field(default_factory=list)

    def __post_init__(self):
        seen = set()
        for e in self.entries:
            if e.uid in seen:
                raise ContractError(f"duplicate utterance id {e.uid!r} in dump")
            seen.add(e.uid)

    def __len__(self) -> int:
        return len(self.entries)

    def entry(self, uid: str) -> AttentionEntry:
        for e in self.entries:
            if e.uid == uid:
                return e
        raise UtteranceNotFoundError(f"utterance {uid!r} not in dump")


def save_dump(d: AttentionDump, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    index = []
    for e in d.entries:
        path = f"{e.uid}.att.mqt"
        tensor_write(Tensor.from_array(e.weights), out / path)
        index.append({"id": e.uid, "path": path, "dims": list(e.weights.shape)})
    (out / "index.json").write_text(json.dumps(index, indent=2, sort_keys=True))


def load_dump(in_dir) -> AttentionDump:
    src = Path(in_dir)
    try:
        index = json.loads((src / "index.json").read_text())
    except FileNotFoundError as e:
        raise ConfigError(f"no attention dump under {src}") from e
    entries = []
    for rec in index:
        w = tensor_read(src / rec["path"]).to_array()
        # stored as 32-bit; renormalize so the sum-to-1 contract survives
        w = w / w.sum(axis=2, keepdims=True)
        entries.append(AttentionEntry(uid=rec["id"], weights=w))
    return AttentionDump(entries)


# ---------------------------------------------------------------------------
# concentration of attention mass


@dataclass
class ConcentrationReport:
    mass: float
    per_utterance: dict[str, float]  # uid -> f* (fraction of frames)
    corpus_mean_fstar: float
    grid: np.ndarray  # frame fractions 0..1, 1% steps
    curve: np.ndarray  # corpus-mean cumulative mass at each grid point

    def to_csv(self) -> str:
        lines = [f"# corpus_mean_fstar({self.mass:g}) = {self.corpus_mean_fstar:.6f}"]
        lines.append("frame_fraction,cumulative_mass")
        for f, m in zip(self.grid, self.curve):
            lines.append(f"{f:.2f},{m:.6f}")
        return "\n".join(lines) + "\n"


def _descending_cumsum(entry: AttentionEntry, aggregate: str) -> np.ndarray:
    w = entry.mean_weights(aggregate)
    order = np.argsort(-w, kind="stable")
    return np.cumsum(w[order])


def cumulative_mass(d: AttentionDump, mass: float = 0.8, aggregate: str = "mean") -> ConcentrationReport:
    """f* per utterance = smallest fraction of frames whose top weights reach
    the mass threshold; plus the corpus-mean concentration curve."""
    if not 0 < mass < 1:
        raise ConfigError(f"mass must be in (0, 1), got {mass}")
    if len(d) == 0:
        raise ContractError("empty attention dump")
    per = {}
    grid = np.linspace(0.0, 1.0, 101)
    curve = np.zeros_like(grid)
    for e in d.entries:
        cum = _descending_cumsum(e, aggregate)
        t = e.n_frames
        k = int(np.searchsorted(cum, mass - 1e-12) + 1)
        per[e.uid] = min(k, t) / t
        counts = np.minimum((grid * t + 1e-9).astype(int), t)
        curve += np.concatenate([[0.0], cum])[counts]
    curve /= len(d)
    return ConcentrationReport(
        mass=mass,
        per_utterance=per,
        corpus_mean_fstar=float(np.mean(list(per.values()))),
        grid=grid,
        curve=curve,
    )


# ---------------------------------------------------------------------------
# attention-energy correlation


@dataclass
class CorrelationReport:
    mean_rho: float
    std_rho: float  # population std across utterances
    n_used: int
    n_excluded: int  # zero-variance utterances skipped

    def to_csv(self) -> str:
        return (
            "mean_rho,std_rho,n_used,n_excluded\n"
            f"{self.mean_rho:.6f},{self.std_rho:.6f},{self.n_used},{self.n_excluded}\n"
        )


def energy_correlation(
    d: AttentionDump, energy: dict[str, np.ndarray], aggregate: str = "mean"
) -> CorrelationReport:
    """Pearson correlation between w_bar and per-frame energy, per utterance;
    utterances where either series has zero variance are excluded and counted."""
    if len(d) == 0:
        raise ContractError("empty attention dump")
    rhos = []
    excluded = 0
    for e in d.entries:
        if e.uid not in energy:
            raise ConfigError(f"no energy series for utterance {e.uid!r}")
        en = np.asarray(energy[e.uid], dtype=np.float64)
        w = e.mean_weights(aggregate)
        if en.shape != w.shape:
            raise ShapeError(
                f"utterance {e.uid!r}: energy length {en.shape} != frames {w.shape}"
            )
        dw = w - w.mean()
        de = en - en.mean()
        sw = float(np.sqrt((dw * dw).sum()))
        se = float(np.sqrt((de * de).sum()))
        if sw == 0.0 or se == 0.0:
            excluded += 1
            continue
        rhos.append(float((dw * de).sum() / (sw * se)))
    if not rhos:
        raise DegenerateInputError("every utterance had a zero-variance series")
    arr = np.array(rhos)
    return CorrelationReport(
        mean_rho=float(arr.mean()),
        std_rho=float(arr.std()),
        n_used=len(rhos),
        n_excluded=excluded,
    )


# ---------------------------------------------------------------------------
# phoneme salience


@dataclass
class SymbolStats:
    symbol: str
    prior: float  # share of all frames
    attended: float  # share of attended frames
    ratio: float  # smoothed likelihood ratio
    n_frames: int
    n_attended: int


@dataclass
class SalienceReport:
    mass_threshold: float
    symbols: list[SymbolStats]

    def ratio(self, symbol: str) -> float:
        for s in self.symbols:
            if s.symbol == symbol:
                return s.ratio
        raise ConfigError(f"symbol {symbol!r} not present in the salience report")

    def to_csv(self) -> str:
        lines = [f"# mass_threshold = {self.mass_threshold:g}"]
        lines.append("symbol,prior,attended,ratio,n_frames,n_attended")
        for s in self.symbols:
            lines.append(
                f"{s.symbol},{s.prior:.6f},{s.attended:.6f},{s.ratio:.6f},{s.n_frames},{s.n_attended}"
            )
        return "\n".join(lines) + "\n"


def _frame_symbols(n_frames: int, spans) -> list[str]:
    syms = [NO_SPAN_SYMBOL] * n_frames
    for span in spans or []:
        lo = max(0, int(span["start"]))
        hi = min(n_frames, int(span["end"]))
        for t in range(lo, hi):
            if syms[t] == NO_SPAN_SYMBOL:
                syms[t] = str(span["sym"])
    return syms


def attended_frames(entry: AttentionEntry, mass_threshold: float, aggregate: str = "mean") -> np.ndarray:
    """Indices of the smallest descending-weight prefix reaching the threshold."""
    w = entry.mean_weights(aggregate)
    order = np.argsort(-w, kind="stable")
    cum = np.cumsum(w[order])
    k = int(np.searchsorted(cum, mass_threshold - 1e-12) + 1)
    return np.sort(order[: min(k, entry.n_frames)])


def phoneme_salience(
    d: AttentionDump,
    spans: dict[str, list],
    mass_threshold: float = 0.8,
    aggregate: str = "mean",
) -> SalienceReport:
    """ratio(sym) = P(sym | attended) / P(sym | all frames), Laplace add-1."""
    if not 0 < mass_threshold < 1:
        raise ConfigError(f"mass_threshold must be in (0, 1), got {mass_threshold}")
    if len(d) == 0:
        raise ContractError("empty attention dump")
    all_counts: dict[str, int] = {}
    att_counts: dict[str, int] = {}
    covered = 0
    for e in d.entries:
        syms = _frame_symbols(e.n_frames, spans.get(e.uid))
        covered += sum(s != NO_SPAN_SYMBOL for s in syms)
        for s in syms:
            all_counts[s] = all_counts.get(s, 0) + 1
        for t in attended_frames(e, mass_threshold, aggregate):
            s = syms[t]
            att_counts[s] = att_counts.get(s, 0) + 1
    if covered == 0:
        raise CoverageError("no frame of any utterance is covered by a span")
    vocab = sorted(all_counts)
    n_all = sum(all_counts.values())
    n_att = sum(att_counts.values())
    v = len(vocab)
    symbols = []
    for s in vocab:
        ca = all_counts[s]
        ct = att_counts.get(s, 0)
        p_att = (ct + 1.0) / (n_att + v)
        p_all = (ca + 1.0) / (n_all + v)
        symbols.append(
            SymbolStats(
                symbol=s,
                prior=ca / n_all,
                attended=(ct / n_att) if n_att else 0.0,
                ratio=p_att / p_all,
                n_frames=ca,
                n_attended=ct,
            )
        )
    return SalienceReport(mass_threshold=mass_threshold, symbols=symbols)


# ---------------------------------------------------------------------------
# heatmap export


def export_heatmap(d: AttentionDump, uid: str) -> str:
    """CSV with one row per (q, h) weight series plus the aggregated mean row."""
    e = d.entry(uid)
    q, h, t = e.weights.shape
    lines = ["row," + ",".join(f"t{i}" for i in range(t))]
    # .17g keeps parsed row sums at 1 within float rounding
    for qi in range(q):
        for hi in range(h):
            vals = ",".join(f"{x:.17g}" for x in e.weights[qi, hi])
            lines.append(f"q{qi}h{hi},{vals}")
    mean = ",".join(f"{x:.17g}" for x in e.mean_weights())
    lines.append(f"mean,{mean}")
    return "\n".join(lines) + "\n"
