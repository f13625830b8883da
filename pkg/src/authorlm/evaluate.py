"""Perplexity measurement and minimum-perplexity author classification,
with the batch evaluation protocols built on top of them: accuracy
versus number of test sentences, and single-sentence confusion
matrices.

Candidates are scorer objects exposing ``score(stems) -> (sum_log10,
n_scored, ...)``; each candidate encodes text through its own
vocabulary, so perplexities stay comparable as proper probabilities
over each model's event space.  Multi-sentence trials pool log
probabilities and scored-word counts into a single perplexity rather
than averaging per-sentence perplexities.
"""

from __future__ import annotations

import warnings
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Mapping, Protocol, Sequence

import numpy as np

from .errors import DataError, NoScoreableWordsError


class SentenceScorerLike(Protocol):
    def score(self, stems: Sequence[str]) -> tuple:  # (sum_log10, n_scored, ...)
        ...


def perplexity(sum_log10: float, n_scored: int) -> float:
    """Per-word perplexity from pooled log10 probability mass."""
    if n_scored < 1:
        raise NoScoreableWordsError("no scoreable words")
    return float(10.0 ** (-sum_log10 / n_scored))


@dataclass(frozen=True)
class ClassificationTrial:
    """Outcome of one minimum-perplexity decision."""

    true_author: str | None
    predicted_author: str
    n_sentences: int
    perplexities: Mapping[str, float]
    tie: bool

    @property
    def correct(self) -> bool:
        return self.true_author is not None and self.predicted_author == self.true_author


def _decide(pooled: Mapping[str, tuple[float, int]], n_sentences: int,
            true_author: str | None) -> ClassificationTrial:
    """Pick the candidate with minimum pooled perplexity.

    Candidates that scored zero words get infinite perplexity; ties
    break to the first author in sorted order and are flagged.
    """
    ppls = {}
    any_scored = False
    for author in sorted(pooled):
        s, n = pooled[author]
        if n >= 1:
            ppls[author] = perplexity(s, n)
            any_scored = True
        else:
            ppls[author] = float("inf")
    if not any_scored:
        raise NoScoreableWordsError(
            "no scoreable words under any candidate model"
        )
    best = min(ppls.values())
    winners = [a for a in sorted(ppls) if ppls[a] == best]
    return ClassificationTrial(
        true_author=true_author,
        predicted_author=winners[0],
        n_sentences=n_sentences,
        perplexities=ppls,
        tie=len(winners) > 1,
    )


def classify(
    sentences: Sequence[Sequence[str]],
    candidates: Mapping[str, SentenceScorerLike],
    true_author: str | None = None,
) -> ClassificationTrial:
    """Attribute stemmed sentences to the candidate with lowest pooled
    perplexity."""
    if len(candidates) < 2:
        raise ValueError("classification needs at least 2 candidates")
    if not sentences:
        raise NoScoreableWordsError("no sentences to classify")
    pooled = {}
    for author, scorer in candidates.items():
        total, count = 0.0, 0
        for sent in sentences:
            result = scorer.score(sent)
            total += result[0]
            count += result[1]
        pooled[author] = (total, count)
    return _decide(pooled, len(sentences), true_author)


def score_table(
    sentences: Sequence[Sequence[str]],
    candidates: Mapping[str, SentenceScorerLike],
) -> dict[str, np.ndarray]:
    """Per-sentence (sum_log10, n_scored) for every candidate.

    Precomputing this once makes the sampling-heavy protocols below
    cheap: any subset of sentences classifies by summing rows.
    """
    out = {}
    for author, scorer in candidates.items():
        rows = np.zeros((len(sentences), 2))
        for i, sent in enumerate(sentences):
            result = scorer.score(sent)
            rows[i, 0] = result[0]
            rows[i, 1] = result[1]
        out[author] = rows
    return out


def _classify_rows(tables: Mapping[str, np.ndarray], idx: np.ndarray,
                   true_author: str | None) -> ClassificationTrial:
    pooled = {
        author: (float(rows[idx, 0].sum()), int(rows[idx, 1].sum()))
        for author, rows in tables.items()
    }
    return _decide(pooled, len(idx), true_author)


@dataclass(frozen=True)
class AccuracyPoint:
    n_sentences: int
    mean: float
    std: float


@dataclass
class AccuracyCurve:
    """Accuracy versus number of sampled test sentences.

    ``per_author`` holds one curve per evaluated author; ``mean_curve``
    averages the per-author means, with the std taken across authors.
    Per-author stds are across trials.
    """

    model_kind: str
    trials: int
    per_author: dict[str, list[AccuracyPoint]]
    mean_curve: list[AccuracyPoint]


def _std(values: Iterable[float]) -> float:
    arr = np.asarray(list(values), dtype=float)
    if arr.size <= 1:
        return 0.0
    return float(arr.std(ddof=1))


def _aliased_authors(alias_groups: Sequence[Sequence[str]]) -> set[str]:
    return {a for group in alias_groups for a in group}


def accuracy_curve(
    test_sets: Mapping[str, Sequence[Sequence[str]]],
    candidates: Mapping[str, SentenceScorerLike],
    s_range: Sequence[int] = tuple(range(1, 21)),
    trials: int = 100,
    seed: int = 0,
    alias_groups: Sequence[Sequence[str]] = (),
    model_kind: str = "",
) -> AccuracyCurve:
    """Monte-Carlo accuracy at each test-text length.

    For every author and every s in ``s_range``, ``trials`` independent
    trials each sample s test sentences without replacement and
    classify them against all candidates.  Authors that share an
    identity (alias groups) stay in the candidate pool but are excluded
    from the accuracy denominator.  Each trial's RNG stream derives
    from (seed, author, s, trial), so results do not depend on loop
    order.  Authors with fewer sentences than max(s_range) are skipped
    with a warning.
    """
    if len(candidates) < 2:
        raise ValueError("classification needs at least 2 candidates")
    excluded = _aliased_authors(alias_groups)
    authors = sorted(a for a in test_sets if a not in excluded)
    s_values = sorted(set(int(s) for s in s_range))
    if not s_values or s_values[0] < 1:
        raise ValueError("s_range values must be >= 1")

    per_author: dict[str, list[AccuracyPoint]] = {}
    for author_idx, author in enumerate(sorted(test_sets)):
        if author in excluded:
            continue
        sentences = test_sets[author]
        if len(sentences) < max(s_values):
            warnings.warn(
                f"test set for {author!r} has {len(sentences)} sentences, "
                f"fewer than max s={max(s_values)}; skipped",
                stacklevel=2,
            )
            continue
        tables = score_table(sentences, candidates)
        points = []
        for s in s_values:
            hits = []
            for trial in range(trials):
                rng = np.random.default_rng([seed, author_idx, s, trial])
                idx = rng.choice(len(sentences), size=s, replace=False)
                outcome = _classify_rows(tables, idx, author)
                hits.append(1.0 if outcome.correct else 0.0)
            points.append(AccuracyPoint(s, float(np.mean(hits)), _std(hits)))
        per_author[author] = points

    mean_curve = []
    if per_author:
        for j, s in enumerate(s_values):
            means = [per_author[a][j].mean for a in sorted(per_author)]
            mean_curve.append(AccuracyPoint(s, float(np.mean(means)), _std(means)))
    return AccuracyCurve(
        model_kind=model_kind,
        trials=trials,
        per_author=per_author,
        mean_curve=mean_curve,
    )


@dataclass
class ConfusionMatrix:
    """Log10 single-sentence assignment probabilities.

    Entry (i, j) is log10 of the fraction of trials with true author i
    classified as candidate j; zero counts are floored at
    log10(1/(trials+1)) so the matrix stays plottable.  ``counts``
    keeps the raw tallies, whose rows sum to ``trials``.
    """

    true_authors: list[str]
    candidates: list[str]
    counts: np.ndarray
    log10: np.ndarray
    trials: int
    floor: float


def confusion_matrix(
    test_sets: Mapping[str, Sequence[Sequence[str]]],
    candidates: Mapping[str, SentenceScorerLike],
    trials: int = 100,
    seed: int = 0,
    model_kind: str = "",
) -> ConfusionMatrix:
    """Single-sentence confusion tallies over all authors.

    Each trial draws one test sentence; draws that no candidate can
    score (for example, shorter than the scoring window) are redrawn a
    bounded number of times.
    """
    if len(candidates) < 2:
        raise ValueError("classification needs at least 2 candidates")
    rows = sorted(test_sets)
    cols = sorted(candidates)
    counts = np.zeros((len(rows), len(cols)), dtype=np.int64)
    col_of = {a: j for j, a in enumerate(cols)}

    for i, author in enumerate(rows):
        sentences = test_sets[author]
        if not sentences:
            raise DataError(f"empty test set for author {author!r}")
        tables = score_table(sentences, candidates)
        for trial in range(trials):
            rng = np.random.default_rng([seed, i, trial])
            outcome = None
            for _ in range(100):
                idx = rng.integers(len(sentences), size=1)
                try:
                    outcome = _classify_rows(tables, idx, author)
                    break
                except NoScoreableWordsError:
                    continue
            if outcome is None:
                raise NoScoreableWordsError(
                    f"could not draw a scoreable sentence for {author!r}"
                )
            counts[i, col_of[outcome.predicted_author]] += 1

    floor = float(np.log10(1.0 / (trials + 1)))
    with np.errstate(divide="ignore"):
        log10 = np.log10(counts / trials)
    log10 = np.maximum(log10, floor)
    return ConfusionMatrix(
        true_authors=rows,
        candidates=cols,
        counts=counts,
        log10=log10,
        trials=trials,
        floor=floor,
    )


@dataclass(frozen=True)
class PerplexityResult:
    """Held-out perplexity of one (author, model kind) pair across
    segmentation seeds."""

    author_id: str
    model_kind: str
    seeds: tuple[int, ...]
    per_seed_ppl: tuple[float, ...]
    per_seed_words: tuple[int, ...]

    @property
    def mean_ppl(self) -> float:
        return float(np.mean(self.per_seed_ppl))

    @property
    def std_ppl(self) -> float:
        return _std(self.per_seed_ppl)

    @property
    def n_scored_words(self) -> int:
        return int(sum(self.per_seed_words))


def _kind_order(kind: str) -> tuple:
    if kind.startswith("ngram-"):
        return (0, int(kind.split("-", 1)[1]))
    return (1, kind)


@dataclass
class EvalReport:
    """Evaluation artifacts ready for serialization."""

    perplexities: list[PerplexityResult]
    curves: list[AccuracyCurve]
    confusions: list[tuple[str, ConfusionMatrix]]  # (model_kind, matrix)

    def perplexity_table_csv(self) -> str:
        return perplexity_table_csv(self.perplexities)

    def accuracy_curve_csv(self) -> str:
        return accuracy_curve_csv(self.curves)

    def confusion_csv(self) -> str:
        return confusion_csv(self.confusions)


def compare_models(
    perplexities: Sequence[PerplexityResult],
    curves: Sequence[AccuracyCurve] = (),
    confusions: Sequence[tuple[str, ConfusionMatrix]] = (),
) -> EvalReport:
    """Bundle results into a report, enforcing comparability.

    Every (author, kind) cell must cover the same segmentation seeds,
    otherwise means would average over different splits.
    """
    if not perplexities:
        raise ValueError("nothing to compare: no perplexity results")
    seed_sets = {tuple(sorted(r.seeds)) for r in perplexities}
    if len(seed_sets) > 1:
        raise DataError(
            "segmentation seed sets differ across model kinds; "
            "comparison requires shared splits"
        )
    return EvalReport(
        perplexities=list(perplexities),
        curves=list(curves),
        confusions=list(confusions),
    )


def perplexity_table_csv(results: Sequence[PerplexityResult]) -> str:
    """Render the per-author perplexity table, one model kind per
    column, cells as "mean ± std" over segmentation seeds, plus an
    average row of column means."""
    by_cell: dict[tuple[str, str], PerplexityResult] = {}
    for r in results:
        key = (r.author_id, r.model_kind)
        if key in by_cell:
            raise DataError(f"duplicate perplexity result for {key}")
        by_cell[key] = r
    authors = sorted({r.author_id for r in results})
    kinds = sorted({r.model_kind for r in results}, key=_kind_order)

    lines = ["author," + ",".join(kinds)]
    for author in authors:
        cells = []
        for kind in kinds:
            r = by_cell.get((author, kind))
            cells.append(f"{r.mean_ppl:.1f} ± {r.std_ppl:.1f}" if r else "")
        lines.append(author + "," + ",".join(cells))
    avg_cells = []
    for kind in kinds:
        kind_results = [by_cell[(a, kind)] for a in authors if (a, kind) in by_cell]
        mean = np.mean([r.mean_ppl for r in kind_results])
        std = np.mean([r.std_ppl for r in kind_results])
        avg_cells.append(f"{mean:.1f} ± {std:.1f}")
    lines.append("Avg.," + ",".join(avg_cells))
    return "\n".join(lines) + "\n"


def accuracy_curve_csv(curves: Sequence[AccuracyCurve]) -> str:
    lines = ["author,model_kind,n_sentences,mean,std"]
    for curve in curves:
        for author in sorted(curve.per_author):
            for p in curve.per_author[author]:
                lines.append(
                    f"{author},{curve.model_kind},{p.n_sentences},"
                    f"{p.mean:.6f},{p.std:.6f}"
                )
        for p in curve.mean_curve:
            lines.append(
                f"Avg.,{curve.model_kind},{p.n_sentences},{p.mean:.6f},{p.std:.6f}"
            )
    return "\n".join(lines) + "\n"


def confusion_csv(confusions: Sequence[tuple[str, ConfusionMatrix]]) -> str:
    lines = ["model_kind,true_author,predicted_author,log10_prob"]
    for kind, matrix in confusions:
        for i, true_author in enumerate(matrix.true_authors):
            for j, predicted in enumerate(matrix.candidates):
                lines.append(
                    f"{kind},{true_author},{predicted},{matrix.log10[i, j]:.6f}"
                )
    return "\n".join(lines) + "\n"


def ppl_reduction_pct(baseline_ppl: float, model_ppl: float) -> float:
    """Relative perplexity reduction of a model against a baseline, in
    percent."""
    return (baseline_ppl - model_ppl) / baseline_ppl * 100.0
