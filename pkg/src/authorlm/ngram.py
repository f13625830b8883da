"""Count-based N-gram language models (orders 1-4) with back-off
Kneser-Ney smoothing.

The smoothing follows the classic toolkit recipe: one absolute discount
per order estimated from counts-of-counts, raw counts at the highest
order, continuation counts (number of distinct left contexts) at lower
orders, and Katz-style back-off weights chosen so that every seen
context's conditional distribution sums to one over the vocabulary.
No start- or end-of-sentence tokens are inserted, so count windows
never cross sentence boundaries and contexts that only ever occur at a
sentence start fall back to raw counts (they have no left contexts to
count).

The unigram distribution is mixed with a uniform floor at a tiny weight
so that every vocabulary word keeps strictly positive probability.
"""

from __future__ import annotations

import json
import math
from collections import Counter, defaultdict
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .corpus import Vocabulary
from .errors import DataError

#: Weight of the uniform component mixed into the unigram distribution.
UNIGRAM_FLOOR_WEIGHT = 1e-6

#: Discount used when an order lacks both singleton and doubleton counts.
FALLBACK_DISCOUNT = 0.5

MAX_ORDER = 4

NGRAM_FORMAT_VERSION = 1


@dataclass
class NgramCounts:
    """Raw and continuation count tables up to ``order``.

    ``tables[k-1]`` maps a context tuple of k-1 token ids to a Counter
    of following words (so its items enumerate the k-grams).
    ``continuation[k-1]``, present for k < order, maps the same keys to
    the number of distinct words observed immediately before each
    k-gram.
    """

    order: int
    tables: list[dict[tuple[int, ...], Counter]]
    continuation: list[dict[tuple[int, ...], dict[int, int]]]

    def total(self, k: int, context: tuple[int, ...]) -> int:
        table = self.tables[k - 1].get(context)
        return sum(table.values()) if table else 0


def count_ngrams(sentences: Sequence[Sequence[int]], order: int) -> NgramCounts:
    """Tally all k-gram windows, k = 1..order, within sentences.

    Windows never cross sentence boundaries and no boundary tokens are
    inserted; a sentence shorter than k contributes no k-gram windows.
    """
    if not 1 <= order <= MAX_ORDER:
        raise ValueError(f"order must be in 1..{MAX_ORDER}, got {order}")
    if not sentences:
        raise DataError("cannot count n-grams of an empty training split")

    tables: list[dict] = [defaultdict(Counter) for _ in range(order)]
    any_token = False
    for sent in sentences:
        toks = [int(t) for t in sent]
        if toks:
            any_token = True
        for k in range(1, order + 1):
            table = tables[k - 1]
            for i in range(len(toks) - k + 1):
                table[tuple(toks[i : i + k - 1])][toks[i + k - 1]] += 1
    if not any_token:
        raise DataError("cannot count n-grams of an empty training split")

    # Continuation counts at level k come from the (k+1)-gram table: the
    # first token of each (k+1)-gram is a left context of its suffix.
    continuation: list[dict] = []
    for k in range(1, order):
        seen: dict[tuple, dict[int, set]] = defaultdict(lambda: defaultdict(set))
        for vctx, words in tables[k].items():
            left, suffix_ctx = vctx[0], vctx[1:]
            for w in words:
                seen[suffix_ctx][w].add(left)
        continuation.append(
            {
                ctx: {w: len(lefts) for w, lefts in words.items()}
                for ctx, words in seen.items()
            }
        )

    return NgramCounts(
        order=order,
        tables=[dict(t) for t in tables],
        continuation=continuation,
    )


@dataclass
class NgramModel:
    """Discounted probability tables with back-off weights.

    ``prob_tables[k]`` (k = 2..order) maps context tuples to the
    explicit discounted probabilities of their continuations; only
    strictly positive entries are stored.  ``backoff[m]`` maps each seen
    context of length m to its back-off weight.  ``unigram`` is the
    dense floored distribution over the whole vocabulary.
    """

    order: int
    vocab_size: int
    discounts: dict[int, float]
    unigram: np.ndarray
    prob_tables: dict[int, dict[tuple[int, ...], dict[int, float]]]
    backoff: dict[int, dict[tuple[int, ...], float]]

    @property
    def kind(self) -> str:
        return f"ngram-{self.order}"


class SentenceScore(NamedTuple):
    """Sentence scoring result; ``full_context_only`` is False when
    leading positions were scored with truncated contexts."""

    sum_log10: float
    n_scored: int
    full_context_only: bool


def _estimate_discounts(counts: NgramCounts) -> dict[int, float]:
    discounts = {}
    for k in range(2, counts.order + 1):
        tally = Counter()
        for words in counts.tables[k - 1].values():
            tally.update(words.values())
        n1, n2 = tally[1], tally[2]
        if n1 > 0 and n2 > 0:
            discounts[k] = n1 / (n1 + 2.0 * n2)
        else:
            discounts[k] = FALLBACK_DISCOUNT
    return discounts


def _unigram_distribution(counts: NgramCounts, vocab_size: int) -> np.ndarray:
    """Continuation unigram (raw for order-1 models) mixed with 1/V."""
    base = np.zeros(vocab_size)
    if counts.order >= 2:
        cont = counts.continuation[0].get((), {})
        total = sum(cont.values())
        if total > 0:
            for w, c in cont.items():
                base[w] = c / total
        else:
            cont = None
    else:
        cont = None
    if counts.order == 1 or cont is None:
        raw = counts.tables[0].get((), Counter())
        total = sum(raw.values())
        for w, c in raw.items():
            base[w] = c / total

    lam = UNIGRAM_FLOOR_WEIGHT
    return (1.0 - lam) * base + lam / vocab_size


def estimate_kneser_ney(counts: NgramCounts, vocab_size: int) -> NgramModel:
    """Turn count tables into a back-off Kneser-Ney model.

    Highest-order probabilities discount raw counts; lower orders
    discount continuation counts, falling back to raw counts for
    contexts with no observed left context (sentence-initial patterns).
    Back-off weights make every seen context's distribution over the
    full vocabulary sum to one; in the rare case that a context already
    explains the entire vocabulary explicitly, its entries are
    renormalized instead and the weight is never consulted.
    """
    if vocab_size < 1:
        raise ValueError("vocab_size must be positive")
    for table in counts.tables:
        for words in table.values():
            for w in words:
                if not 0 <= w < vocab_size:
                    raise DataError(f"token index {w} outside vocabulary of {vocab_size}")

    discounts = _estimate_discounts(counts)
    unigram = _unigram_distribution(counts, vocab_size)

    prob_tables: dict[int, dict] = {}
    backoff: dict[int, dict] = {}

    for k in range(2, counts.order + 1):
        d = discounts[k]
        table = {}
        for ctx, words in counts.tables[k - 1].items():
            if k < counts.order:
                cont = counts.continuation[k - 1].get(ctx, {})
                cont_total = sum(cont.values())
                if cont_total > 0:
                    f = {w: (c - d) / cont_total for w, c in cont.items() if c > d}
                else:
                    raw_total = sum(words.values())
                    f = {w: (c - d) / raw_total for w, c in words.items() if c > d}
            else:
                raw_total = sum(words.values())
                f = {w: (c - d) / raw_total for w, c in words.items() if c > d}
            if f:
                table[ctx] = f
        prob_tables[k] = table

    for k in range(2, counts.order + 1):
        m = k - 1
        bows = {}
        for ctx, f in prob_tables[k].items():
            sum_f = sum(f.values())
            if m == 1:
                sum_lower = float(unigram[list(f.keys())].sum())
            else:
                lower = prob_tables[m].get(ctx[1:], {})
                sum_lower = 0.0
                for w in f:
                    v = lower.get(w)
                    if v is None:
                        # defensive: resolve through the chain built so far
                        v = _resolve(ctx[1:], w, prob_tables, backoff, unigram)
                    sum_lower += v
            if 1.0 - sum_lower <= 1e-12:
                # every vocabulary word is explicit here; fold the
                # discount mass back in proportionally
                prob_tables[k][ctx] = {w: v / sum_f for w, v in f.items()}
                bows[ctx] = 1.0
            else:
                bows[ctx] = (1.0 - sum_f) / (1.0 - sum_lower)
        backoff[m] = bows

    model = NgramModel(
        order=counts.order,
        vocab_size=vocab_size,
        discounts=discounts,
        unigram=unigram,
        prob_tables=prob_tables,
        backoff=backoff,
    )
    return model


def _resolve(
    ctx: tuple[int, ...],
    word: int,
    prob_tables: dict,
    backoff: dict,
    unigram: np.ndarray,
) -> float:
    weight = 1.0
    while ctx:
        table = prob_tables.get(len(ctx) + 1, {}).get(ctx)
        if table:
            v = table.get(word)
            if v is not None:
                return weight * v
            weight *= backoff.get(len(ctx), {}).get(ctx, 1.0)
        ctx = ctx[1:]
    return weight * float(unigram[word])


def prob(model: NgramModel, word: int, context: Sequence[int]) -> float:
    """Back-off-resolved conditional probability of ``word``.

    Contexts longer than order-1 are truncated to their closest words;
    shorter contexts resolve directly at the matching lower order.  The
    result is strictly positive for every in-vocabulary word.
    """
    if not 0 <= word < model.vocab_size:
        raise ValueError(f"word index {word} outside vocabulary of {model.vocab_size}")
    ctx = tuple(int(t) for t in context)
    if len(ctx) > model.order - 1:
        ctx = ctx[len(ctx) - (model.order - 1) :]
    return _resolve(ctx, word, model.prob_tables, model.backoff, model.unigram)


def sentence_log10prob(
    model: NgramModel,
    sentence: Sequence[int],
    mode: str = "comparison",
    start: Optional[int] = None,
) -> SentenceScore:
    """Score a sentence as a sum of log10 conditional probabilities.

    In ``comparison`` mode only positions with a full order-1 context
    are scored (position ``order`` onward), matching the neural model's
    scoring convention so that both average over identical events.  In
    ``full`` mode every position is scored, the leading ones with
    truncated contexts resolved at lower orders.  ``start`` overrides
    the first scored position (1-based) in either mode.
    """
    if mode not in ("comparison", "full"):
        raise ValueError(f"unknown scoring mode {mode!r}")
    first = start if start is not None else (model.order if mode == "comparison" else 1)
    first = max(first, 1)

    tokens = [int(t) for t in sentence]
    total = 0.0
    n_scored = 0
    for pos in range(first, len(tokens) + 1):
        ctx = tokens[max(0, pos - model.order) : pos - 1]
        p = prob(model, tokens[pos - 1], ctx)
        total += math.log10(p)
        n_scored += 1
    return SentenceScore(total, n_scored, first >= model.order)


def write_arpa(model: NgramModel, fh, vocab: Optional[Vocabulary] = None) -> None:
    """Emit the model in ARPA-style text form for diffing.

    Columns are log10 probability, the n-gram, and the log10 back-off
    weight where one exists.  Contexts that carry a back-off weight but
    no explicit probability entry are written with the conventional
    -99 placeholder.  Token ids are rendered through ``vocab`` when
    given, otherwise as bare integers.
    """
    name = (lambda i: vocab.entries[i]) if vocab is not None else str

    sections: dict[int, dict[tuple, tuple[float, Optional[float]]]] = {}
    uni_bows = model.backoff.get(1, {})
    sections[1] = {
        (w,): (float(model.unigram[w]), uni_bows.get((w,)))
        for w in range(model.vocab_size)
    }
    for k in range(2, model.order + 1):
        entries: dict[tuple, tuple[float, Optional[float]]] = {}
        bows = model.backoff.get(k, {})
        for ctx, words in model.prob_tables[k].items():
            for w, p in words.items():
                gram = ctx + (w,)
                entries[gram] = (p, bows.get(gram))
        for ctx, bow in bows.items():
            if ctx not in entries:
                entries[ctx] = (None, bow)
        sections[k] = entries

    fh.write("\\data\\\n")
    for k in range(1, model.order + 1):
        fh.write(f"ngram {k}={len(sections[k])}\n")
    fh.write("\n")
    for k in range(1, model.order + 1):
        fh.write(f"\\{k}-grams:\n")
        for gram in sorted(sections[k]):
            p, bow = sections[k][gram]
            logp = math.log10(p) if p is not None else -99.0
            line = f"{logp:.7f}\t{' '.join(name(i) for i in gram)}"
            if bow is not None:
                line += f"\t{math.log10(bow):.7f}"
            fh.write(line + "\n")
        fh.write("\n")
    fh.write("\\end\\\n")


def _key(ctx: tuple[int, ...]) -> str:
    return " ".join(map(str, ctx))


def _unkey(s: str) -> tuple[int, ...]:
    return tuple(int(t) for t in s.split()) if s else ()


def save_ngram(path, model: NgramModel) -> None:
    """Write the model as a versioned JSON container."""
    payload = {
        "format_version": NGRAM_FORMAT_VERSION,
        "order": model.order,
        "vocab_size": model.vocab_size,
        "discounts": {str(k): v for k, v in model.discounts.items()},
        "unigram": [float(p) for p in model.unigram],
        "prob_tables": {
            str(k): {
                _key(ctx): {str(w): p for w, p in words.items()}
                for ctx, words in table.items()
            }
            for k, table in model.prob_tables.items()
        },
        "backoff": {
            str(m): {_key(ctx): bow for ctx, bow in bows.items()}
            for m, bows in model.backoff.items()
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, separators=(",", ":"), sort_keys=True)
        fh.write("\n")


def load_ngram(path) -> NgramModel:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("format_version") != NGRAM_FORMAT_VERSION:
        raise DataError(f"unsupported n-gram format in {path}")
    return NgramModel(
        order=payload["order"],
        vocab_size=payload["vocab_size"],
        discounts={int(k): v for k, v in payload["discounts"].items()},
        unigram=np.asarray(payload["unigram"], dtype=np.float64),
        prob_tables={
            int(k): {
                _unkey(ctx): {int(w): p for w, p in words.items()}
                for ctx, words in table.items()
            }
            for k, table in payload["prob_tables"].items()
        },
        backoff={
            int(m): {_unkey(ctx): bow for ctx, bow in bows.items()}
            for m, bows in payload["backoff"].items()
        },
    )
