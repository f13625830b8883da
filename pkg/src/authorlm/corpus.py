"""Text ingestion pipeline: sentence segmentation, stemming, vocabulary
pruning, index encoding and seeded train/valid/test splitting.

The pipeline deliberately keeps the preprocessing naive: sentences are
split on terminal punctuation only, tokens are maximal ASCII
alphanumeric runs, and the vocabulary is controlled by a frequency
prune that maps rare stems to a single out-of-vocabulary entry.
"""

from __future__ import annotations

import json
import re
import warnings
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import CorpusTooSmallError, DataError, DegenerateVocabularyError
from .stemmer import stem

OOV_TOKEN = "<unk>"

#: A stem survives pruning only if it occurs at least this many times ...
MIN_COUNT = 2
#: ... and makes up at least this fraction of all tokens.
MIN_FREQUENCY = 1e-5

#: Hard ceiling on the fraction of tokens mapped to the OOV entry.
MAX_OOV_RATE = 0.05
#: Expected OOV band for natural text; a rate outside it only warns.
OOV_WARN_BAND = (0.005, 0.015)

CORPUS_FORMAT_VERSION = 1

_SENTENCE_BOUNDARY = re.compile(r"(?<=[.?!])\s+")
_TOKEN = re.compile(r"[a-z0-9]+")
_HAS_DIGIT = re.compile(r"[0-9]")

SPLIT_TRAIN = "train"
SPLIT_VALID = "valid"
SPLIT_TEST = "test"


@dataclass(frozen=True)
class RawDocument:
    """One author's full concatenated text."""

    author_id: str
    text: str

    def __post_init__(self):
        if not self.author_id:
            raise DataError("author_id must be non-empty")
        if not self.text or not self.text.strip():
            raise DataError(f"document for author {self.author_id!r} is empty")


def segment_sentences(doc: RawDocument | str) -> list[str]:
    """Split text into sentences at '.', '?' or '!' followed by whitespace.

    The rule is intentionally simple: abbreviations such as "e.g." do
    split.  Joining the returned sentences with single spaces recovers
    the input text up to whitespace.  Text without any boundary comes
    back as a single sentence.
    """
    text = doc.text if isinstance(doc, RawDocument) else doc
    return [s for s in _SENTENCE_BOUNDARY.split(text) if s.strip()]


def tokenize(sentence: str) -> list[str]:
    """Lowercase and split into maximal ASCII alphanumeric runs."""
    return _TOKEN.findall(sentence.lower())


def tokenize_and_stem(sentence: str) -> list[str]:
    """Tokenize, then stem every purely alphabetic token.

    Tokens containing digits pass through unstemmed.
    """
    return [t if _HAS_DIGIT.search(t) else stem(t) for t in tokenize(sentence)]


@dataclass(frozen=True)
class Vocabulary:
    """Bidirectional word/index map with a distinguished OOV entry.

    Entries are ordered by descending corpus count with lexicographic
    tie-break, with the OOV token appended last, so a vocabulary built
    from the same corpus is always byte-identical.
    """

    entries: tuple[str, ...]
    oov_index: int
    index_of: Mapping[str, int] = field(repr=False, compare=False, default=None)

    def __post_init__(self):
        if len(set(self.entries)) != len(self.entries):
            raise DataError("vocabulary entries must be unique")
        if self.entries.count(OOV_TOKEN) != 1:
            raise DataError("vocabulary must contain the OOV token exactly once")
        if self.entries[self.oov_index] != OOV_TOKEN:
            raise DataError("oov_index does not point at the OOV token")
        object.__setattr__(
            self, "index_of", {w: i for i, w in enumerate(self.entries)}
        )

    @property
    def size(self) -> int:
        return len(self.entries)

    def encode_token(self, token: str) -> int:
        return self.index_of.get(token, self.oov_index)

    def encode(self, tokens: Iterable[str]) -> list[int]:
        index = self.index_of
        oov = self.oov_index
        return [index.get(t, oov) for t in tokens]

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.entries[i] for i in ids]


def _oov_rate_check(rate: float, context: str) -> None:
    if rate > MAX_OOV_RATE:
        raise DataError(
            f"{context}: OOV rate {rate:.4f} exceeds the {MAX_OOV_RATE:.0%} ceiling"
        )
    lo, hi = OOV_WARN_BAND
    if not (lo <= rate <= hi):
        warnings.warn(
            f"{context}: OOV rate {rate:.4f} outside the expected "
            f"{lo:.1%}-{hi:.1%} band for natural text",
            stacklevel=3,
        )


def build_vocabulary(stemmed_corpus: Sequence[Sequence[str]]) -> Vocabulary:
    """Build a pruned vocabulary from stemmed sentences.

    A stem survives only if its count is >= MIN_COUNT and its relative
    frequency is >= MIN_FREQUENCY; everything else maps to the OOV
    entry.  Raises DegenerateVocabularyError when fewer than two stems
    survive, and DataError when the pruned mass exceeds MAX_OOV_RATE.
    """
    counts = Counter(t for sentence in stemmed_corpus for t in sentence)
    total = sum(counts.values())
    if total == 0:
        raise DataError("cannot build a vocabulary from an empty corpus")

    survivors = {
        w: c
        for w, c in counts.items()
        if c >= MIN_COUNT and c / total >= MIN_FREQUENCY
    }
    if len(survivors) < 2:
        raise DegenerateVocabularyError(
            f"degenerate vocabulary: only {len(survivors)} stems survive pruning"
        )

    oov_rate = 1.0 - sum(survivors.values()) / total
    _oov_rate_check(oov_rate, "vocabulary pruning")

    ordered = sorted(survivors, key=lambda w: (-survivors[w], w))
    entries = tuple(ordered) + (OOV_TOKEN,)
    return Vocabulary(entries=entries, oov_index=len(entries) - 1)


@dataclass
class EncodedCorpus:
    """Per-author sentences as index sequences with split assignments."""

    author_id: str
    sentences: list[list[int]]
    split_labels: list[str]
    seed: int

    def __post_init__(self):
        if len(self.sentences) != len(self.split_labels):
            raise DataError("one split label per sentence required")

    def split(self, label: str) -> list[list[int]]:
        return [s for s, l in zip(self.sentences, self.split_labels) if l == label]

    @property
    def train_sentences(self) -> list[list[int]]:
        return self.split(SPLIT_TRAIN)

    @property
    def valid_sentences(self) -> list[list[int]]:
        return self.split(SPLIT_VALID)

    @property
    def test_sentences(self) -> list[list[int]]:
        return self.split(SPLIT_TEST)


def encode_and_split(
    stemmed_sentences: Sequence[Sequence[str]],
    vocab: Vocabulary,
    seed: int,
    author_id: str = "",
) -> EncodedCorpus:
    """Encode sentences through ``vocab`` and assign an 8:1:1 split.

    Sentence order is preserved; the assignment comes from a seeded
    shuffle of sentence indices, with validation and test each taking
    floor(n/10) sentences and training absorbing the remainder.  The
    same (sentences, seed) pair always yields the identical split.
    """
    n = len(stemmed_sentences)
    if n < 10:
        raise CorpusTooSmallError(
            f"corpus too small to split: {n} sentences, need at least 10"
        )
    encoded = [vocab.encode(s) for s in stemmed_sentences]

    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    n_valid = n // 10
    n_test = n // 10
    n_train = n - n_valid - n_test

    labels = [""] * n
    for pos, idx in enumerate(order):
        if pos < n_train:
            labels[idx] = SPLIT_TRAIN
        elif pos < n_train + n_valid:
            labels[idx] = SPLIT_VALID
        else:
            labels[idx] = SPLIT_TEST
    return EncodedCorpus(
        author_id=author_id, sentences=encoded, split_labels=labels, seed=seed
    )


def extract_contexts(
    sentences: Sequence[Sequence[int]], context_size: int, target_pos: int
) -> tuple[np.ndarray, np.ndarray]:
    """Enumerate fixed-width training windows that stay inside sentences.

    Every run of ``context_size`` consecutive tokens within one sentence
    yields a pair: the token at (1-based) ``target_pos`` is the target
    and the remaining tokens, in original order, are the context.
    Sentences shorter than the window contribute nothing.

    Returns (contexts, targets) as int64 arrays of shape (P, N-1), (P,).
    """
    n = context_size
    if n < 2:
        raise ValueError(f"context_size must be >= 2, got {n}")
    if not 1 <= target_pos <= n:
        raise ValueError(f"target_pos must be in [1, {n}], got {target_pos}")

    windows = []
    for sent in sentences:
        arr = np.asarray(sent, dtype=np.int64)
        if arr.size < n:
            continue
        view = np.lib.stride_tricks.sliding_window_view(arr, n)
        windows.append(view)
    if not windows:
        return (
            np.empty((0, n - 1), dtype=np.int64),
            np.empty((0,), dtype=np.int64),
        )
    stacked = np.concatenate(windows, axis=0)
    t = target_pos - 1
    targets = stacked[:, t].copy()
    contexts = np.delete(stacked, t, axis=1)
    return contexts, targets


@dataclass(frozen=True)
class CorpusStats:
    """Corpus profile across the preprocessing stages."""

    author_id: str
    n_sentences: int
    n_words: int
    words_per_sentence: float
    vocab_original: int
    vocab_stemmed: int
    vocab_pruned: int
    coverage_topk: Mapping[int, float]
    oov_rate: float

    def __post_init__(self):
        if not self.vocab_pruned <= self.vocab_stemmed <= self.vocab_original:
            raise DataError("vocabulary sizes must shrink through the pipeline")
        cov = [self.coverage_topk[k] for k in sorted(self.coverage_topk)]
        if any(b < a for a, b in zip(cov, cov[1:])) or any(c > 1.0 + 1e-12 for c in cov):
            raise DataError("coverage must be non-decreasing in k and <= 1")
        _oov_rate_check(self.oov_rate, f"stats for {self.author_id!r}")


COVERAGE_KS = (500, 1000, 2000)


def corpus_stats(
    author_id: str,
    token_sentences: Sequence[Sequence[str]],
    stemmed_sentences: Sequence[Sequence[str]],
    vocab: Vocabulary,
) -> CorpusStats:
    """Compute the per-author profile row.

    ``token_sentences`` are the lowercased unstemmed tokens and
    ``stemmed_sentences`` the same sentences after stemming; both must
    have identical shape.  Coverage at k is the token mass of the k most
    frequent vocabulary entries.  ``vocab_pruned`` counts surviving
    stems only, so the OOV entry is excluded; the model-facing size is
    ``vocab_pruned + 1``.
    """
    n_sentences = len(token_sentences)
    tokens = [t for s in token_sentences for t in s]
    stems = [t for s in stemmed_sentences for t in s]
    if len(tokens) != len(stems):
        raise DataError("token and stem sentences disagree in length")
    n_words = len(tokens)
    if n_sentences == 0 or n_words == 0:
        raise DataError(f"no usable text for author {author_id!r}")

    stem_counts = Counter(stems)
    in_vocab = set(vocab.entries) - {OOV_TOKEN}
    oov_tokens = sum(c for w, c in stem_counts.items() if w not in in_vocab)

    # vocab.entries is already ordered by descending count, OOV last.
    coverage = {}
    ranked = [w for w in vocab.entries if w != OOV_TOKEN]
    cum = np.cumsum([stem_counts.get(w, 0) for w in ranked]) if ranked else np.array([0])
    for k in COVERAGE_KS:
        top = min(k, len(ranked))
        coverage[k] = float(cum[top - 1] / n_words) if top else 0.0

    return CorpusStats(
        author_id=author_id,
        n_sentences=n_sentences,
        n_words=n_words,
        words_per_sentence=n_words / n_sentences,
        vocab_original=len(set(tokens)),
        vocab_stemmed=len(stem_counts),
        vocab_pruned=vocab.size - 1,
        coverage_topk=coverage,
        oov_rate=oov_tokens / n_words,
    )


def read_author_file(path, author_id: str, phrases_per_line: bool = False) -> RawDocument:
    """Load one author's text file.

    With ``phrases_per_line`` the file is treated as one short phrase
    per line (subtitle style) and lines are joined with spaces before
    segmentation; otherwise the text is used as-is.
    """
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    if phrases_per_line:
        text = " ".join(line.strip() for line in text.splitlines() if line.strip())
    return RawDocument(author_id=author_id, text=text)


def prepare_author(
    doc: RawDocument,
) -> tuple[list[list[str]], list[list[str]], Vocabulary, CorpusStats]:
    """Run segmentation, tokenization, stemming, vocabulary and stats."""
    sentences = segment_sentences(doc)
    token_sentences = [tokenize(s) for s in sentences]
    keep = [i for i, s in enumerate(token_sentences) if s]
    token_sentences = [token_sentences[i] for i in keep]
    stemmed = [
        [t if _HAS_DIGIT.search(t) else stem(t) for t in s] for s in token_sentences
    ]
    vocab = build_vocabulary(stemmed)
    stats = corpus_stats(doc.author_id, token_sentences, stemmed, vocab)
    return token_sentences, stemmed, vocab, stats


def save_encoded_corpus(path, corpus: EncodedCorpus, vocab: Vocabulary) -> None:
    """Write corpus plus vocabulary as a versioned JSON document."""
    payload = {
        "format_version": CORPUS_FORMAT_VERSION,
        "author_id": corpus.author_id,
        "vocab": list(vocab.entries),
        "oov_index": vocab.oov_index,
        "sentences": corpus.sentences,
        "split_labels": corpus.split_labels,
        "seed": corpus.seed,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, separators=(",", ":"), sort_keys=True)
        fh.write("\n")


def load_encoded_corpus(path) -> tuple[EncodedCorpus, Vocabulary]:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("format_version") != CORPUS_FORMAT_VERSION:
        raise DataError(f"unsupported corpus format in {path}")
    vocab = Vocabulary(
        entries=tuple(payload["vocab"]), oov_index=payload["oov_index"]
    )
    corpus = EncodedCorpus(
        author_id=payload["author_id"],
        sentences=[list(map(int, s)) for s in payload["sentences"]],
        split_labels=list(payload["split_labels"]),
        seed=payload["seed"],
    )
    size = vocab.size
    for sent in corpus.sentences:
        for t in sent:
            if not 0 <= t < size:
                raise DataError(f"token index {t} out of range in {path}")
    return corpus, vocab
