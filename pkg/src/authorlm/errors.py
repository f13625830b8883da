"""Exception types shared across the package.

The CLI maps these onto distinct exit codes, so library code should
prefer raising one of them over a bare ValueError when the condition is
a recognizable data or training failure.
"""


class DataError(ValueError):
    """Input data cannot be turned into a usable dataset or model."""


class DegenerateVocabularyError(DataError):
    """Fewer than two distinct stems survive pruning."""


class CorpusTooSmallError(DataError):
    """Too few sentences to produce a train/valid/test split."""


class NoScoreableWordsError(ValueError):
    """No word position could be scored under any candidate model."""


class DivergenceError(RuntimeError):
    """Training produced a non-finite cost or gradient."""
