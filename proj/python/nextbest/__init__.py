"""Python bindings for the next-best-action engine."""

from ._core import DcrGraph, Engine, NbaError, damerau_levenshtein, evaluate, train

__all__ = ["DcrGraph", "Engine", "NbaError", "damerau_levenshtein", "evaluate", "train"]
