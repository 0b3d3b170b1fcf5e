"""Closed-form Whittle indices for the uniform-arrival queue.

Two families are provided.  The discounted index depends on the discount
factor ``beta`` and blows up as ``beta -> 1`` for states at or above the
service rate.  The limit index replaces that tail with the constant
``a_k R_k max_j a_j R_j^2``, which ranks states identically once ``beta`` is
above :func:`beta_threshold`, and drops ``beta`` from the lower branch.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .model import ClassParams, InvalidInputError, tail_scale


def _check_beta(beta: float) -> None:
    if not 0.0 < beta < 1.0:
        raise InvalidInputError(f"beta must lie in (0, 1), got {beta}")


def g(n: int, W: float, beta: float, params: ClassParams) -> float:
    """Active-minus-passive discounted cost at state ``n`` under threshold ``n``."""
    _check_beta(beta)
    a, R, rho = params.a, params.R, params.rho
    if n <= R - 1:
        return W * (1.0 - n * beta * rho) - a * n * beta
    return (W * (1.0 - beta) - a * R * beta) / (1.0 - rho * beta)


def index_discounted(n: int, beta: float, params: ClassParams) -> float:
    _check_beta(beta)
    a, R = params.a, params.R
    if n < 0:
        raise InvalidInputError("state must be nonnegative")
    if n <= R - 1:
        return beta * a * R * n / (R - beta * n)
    return a * R * beta / (1.0 - beta)


def index_limit(n: int, params: ClassParams, tail_scale: float, beta: float = 1.0) -> float:
    """Average-cost index.

    With the default ``beta=1`` the lower branch is ``a R n / (R - n)``.
    Passing ``beta < 1`` keeps ``beta`` in the lower branch, which is the form
    whose ranking provably coincides with :func:`index_discounted`.
    """
    a, R = params.a, params.R
    if n < 0:
        raise InvalidInputError("state must be nonnegative")
    if n <= R - 1:
        return beta * a * R * n / (R - beta * n)
    return a * R * tail_scale


def beta_threshold(classes: Sequence[ClassParams]) -> float:
    if not classes:
        raise InvalidInputError("need at least one class")
    return 1.0 - min(c.a * c.R for c in classes) / tail_scale(classes)


@dataclass(frozen=True)
class IndexTable:
    """Per-class index values for a fixed class set.

    ``mode`` is ``"limit"`` or ``"discounted"``; the latter needs ``beta``.
    Entry ``values[k][n]`` is the index of class ``k`` at state ``n`` for
    ``n < R_k``, and ``values[k][R_k]`` is the constant tail.
    """

    classes: tuple[ClassParams, ...]
    mode: str = "limit"
    beta: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "classes", tuple(self.classes))
        if self.mode not in ("limit", "discounted"):
            raise InvalidInputError(f"unknown index mode {self.mode!r}")
        if self.mode == "discounted":
            if self.beta is None:
                raise InvalidInputError("discounted mode requires beta")
            _check_beta(self.beta)
        ts = tail_scale(self.classes)
        values = []
        for c in self.classes:
            if self.mode == "limit":
                row = [index_limit(n, c, ts) for n in range(c.R + 1)]
            else:
                row = [index_discounted(n, self.beta, c) for n in range(c.R + 1)]
            values.append(np.array(row))
        object.__setattr__(self, "tail_scale", ts)
        object.__setattr__(self, "values", tuple(values))

    @property
    def label(self) -> str:
        return "limit" if self.mode == "limit" else f"discounted({self.beta:g})"

    def position(self, class_id: int) -> int:
        for i, c in enumerate(self.classes):
            if c.class_id == class_id:
                return i
        raise KeyError(class_id)

    def index(self, pos: int, n: int) -> float:
        row = self.values[pos]
        return float(row[min(n, len(row) - 1)])

    def tail(self, pos: int) -> float:
        return float(self.values[pos][-1])

    def padded(self) -> np.ndarray:
        """Values as a (K, max_R + 1) array; row k is valid up to column R_k."""
        width = max(len(v) for v in self.values)
        out = np.zeros((len(self.values), width))
        for k, row in enumerate(self.values):
            out[k, : len(row)] = row
            out[k, len(row):] = row[-1]
        return out
