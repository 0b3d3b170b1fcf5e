"""Scheduling rules for the full N-queue system.

Each rule assigns a score to every queue and serves the M best nonempty
queues.  Equal scores are broken by larger queue length, then smaller class
id, then smaller queue index, so decisions are reproducible.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import Action, ClassParams, InvalidInputError, SystemConfig, SystemState
from .whittle import IndexTable

POLICY_NAMES = ("wi", "md", "rand", "md-rate")


@dataclass(frozen=True)
class PolicyKind:
    """One of ``wi`` (Whittle index), ``md`` (max-weight / myopic, scores a*q),
    ``rand`` (uniform random) or ``md-rate`` (scores a*min(q, R); not part of
    the original comparison).

    ``wi`` uses the average-cost index table unless ``beta`` is given, in
    which case it ranks by the discounted index.
    """

    name: str
    beta: float | None = None

    def __post_init__(self):
        if self.name not in POLICY_NAMES:
            raise InvalidInputError(f"unknown policy {self.name!r}; choose from {POLICY_NAMES}")
        if self.beta is not None and self.name != "wi":
            raise InvalidInputError("beta only applies to the wi policy")

    @property
    def mode(self) -> str | None:
        if self.name != "wi":
            return None
        return "limit" if self.beta is None else "discounted"

    @property
    def label(self) -> str:
        return self.name if self.beta is None else f"wi(beta={self.beta:g})"

    def index_table(self, classes) -> IndexTable | None:
        if self.name != "wi":
            return None
        return IndexTable(classes, self.mode, self.beta)


def score(kind: PolicyKind, params: ClassParams, q: int, index_table: IndexTable | None = None,
          rng: np.random.Generator | None = None) -> float:
    if kind.name == "wi":
        if index_table is None:
            raise InvalidInputError("wi needs an index table")
        return index_table.index(index_table.position(params.class_id), q)
    if kind.name == "md":
        return params.a * q
    if kind.name == "md-rate":
        return params.a * min(q, params.R)
    if rng is None:
        raise InvalidInputError("rand needs an rng stream")
    return float(rng.random())


def decide(kind: PolicyKind, state: SystemState, config: SystemConfig,
           index_table: IndexTable | None = None, rng: np.random.Generator | None = None) -> Action:
    by_id = {c.class_id: c for c in config.classes}
    if kind.name == "wi" and index_table is None:
        index_table = kind.index_table(config.classes)
    if kind.name == "rand":
        if rng is None:
            raise InvalidInputError("rand needs an rng stream")
        noise = rng.random(state.N)
    keys = []
    for i, (q, cid) in enumerate(zip(state.q.tolist(), state.class_ids.tolist())):
        if q == 0:
            continue
        s = noise[i] if kind.name == "rand" else score(kind, by_id[cid], q, index_table)
        keys.append((-s, -q, cid, i))
    keys.sort()
    return Action(frozenset(k[3] for k in keys[: config.M]))
