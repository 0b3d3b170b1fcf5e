"""Experiment files.

An experiment file is YAML::

    classes:            # one entry per class, in class-id order
      - {a: 1.0, R: 5, count: 5}
      - {a: 1.0, R: 20, count: 5}
    alpha: 0.5          # or M: 5 (exactly one of the two)
    horizon: 200000
    warmup: 20000       # optional, default horizon // 10
    replications: 20
    seed: 2021
    policies: [wi, md]  # optional, default [wi, md]
    beta: 0.9           # optional; discounted-mode runs and the oracle
    output: out/fig1    # optional output directory

A class may carry an explicit ``id``; otherwise ids run 1, 2, ... in file
order.  Validation reports every violation at once.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import yaml

from .model import ClassParams, SystemConfig
from .policies import POLICY_NAMES, PolicyKind

KNOWN_KEYS = {"classes", "alpha", "M", "horizon", "warmup", "replications", "seed", "policies", "beta", "output"}


class ConfigError(ValueError):
    def __init__(self, problems: list[str], source: str = ""):
        self.problems = list(problems)
        head = f"invalid config {source}" if source else "invalid config"
        super().__init__(head + ":\n  " + "\n  ".join(self.problems))


@dataclass
class ExperimentConfig:
    classes: list[ClassParams]
    counts: list[int]
    M: int | None = None
    alpha: float | None = None
    horizon: int = 200_000
    warmup: int | None = None
    replications: int = 20
    seed: int = 0
    policies: list[str] = field(default_factory=lambda: ["wi", "md"])
    beta: float | None = None
    output: str | None = None
    source: str = ""

    @property
    def N(self) -> int:
        return sum(self.counts)

    def servers(self) -> tuple[int, list[str]]:
        """Server count, flooring ``alpha * N`` when needed."""
        if self.M is not None:
            return self.M, []
        exact = self.alpha * self.N
        M = math.floor(exact + 1e-9)
        notes = [] if abs(M - exact) <= 1e-9 else [f"M = floor({self.alpha:g} * {self.N}) = {M}"]
        return M, notes

    def system(self, seed: int | None = None) -> tuple[SystemConfig, list[str]]:
        M, notes = self.servers()
        cfg = SystemConfig(
            classes=tuple(self.classes),
            counts=tuple(self.counts),
            M=M,
            horizon=self.horizon,
            warmup=self.warmup,
            seed=self.seed if seed is None else seed,
            replications=self.replications,
        )
        return cfg, notes

    def policy_kinds(self, names: list[str] | None = None) -> list[PolicyKind]:
        return [PolicyKind(n) for n in (names or self.policies)]


def preset_path(name: str) -> Path:
    return Path(str(resources.files("whittle_sched") / "presets" / name))


def resolve(path: str | Path) -> Path:
    """A path on disk, or the name of a bundled preset (``fig1.cfg``, ``fig1``)."""
    p = Path(path)
    if p.exists():
        return p
    for name in (p.name, p.name + ".cfg"):
        candidate = preset_path(name)
        if candidate.exists():
            return candidate
    raise ConfigError([f"config file not found: {path}"], str(path))


def _is_int(x) -> bool:
    return isinstance(x, int) and not isinstance(x, bool)


def _is_num(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool)


def parse_config(path: str | Path) -> ExperimentConfig:
    p = resolve(path)
    try:
        raw = yaml.safe_load(p.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError([f"not valid YAML: {exc}"], str(p)) from exc
    return config_from_dict(raw, str(p))


def config_from_dict(raw, source: str = "") -> ExperimentConfig:
    problems: list[str] = []
    if not isinstance(raw, dict):
        raise ConfigError(["top level must be a mapping"], source)
    for key in sorted(set(raw) - KNOWN_KEYS):
        problems.append(f"{key}: unknown key")

    classes, counts = [], []
    entries = raw.get("classes")
    if not isinstance(entries, list) or not entries:
        problems.append("classes: must be a nonempty list")
        entries = []
    for i, entry in enumerate(entries):
        where = f"classes[{i}]"
        if not isinstance(entry, dict):
            problems.append(f"{where}: must be a mapping with a, R, count")
            continue
        for key in sorted(set(entry) - {"a", "R", "count", "id"}):
            problems.append(f"{where}.{key}: unknown key")
        a, R, count = entry.get("a"), entry.get("R"), entry.get("count")
        cid = entry.get("id", i + 1)
        ok = True
        if not _is_num(a) or not a > 0:
            problems.append(f"{where}.a: must be a number > 0, got {a!r}")
            ok = False
        if not _is_int(R) or R < 2:
            problems.append(f"{where}.R: must be an integer >= 2 (arrivals take values 0..R-1), got {R!r}")
            ok = False
        if not _is_int(count) or count < 1:
            problems.append(f"{where}.count: must be an integer >= 1, got {count!r}")
            ok = False
        if not _is_int(cid):
            problems.append(f"{where}.id: must be an integer, got {cid!r}")
            ok = False
        if ok:
            classes.append(ClassParams(cid, float(a), R))
            counts.append(count)
    ids = [c.class_id for c in classes]
    if len(set(ids)) != len(ids):
        problems.append("classes: ids must be distinct")
    N = sum(counts)

    has_M, has_alpha = "M" in raw, "alpha" in raw
    M = alpha = None
    if has_M == has_alpha:
        problems.append("M/alpha: exactly one of M or alpha must be given")
    elif has_M:
        M = raw["M"]
        if not _is_int(M) or not 0 < M < max(N, 1):
            problems.append(f"M: must be an integer with 0 < M < N={N}, got {M!r}")
    else:
        alpha = raw["alpha"]
        if not _is_num(alpha) or not 0 < alpha < 1:
            problems.append(f"alpha: must be a number in (0, 1), got {alpha!r}")
        elif N and math.floor(alpha * N + 1e-9) < 1:
            problems.append(f"alpha: alpha * N = {alpha * N:g} leaves no server")

    horizon = raw.get("horizon", 200_000)
    if not _is_int(horizon) or horizon < 1:
        problems.append(f"horizon: must be a positive integer, got {horizon!r}")
    warmup = raw.get("warmup")
    if warmup is not None and (not _is_int(warmup) or warmup < 0 or (_is_int(horizon) and warmup >= horizon)):
        problems.append(f"warmup: must be an integer in [0, horizon), got {warmup!r}")
    reps = raw.get("replications", 20)
    if not _is_int(reps) or reps < 1:
        problems.append(f"replications: must be an integer >= 1, got {reps!r}")
    seed = raw.get("seed", 0)
    if not _is_int(seed) or not 0 <= seed < 2**64:
        problems.append(f"seed: must be an unsigned 64-bit integer, got {seed!r}")
    policies = raw.get("policies", ["wi", "md"])
    if not isinstance(policies, list) or not policies:
        problems.append("policies: must be a nonempty list")
        policies = []
    for name in policies:
        if name not in POLICY_NAMES:
            problems.append(f"policies: unknown policy {name!r} (choose from {', '.join(POLICY_NAMES)})")
    beta = raw.get("beta")
    if beta is not None and (not _is_num(beta) or not 0 < beta < 1):
        problems.append(f"beta: must be a number in (0, 1), got {beta!r}")
    output = raw.get("output")
    if output is not None and not isinstance(output, str):
        problems.append("output: must be a path string")

    if problems:
        raise ConfigError(problems, source)
    return ExperimentConfig(
        classes=classes, counts=counts, M=M, alpha=alpha, horizon=horizon, warmup=warmup,
        replications=reps, seed=seed, policies=list(policies), beta=beta, output=output, source=source,
    )
