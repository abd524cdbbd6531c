"""Weighted consensus voting and greedy with-replacement member selection."""

from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .diversity import similarity_matrix
from .errors import ConfigError, CoverageError, FormatError
from .labeler import LabelTimeline
from .records import PredictionStream
from .utility import CohortUtility, UtilityParams

log = logging.getLogger(__name__)

FAMILIAR = "familiar"
UNFAMILIAR = "unfamiliar"
REGIMES = (FAMILIAR, UNFAMILIAR)
DEFAULT_TAU = 0.8
IMPROVEMENT_TOL = 1e-9
ENSEMBLE_ID = "ensemble"


@dataclass(frozen=True)
class VoteRule:
    kind: str = "threshold"
    theta: float = 0.5

    def __post_init__(self):
        if self.kind not in ("threshold", "all_but_one"):
            raise ConfigError(f"unknown vote rule {self.kind!r}")
        if self.kind == "threshold" and not 0 < self.theta <= 1:
            raise ConfigError("theta must lie in (0, 1]")

    @classmethod
    def majority(cls) -> "VoteRule":
        return cls("threshold", 0.5)

    @classmethod
    def all_but_one(cls) -> "VoteRule":
        return cls("all_but_one")

    @classmethod
    def parse(cls, text: str) -> "VoteRule":
        text = text.strip()
        if text == "majority":
            return cls.majority()
        if text in ("all_but_one", "all-but-one"):
            return cls.all_but_one()
        if text.startswith("threshold"):
            _, _, theta = text.partition(":")
            return cls("threshold", float(theta) if theta else 0.5)
        raise ConfigError(f"cannot parse vote rule {text!r}")

    def __str__(self) -> str:
        return "all_but_one" if self.kind == "all_but_one" else f"threshold:{self.theta!r}"


DEFAULT_RULES = {FAMILIAR: VoteRule.majority(), UNFAMILIAR: VoteRule.all_but_one()}


@dataclass(frozen=True)
class RegimeSelector:
    """Chooses a regime from mean pairwise Jaccard similarity; ``override`` wins when set."""

    tau: float = DEFAULT_TAU
    override: str | None = None

    def __post_init__(self):
        if self.override is not None and self.override not in REGIMES:
            raise ConfigError(f"regime must be one of {REGIMES}, got {self.override!r}")


@dataclass(frozen=True, eq=False)
class EnsembleSpec:
    """Member multiset (as ``(id, weight)`` pairs) plus a vote rule per regime.

    ``members_by_regime`` optionally overrides ``members`` for one regime.
    ``training_scores`` records the greedy trajectory when built by selection.
    """

    members: tuple[tuple[str, int], ...]
    rules: Mapping[str, VoteRule] = field(default_factory=lambda: dict(DEFAULT_RULES))
    selector: RegimeSelector = RegimeSelector()
    members_by_regime: Mapping[str, tuple[tuple[str, int], ...]] = field(default_factory=dict)
    training_scores: tuple[float, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "members", _normalize_members(self.members))
        object.__setattr__(
            self, "members_by_regime",
            {r: _normalize_members(m) for r, m in self.members_by_regime.items()},
        )
        object.__setattr__(self, "rules", dict(self.rules))
        for regime in self.rules:
            if regime not in REGIMES:
                raise ConfigError(f"unknown regime {regime!r}")

    @classmethod
    def from_ids(cls, ids: Sequence[str], **kwargs) -> "EnsembleSpec":
        return cls(tuple(Counter(ids).items()), **kwargs)

    def members_for(self, regime: str) -> tuple[tuple[str, int], ...]:
        return self.members_by_regime.get(regime, self.members)

    def rule_for(self, regime: str) -> VoteRule:
        try:
            return self.rules[regime]
        except KeyError:
            raise ConfigError(f"no vote rule configured for regime {regime!r}") from None

    def algorithm_ids(self) -> list[str]:
        ids = {a for a, _ in self.members}
        for members in self.members_by_regime.values():
            ids.update(a for a, _ in members)
        return sorted(ids)


def _normalize_members(members) -> tuple[tuple[str, int], ...]:
    if isinstance(members, Mapping):
        members = members.items()
    merged: Counter = Counter()
    for aid, weight in members:
        if int(weight) != weight or weight < 1:
            raise ConfigError(f"weight of {aid!r} must be a positive integer")
        merged[str(aid)] += int(weight)
    if not merged:
        raise ConfigError("an ensemble needs at least one member")
    return tuple(sorted(merged.items()))


def _required_positives(n_members: int) -> int:
    # "all but one" of n members; a lone member must vote positive itself
    return max(n_members - 1, 1)


def vote_matrix(predictions: np.ndarray, weights: np.ndarray, rule: VoteRule) -> tuple[np.ndarray, np.ndarray]:
    """Vote over a ``(members, hours)`` 0/1 matrix with one row per distinct member.

    Returns the voted labels and the weighted positive share per hour.
    """
    P = np.asarray(predictions, dtype=np.int64)
    w = np.asarray(weights, dtype=np.int64)
    positive = w @ P
    total = int(w.sum())
    share = positive / total
    if rule.kind == "threshold":
        labels = positive >= rule.theta * total
    else:
        labels = P.sum(axis=0) >= _required_positives(len(w))
    return labels.astype(np.int8), share


def vote(predictions: Mapping[str, int], spec: EnsembleSpec, regime: str = FAMILIAR) -> int:
    """One hour's ensemble decision. Threshold ties go positive."""
    members = spec.members_for(regime)
    missing = [a for a, _ in members if a not in predictions]
    if missing:
        raise CoverageError([(a, "*") for a in missing], f"no prediction from member {missing[0]!r}")
    P = np.array([[int(predictions[a])] for a, _ in members])
    w = np.array([wt for _, wt in members])
    return int(vote_matrix(P, w, spec.rule_for(regime))[0][0])


def apply_ensemble(
    spec: EnsembleSpec,
    bundle: Mapping[str, Mapping[str, PredictionStream]],
    regime: str = FAMILIAR,
    algorithm_id: str = ENSEMBLE_ID,
) -> dict[str, PredictionStream]:
    """Vote hour by hour for every patient the members cover.

    The output stream's probability channel carries the weighted share of
    positive member votes.
    """
    members = spec.members_for(regime)
    rule = spec.rule_for(regime)
    missing_alg = [(a, "*") for a, _ in members if a not in bundle]
    if missing_alg:
        raise CoverageError(missing_alg)
    patients = sorted({p for a, _ in members for p in bundle[a]})
    missing = [(a, p) for a, _ in members for p in patients if p not in bundle[a]]
    if missing:
        raise CoverageError(missing)
    w = np.array([wt for _, wt in members])
    out = {}
    for pid in patients:
        rows = [bundle[a][pid].labels for a, _ in members]
        if len({len(r) for r in rows}) > 1:
            raise CoverageError([(a, pid) for a, _ in members], f"member streams for {pid} differ in length")
        labels, share = vote_matrix(np.vstack(rows), w, rule)
        out[pid] = PredictionStream(algorithm_id, pid, labels, share)
    return out


def _mean_offdiagonal(values: np.ndarray) -> float:
    n = len(values)
    if n < 2:
        raise ValueError("regime selection needs at least two algorithms")
    return float((values.sum() - np.trace(values)) / (n * (n - 1)))


def select_regime(bundle: Mapping[str, Mapping[str, object]], selector: RegimeSelector = RegimeSelector()) -> str:
    """``unfamiliar`` when the algorithms agree more than ``tau`` on average, else ``familiar``."""
    if selector.override is not None:
        return selector.override
    if len(bundle) < 2:
        raise ValueError("regime selection needs at least two algorithms")
    mean = _mean_offdiagonal(similarity_matrix(bundle, "unweighted").values)
    return UNFAMILIAR if mean > selector.tau else FAMILIAR


@dataclass
class _Pool:
    """Running vote tallies for a member multiset over concatenated cohort hours."""

    stacked: dict[str, np.ndarray]
    rule: VoteRule
    weights: Counter = field(default_factory=Counter)
    positive: np.ndarray | None = None  # weighted positive votes
    distinct_positive: np.ndarray | None = None

    def labels_with(self, candidate: str | None) -> np.ndarray:
        weights = self.weights.copy()
        positive = self.positive
        distinct = self.distinct_positive
        if candidate is not None:
            row = self.stacked[candidate]
            positive = row if positive is None else positive + row
            if candidate not in weights:
                distinct = row if distinct is None else distinct + row
            weights[candidate] += 1
        total = sum(weights.values())
        if self.rule.kind == "threshold":
            return (positive >= self.rule.theta * total).astype(np.int8)
        return (distinct >= _required_positives(len(weights))).astype(np.int8)

    def add(self, candidate: str):
        row = self.stacked[candidate]
        self.positive = row.copy() if self.positive is None else self.positive + row
        if candidate not in self.weights:
            self.distinct_positive = row.copy() if self.distinct_positive is None else self.distinct_positive + row
        self.weights[candidate] += 1


def greedy_select(
    candidates: Sequence[str],
    bundle: Mapping[str, Mapping[str, object]],
    timelines: Mapping[str, LabelTimeline],
    params: UtilityParams,
    rule: VoteRule = VoteRule.majority(),
    *,
    require_positive: bool = True,
    tol: float = IMPROVEMENT_TOL,
    max_members: int = 1000,
) -> EnsembleSpec:
    """Grow a member multiset one pick at a time, with replacement.

    Each round adds the candidate whose inclusion gives the highest normalized
    training utility of the voted ensemble (lexicographically smallest id on
    ties) and stops at the first round that fails to improve by more than
    ``tol``. Candidates with non-positive individual utility are dropped first
    unless ``require_positive`` is false.
    """
    if not candidates:
        raise ConfigError("greedy selection needs at least one candidate")
    absent = [(c, "*") for c in candidates if c not in bundle]
    if absent:
        raise CoverageError(absent)
    cohort = CohortUtility(timelines, params)
    stacked = {c: cohort.concat(bundle[c], c).astype(np.int64) for c in sorted(set(candidates))}
    if require_positive:
        solo = {c: cohort.normalized(p) for c, p in stacked.items()}
        stacked = {c: p for c, p in stacked.items() if solo[c] > 0}
        if not stacked:
            raise ConfigError("no candidate has positive training utility")
    pool = _Pool(stacked, rule)
    trajectory: list[float] = []
    current = -math.inf
    while sum(pool.weights.values()) < max_members:
        best, best_score = None, -math.inf
        for c in stacked:
            score = cohort.normalized(pool.labels_with(c))
            if score > best_score:
                best, best_score = c, score
        if best_score <= current + tol:
            break
        pool.add(best)
        current = best_score
        trajectory.append(best_score)
        log.debug("greedy step %d: +%s -> %.6f", len(trajectory), best, best_score)
    return EnsembleSpec(tuple(pool.weights.items()), {FAMILIAR: rule, UNFAMILIAR: rule}, training_scores=tuple(trajectory))


def build_ensemble(
    candidates: Sequence[str],
    bundle: Mapping[str, Mapping[str, object]],
    timelines: Mapping[str, LabelTimeline],
    params: UtilityParams,
    rules: Mapping[str, VoteRule] = DEFAULT_RULES,
    selector: RegimeSelector = RegimeSelector(),
    *,
    per_regime: bool = False,
    **greedy_kwargs,
) -> EnsembleSpec:
    """Train the member multiset once under the familiar rule, or once per regime."""
    rules = dict(rules)
    base = greedy_select(candidates, bundle, timelines, params, rules[FAMILIAR], **greedy_kwargs)
    by_regime = {}
    if per_regime:
        for regime, rule in rules.items():
            if regime != FAMILIAR:
                by_regime[regime] = greedy_select(candidates, bundle, timelines, params, rule, **greedy_kwargs).members
    return EnsembleSpec(base.members, rules, selector, by_regime, base.training_scores)


# --- spec files ------------------------------------------------------------
# member lines:  algorithm_id|weight
# directives:    @rule|<regime>|<rule>   @selector|tau|<x>   @regime|<override>
#                @member|<regime>|algorithm_id|weight


def format_spec(spec: EnsembleSpec) -> str:
    lines = ["algorithm_id|weight"]
    lines += [f"{a}|{w}" for a, w in spec.members]
    for regime in REGIMES:
        if regime in spec.rules:
            lines.append(f"@rule|{regime}|{spec.rules[regime]}")
    lines.append(f"@selector|tau|{spec.selector.tau!r}")
    if spec.selector.override:
        lines.append(f"@regime|{spec.selector.override}")
    for regime in REGIMES:
        for a, w in spec.members_by_regime.get(regime, ()):
            lines.append(f"@member|{regime}|{a}|{w}")
    for i, s in enumerate(spec.training_scores, start=1):
        lines.append(f"@score|{i}|{s!r}")
    return "\n".join(lines) + "\n"


def parse_spec(text) -> EnsembleSpec:
    if isinstance(text, (bytes, bytearray)):
        text = text.decode("utf-8")
    members, rules, by_regime, scores = [], {}, {}, []
    tau, override = DEFAULT_TAU, None
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or (lineno == 1 and line == "algorithm_id|weight"):
            continue
        fields = line.split("|")
        try:
            if fields[0] == "@rule":
                rules[fields[1]] = VoteRule.parse(fields[2])
            elif fields[0] == "@selector":
                tau = float(fields[2])
            elif fields[0] == "@regime":
                override = fields[1]
            elif fields[0] == "@member":
                by_regime.setdefault(fields[1], []).append((fields[2], int(fields[3])))
            elif fields[0] == "@score":
                scores.append(float(fields[2]))
            elif fields[0].startswith("@"):
                raise FormatError(f"unknown directive {fields[0]!r}", line=lineno)
            else:
                if len(fields) != 2:
                    raise FormatError("member lines are algorithm_id|weight", line=lineno)
                members.append((fields[0], int(fields[1])))
        except (IndexError, ValueError) as exc:
            if isinstance(exc, FormatError):
                raise
            raise FormatError(f"cannot parse {line!r}: {exc}", line=lineno) from exc
    return EnsembleSpec(
        tuple(members), rules or dict(DEFAULT_RULES), RegimeSelector(tau, override),
        {r: tuple(m) for r, m in by_regime.items()}, tuple(scores),
    )
