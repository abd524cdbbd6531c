"""Time-dependent clinical utility of hourly sepsis predictions."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Mapping

import numpy as np

from .errors import ConfigError, CoverageError, UndefinedScoreError
from .labeler import LabelTimeline
from .records import PredictionStream

DEFAULT_PRESET = "challenge-2019-default"


@dataclass(frozen=True)
class UtilityParams:
    """Payoff schedule relative to sepsis onset.

    ``dt_*`` are signed hours from ``t_sepsis``. ``late_tp`` picks the shape of
    the true-positive reward between ``dt_optimal`` and ``dt_late``:
    ``"decay"`` returns linearly to 0, ``"plateau"`` holds ``u_tp_max``.
    """

    dt_early: float
    dt_optimal: float
    dt_late: float
    u_tp_max: float
    u_fn_min: float
    u_fp: float
    u_tn: float
    late_tp: str = "decay"

    def __post_init__(self):
        if not self.dt_early < self.dt_optimal <= self.dt_late:
            raise ConfigError("need dt_early < dt_optimal <= dt_late")
        if not self.u_fn_min <= 0 <= self.u_tp_max:
            raise ConfigError("need u_fn_min <= 0 <= u_tp_max")
        if self.late_tp not in ("decay", "plateau"):
            raise ConfigError(f"late_tp must be 'decay' or 'plateau', got {self.late_tp!r}")

    @classmethod
    def preset(cls, name: str = DEFAULT_PRESET) -> "UtilityParams":
        if name == "default":
            name = DEFAULT_PRESET
        try:
            return PRESETS[name]
        except KeyError:
            raise ConfigError(f"unknown utility preset {name!r}; known: {sorted(PRESETS)}") from None

    def scaled(self, factor: float) -> "UtilityParams":
        return replace(
            self,
            u_tp_max=self.u_tp_max * factor, u_fn_min=self.u_fn_min * factor,
            u_fp=self.u_fp * factor, u_tn=self.u_tn * factor,
        )

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


# A convention borrowed from the 2019 challenge scoring code, not a derived constant.
PRESETS = {
    DEFAULT_PRESET: UtilityParams(
        dt_early=-12, dt_optimal=-6, dt_late=3,
        u_tp_max=1.0, u_fn_min=-2.0, u_fp=-0.05, u_tn=0.0,
    ),
}


def hourly_utility(t: float, prediction: int, t_sepsis: float | None, params: UtilityParams) -> float:
    p = params
    if t_sepsis is None:
        return p.u_fp if prediction else p.u_tn
    dt = t - t_sepsis
    if dt < p.dt_early:
        return p.u_fp if prediction else 0.0
    if dt > p.dt_late:
        return 0.0
    if not prediction:
        return p.u_fn_min * (dt - p.dt_early) / (p.dt_late - p.dt_early)
    if dt <= p.dt_optimal:
        return p.u_tp_max * (dt - p.dt_early) / (p.dt_optimal - p.dt_early)
    if p.late_tp == "plateau":
        return p.u_tp_max
    return p.u_tp_max * (p.dt_late - dt) / (p.dt_late - p.dt_optimal)


def utility_table(hours: np.ndarray, t_sepsis: float | None, params: UtilityParams) -> tuple[np.ndarray, np.ndarray]:
    """Per-hour payoff of a negative and of a positive prediction."""
    p = params
    n = len(hours)
    if t_sepsis is None:
        return np.full(n, float(p.u_tn)), np.full(n, float(p.u_fp))
    dt = np.asarray(hours, dtype=np.float64) - t_sepsis
    early = dt < p.dt_early
    late = dt > p.dt_late
    u_neg = p.u_fn_min * (dt - p.dt_early) / (p.dt_late - p.dt_early)
    rising = p.u_tp_max * (dt - p.dt_early) / (p.dt_optimal - p.dt_early)
    if p.late_tp == "plateau" or p.dt_late == p.dt_optimal:
        falling = np.full(n, float(p.u_tp_max))
    else:
        falling = p.u_tp_max * (p.dt_late - dt) / (p.dt_late - p.dt_optimal)
    u_pos = np.where(dt <= p.dt_optimal, rising, falling)
    u_neg = np.where(early | late, 0.0, u_neg)
    u_pos = np.where(late, 0.0, np.where(early, float(p.u_fp), u_pos))
    return u_neg, u_pos


@dataclass(frozen=True, eq=False)
class UtilityTrace:
    values: np.ndarray
    total: float

    @classmethod
    def from_values(cls, values) -> "UtilityTrace":
        values = np.asarray(values, dtype=np.float64)
        return cls(values, float(np.sum(values)))


def utility_trace(prediction, timeline: LabelTimeline, params: UtilityParams) -> UtilityTrace:
    pred = _labels(prediction)
    if len(pred) != len(timeline):
        raise ValueError(f"prediction has {len(pred)} hours, record has {len(timeline)}")
    u_neg, u_pos = utility_table(timeline.hours, timeline.t_sepsis, params)
    return UtilityTrace.from_values(np.where(pred == 1, u_pos, u_neg))


def _labels(prediction) -> np.ndarray:
    if isinstance(prediction, PredictionStream):
        return prediction.labels
    return np.asarray(prediction)


@dataclass(frozen=True)
class CohortScore:
    observed: float
    inaction: float
    perfect: float

    @property
    def normalized(self) -> float:
        if self.perfect == self.inaction:
            raise UndefinedScoreError("perfect and inaction utilities coincide; normalized score is undefined")
        return (self.observed - self.inaction) / (self.perfect - self.inaction)


class CohortUtility:
    """Payoff tables for a whole cohort, concatenated in patient order.

    Scoring many candidate prediction vectors against the same cohort then
    costs one ``where`` and one sum each.
    """

    def __init__(self, timelines: Mapping[str, LabelTimeline], params: UtilityParams):
        self.params = params
        self.patient_ids = list(timelines)
        negs, poss, perfect, offsets = [], [], [], [0]
        for pid in self.patient_ids:
            tl = timelines[pid]
            u_neg, u_pos = utility_table(tl.hours, tl.t_sepsis, params)
            negs.append(u_neg)
            poss.append(u_pos)
            perfect.append(np.asarray(tl.labels, dtype=np.int8))
            offsets.append(offsets[-1] + len(tl))
        self.u_neg = np.concatenate(negs) if negs else np.empty(0)
        self.u_pos = np.concatenate(poss) if poss else np.empty(0)
        self.perfect_labels = np.concatenate(perfect) if perfect else np.empty(0, np.int8)
        self.offsets = np.array(offsets)
        self.inaction = self.raw(np.zeros(len(self.u_neg), dtype=np.int8))
        self.perfect = self.raw(self.perfect_labels)

    def __len__(self) -> int:
        return len(self.u_neg)

    def raw(self, predictions: np.ndarray) -> float:
        return float(np.sum(np.where(predictions == 1, self.u_pos, self.u_neg)))

    def score(self, predictions: np.ndarray) -> CohortScore:
        return CohortScore(self.raw(predictions), self.inaction, self.perfect)

    def normalized(self, predictions: np.ndarray) -> float:
        return self.score(predictions).normalized

    def concat(self, streams: Mapping[str, object], algorithm_id: str = "") -> np.ndarray:
        """Concatenate one algorithm's per-patient predictions in cohort order."""
        missing = [(algorithm_id, pid) for pid in self.patient_ids if pid not in streams]
        if missing:
            raise CoverageError(missing)
        parts = []
        for i, pid in enumerate(self.patient_ids):
            labels = _labels(streams[pid])
            expected = self.offsets[i + 1] - self.offsets[i]
            if len(labels) != expected:
                raise CoverageError(
                    [(algorithm_id, pid)],
                    f"{algorithm_id or 'prediction'} for {pid} has {len(labels)} hours, record has {expected}",
                )
            parts.append(labels)
        return np.concatenate(parts).astype(np.int8) if parts else np.empty(0, np.int8)

    def traces(self, predictions: np.ndarray) -> dict[str, UtilityTrace]:
        values = np.where(predictions == 1, self.u_pos, self.u_neg)
        return {
            pid: UtilityTrace.from_values(values[self.offsets[i]:self.offsets[i + 1]])
            for i, pid in enumerate(self.patient_ids)
        }


def cohort_score(streams: Mapping[str, object], timelines: Mapping[str, LabelTimeline], params: UtilityParams) -> CohortScore:
    cohort = CohortUtility(timelines, params)
    return cohort.score(cohort.concat(streams))


def normalized_score(streams: Mapping[str, object], timelines: Mapping[str, LabelTimeline], params: UtilityParams) -> float:
    """(observed - inaction) / (perfect - inaction) over the patients in ``timelines``.

    ``streams`` maps patient id to a PredictionStream or a 0/1 vector.
    """
    return cohort_score(streams, timelines, params).normalized
