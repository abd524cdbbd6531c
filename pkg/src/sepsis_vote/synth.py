"""Synthetic cohorts and populations of correlated noisy predictors.

Only ICULOS, a handful of vitals and demographics are filled in; every other
clinical column is written as missing. Event sidecars are built so that the
labeler recovers a planted onset hour for septic patients and finds none for
the rest.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigError
from .labeler import (
    ABX_AFTER_CULTURE, CULTURE_AFTER_ABX, MIN_COURSE_HOURS, MIN_ONSET_HOUR,
    MIN_RECORD_HOURS, SOFA_AFTER_SUSPICION, SOFA_BEFORE_SUSPICION,
    CohortLabels, label_cohort,
)
from .records import MAX_HOURS, VARIABLES, EventTimeline, PatientRecord, PredictionStream

_COHORT_STREAM = 1
_PREDICTOR_STREAM = 2
SOFA_EVERY = 4


@dataclass(frozen=True)
class SynthConfig:
    """Cohort shape plus the error model shared by every generated algorithm.

    ``fp_rate``/``fn_rate`` may be scalars or one value per algorithm. ``rho``
    is the probability that an algorithm's per-hour noise coin (and its
    detection lag) is the shared one rather than its own.
    """

    n_patients: int = 100
    min_hours: int = 24
    max_hours: int = 72
    prevalence: float = 0.2
    seed: int = 0
    n_algorithms: int = 5
    fp_rate: float | Sequence[float] = 0.1
    fn_rate: float | Sequence[float] = 0.1
    lag_min: int = 0
    lag_max: int = 0
    rho: float = 0.0
    lead: int = 6

    def __post_init__(self):
        if self.n_patients < 0 or self.n_algorithms < 1:
            raise ConfigError("need n_patients >= 0 and n_algorithms >= 1")
        if self.max_hours < MIN_RECORD_HOURS:
            raise ConfigError(
                f"max_hours={self.max_hours}: records under {MIN_RECORD_HOURS} hours fail the inclusion rule"
            )
        if not MIN_RECORD_HOURS <= self.min_hours <= self.max_hours <= MAX_HOURS:
            raise ConfigError(f"need {MIN_RECORD_HOURS} <= min_hours <= max_hours <= {MAX_HOURS}")
        if not 0 <= self.prevalence <= 1:
            raise ConfigError("prevalence must lie in [0, 1]")
        if not 0 <= self.rho <= 1:
            raise ConfigError("rho must lie in [0, 1]")
        if not 0 <= self.lag_min <= self.lag_max:
            raise ConfigError("need 0 <= lag_min <= lag_max")
        for name in ("fp_rate", "fn_rate"):
            rates = self.rates(name)
            if ((rates < 0) | (rates > 1)).any():
                raise ConfigError(f"{name} values must lie in [0, 1]")

    def rates(self, name: str) -> np.ndarray:
        value = np.atleast_1d(np.asarray(getattr(self, name), dtype=np.float64))
        if value.size == 1:
            return np.full(self.n_algorithms, value[0])
        if value.size != self.n_algorithms:
            raise ConfigError(f"{name} needs 1 or {self.n_algorithms} values, got {value.size}")
        return value

    @property
    def algorithm_ids(self) -> list[str]:
        width = max(2, len(str(self.n_algorithms)))
        return [f"alg{i + 1:0{width}d}" for i in range(self.n_algorithms)]


@dataclass
class SynthCohort:
    records: list[PatientRecord]
    labels: CohortLabels
    planted_onsets: dict[str, int | None] = field(default_factory=dict)

    @property
    def timelines(self):
        return self.labels.timelines


def _rng(seed: int, stream: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, stream, index]))


def _sofa_series(rng, onset: int | None, last_hour: int) -> list[tuple[int, int]]:
    base = int(rng.integers(0, 5))
    series = [(h, base) for h in range(0, last_hour + 1, SOFA_EVERY) if onset is None or h < onset]
    if onset is not None:
        high = base + int(rng.integers(2, 4))
        series.append((onset, high))
        series += [(h, high) for h in range(onset + SOFA_EVERY, last_hour + 1, SOFA_EVERY)]
    return series


def _septic_events(rng, onset: int, last_hour: int) -> EventTimeline:
    course = MIN_COURSE_HOURS + int(rng.integers(0, 49))
    if rng.random() < 0.5:
        # suspicion at onset, organ dysfunction follows within 12 h
        t_susp = onset
        t_sofa = onset + int(rng.integers(0, SOFA_AFTER_SUSPICION + 1))
        if rng.random() < 0.5:
            culture, start = t_susp, t_susp + int(rng.integers(0, ABX_AFTER_CULTURE + 1))
        else:
            start, culture = t_susp, t_susp + int(rng.integers(0, CULTURE_AFTER_ABX + 1))
    else:
        # organ dysfunction at onset, suspicion within the following 24 h
        t_sofa = onset
        t_susp = onset + int(rng.integers(0, SOFA_BEFORE_SUSPICION + 1))
        start, culture = t_susp, t_susp + int(rng.integers(0, CULTURE_AFTER_ABX + 1))
    return EventTimeline(((start, start + course),), (culture,), tuple(_sofa_series(rng, t_sofa, max(last_hour, t_sofa))))


def _non_septic_events(rng, last_hour: int) -> EventTimeline:
    kind = int(rng.integers(0, 4))
    if kind == 0:
        return EventTimeline(sofa_series=tuple(_sofa_series(rng, None, last_hour)))
    if kind == 1:
        # culture without antibiotics, organ dysfunction present
        t = int(rng.integers(0, last_hour + 1))
        return EventTimeline((), (t,), tuple(_sofa_series(rng, max(t, 1), last_hour)))
    if kind == 2:
        # short antibiotic course that never qualifies
        t = int(rng.integers(0, last_hour + 1))
        return EventTimeline(((t, t + int(rng.integers(0, MIN_COURSE_HOURS))),), (t,), tuple(_sofa_series(rng, None, last_hour)))
    # suspicion of infection without a SOFA rise
    t = int(rng.integers(0, last_hour + 1))
    return EventTimeline(((t, t + MIN_COURSE_HOURS),), (t,), tuple(_sofa_series(rng, None, last_hour)))


def _vitals(rng, n: int) -> np.ndarray:
    values = np.full((n, len(VARIABLES)), np.nan)
    col = {name: i for i, name in enumerate(VARIABLES)}
    walk = np.cumsum(rng.normal(0, 1, size=(n, 5)), axis=0)
    base = np.array([80.0, 97.0, 37.0, 75.0, 18.0])
    scale = np.array([2.0, 0.5, 0.1, 2.0, 0.7])
    for k, name in enumerate(("HR", "O2Sat", "Temp", "MAP", "Resp")):
        series = np.round(base[k] + scale[k] * walk[:, k], 1)
        series[rng.random(n) < 0.1] = np.nan
        values[:, col[name]] = series
    values[:, col["O2Sat"]] = np.minimum(values[:, col["O2Sat"]], 100.0)
    unit1 = float(rng.integers(0, 2))
    values[:, col["Age"]] = float(rng.integers(18, 90))
    values[:, col["Gender"]] = float(rng.integers(0, 2))
    values[:, col["Unit1"]] = unit1
    values[:, col["Unit2"]] = 1.0 - unit1
    values[:, col["HospAdmTime"]] = -round(float(rng.exponential(24.0)), 2)
    values[:, col["ICULOS"]] = np.arange(1, n + 1)
    return values


def generate_cohort(config: SynthConfig) -> SynthCohort:
    """Deterministic for a fixed seed; each patient draws from its own sub-seed."""
    records, planted = [], {}
    width = max(4, len(str(config.n_patients)))
    for i in range(config.n_patients):
        rng = _rng(config.seed, _COHORT_STREAM, i)
        pid = f"p{i:0{width}d}"
        n = int(rng.integers(config.min_hours, config.max_hours + 1))
        septic = rng.random() < config.prevalence
        onset = int(rng.integers(MIN_ONSET_HOUR, n + 1)) if septic else None
        events = _septic_events(rng, onset, n) if septic else _non_septic_events(rng, n)
        records.append(PatientRecord(pid, VARIABLES, _vitals(rng, n), None, events))
        planted[pid] = onset
    labels = label_cohort(records, config.lead)
    for pid, onset in planted.items():
        if labels.timelines[pid].t_sepsis != onset or pid in labels.excluded:
            raise AssertionError(f"synthetic events for {pid} do not reproduce the planted onset")
    return SynthCohort(records, labels, planted)


def generate_predictors(cohort: SynthCohort, config: SynthConfig) -> dict[str, dict[str, PredictionStream]]:
    """Noisy copies of the true labels, one stream per (algorithm, patient).

    Every hour draws one shared uniform coin and one private coin per
    algorithm; with probability ``rho`` an algorithm reads the shared coin.
    A label is flipped when the coin falls under the algorithm's false
    negative (true label 1) or false positive (true label 0) rate. Positive
    runs are delayed by a lag drawn the same shared-or-private way.
    """
    ids = config.algorithm_ids
    k = len(ids)
    fp = config.rates("fp_rate")[:, None]
    fn = config.rates("fn_rate")[:, None]
    bundle: dict[str, dict[str, PredictionStream]] = {a: {} for a in ids}
    for i, rec in enumerate(cohort.records):
        rng = _rng(config.seed, _PREDICTOR_STREAM, i)
        y = np.asarray(cohort.timelines[rec.patient_id].labels, dtype=np.int8)
        n = len(y)
        shared_lag = rng.integers(config.lag_min, config.lag_max + 1)
        private_lag = rng.integers(config.lag_min, config.lag_max + 1, size=k)
        lags = np.where(rng.random(k) < config.rho, shared_lag, private_lag)
        shared = rng.random(n)
        private = rng.random((k, n))
        coins = np.where(rng.random((k, n)) < config.rho, shared[None, :], private)
        signal = np.zeros((k, n), dtype=np.int8)
        for a in range(k):
            lag = int(lags[a])
            signal[a, lag:] = y[: n - lag] if lag < n else 0
        flip = np.where(signal == 1, coins < fn, coins < fp)
        preds = signal ^ flip.astype(np.int8)
        for a, aid in enumerate(ids):
            bundle[aid][rec.patient_id] = PredictionStream(aid, rec.patient_id, preds[a])
    return bundle
