"""Sepsis-3 onset labeling from antibiotic, culture and SOFA timelines."""

from __future__ import annotations

import bisect
from collections import Counter, deque
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .records import EventTimeline, PatientRecord

# suspicion of infection
MIN_COURSE_HOURS = 72
CULTURE_AFTER_ABX = 24
ABX_AFTER_CULTURE = 72
# organ dysfunction
SOFA_WINDOW = 24
SOFA_RISE = 2
# onset pairing: t_sofa in [t_suspicion - 24, t_suspicion + 12]
SOFA_BEFORE_SUSPICION = 24
SOFA_AFTER_SUSPICION = 12
# cohort inclusion
MIN_RECORD_HOURS = 8
MIN_ONSET_HOUR = 4

DEFAULT_LEAD = 6


@dataclass(frozen=True, eq=False)
class LabelTimeline:
    t_suspicion: int | None
    t_sofa: int | None
    t_sepsis: int | None
    labels: np.ndarray
    hours: np.ndarray

    @property
    def septic(self) -> bool:
        return self.t_sepsis is not None

    def __len__(self) -> int:
        return len(self.labels)


def _timing_ok(start: int, culture: int) -> bool:
    return start <= culture <= start + CULTURE_AFTER_ABX or culture <= start <= culture + ABX_AFTER_CULTURE


def suspicion_time(events: EventTimeline) -> int | None:
    """Earliest antibiotic/culture pairing that signals suspected infection.

    A course qualifies when it lasts at least 72 consecutive hours and the
    culture is drawn within 24 h after its start, or the course starts within
    72 h after the culture. Returns the earlier of the two hours.
    """
    cultures = sorted(events.culture_hours)
    best = None
    for start, end in events.antibiotic_intervals:
        if end - start < MIN_COURSE_HOURS:
            continue
        i = bisect.bisect_left(cultures, start - ABX_AFTER_CULTURE)
        if i < len(cultures) and cultures[i] <= start + CULTURE_AFTER_ABX:
            t = min(start, cultures[i])
            if best is None or t < best:
                best = t
    return best


def short_terminal_course(events: EventTimeline, last_hour: int) -> bool:
    """True when a course under 72 h pairs with a culture and runs to the end of the record.

    Such courses may have been cut short by death or discharge; they do not
    qualify but are worth flagging.
    """
    for start, end in events.antibiotic_intervals:
        if end - start < MIN_COURSE_HOURS and end >= last_hour:
            if any(_timing_ok(start, c) for c in events.culture_hours):
                return True
    return False


def sofa_time(events: EventTimeline) -> int | None:
    """Earliest hour whose SOFA score is at least 2 above the minimum of the preceding 24 h."""
    series = sorted(events.sofa_series)
    window: deque[tuple[int, int]] = deque()  # increasing scores, for a running minimum
    pushed = 0
    for hour, score in series:
        while pushed < len(series) and series[pushed][0] <= hour:
            h, s = series[pushed]
            while window and window[-1][1] >= s:
                window.pop()
            window.append((h, s))
            pushed += 1
        while window[0][0] < hour - SOFA_WINDOW:
            window.popleft()
        if score - window[0][1] >= SOFA_RISE:
            return hour
    return None


def sepsis_onset(t_suspicion: int | None, t_sofa: int | None) -> int | None:
    if t_suspicion is None or t_sofa is None:
        return None
    if t_suspicion - SOFA_BEFORE_SUSPICION <= t_sofa <= t_suspicion + SOFA_AFTER_SUSPICION:
        return min(t_suspicion, t_sofa)
    return None


def hourly_labels(record: PatientRecord | np.ndarray, t_sepsis: int | None, lead: int = DEFAULT_LEAD) -> np.ndarray:
    """Hour ``h`` is positive iff ``h >= t_sepsis - lead``.

    ``record`` may also be the array of ICULOS hours directly.
    """
    if lead < 0:
        raise ValueError("lead must be >= 0")
    hours = record.hours if isinstance(record, PatientRecord) else np.asarray(record)
    if t_sepsis is None:
        return np.zeros(len(hours), dtype=np.int8)
    return (hours >= t_sepsis - lead).astype(np.int8)


def exclusion_reason(record: PatientRecord, t_sepsis: int | None) -> str | None:
    if len(record) < MIN_RECORD_HOURS:
        return "short-record"
    if t_sepsis is not None and t_sepsis < MIN_ONSET_HOUR:
        return "early-onset"
    return None


def include_record(record: PatientRecord, t_sepsis: int | None) -> bool:
    return exclusion_reason(record, t_sepsis) is None


def label_record(record: PatientRecord, lead: int = DEFAULT_LEAD) -> LabelTimeline:
    t_susp = suspicion_time(record.events)
    t_sofa = sofa_time(record.events)
    t_sepsis = sepsis_onset(t_susp, t_sofa)
    return LabelTimeline(t_susp, t_sofa, t_sepsis, hourly_labels(record, t_sepsis, lead), record.hours)


@dataclass
class CohortLabels:
    timelines: dict[str, LabelTimeline]
    excluded: dict[str, str]
    flagged: list[str]

    def summary(self) -> dict[str, int]:
        septic = sum(tl.septic for pid, tl in self.timelines.items() if pid not in self.excluded)
        counts = Counter(self.excluded.values())
        return {
            "total": len(self.timelines),
            "included": len(self.timelines) - len(self.excluded),
            "included_septic": septic,
            "excluded_short_record": counts["short-record"],
            "excluded_early_onset": counts["early-onset"],
            "flagged_short_terminal_course": len(self.flagged),
        }

    def included(self) -> dict[str, LabelTimeline]:
        return {pid: tl for pid, tl in self.timelines.items() if pid not in self.excluded}


def label_cohort(records: Iterable[PatientRecord], lead: int = DEFAULT_LEAD) -> CohortLabels:
    timelines, excluded, flagged = {}, {}, []
    for rec in records:
        tl = label_record(rec, lead)
        timelines[rec.patient_id] = tl
        reason = exclusion_reason(rec, tl.t_sepsis)
        if reason:
            excluded[rec.patient_id] = reason
        if short_terminal_course(rec.events, int(rec.hours[-1])):
            flagged.append(rec.patient_id)
    return CohortLabels(timelines, excluded, flagged)
