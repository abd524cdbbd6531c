"""Patient records, event timelines and prediction streams.

On-disk formats (all pipe-separated, ``NaN`` marks a missing value):

* patient file ``<pid>.psv``: a header naming clinical variables, one row per hour;
* event sidecar ``<pid>.evt.psv``: ``abx|start|end``, ``culture|hour|``, ``sofa|hour|score``;
* prediction file ``<pid>.psv``: ``probability|label`` per hour, no header.
"""

from __future__ import annotations

import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import FormatError

__all__ = [
    "VARIABLES",
    "VITALS",
    "MAX_HOURS",
    "EventTimeline",
    "PatientRecord",
    "PredictionStream",
    "parse_patient_file",
    "format_patient_file",
    "parse_event_file",
    "format_event_file",
    "parse_prediction_file",
    "format_prediction_file",
    "empirical_cdf",
    "read_patient",
    "read_patients",
    "write_patient",
    "read_prediction_dir",
    "write_predictions",
]

# Clinical variables in their conventional order.
VARIABLES: tuple[str, ...] = (
    "HR", "O2Sat", "Temp", "SBP", "MAP", "DBP", "Resp", "EtCO2",
    "BaseExcess", "HCO3", "FiO2", "pH", "PaCO2", "SaO2", "AST", "BUN",
    "Alkalinephos", "Calcium", "Chloride", "Creatinine", "Bilirubin-direct",
    "Glucose", "Lactate", "Magnesium", "Phosphate", "Potassium",
    "Bilirubin-total", "TroponinI", "Hct", "Hgb", "PTT", "WBC", "Fibrinogen",
    "Platelets",
    "Age", "Gender", "Unit1", "Unit2", "HospAdmTime", "ICULOS",
)
VITALS = VARIABLES[:8]
_KNOWN = frozenset(VARIABLES)
_BINARY = ("Gender", "Unit1", "Unit2")

# two weeks of hourly rows
MAX_HOURS = 14 * 24

MISSING = "NaN"
_NUMBER = re.compile(r"[+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?")
_INTEGER = re.compile(r"[+-]?\d+")


def _decode(text) -> str:
    if isinstance(text, (bytes, bytearray)):
        return text.decode("utf-8")
    return text


def _lines(text) -> list[str]:
    lines = _decode(text).splitlines()
    while lines and not lines[-1].strip():
        lines.pop()
    return lines


def _number(token: str, line: int, column: str | None = None) -> float:
    token = token.strip()
    if token == MISSING:
        return np.nan
    if not _NUMBER.fullmatch(token):
        where = f" in column {column}" if column else ""
        raise FormatError(f"non-numeric token {token!r}{where}", line=line)
    return float(token)


def _hour(token: str, line: int) -> int:
    token = token.strip()
    if not _INTEGER.fullmatch(token):
        raise FormatError(f"expected an integer hour, got {token!r}", line=line)
    return int(token)


def _fmt(value: float) -> str:
    if np.isnan(value):
        return MISSING
    if float(value).is_integer() and abs(value) < 1e15:
        return str(int(value))
    return repr(float(value))


@dataclass(frozen=True)
class EventTimeline:
    """Antibiotic courses, blood-culture draws and a precomputed SOFA series.

    Hours live on the same grid as ``ICULOS``.
    """

    antibiotic_intervals: tuple[tuple[int, int], ...] = ()
    culture_hours: tuple[int, ...] = ()
    sofa_series: tuple[tuple[int, int], ...] = ()

    def __post_init__(self):
        abx = tuple((int(s), int(e)) for s, e in self.antibiotic_intervals)
        cultures = tuple(int(h) for h in self.culture_hours)
        sofa = tuple(sorted((int(h), int(v)) for h, v in self.sofa_series))
        for start, end in abx:
            if start > end:
                raise ValueError(f"antibiotic interval ({start}, {end}) ends before it starts")
        hours = [h for iv in abx for h in iv] + list(cultures) + [h for h, _ in sofa]
        if any(h < 0 for h in hours):
            raise ValueError("event hours must be >= 0")
        object.__setattr__(self, "antibiotic_intervals", abx)
        object.__setattr__(self, "culture_hours", cultures)
        object.__setattr__(self, "sofa_series", sofa)


@dataclass(frozen=True, eq=False)
class PatientRecord:
    """One ICU stay: an ``(hours, columns)`` float array with NaN for missing cells."""

    patient_id: str
    columns: tuple[str, ...]
    values: np.ndarray
    hospital: str | None = None
    events: EventTimeline = field(default_factory=EventTimeline)

    def __post_init__(self):
        columns = tuple(self.columns)
        values = np.array(self.values, dtype=np.float64, copy=True)
        if values.ndim != 2 or values.shape[1] != len(columns):
            raise ValueError(f"values must have shape (hours, {len(columns)})")
        unknown = [c for c in columns if c not in _KNOWN]
        if unknown:
            raise ValueError(f"unknown clinical variable {unknown[0]!r}")
        if len(set(columns)) != len(columns):
            raise ValueError("duplicate column names")
        if not 1 <= len(values) <= MAX_HOURS:
            raise ValueError(f"record must have between 1 and {MAX_HOURS} hours, got {len(values)}")
        values.flags.writeable = False
        object.__setattr__(self, "columns", columns)
        object.__setattr__(self, "values", values)
        self._check_rows()

    def _check_rows(self):
        for name in _BINARY:
            col = self.get(name)
            if col is not None:
                bad = ~np.isnan(col) & (col != 0) & (col != 1)
                if bad.any():
                    raise ValueError(f"{name} must be 0 or 1 (hour index {int(np.argmax(bad))})")
        age = self.get("Age")
        if age is not None and (age[~np.isnan(age)] < 0).any():
            raise ValueError("Age must be >= 0")
        iculos = self.get("ICULOS")
        if iculos is not None:
            if np.isnan(iculos).any():
                raise ValueError("ICULOS may not be missing")
            if iculos[0] < 1 or (len(iculos) > 1 and not (np.diff(iculos) == 1).all()):
                raise ValueError("ICULOS must start at >= 1 and increase by one hour per row")

    def __len__(self) -> int:
        return len(self.values)

    @property
    def hours(self) -> np.ndarray:
        """ICU length-of-stay hour of every row (1-based)."""
        iculos = self.get("ICULOS")
        if iculos is None:
            return np.arange(1, len(self) + 1)
        return iculos.astype(np.int64)

    def get(self, variable: str) -> np.ndarray | None:
        try:
            return self.values[:, self.columns.index(variable)]
        except ValueError:
            return None

    def row(self, index: int) -> dict[str, float | None]:
        """Hour ``index`` (0-based) as a mapping with ``None`` for missing values."""
        return {
            c: (None if np.isnan(v) else float(v))
            for c, v in zip(self.columns, self.values[index])
        }

    def truncated(self, max_hours: int = MAX_HOURS) -> "PatientRecord":
        if len(self) <= max_hours:
            return self
        return PatientRecord(self.patient_id, self.columns, self.values[:max_hours], self.hospital, self.events)


@dataclass(frozen=True, eq=False)
class PredictionStream:
    algorithm_id: str
    patient_id: str
    labels: np.ndarray
    probabilities: np.ndarray | None = None

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 1:
            raise ValueError("labels must be one-dimensional")
        if labels.size and not np.isin(labels, (0, 1)).all():
            raise ValueError("label must be 0 or 1")
        labels = labels.astype(np.int8)
        labels.flags.writeable = False
        object.__setattr__(self, "labels", labels)
        if self.probabilities is not None:
            probs = np.array(self.probabilities, dtype=np.float64)
            if probs.shape != labels.shape:
                raise ValueError("probabilities and labels differ in length")
            seen = probs[~np.isnan(probs)]
            if ((seen < 0) | (seen > 1)).any():
                raise ValueError("probabilities must lie in [0, 1]")
            probs.flags.writeable = False
            object.__setattr__(self, "probabilities", probs)

    def __len__(self) -> int:
        return len(self.labels)


def parse_patient_file(
    text,
    patient_id: str = "",
    *,
    truncate: bool = True,
    hospital: str | None = None,
    events: EventTimeline | None = None,
) -> PatientRecord:
    """Parse a pipe-separated patient file.

    Columns are bound by header name, so any column order is accepted. Missing
    cells stay NaN. Records longer than two weeks are cut to the first
    ``MAX_HOURS`` rows unless ``truncate`` is false, in which case they are
    rejected.
    """
    lines = _lines(text)
    if not lines:
        raise FormatError("missing header line", line=1)
    header = [h.strip() for h in lines[0].split("|")]
    for name in header:
        if name not in _KNOWN:
            raise FormatError(f"unknown column {name!r}", line=1)
    if len(set(header)) != len(header):
        raise FormatError("duplicate column in header", line=1)
    body = lines[1:]
    if not body:
        raise FormatError("no hourly rows", line=2)
    if len(body) > MAX_HOURS:
        if not truncate:
            raise FormatError(f"{len(body)} hourly rows exceeds the {MAX_HOURS}-hour limit", line=MAX_HOURS + 2)
        body = body[:MAX_HOURS]

    values = np.empty((len(body), len(header)), dtype=np.float64)
    for i, line in enumerate(body):
        lineno = i + 2
        tokens = line.split("|")
        if len(tokens) != len(header):
            raise FormatError(f"expected {len(header)} fields, found {len(tokens)}", line=lineno)
        for j, token in enumerate(tokens):
            values[i, j] = _number(token, lineno, header[j])
    try:
        return PatientRecord(patient_id, tuple(header), values, hospital, events or EventTimeline())
    except ValueError as exc:
        raise FormatError(str(exc)) from exc


def format_patient_file(record: PatientRecord) -> str:
    out = ["|".join(record.columns)]
    out.extend("|".join(_fmt(v) for v in row) for row in record.values)
    return "\n".join(out) + "\n"


def parse_event_file(text) -> EventTimeline:
    abx, cultures, sofa = [], [], []
    for lineno, line in enumerate(_lines(text), start=1):
        if not line.strip():
            continue
        fields = [f.strip() for f in line.split("|")]
        if len(fields) != 3:
            raise FormatError("event lines have three fields: kind|a|b", line=lineno)
        kind, a, b = fields
        if kind == "abx":
            start, end = _hour(a, lineno), _hour(b, lineno)
            if start > end:
                raise FormatError(f"antibiotic interval ends before it starts ({start} > {end})", line=lineno)
            abx.append((start, end))
        elif kind == "culture":
            if b:
                raise FormatError("culture lines leave the third field empty", line=lineno)
            cultures.append(_hour(a, lineno))
        elif kind == "sofa":
            sofa.append((_hour(a, lineno), _hour(b, lineno)))
        else:
            raise FormatError(f"unknown event kind {kind!r}", line=lineno)
    try:
        return EventTimeline(tuple(abx), tuple(cultures), tuple(sofa))
    except ValueError as exc:
        raise FormatError(str(exc)) from exc


def format_event_file(events: EventTimeline) -> str:
    out = [f"abx|{s}|{e}" for s, e in events.antibiotic_intervals]
    out += [f"culture|{h}|" for h in events.culture_hours]
    out += [f"sofa|{h}|{v}" for h, v in events.sofa_series]
    return "".join(line + "\n" for line in out)


def parse_prediction_file(text, algorithm_id: str = "", patient_id: str = "") -> PredictionStream:
    """Parse ``probability|label`` lines; ``NaN`` leaves the probability absent."""
    labels, probs = [], []
    for lineno, line in enumerate(_lines(text), start=1):
        fields = [f.strip() for f in line.split("|")]
        if len(fields) != 2:
            raise FormatError("expected probability|label", line=lineno)
        prob = _number(fields[0], lineno, "PredictedProbability")
        if not np.isnan(prob) and not 0 <= prob <= 1:
            raise FormatError(f"probability {fields[0]} outside [0, 1]", line=lineno)
        if fields[1] not in ("0", "1"):
            raise FormatError(f"label must be 0 or 1, got {fields[1]!r}", line=lineno)
        probs.append(prob)
        labels.append(int(fields[1]))
    return PredictionStream(
        algorithm_id, patient_id,
        np.array(labels, dtype=np.int8), np.array(probs, dtype=np.float64),
    )


def format_prediction_file(stream: PredictionStream) -> str:
    probs = stream.probabilities
    if probs is None:
        probs = np.full(len(stream), np.nan)
    return "".join(f"{_fmt(p)}|{int(x)}\n" for p, x in zip(probs, stream.labels))


def empirical_cdf(cohort: Iterable[PatientRecord], variable: str) -> list[tuple[float, float]]:
    """Pooled step CDF of every observed hourly value of ``variable``.

    Returns ``(value, fraction <= value)`` pairs at each distinct value.
    """
    if variable not in _KNOWN:
        raise ValueError(f"unknown clinical variable {variable!r}")
    chunks = [col[~np.isnan(col)] for rec in cohort if (col := rec.get(variable)) is not None]
    observed = np.concatenate(chunks) if chunks else np.empty(0)
    if observed.size == 0:
        return []
    values, counts = np.unique(observed, return_counts=True)
    fractions = np.cumsum(counts) / observed.size
    return [(float(v), float(f)) for v, f in zip(values, fractions)]


# --- directories -----------------------------------------------------------

EVENT_SUFFIX = ".evt.psv"


def _stem(path: Path, suffix: str = ".psv") -> str:
    name = path.name
    return name[: -len(suffix)] if name.endswith(suffix) else path.stem


def read_patient(path, *, truncate: bool = True) -> PatientRecord:
    """Read ``<pid>.psv`` plus its ``<pid>.evt.psv`` sidecar when present."""
    path = Path(path)
    pid = _stem(path)
    sidecar = path.with_name(pid + EVENT_SUFFIX)
    events = parse_event_file(sidecar.read_bytes()) if sidecar.exists() else None
    try:
        return parse_patient_file(path.read_bytes(), pid, truncate=truncate, events=events)
    except FormatError as exc:
        raise FormatError(f"{path.name}: {exc}") from exc


def patient_files(directory) -> list[Path]:
    return sorted(p for p in Path(directory).glob("*.psv") if not p.name.endswith(EVENT_SUFFIX))


def read_patients(directory, *, truncate: bool = True, workers: int = 1) -> list[PatientRecord]:
    files = patient_files(directory)
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        return list(pool.map(lambda p: read_patient(p, truncate=truncate), files))


def write_patient(directory, record: PatientRecord) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / f"{record.patient_id}.psv").write_text(format_patient_file(record))
    (directory / f"{record.patient_id}{EVENT_SUFFIX}").write_text(format_event_file(record.events))


def read_prediction_dir(directory, workers: int = 1) -> dict[str, dict[str, PredictionStream]]:
    """Read ``<dir>/<algorithm>/<pid>.psv`` into ``{algorithm: {pid: stream}}``."""
    root = Path(directory)
    jobs = [
        (alg.name, path)
        for alg in sorted(p for p in root.iterdir() if p.is_dir())
        for path in sorted(alg.glob("*.psv"))
    ]

    def load(job):
        alg, path = job
        try:
            return parse_prediction_file(path.read_bytes(), alg, _stem(path))
        except FormatError as exc:
            raise FormatError(f"{alg}/{path.name}: {exc}") from exc

    bundle: dict[str, dict[str, PredictionStream]] = {}
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        for stream in pool.map(load, jobs):
            bundle.setdefault(stream.algorithm_id, {})[stream.patient_id] = stream
    return bundle


def write_predictions(directory, streams: Mapping[str, PredictionStream] | Sequence[PredictionStream]) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    items = streams.values() if isinstance(streams, Mapping) else streams
    for stream in items:
        (directory / f"{stream.patient_id}.psv").write_text(format_prediction_file(stream))
