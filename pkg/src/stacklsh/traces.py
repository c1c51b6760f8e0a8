"""Crash-report parsing, frame normalization, and corpus statistics.

A stack trace is an ordered sequence of frames with the innermost call
first.  Frames are normalized to text tokens at a configurable
granularity (full method, enclosing class, or package), and a corpus of
traces yields document frequencies and IDF values shared by the
similarity measures and the hash families.
"""

from __future__ import annotations

import hashlib
import json
import math
import re
import warnings
from collections import Counter
from dataclasses import dataclass
from datetime import datetime
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence, Union

from .errors import DuplicateId, MalformedFrame, MalformedReport

#: Traces longer than this many frames are truncated from the bottom
#: (outermost calls dropped); the innermost frames carry the crash signal.
DEFAULT_MAX_FRAMES = 64

_FRAME_RE = re.compile(r"^at\s+([^\s(]+)\s*(?:\(\s*([^():]*?)\s*(?::(\d+))?\s*\))?$")


class FrameGranularity(str, Enum):
    """Level at which two frames are considered equal."""

    METHOD = "method"
    CLASS = "class"
    PACKAGE = "package"


def _granularity(value: Union[FrameGranularity, str]) -> FrameGranularity:
    if isinstance(value, FrameGranularity):
        return value
    return FrameGranularity(str(value).lower())


@dataclass(frozen=True)
class StackFrame:
    """One stack-trace entry: a fully-qualified method, optional file and line.

    Equality at a given granularity is decided by the normalized token
    only; ``source_file`` and ``line`` never participate.
    """

    function: str
    source_file: str | None = None
    line: int | None = None

    def __post_init__(self) -> None:
        fn = self.function.strip()
        if not fn:
            raise MalformedFrame("frame function name is empty")
        object.__setattr__(self, "function", fn)
        if self.line is not None and self.line < 0:
            raise MalformedFrame(f"negative line number: {self.line}")


@dataclass(frozen=True)
class StackTrace:
    """Ordered frame sequence; index 0 is the innermost call."""

    frames: tuple[StackFrame, ...]

    def __post_init__(self) -> None:
        if not isinstance(self.frames, tuple):
            object.__setattr__(self, "frames", tuple(self.frames))
        if len(self.frames) == 0:
            raise MalformedReport("a stack trace needs at least one frame")

    def __len__(self) -> int:
        return len(self.frames)

    def __iter__(self) -> Iterator[StackFrame]:
        return iter(self.frames)

    @property
    def functions(self) -> tuple[str, ...]:
        return tuple(f.function for f in self.frames)


@dataclass(frozen=True)
class CrashReport:
    """A crash report: a stack trace plus run-time context fields."""

    id: str
    trace: StackTrace
    session_id: str | None = None
    version: str | None = None
    timestamp: datetime | None = None
    error_type: str | None = None
    functionality: str | None = None
    message: str | None = None
    user_message: str | None = None


def parse_frame_line(line: str) -> StackFrame:
    """Parse one ``at pkg.Class.method(File.java:NN)`` line.

    The file and line parts are optional.  Raises :class:`MalformedFrame`
    when the line starts with ``at`` but does not match the grammar.
    """
    m = _FRAME_RE.match(line.strip())
    if m is None:
        raise MalformedFrame(f"unparseable frame line: {line!r}")
    function, source_file, line_no = m.groups()
    return StackFrame(
        function=function,
        source_file=source_file or None,
        line=int(line_no) if line_no is not None else None,
    )


def normalize_frame(
    frame: Union[StackFrame, str],
    granularity: Union[FrameGranularity, str] = FrameGranularity.METHOD,
) -> str:
    """Reduce a frame to its comparison token at the given granularity.

    ``method`` keeps the full qualified name, ``class`` drops the method
    segment, ``package`` drops the class and method segments.  A name with
    too few segments falls back to the shortest non-empty truncation.
    """
    fn = frame.function if isinstance(frame, StackFrame) else str(frame).strip()
    g = _granularity(granularity)
    if g is FrameGranularity.METHOD:
        return fn
    parts = fn.split(".")
    if g is FrameGranularity.CLASS:
        return ".".join(parts[:-1]) or fn
    return ".".join(parts[:-2]) or ".".join(parts[:-1]) or fn


def trace_tokens(
    trace: StackTrace,
    granularity: Union[FrameGranularity, str] = FrameGranularity.METHOD,
) -> list[str]:
    """Normalized token sequence of a trace, innermost call first."""
    g = _granularity(granularity)
    return [normalize_frame(f, g) for f in trace.frames]


def _parse_timestamp(value: str, strict: bool) -> datetime | None:
    try:
        return datetime.fromisoformat(value)
    except ValueError:
        if strict:
            raise MalformedReport(f"bad timestamp: {value!r}") from None
        warnings.warn(f"ignoring unparseable timestamp {value!r}", stacklevel=3)
        return None


def parse_report(
    raw: Union[Mapping, str],
    *,
    strict: bool = False,
    max_frames: int = DEFAULT_MAX_FRAMES,
) -> CrashReport:
    """Parse one JSON record (text or mapping) into a :class:`CrashReport`.

    Two trace encodings are accepted: ``detail``, a newline-joined block
    of ``at ...`` lines (non-frame context lines are ignored), and the
    parsed form ``frames``, a list of ``{"function", "file", "line"}``
    objects.  In lenient mode unparseable ``at`` lines are skipped with a
    warning; in strict mode they raise :class:`MalformedFrame`.
    """
    if isinstance(raw, str):
        try:
            raw = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise MalformedReport(f"not a JSON record: {exc}") from None
    if not isinstance(raw, Mapping):
        raise MalformedReport("report record must be a JSON object")

    report_id = raw.get("id")
    if not report_id:
        raise MalformedReport("report has no id")

    frames: list[StackFrame] = []
    if raw.get("frames") is not None:
        for obj in raw["frames"]:
            line = obj.get("line")
            frames.append(
                StackFrame(
                    function=obj["function"],
                    source_file=obj.get("file"),
                    line=int(line) if line is not None else None,
                )
            )
    else:
        for line_text in str(raw.get("detail", "")).splitlines():
            stripped = line_text.strip()
            if not stripped.startswith("at "):
                continue  # exception headers and ellipses are context, not frames
            try:
                frames.append(parse_frame_line(stripped))
            except MalformedFrame:
                if strict:
                    raise
                warnings.warn(f"skipping bad frame line {stripped!r}", stacklevel=2)
    if not frames:
        raise MalformedReport(f"report {report_id!r} has an empty trace")
    frames = frames[:max_frames]

    ts = raw.get("timestamp") or raw.get("@timestamp")
    return CrashReport(
        id=str(report_id),
        trace=StackTrace(tuple(frames)),
        session_id=raw.get("sessionId"),
        version=raw.get("version"),
        timestamp=_parse_timestamp(str(ts), strict) if ts else None,
        error_type=raw.get("typeError"),
        functionality=raw.get("functionality"),
        message=raw.get("message"),
        user_message=raw.get("userMessage"),
    )


def report_to_json(report: CrashReport) -> dict:
    """Serialize a report to the parsed-form JSON object (round-trippable)."""
    obj: dict = {"id": report.id}
    if report.session_id is not None:
        obj["sessionId"] = report.session_id
    if report.version is not None:
        obj["version"] = report.version
    if report.timestamp is not None:
        obj["timestamp"] = report.timestamp.isoformat(sep=" ")
    if report.error_type is not None:
        obj["typeError"] = report.error_type
    if report.functionality is not None:
        obj["functionality"] = report.functionality
    if report.message is not None:
        obj["message"] = report.message
    if report.user_message is not None:
        obj["userMessage"] = report.user_message
    obj["frames"] = [
        {"function": f.function, "file": f.source_file, "line": f.line}
        for f in report.trace.frames
    ]
    return obj


def load_reports(
    path: Union[str, Path],
    *,
    strict: bool = False,
    max_frames: int = DEFAULT_MAX_FRAMES,
) -> list[CrashReport]:
    """Read a JSON-lines corpus file, one report per line."""
    reports = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                reports.append(parse_report(line, strict=strict, max_frames=max_frames))
            except (MalformedReport, MalformedFrame) as exc:
                if strict:
                    raise MalformedReport(f"line {lineno}: {exc}") from exc
                warnings.warn(f"skipping line {lineno}: {exc}", stacklevel=2)
    return reports


def save_reports(reports: Iterable[CrashReport], path: Union[str, Path]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for report in reports:
            fh.write(json.dumps(report_to_json(report), sort_keys=True) + "\n")


@dataclass(frozen=True)
class CorpusStats:
    """Frame vocabulary, document frequencies, and IDF of a trace corpus.

    Immutable after construction; safe for concurrent readers.  The IDF
    convention is ``idf(t) = ln(N / df(t))``; tokens unseen at query time
    are floored at ``df = 1``, i.e. ``idf = ln N``.
    """

    n_traces: int
    vocabulary: Mapping[str, int]
    doc_frequency: Mapping[str, int]
    idf: Mapping[str, float]
    granularity: FrameGranularity = FrameGranularity.METHOD

    @property
    def vocab_size(self) -> int:
        return len(self.vocabulary)

    def idf_of(self, token: str) -> float:
        """IDF of a token, flooring unseen tokens at df = 1."""
        got = self.idf.get(token)
        if got is not None:
            return got
        return math.log(self.n_traces) if self.n_traces > 1 else 0.0

    def digest(self) -> str:
        """Stable hex digest of the vocabulary and counts."""
        payload = json.dumps(
            {
                "n": self.n_traces,
                "df": sorted(self.doc_frequency.items()),
                "granularity": self.granularity.value,
            },
            sort_keys=True,
        ).encode("utf-8")
        return hashlib.sha256(payload).hexdigest()


ReportOrTrace = Union[CrashReport, StackTrace]


def _as_trace(item: ReportOrTrace) -> StackTrace:
    return item.trace if isinstance(item, CrashReport) else item


def build_corpus(
    reports: Sequence[ReportOrTrace],
    granularity: Union[FrameGranularity, str] = FrameGranularity.METHOD,
) -> CorpusStats:
    """Build corpus statistics over a non-empty list of reports or traces.

    Document frequency counts distinct traces containing a token, ids
    must be unique, and the result is independent of the input order
    (vocabulary indices follow the sorted token order).
    """
    if len(reports) == 0:
        raise ValueError("cannot build statistics over an empty corpus")
    g = _granularity(granularity)

    seen_ids: set[str] = set()
    df: Counter[str] = Counter()
    for item in reports:
        if isinstance(item, CrashReport):
            if item.id in seen_ids:
                raise DuplicateId(f"duplicate report id {item.id!r}")
            seen_ids.add(item.id)
        df.update(set(trace_tokens(_as_trace(item), g)))

    n = len(reports)
    vocabulary = {token: i for i, token in enumerate(sorted(df))}
    idf = {token: math.log(n / count) for token, count in df.items()}
    return CorpusStats(
        n_traces=n,
        vocabulary=vocabulary,
        doc_frequency=dict(df),
        idf=idf,
        granularity=g,
    )


def save_stats(stats: CorpusStats, path: Union[str, Path]) -> None:
    obj = {
        "n_traces": stats.n_traces,
        "doc_frequency": dict(stats.doc_frequency),
        "granularity": stats.granularity.value,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, sort_keys=True)


def load_stats(path: Union[str, Path]) -> CorpusStats:
    with open(path, "r", encoding="utf-8") as fh:
        obj = json.load(fh)
    n = int(obj["n_traces"])
    df = {str(t): int(c) for t, c in obj["doc_frequency"].items()}
    vocabulary = {token: i for i, token in enumerate(sorted(df))}
    idf = {token: math.log(n / count) for token, count in df.items()}
    return CorpusStats(
        n_traces=n,
        vocabulary=vocabulary,
        doc_frequency=df,
        idf=idf,
        granularity=FrameGranularity(obj.get("granularity", "method")),
    )
