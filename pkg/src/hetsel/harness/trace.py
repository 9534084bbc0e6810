"""Line-oriented run traces.

One record per line with a fixed field order (time, component, kind, then
attribute pairs sorted by key) so that two runs of the same scenario and seed
diff byte-identically.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Iterator, Union

RECORD_KINDS = ("event", "delivery", "decision", "measurement", "trace-point")


class TraceError(ValueError):
    """Unreadable or out-of-order trace data."""


@dataclass(frozen=True)
class TraceRecord:
    at: int
    component: str
    kind: str
    attributes: dict[str, Any] = field(default_factory=dict)


def _format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    text = str(value)
    if text == "":
        return "-"
    return text.replace(" ", "_")


def _parse_value(text: str) -> Any:
    if text == "true":
        return True
    if text == "false":
        return False
    if text == "-":
        return ""
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def format_record(record: TraceRecord) -> str:
    parts = [f"t={record.at}", record.component, record.kind]
    for key in sorted(record.attributes):
        parts.append(f"{key}={_format_value(record.attributes[key])}")
    return " ".join(parts)


def parse_record(line: str) -> TraceRecord:
    parts = line.split(" ")
    if len(parts) < 3 or not parts[0].startswith("t="):
        raise TraceError(f"malformed trace line: {line!r}")
    attributes = {}
    for part in parts[3:]:
        key, _, raw = part.partition("=")
        attributes[key] = _parse_value(raw)
    return TraceRecord(
        at=int(parts[0][2:]),
        component=parts[1],
        kind=parts[2],
        attributes=attributes,
    )


class TraceRecorder:
    """Accumulates records in order; enforces non-decreasing timestamps."""

    def __init__(self) -> None:
        self.records: list[TraceRecord] = []
        self._last_at = 0

    def record(self, at: int, component: str, kind: str, attrs: dict[str, Any]) -> None:
        if at < self._last_at:
            raise TraceError(f"trace time went backwards: {at} after {self._last_at}")
        self._last_at = at
        self.records.append(TraceRecord(at, component, kind, dict(attrs)))

    def lines(self) -> list[str]:
        return [format_record(r) for r in self.records]

    def dump(self, path: Union[str, Path]) -> None:
        Path(path).write_text("\n".join(self.lines()) + "\n", encoding="utf-8")


def read_trace(source: Union[str, Path, Iterable[str]]) -> Iterator[TraceRecord]:
    """Parse a trace file (or an iterable of lines)."""
    if isinstance(source, (str, Path)):
        path = Path(source)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise TraceError(f"cannot read trace {path}: {exc}") from exc
        lines: Iterable[str] = text.splitlines()
    else:
        lines = source
    for line in lines:
        line = line.strip()
        if line:
            yield parse_record(line)
