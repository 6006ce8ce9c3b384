"""Concurrent histories: one record per operation, with logical timestamps."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Iterable, Iterator, Optional, TextIO, Union

from .blocks import EMPTY

ENQ, DEQ = "enq", "deq"


class _Marker:
    __slots__ = ("name",)

    def __init__(self, name: str) -> None:
        self.name = name

    def __repr__(self) -> str:
        return self.name

    def __reduce__(self):
        return self.name


PENDING = _Marker("PENDING")
"""Response of an operation that was invoked but never returned."""

OK = _Marker("OK")
"""Response of a completed enqueue."""

OpId = tuple[int, int]


@dataclass
class Event:
    """One operation: invocation and (unless pending) its response.

    ``op_id`` is ``(process, k)`` where ``k`` counts the process's operations
    from 1.  Timestamps come from a single global counter, so two events are
    ordered in real time exactly when one's response precedes the other's
    invocation.
    """

    op_id: OpId
    process: int
    kind: str
    arg: Any
    invoke_ts: int
    response: Any = PENDING
    response_ts: Optional[int] = None

    @property
    def pending(self) -> bool:
        return self.response is PENDING

    def precedes(self, other: Event) -> bool:
        return self.response_ts is not None and self.response_ts < other.invoke_ts


class MalformedHistory(ValueError):
    pass


@dataclass
class History:
    events: list[Event] = field(default_factory=list)

    def __iter__(self) -> Iterator[Event]:
        return iter(self.events)

    def __len__(self) -> int:
        return len(self.events)

    def by_id(self) -> dict[OpId, Event]:
        return {e.op_id: e for e in self.events}

    def completed(self) -> list[Event]:
        return [e for e in self.events if not e.pending]

    def validate(self) -> None:
        """Raise :class:`MalformedHistory` for structurally impossible input."""
        seen: set[OpId] = set()
        tags: set[Any] = set()
        per_proc: dict[int, list[Event]] = {}
        for e in self.events:
            if e.kind not in (ENQ, DEQ):
                raise MalformedHistory(f"unknown kind {e.kind!r}")
            if e.op_id in seen:
                raise MalformedHistory(f"duplicate op id {e.op_id}")
            seen.add(e.op_id)
            if e.kind == ENQ:
                if e.arg in tags:
                    raise MalformedHistory(f"enqueue tag {e.arg!r} is not unique")
                tags.add(e.arg)
                if e.response not in (OK, PENDING):
                    raise MalformedHistory(f"enqueue {e.op_id} has response {e.response!r}")
            if e.pending:
                if e.response_ts is not None:
                    raise MalformedHistory(f"pending op {e.op_id} has a response time")
            elif e.response_ts is None or e.response_ts <= e.invoke_ts:
                raise MalformedHistory(f"op {e.op_id} responds before it is invoked")
            per_proc.setdefault(e.process, []).append(e)
        for proc, evs in per_proc.items():
            evs.sort(key=lambda e: e.invoke_ts)
            for a, b in zip(evs, evs[1:]):
                if a.pending or a.response_ts >= b.invoke_ts:
                    raise MalformedHistory(f"process {proc} has overlapping operations")

    # -- export ------------------------------------------------------------------

    def dump(self, fh: TextIO) -> None:
        for e in self.events:
            fh.write(json.dumps(event_to_json(e)) + "\n")

    def dumps(self) -> str:
        return "".join(json.dumps(event_to_json(e)) + "\n" for e in self.events)

    @classmethod
    def load(cls, fh: Union[TextIO, Iterable[str]]) -> History:
        events = []
        for n, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                events.append(event_from_json(json.loads(line)))
            except (ValueError, KeyError, TypeError) as exc:
                raise MalformedHistory(f"line {n}: {exc}") from exc
        return cls(events)


def _encode_response(r: Any) -> Any:
    if r is PENDING:
        return "pending"
    if r is OK:
        return "ok"
    if r is EMPTY:
        return "empty"
    return {"value": r}


def _decode_response(r: Any) -> Any:
    if isinstance(r, dict):
        v = r["value"]
        return tuple(v) if isinstance(v, list) else v
    table = {"pending": PENDING, "ok": OK, "empty": EMPTY}
    if r not in table:
        raise ValueError(f"bad response {r!r}")
    return table[r]


def event_to_json(e: Event) -> dict:
    return {
        "op_id": list(e.op_id),
        "process": e.process,
        "kind": e.kind,
        "arg": e.arg,
        "invoke_ts": e.invoke_ts,
        "response": _encode_response(e.response),
        "response_ts": e.response_ts,
    }


def event_from_json(d: dict) -> Event:
    arg = d["arg"]
    op_id = tuple(d["op_id"])
    if len(op_id) != 2:
        raise ValueError("op_id must have two parts")
    return Event(
        op_id=(int(op_id[0]), int(op_id[1])),
        process=int(d["process"]),
        kind=d["kind"],
        arg=tuple(arg) if isinstance(arg, list) else arg,
        invoke_ts=int(d["invoke_ts"]),
        response=_decode_response(d["response"]),
        response_ts=None if d["response_ts"] is None else int(d["response_ts"]),
    )


def point_contention(history: History) -> int:
    """Largest number of operations running at one instant."""
    points = []
    for e in history.events:
        end = e.response_ts if e.response_ts is not None else float("inf")
        points.append((e.invoke_ts, 1))
        points.append((end, -1))
    # Responses at the same timestamp as an invocation come first: intervals
    # are half-open in our logical clock.
    points.sort(key=lambda x: (x[0], x[1]))
    cur = best = 0
    for _, d in points:
        cur += d
        best = max(best, cur)
    return best
