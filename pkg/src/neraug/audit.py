"""Audit records for every backend call made during augmentation.

One :class:`GenerationRecord` is written per generation attempt, whatever the
outcome, so the JSON-lines log is a complete account: the number of records
equals the number of attempts, and the accepted records correspond one-to-one
with sentences that reached the output corpus. When self-verification runs,
its exchange is stored on the same record (``verify_prompt`` /
``verify_raw_response``) rather than as a separate row, keeping that
correspondence exact.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable

VERDICT_ACCEPTED = "accepted"
VERDICT_MISSING_ENTITY = "rejected_missing_entity"
VERDICT_FOREIGN_ENTITY = "rejected_foreign_entity"
VERDICT_SELF_VERIFICATION = "rejected_self_verification"
VERDICT_BACKEND_ERROR = "rejected_backend_error"

VERDICTS = (
    VERDICT_ACCEPTED,
    VERDICT_MISSING_ENTITY,
    VERDICT_FOREIGN_ENTITY,
    VERDICT_SELF_VERIFICATION,
    VERDICT_BACKEND_ERROR,
)

STAGE_ENTITY = "entity"
STAGE_INSTANCE = "instance"


@dataclass(frozen=True)
class GenerationRecord:
    """Full audit of one backend attempt.

    ``verdict`` is ``accepted`` iff the attempt produced an artifact that was
    kept (a tagged sentence for instance attempts, >= 0 pool additions for
    entity attempts); the ``rejected_*`` values name the filter that stopped
    it. ``demo_id`` identifies the demonstration used (instance stage only).
    """

    prompt: str
    raw_response: str
    verdict: str
    entity: str | None = None
    type: str | None = None
    demo_id: str | None = None
    timestamp: str = ""
    stage: str = STAGE_INSTANCE
    verify_prompt: str | None = None
    verify_raw_response: str | None = None

    def __post_init__(self):
        if self.verdict not in VERDICTS:
            raise ValueError(f"unknown verdict {self.verdict!r}; expected one of {VERDICTS}")
        if self.stage not in (STAGE_ENTITY, STAGE_INSTANCE):
            raise ValueError(f"unknown stage {self.stage!r}")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, ensure_ascii=False)

    @classmethod
    def from_json(cls, line: str) -> "GenerationRecord":
        return cls(**json.loads(line))


def write_records(records: Iterable[GenerationRecord], path: str | Path) -> int:
    """Write records as JSON-lines; returns the number written."""
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(record.to_json())
            fh.write("\n")
            n += 1
    return n


def read_records(path: str | Path) -> list[GenerationRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(GenerationRecord.from_json(line))
    return records


class Clock:
    """Timestamp source for audit records (wall clock by default).

    Pipelines that must be byte-reproducible (mock runs, tests) inject a
    :class:`LogicalClock` instead, so records carry a deterministic sequence
    of instants rather than real time.
    """

    def now(self) -> str:
        from datetime import datetime, timezone

        return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


class LogicalClock(Clock):
    """Deterministic clock: a fixed epoch advanced one second per call."""

    def __init__(self, start: str = "2020-01-01T00:00:00Z"):
        from datetime import datetime, timezone

        self._epoch = datetime.strptime(start, "%Y-%m-%dT%H:%M:%SZ").replace(
            tzinfo=timezone.utc
        )
        self._ticks = 0

    def now(self) -> str:
        from datetime import timedelta

        instant = self._epoch + timedelta(seconds=self._ticks)
        self._ticks += 1
        return instant.strftime("%Y-%m-%dT%H:%M:%SZ")
