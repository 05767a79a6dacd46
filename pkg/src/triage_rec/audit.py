"""Causality instrumentation: proves no future or test data leaks into fitting.

The audit records which documents each fitting stage consumed and checks
every history lookup against its query time. A clean run reports zero
violations; the acceptance suite runs the whole pipeline under it.
"""

from __future__ import annotations

import json
from collections import Counter
from typing import Iterable

import numpy as np


class CausalityAudit:
    def __init__(self, test_ids: Iterable[str]):
        self.test_ids = frozenset(test_ids)
        self.stage_counts: Counter = Counter()
        self.doc_violations: list[tuple[str, str]] = []
        self.history_checks = 0
        self.history_violations = 0

    def record_docs(self, stage: str, email_ids: Iterable[str]) -> None:
        """Note that `stage` consumed these documents while fitting."""
        for eid in email_ids:
            self.stage_counts[stage] += 1
            if eid in self.test_ids:
                self.doc_violations.append((stage, eid))

    def record_history(self, query_ts: int, timeline_ts: np.ndarray, selections) -> None:
        """Check that every selected history email strictly precedes the query."""
        for sel in selections:
            self.history_checks += int(len(sel))
            if len(sel) and int(timeline_ts[np.asarray(sel)].max()) >= query_ts:
                self.history_violations += 1

    @property
    def violations(self) -> int:
        return len(self.doc_violations) + self.history_violations

    def summary(self) -> dict:
        return {
            "stages": dict(self.stage_counts),
            "doc_violations": len(self.doc_violations),
            "history_checks": self.history_checks,
            "history_violations": self.history_violations,
            "violations": self.violations,
        }

    def to_json(self) -> str:
        return json.dumps(self.summary(), sort_keys=True, indent=2)

    def assert_clean(self) -> None:
        if self.violations:
            raise AssertionError(f"causality audit failed: {self.summary()}")
