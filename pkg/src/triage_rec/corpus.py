"""Mailbox data model: ingestion, reply labeling and temporal splitting.

The input is a stream of raw messages (one JSON object per line). Ingestion
expands every first-in-thread message into one prediction instance per
recipient, labels each instance by scanning the reply messages, and drops
recipients that never replied inside the considered time window. Replies are
consumed only to set labels; they never become prediction instances.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Iterator

import numpy as np

from .errors import DataError

RAW_FIELDS = ("message_id", "timestamp", "sender", "recipients", "subject", "body", "reply_to")


@dataclass(frozen=True)
class RawMessage:
    """One message as it appears on the wire, before any per-recipient expansion."""

    message_id: str
    timestamp: int | None
    sender: str
    recipients: tuple[str, ...]
    subject: str = ""
    body: str = ""
    reply_to: str | None = None

    @classmethod
    def from_json(cls, line: str) -> "RawMessage":
        obj = json.loads(line)
        message_id = obj["message_id"]
        if not isinstance(message_id, str) or not message_id:
            raise ValueError("message_id must be a nonempty string")
        ts = obj.get("timestamp")
        if ts is not None:
            ts = int(ts)
        recipients = obj.get("recipients") or []
        if not isinstance(recipients, list):
            raise ValueError("recipients must be a list")
        reply_to = obj.get("reply_to") or None
        return cls(
            message_id=message_id,
            timestamp=ts,
            sender=obj.get("sender") or "",
            recipients=tuple(str(r) for r in recipients),
            subject=str(obj.get("subject") or ""),
            body=str(obj.get("body") or ""),
            reply_to=reply_to,
        )

    def to_json(self) -> str:
        return json.dumps(
            {
                "message_id": self.message_id,
                "timestamp": self.timestamp,
                "sender": self.sender,
                "recipients": list(self.recipients),
                "subject": self.subject,
                "body": self.body,
                "reply_to": self.reply_to,
            },
            sort_keys=True,
        )


@dataclass
class Email:
    """One received email instance: a (first-in-thread message, recipient) pair."""

    email_id: str
    source_message_id: str
    recipient_id: str
    timestamp: int
    sender_id: str
    subject: str
    body: str
    replied: bool = False
    reply_ts: int | None = None  # earliest qualifying reply, None when unreplied


def make_email_id(message_id: str, recipient_id: str) -> str:
    return f"{message_id}::{recipient_id}"


@dataclass(frozen=True)
class SplitSpec:
    """Temporal partition boundaries (inclusive upper bounds, epoch seconds)."""

    train_end: int
    validation_end: int
    test_end: int

    def __post_init__(self) -> None:
        if not (self.train_end < self.validation_end < self.test_end):
            raise DataError(
                "split boundaries must satisfy train_end < validation_end < test_end"
            )

    def partition_of(self, timestamp: int) -> str:
        if timestamp <= self.train_end:
            return "train"
        if timestamp <= self.validation_end:
            return "validation"
        return "test"


@dataclass
class IngestReport:
    """Counts collected while ingesting, emitted as JSON by the CLI."""

    total_records: int = 0
    malformed_records: int = 0
    duplicate_drops: int = 0
    missing_field_drops: int = 0
    sole_recipient_drops: int = 0
    out_of_window_drops: int = 0
    excluded_recipients: int = 0
    unknown_reply_targets: int = 0
    n_recipients: int = 0
    n_emails: int = 0
    splits: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(self.__dict__, sort_keys=True, indent=2)


class RecipientTimeline:
    """Immutable per-recipient view with arrays for fast history lookups."""

    def __init__(self, recipient_id: str, emails: list[Email]):
        self.recipient_id = recipient_id
        self.emails = emails
        self.timestamps = np.array([e.timestamp for e in emails], dtype=np.int64)
        self.replied = np.array([e.replied for e in emails], dtype=bool)
        # unreplied emails get +inf so "reply before t" comparisons work uniformly
        self.reply_ts = np.array(
            [e.reply_ts if e.reply_ts is not None else np.iinfo(np.int64).max for e in emails],
            dtype=np.int64,
        )

    def __len__(self) -> int:
        return len(self.emails)


class MailboxIndex:
    """All prediction instances, grouped per recipient and sorted by time."""

    def __init__(self, emails_by_recipient: dict[str, list[Email]]):
        self.timelines: dict[str, RecipientTimeline] = {}
        for rcpt, emails in emails_by_recipient.items():
            emails.sort(key=lambda e: (e.timestamp, e.email_id))
            self.timelines[rcpt] = RecipientTimeline(rcpt, emails)

    @property
    def recipients(self) -> list[str]:
        return sorted(self.timelines)

    def reply_count(self, recipient_id: str) -> int:
        return int(self.timelines[recipient_id].replied.sum())

    def emails(self) -> Iterator[Email]:
        for rcpt in self.recipients:
            yield from self.timelines[rcpt].emails

    def email_by_id(self) -> dict[str, Email]:
        return {e.email_id: e for e in self.emails()}

    def __len__(self) -> int:
        return sum(len(t) for t in self.timelines.values())


def read_jsonl(path: str, report: IngestReport | None = None) -> Iterator[RawMessage]:
    """Yield messages from a JSONL file, counting (not raising on) bad records."""
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if report is not None:
                report.total_records += 1
            try:
                yield RawMessage.from_json(line)
            except (json.JSONDecodeError, KeyError, TypeError, ValueError):
                if report is not None:
                    report.malformed_records += 1


def label_replies(
    emails: dict[str, Email], messages: Iterable[RawMessage], report: IngestReport | None = None
) -> int:
    """Set Email.replied from explicit reply links.

    An email counts as replied when some message from its recipient points at
    its source message and is not timestamped before it. Idempotent; returns
    the number of label assignments applied.
    """
    by_source: dict[str, list[Email]] = {}
    known_roots = set()
    for email in emails.values():
        by_source.setdefault(email.source_message_id, []).append(email)
        known_roots.add(email.source_message_id)

    known_messages = set(known_roots)
    replies = []
    for msg in messages:
        if msg.reply_to:
            replies.append(msg)
        else:
            known_messages.add(msg.message_id)

    applied = 0
    for msg in replies:
        known_messages.add(msg.message_id)
    for msg in replies:
        targets = by_source.get(msg.reply_to)
        if targets is None:
            if msg.reply_to not in known_messages and report is not None:
                report.unknown_reply_targets += 1
            continue
        for email in targets:
            if email.recipient_id != msg.sender:
                continue
            if msg.timestamp is None or msg.timestamp < email.timestamp:
                continue
            if not email.replied or email.reply_ts is None or msg.timestamp < email.reply_ts:
                email.replied = True
                email.reply_ts = (
                    msg.timestamp
                    if email.reply_ts is None
                    else min(email.reply_ts, msg.timestamp)
                )
                applied += 1
    return applied


def ingest(
    messages: Iterable[RawMessage],
    split: SplitSpec,
    report: IngestReport | None = None,
) -> tuple[MailboxIndex, IngestReport]:
    """Run the full ingestion pipeline and return a labeled index plus its report.

    Filter order: duplicates, missing sender/timestamp, sender-is-sole-recipient,
    outside the considered window; then per-recipient expansion of first-in-thread
    messages, reply labeling, and exclusion of recipients with zero replies.
    """
    report = report or IngestReport()

    seen_ids: set[str] = set()
    kept: list[RawMessage] = []
    for msg in messages:
        if msg.message_id in seen_ids:
            report.duplicate_drops += 1
            continue
        seen_ids.add(msg.message_id)
        if not msg.sender or msg.timestamp is None:
            report.missing_field_drops += 1
            continue
        if msg.timestamp > split.test_end:
            report.out_of_window_drops += 1
            continue
        distinct = tuple(dict.fromkeys(msg.recipients))
        if len(distinct) == 1 and distinct[0] == msg.sender:
            report.sole_recipient_drops += 1
            continue
        kept.append(msg)

    emails: dict[str, Email] = {}
    for msg in kept:
        if msg.reply_to:
            continue  # replies only contribute labels
        for rcpt in dict.fromkeys(msg.recipients):
            eid = make_email_id(msg.message_id, rcpt)
            emails[eid] = Email(
                email_id=eid,
                source_message_id=msg.message_id,
                recipient_id=rcpt,
                timestamp=msg.timestamp,
                sender_id=msg.sender,
                subject=msg.subject,
                body=msg.body,
            )

    label_replies(emails, kept, report)

    repliers = {e.recipient_id for e in emails.values() if e.replied}
    all_recipients = {e.recipient_id for e in emails.values()}
    report.excluded_recipients = len(all_recipients - repliers)

    by_recipient: dict[str, list[Email]] = {}
    for email in emails.values():
        if email.recipient_id in repliers:
            by_recipient.setdefault(email.recipient_id, []).append(email)

    if not by_recipient:
        raise DataError("ingestion produced an empty corpus")

    index = MailboxIndex(by_recipient)
    report.n_recipients = len(index.timelines)
    report.n_emails = len(index)
    report.splits = split_summary(index, split)
    return index, report


def split_emails(index: MailboxIndex, spec: SplitSpec) -> dict[str, list[Email]]:
    """Partition every email into train/validation/test by its timestamp."""
    parts: dict[str, list[Email]] = {"train": [], "validation": [], "test": []}
    for email in index.emails():
        parts[spec.partition_of(email.timestamp)].append(email)
    return parts


def split_summary(index: MailboxIndex, spec: SplitSpec) -> dict[str, dict]:
    parts = split_emails(index, spec)
    summary = {}
    for name, emails in parts.items():
        positives = sum(1 for e in emails if e.replied)
        recipients = len({e.recipient_id for e in emails})
        summary[name] = {
            "count": len(emails),
            "recipients": recipients,
            "positives": positives,
            "positive_ratio": (positives / len(emails)) if emails else 0.0,
        }
    return summary


def format_split_table(summary: dict[str, dict]) -> str:
    """Render the partition statistics in the usual summary-table layout."""
    lines = ["partition        emails  recipients  positives  positive_ratio"]
    for name in ("train", "validation", "test"):
        s = summary.get(name)
        if s is None:
            continue
        lines.append(
            f"{name:<14} {s['count']:>8} {s['recipients']:>11} {s['positives']:>10}"
            f"  {100.0 * s['positive_ratio']:.1f}%"
        )
    return "\n".join(lines)


def reply_rates(
    index: MailboxIndex, spec: SplitSpec
) -> tuple[dict[str, float], float]:
    """Per-recipient reply fraction over the training partition.

    Returns the per-recipient map and the global training positive ratio used
    as the fallback for recipients with no training-window emails.
    """
    counts: Counter = Counter()
    positives: Counter = Counter()
    total = 0
    total_pos = 0
    for email in index.emails():
        if spec.partition_of(email.timestamp) != "train":
            continue
        counts[email.recipient_id] += 1
        total += 1
        if email.replied:
            positives[email.recipient_id] += 1
            total_pos += 1
    global_rate = (total_pos / total) if total else 0.0
    rates = {r: positives[r] / counts[r] for r in counts}
    return rates, global_rate
