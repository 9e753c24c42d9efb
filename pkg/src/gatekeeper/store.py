"""Durable gateway state.

State lives in memory and every mutation is one JSON-lines event appended
to events.jsonl; startup replays the file. Mutations funnel through
apply() under one lock so replay and live operation share the same code
path. The audit log is separate (auditlog module): events carry payloads
the business state needs, audit entries carry the signed trail.

Rate-limiter buckets and anomaly baselines are deliberately volatile;
they are monitoring state, not records.
"""

from __future__ import annotations

import base64
import json
import threading
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from .egress import ControlledCorpus, ReviewItem, ReviewKind, ReviewQueue, ReviewStatus
from .seqio import NucleotideSequence, parse_fasta, serialize_fasta
from .taxonomy import BdlTier, DatasetDescriptor
from .watermark import HoneytokenRecord
from .seqio import kmers as _kmers


class StoreError(Exception):
    pass


class UnknownResource(StoreError):
    pass


class IllegalTransition(StoreError):
    pass


class RequestStatus(Enum):
    Pending = "Pending"
    Decided = "Decided"
    Overdue = "Overdue"


class AppealStatus(Enum):
    Filed = "Filed"
    UnderReview = "UnderReview"
    Upheld = "Upheld"
    Overturned = "Overturned"


@dataclass
class DatasetRecordSet:
    dataset_id: str
    descriptor: DatasetDescriptor
    tier: BdlTier
    sequences: list[NucleotideSequence]
    provenance: str
    registered_by: str
    registered_at: float
    similarity: float = 0.0
    honeytoken_ids: list[str] = field(default_factory=list)
    classification_request_id: str | None = None
    tier_overridden: bool = False
    warnings: list[str] = field(default_factory=list)

    def metadata(self) -> dict:
        return {
            "dataset_id": self.dataset_id,
            "descriptor": self.descriptor.to_json_dict(),
            "tier": int(self.tier),
            "record_count": len(self.sequences),
            "total_bases": sum(len(s) for s in self.sequences),
            "provenance": self.provenance,
            "registered_by": self.registered_by,
            "registered_at": self.registered_at,
            "similarity": self.similarity,
            "warnings": self.warnings,
            "tier_overridden": self.tier_overridden,
        }


@dataclass
class ClassificationRequest:
    id: str
    descriptor: DatasetDescriptor
    submitted_by: str
    submitted_at: float
    due_at: float
    proposed_tier: BdlTier
    status: RequestStatus = RequestStatus.Pending
    decided_tier: BdlTier | None = None
    decided_at: float | None = None
    decided_by: str | None = None
    override_reason: str | None = None
    dataset_id: str | None = None
    overdue_item_id: str | None = None

    def status_at(self, now: float) -> RequestStatus:
        if self.status is RequestStatus.Decided:
            return RequestStatus.Decided
        return RequestStatus.Overdue if now > self.due_at else RequestStatus.Pending

    def to_json_dict(self, now: float | None = None) -> dict:
        status = self.status if now is None else self.status_at(now)
        return {
            "id": self.id,
            "descriptor": self.descriptor.to_json_dict(),
            "submitted_by": self.submitted_by,
            "submitted_at": self.submitted_at,
            "due_at": self.due_at,
            "proposed_tier": int(self.proposed_tier),
            "status": status.value,
            "decided_tier": None if self.decided_tier is None else int(self.decided_tier),
            "decided_at": self.decided_at,
            "decided_by": self.decided_by,
            "override_reason": self.override_reason,
            "dataset_id": self.dataset_id,
        }


@dataclass
class Appeal:
    id: str
    classification_request_id: str
    filed_by: str
    grounds: str
    status: AppealStatus = AppealStatus.Filed
    new_tier: BdlTier | None = None
    review_item_id: str | None = None

    def to_json_dict(self) -> dict:
        return {
            "id": self.id,
            "classification_request_id": self.classification_request_id,
            "filed_by": self.filed_by,
            "grounds": self.grounds,
            "status": self.status.value,
            "new_tier": None if self.new_tier is None else int(self.new_tier),
        }


@dataclass
class EgressRecord:
    id: str
    principal_id: str
    session_id: str
    artifact_kind: str
    content: bytes
    declared_provenance: str
    at: float
    tier: BdlTier
    scope: list[str]
    outcome: str
    reason: str
    similarity: float
    review_item_id: str | None = None
    released: bool = False
    release_provenance: dict | None = None

    def to_json_dict(self) -> dict:
        return {
            "id": self.id,
            "principal_id": self.principal_id,
            "session_id": self.session_id,
            "artifact_kind": self.artifact_kind,
            "declared_provenance": self.declared_provenance,
            "at": self.at,
            "tier": int(self.tier),
            "scope": self.scope,
            "outcome": self.outcome,
            "reason": self.reason,
            "similarity": self.similarity,
            "review_item_id": self.review_item_id,
            "released": self.released,
            "release_provenance": self.release_provenance,
        }


@dataclass
class Job:
    id: str
    principal_id: str
    dataset_id: str
    submitted_at: float
    provenance: str
    status: str = "Completed"  # no-op runner: jobs complete immediately


class Store:
    """In-memory state + append-only event log."""

    def __init__(self, events_path=None, screening_k: int = 30):
        self._path = Path(events_path) if events_path else None
        self._lock = threading.RLock()
        self.screening_k = screening_k

        self.datasets: dict[str, DatasetRecordSet] = {}
        self.classification_requests: dict[str, ClassificationRequest] = {}
        self.appeals: dict[str, Appeal] = {}
        self.egress_requests: dict[str, EgressRecord] = {}
        self.jobs: dict[str, Job] = {}
        self.honeytokens: list[HoneytokenRecord] = []
        self.review_queue = ReviewQueue()
        self.corpus = ControlledCorpus(k=screening_k)
        self._counters: dict[str, int] = {}

        if self._path is not None and self._path.exists():
            for line in self._path.read_text().splitlines():
                if line.strip():
                    self._apply(json.loads(line))

    # -- ids -------------------------------------------------------------

    def next_id(self, prefix: str) -> str:
        with self._lock:
            n = self._counters.get(prefix, 0) + 1
            self._counters[prefix] = n
            return f"{prefix}-{n:05d}"

    def _bump_counter(self, full_id: str) -> None:
        prefix, _, num = full_id.rpartition("-")
        try:
            n = int(num)
        except ValueError:
            return
        self._counters[prefix] = max(self._counters.get(prefix, 0), n)

    # -- event machinery ---------------------------------------------------

    def commit(self, event: dict) -> None:
        """Apply the event to memory and append it to the log."""
        with self._lock:
            self._apply(event)
            if self._path is not None:
                with open(self._path, "a", encoding="utf-8") as fh:
                    fh.write(json.dumps(event, sort_keys=True) + "\n")
                    fh.flush()

    def _apply(self, event: dict) -> None:
        handler = getattr(self, "_on_" + event["type"])
        handler(event)

    # -- handlers ----------------------------------------------------------

    def _on_dataset_registered(self, ev: dict) -> None:
        sequences = parse_fasta(ev["fasta"])
        descriptor = DatasetDescriptor.from_json_dict(ev["descriptor"])
        ds = DatasetRecordSet(
            dataset_id=ev["dataset_id"],
            descriptor=descriptor,
            tier=BdlTier(ev["tier"]),
            sequences=sequences,
            provenance=ev["provenance"],
            registered_by=ev["registered_by"],
            registered_at=ev["registered_at"],
            similarity=ev["similarity"],
            honeytoken_ids=[h["token_id"] for h in ev.get("honeytokens", [])],
            classification_request_id=ev.get("classification_request_id"),
            warnings=ev.get("warnings", []),
        )
        self.datasets[ds.dataset_id] = ds
        self._bump_counter(ds.dataset_id)
        for doc in ev.get("honeytokens", []):
            bases = doc["sequence"]
            record = HoneytokenRecord(
                token_id=doc["token_id"],
                sequence_hash=doc["sha256"],
                kmer_set=_kmers(bases, self.screening_k)
                if len(bases) >= self.screening_k
                else None,
                created_at=doc["created_at"],
                planted_in=ds.dataset_id,
            )
            self.honeytokens.append(record)
            self._bump_counter(record.token_id)
        if ds.tier >= BdlTier.BDL2:
            self.corpus.add_dataset(ds.dataset_id, ds.sequences)
        cr_id = ev.get("classification_request_id")
        if cr_id and cr_id in self.classification_requests:
            self.classification_requests[cr_id].dataset_id = ds.dataset_id

    def _on_cr_submitted(self, ev: dict) -> None:
        cr = ClassificationRequest(
            id=ev["id"],
            descriptor=DatasetDescriptor.from_json_dict(ev["descriptor"]),
            submitted_by=ev["submitted_by"],
            submitted_at=ev["submitted_at"],
            due_at=ev["due_at"],
            proposed_tier=BdlTier(ev["proposed_tier"]),
        )
        self.classification_requests[cr.id] = cr
        self._bump_counter(cr.id)

    def _on_cr_decided(self, ev: dict) -> None:
        cr = self.classification_requests[ev["id"]]
        cr.status = RequestStatus.Decided
        cr.decided_tier = BdlTier(ev["tier"])
        cr.decided_at = ev["decided_at"]
        cr.decided_by = ev["decided_by"]
        cr.override_reason = ev.get("override_reason")

    def _on_cr_overdue_opened(self, ev: dict) -> None:
        cr = self.classification_requests[ev["id"]]
        cr.overdue_item_id = ev["review_item_id"]

    def _on_appeal_filed(self, ev: dict) -> None:
        appeal = Appeal(
            id=ev["id"],
            classification_request_id=ev["classification_request_id"],
            filed_by=ev["filed_by"],
            grounds=ev["grounds"],
            review_item_id=ev.get("review_item_id"),
        )
        self.appeals[appeal.id] = appeal
        self._bump_counter(appeal.id)

    def _on_appeal_decided(self, ev: dict) -> None:
        appeal = self.appeals[ev["id"]]
        appeal.status = AppealStatus(ev["status"])
        if ev.get("new_tier") is not None:
            appeal.new_tier = BdlTier(ev["new_tier"])

    def _on_dataset_tier_changed(self, ev: dict) -> None:
        ds = self.datasets[ev["dataset_id"]]
        ds.tier = BdlTier(ev["tier"])
        ds.tier_overridden = True
        self.rebuild_corpus()

    def _on_review_opened(self, ev: dict) -> None:
        doc = ev["item"]
        item = ReviewItem(
            id=doc["id"],
            kind=ReviewKind(doc["kind"]),
            payload=doc["payload"],
            created_at=doc.get("created_at", ""),
        )
        self.review_queue.restore_item(item)

    def _on_review_decided(self, ev: dict) -> None:
        item = self.review_queue.get(ev["id"])
        if item is None:
            return
        item.status = ReviewStatus(ev["decision"])
        item.decided_by = ev["decided_by"]
        item.decided_at = ev["decided_at"]
        item.decision_note = ev.get("note", "")
        item.version = ev["version"]

    def _on_egress_submitted(self, ev: dict) -> None:
        record = EgressRecord(
            id=ev["id"],
            principal_id=ev["principal_id"],
            session_id=ev["session_id"],
            artifact_kind=ev["artifact_kind"],
            content=base64.b64decode(ev["content_b64"]),
            declared_provenance=ev["declared_provenance"],
            at=ev["at"],
            tier=BdlTier(ev["tier"]),
            scope=ev["scope"],
            outcome=ev["outcome"],
            reason=ev["reason"],
            similarity=ev["similarity"],
            review_item_id=ev.get("review_item_id"),
        )
        self.egress_requests[record.id] = record
        self._bump_counter(record.id)

    def _on_egress_resolved(self, ev: dict) -> None:
        record = self.egress_requests[ev["id"]]
        record.outcome = ev["outcome"]
        record.reason = ev["reason"]
        record.released = ev.get("released", False)
        record.release_provenance = ev.get("release_provenance")

    def _on_job_submitted(self, ev: dict) -> None:
        job = Job(
            id=ev["id"],
            principal_id=ev["principal_id"],
            dataset_id=ev["dataset_id"],
            submitted_at=ev["submitted_at"],
            provenance=ev.get("provenance", ""),
        )
        self.jobs[job.id] = job
        self._bump_counter(job.id)

    # -- derived -----------------------------------------------------------

    def rebuild_corpus(self) -> None:
        corpus = ControlledCorpus(k=self.screening_k)
        for ds in self.datasets.values():
            if ds.tier >= BdlTier.BDL2:
                corpus.add_dataset(ds.dataset_id, ds.sequences)
        self.corpus = corpus

    def dataset_fasta(self, dataset_id: str) -> str:
        return serialize_fasta(self.datasets[dataset_id].sequences)
