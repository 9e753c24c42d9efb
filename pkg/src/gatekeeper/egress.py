"""TRE-style output checking.

Outbound artifacts are screened for containment against the controlled
corpus (fraction of a candidate sequence's k-mers present in the index),
checked against planted honeytokens, and routed: aggregates pass, matches
block or queue for a human, and the top tier always queues. Free text is
scanned for embedded base runs so sequence content cannot ride out inside
a "summary". When the corpus or token registry cannot be consulted the
verdict is Queued, never Allowed.
"""

from __future__ import annotations

import json
import re
import struct
import threading
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from hashlib import sha256
from pathlib import Path

from .seqio import DEFAULT_SCREENING_K, NucleotideSequence, kmers, parse_fasta
from .taxonomy import BdlTier, EnforcementProfile
from .watermark import HoneytokenRecord, WatermarkKey, detect_honeytoken


class EgressError(Exception):
    pass


class CorpusUnavailable(EgressError):
    pass


class AlreadyDecided(EgressError):
    pass


class VersionConflict(EgressError):
    pass


class NotAuthorized(EgressError):
    pass


# --- controlled corpus -------------------------------------------------------


_MAGIC = b"GKCORP1\n"
_BASE_CODE = {"A": 0, "C": 1, "G": 2, "T": 3}
_BASE_DECODE = "ACGT"


class ControlledCorpus:
    """k-mer index over the sequences of controlled datasets."""

    def __init__(self, k: int = DEFAULT_SCREENING_K):
        self.k = k
        self.dataset_ids: list[str] = []
        self.kmer_index: dict[str, set[int]] = {}
        self._hash_to_dataset: dict[str, int] = {}

    @property
    def sequence_hashes(self) -> set[str]:
        return set(self._hash_to_dataset)

    def __len__(self) -> int:
        return len(self.kmer_index)

    def add_dataset(self, dataset_id: str, sequences) -> None:
        if dataset_id in self.dataset_ids:
            idx = self.dataset_ids.index(dataset_id)
        else:
            self.dataset_ids.append(dataset_id)
            idx = len(self.dataset_ids) - 1
        for seq in sequences:
            bases = seq if isinstance(seq, str) else seq.bases
            self._hash_to_dataset[sha256(bases.encode()).hexdigest()] = idx
            if len(bases) < self.k:
                continue
            for i in range(len(bases) - self.k + 1):
                self.kmer_index.setdefault(bases[i : i + self.k], set()).add(idx)

    def datasets_for_hash(self, digest: str) -> set[str]:
        idx = self._hash_to_dataset.get(digest)
        return {self.dataset_ids[idx]} if idx is not None else set()

    # Binary persistence; the JSON sidecar carries the metadata humans need.

    def save(self, path) -> None:
        path = Path(path)
        kmer_bytes = (2 * self.k + 7) // 8
        with open(path, "wb") as fh:
            fh.write(_MAGIC)
            fh.write(struct.pack(">II", self.k, len(self.dataset_ids)))
            for ds in self.dataset_ids:
                raw = ds.encode()
                fh.write(struct.pack(">H", len(raw)) + raw)
            fh.write(struct.pack(">Q", len(self._hash_to_dataset)))
            for digest in sorted(self._hash_to_dataset):
                fh.write(bytes.fromhex(digest))
                fh.write(struct.pack(">I", self._hash_to_dataset[digest]))
            fh.write(struct.pack(">Q", len(self.kmer_index)))
            for kmer in sorted(self.kmer_index):
                packed = 0
                for ch in kmer:
                    packed = (packed << 2) | _BASE_CODE[ch]
                fh.write(packed.to_bytes(kmer_bytes, "big"))
                owners = sorted(self.kmer_index[kmer])
                fh.write(struct.pack(">H", len(owners)))
                fh.write(struct.pack(f">{len(owners)}I", *owners))
        sidecar = {
            "k": self.k,
            "dataset_ids": self.dataset_ids,
            "built_at": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        }
        Path(str(path) + ".json").write_text(json.dumps(sidecar, indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "ControlledCorpus":
        with open(path, "rb") as fh:
            if fh.read(len(_MAGIC)) != _MAGIC:
                raise CorpusUnavailable(f"{path} is not a corpus index")
            k, n_datasets = struct.unpack(">II", fh.read(8))
            corpus = cls(k=k)
            kmer_bytes = (2 * k + 7) // 8
            for _ in range(n_datasets):
                (n,) = struct.unpack(">H", fh.read(2))
                corpus.dataset_ids.append(fh.read(n).decode())
            (n_hashes,) = struct.unpack(">Q", fh.read(8))
            for _ in range(n_hashes):
                digest = fh.read(32).hex()
                (idx,) = struct.unpack(">I", fh.read(4))
                corpus._hash_to_dataset[digest] = idx
            (n_kmers,) = struct.unpack(">Q", fh.read(8))
            for _ in range(n_kmers):
                packed = int.from_bytes(fh.read(kmer_bytes), "big")
                chars = []
                for _ in range(k):
                    chars.append(_BASE_DECODE[packed & 3])
                    packed >>= 2
                kmer = "".join(reversed(chars))
                (count,) = struct.unpack(">H", fh.read(2))
                owners = struct.unpack(f">{count}I", fh.read(4 * count))
                corpus.kmer_index[kmer] = set(owners)
        return corpus


def build_corpus(datasets: dict[str, list], k: int = DEFAULT_SCREENING_K) -> ControlledCorpus:
    corpus = ControlledCorpus(k=k)
    for dataset_id, sequences in datasets.items():
        corpus.add_dataset(dataset_id, sequences)
    return corpus


# --- candidate extraction and screening --------------------------------------


def extract_candidates(content: bytes | str, k: int) -> list[NucleotideSequence]:
    """Sequence candidates inside arbitrary content: FASTA records when the
    content parses as FASTA, otherwise maximal A/C/G/T runs of length >= k."""
    if isinstance(content, bytes):
        try:
            text = content.decode("utf-8")
        except UnicodeDecodeError:
            return []
    else:
        text = content

    if text.lstrip().startswith(">"):
        try:
            return parse_fasta(text)
        except ValueError:
            pass  # fall through to run scanning
    out = []
    for i, run in enumerate(re.findall(f"[ACGTacgt]{{{k},}}", text)):
        out.append(NucleotideSequence(run.upper(), id=f"run{i}"))
    return out


@dataclass(frozen=True)
class ScreenReport:
    max_containment: float
    matched_datasets: frozenset[str] = frozenset()


def screen(content: bytes | str, corpus: ControlledCorpus) -> ScreenReport:
    """Max over candidates of the fraction of candidate k-mers in the index.

    An exact stored-sequence hash match reports containment 1.0. Content
    with no candidates (plain aggregates, binary blobs) scores 0.
    """
    best = 0.0
    matched: set[str] = set()
    for cand in extract_candidates(content, corpus.k):
        exact = corpus.datasets_for_hash(sha256(cand.bases.encode()).hexdigest())
        if exact:
            best = 1.0
            matched |= exact
            continue
        if len(cand.bases) < corpus.k:
            continue
        cand_kmers = kmers(cand, corpus.k).kmers
        hits = 0
        owners: set[int] = set()
        for m in cand_kmers:
            entry = corpus.kmer_index.get(m)
            if entry:
                hits += 1
                owners |= entry
        frac = hits / len(cand_kmers)
        if frac > 0:
            matched |= {corpus.dataset_ids[i] for i in owners}
        best = max(best, frac)
    return ScreenReport(max_containment=best, matched_datasets=frozenset(matched))


# --- egress requests and verdicts --------------------------------------------


class ArtifactKind(Enum):
    AggregateStats = "AggregateStats"
    TextSummary = "TextSummary"
    SequenceContent = "SequenceContent"
    ModelWeights = "ModelWeights"


class EgressOutcome(Enum):
    Allowed = "Allowed"
    Blocked = "Blocked"
    Queued = "Queued"


class EgressReason(Enum):
    Aggregate = "Aggregate"
    Clean = "Clean"
    ControlledMatch = "ControlledMatch"
    HoneytokenHit = "HoneytokenHit"
    WeightsExportBarred = "WeightsExportBarred"
    MandatoryReview = "MandatoryReview"
    ReviewerDecision = "ReviewerDecision"


@dataclass(frozen=True)
class EgressRequest:
    id: str
    principal_id: str
    session_id: str
    artifact_kind: ArtifactKind
    content: bytes
    declared_provenance: str = ""
    at: float = 0.0

    def __post_init__(self):
        if not self.content:
            raise EgressError("egress content must be nonempty")


@dataclass(frozen=True)
class EgressVerdict:
    outcome: EgressOutcome
    reason: EgressReason
    similarity: float = 0.0
    review_item: str | None = None
    matched_datasets: frozenset[str] = frozenset()
    honeytoken_id: str | None = None

    def to_json_dict(self) -> dict:
        return {
            "outcome": self.outcome.value,
            "reason": self.reason.value,
            "similarity": self.similarity,
            "review_item": self.review_item,
            "matched_datasets": sorted(self.matched_datasets),
            "honeytoken_id": self.honeytoken_id,
        }


@dataclass(frozen=True)
class EgressThresholds:
    review: float = 0.3
    block: float = 0.8
    honeytoken_overlap: float = 0.5

    def __post_init__(self):
        if not 0 <= self.review <= self.block <= 1:
            raise EgressError("thresholds must satisfy 0 <= review <= block <= 1")


def check_egress(
    request: EgressRequest,
    tier: BdlTier,
    profile: EnforcementProfile,
    corpus: ControlledCorpus | None,
    honeytokens: list[HoneytokenRecord] | None,
    thresholds: EgressThresholds = EgressThresholds(),
    steward_key: WatermarkKey | None = None,
    k: int | None = None,
) -> EgressVerdict:
    """Verdict for one outbound artifact; tier is the session's maximum.

    Order: honeytoken trip, weights bar (tier >= 3), mandatory review
    (BDL-4), aggregate fast path, then containment thresholds. Missing
    corpus or registry fails closed to Queued.
    """
    k = k or (corpus.k if corpus is not None else DEFAULT_SCREENING_K)
    candidates = extract_candidates(request.content, k)

    if honeytokens is None:
        return EgressVerdict(EgressOutcome.Queued, EgressReason.MandatoryReview)
    for cand in candidates:
        hit = detect_honeytoken(
            cand,
            honeytokens,
            k=k,
            key=steward_key,
            overlap_threshold=thresholds.honeytoken_overlap,
        )
        if hit.hit is not None:
            return EgressVerdict(
                EgressOutcome.Blocked,
                EgressReason.HoneytokenHit,
                similarity=1.0,
                honeytoken_id=hit.hit,
            )

    if request.artifact_kind is ArtifactKind.ModelWeights and tier >= BdlTier.BDL3:
        return EgressVerdict(EgressOutcome.Blocked, EgressReason.WeightsExportBarred)

    if profile.mandatory_human_egress_review:
        return EgressVerdict(EgressOutcome.Queued, EgressReason.MandatoryReview)

    if request.artifact_kind is ArtifactKind.AggregateStats and not candidates:
        return EgressVerdict(EgressOutcome.Allowed, EgressReason.Aggregate)

    if corpus is None:
        return EgressVerdict(EgressOutcome.Queued, EgressReason.MandatoryReview)
    report = screen(request.content, corpus)
    if report.max_containment >= thresholds.block:
        return EgressVerdict(
            EgressOutcome.Blocked,
            EgressReason.ControlledMatch,
            similarity=report.max_containment,
            matched_datasets=report.matched_datasets,
        )
    if report.max_containment >= thresholds.review:
        return EgressVerdict(
            EgressOutcome.Queued,
            EgressReason.ControlledMatch,
            similarity=report.max_containment,
            matched_datasets=report.matched_datasets,
        )
    return EgressVerdict(
        EgressOutcome.Allowed, EgressReason.Clean, similarity=report.max_containment
    )


# --- human review queue ------------------------------------------------------


class ReviewKind(Enum):
    Egress = "Egress"
    AccessEscalation = "AccessEscalation"
    AnomalyTriage = "AnomalyTriage"
    ClassificationOverdue = "ClassificationOverdue"
    Appeal = "Appeal"


class ReviewStatus(Enum):
    Pending = "Pending"
    Approved = "Approved"
    Denied = "Denied"


@dataclass
class ReviewItem:
    id: str
    kind: ReviewKind
    payload: dict = field(default_factory=dict)
    status: ReviewStatus = ReviewStatus.Pending
    decided_by: str | None = None
    decided_at: str | None = None
    decision_note: str = ""
    version: int = 1
    created_at: str = ""

    def to_json_dict(self) -> dict:
        return {
            "id": self.id,
            "kind": self.kind.value,
            "payload": self.payload,
            "status": self.status.value,
            "decided_by": self.decided_by,
            "decided_at": self.decided_at,
            "decision_note": self.decision_note,
            "version": self.version,
            "created_at": self.created_at,
        }


class ReviewQueue:
    """Pending human decisions with optimistic concurrency on decide."""

    def __init__(self):
        self._items: dict[str, ReviewItem] = {}
        self._lock = threading.Lock()
        self._counter = 0

    def open_item(self, kind: ReviewKind, payload: dict, created_at: str = "") -> ReviewItem:
        with self._lock:
            self._counter += 1
            item = ReviewItem(
                id=f"rev-{self._counter:05d}",
                kind=kind,
                payload=payload,
                created_at=created_at,
            )
            self._items[item.id] = item
            return item

    def restore_item(self, item: ReviewItem) -> None:
        with self._lock:
            self._items[item.id] = item
            number = int(item.id.rsplit("-", 1)[-1])
            self._counter = max(self._counter, number)

    def get(self, item_id: str) -> ReviewItem | None:
        return self._items.get(item_id)

    def list_items(self, status: ReviewStatus | None = None) -> list[ReviewItem]:
        items = sorted(self._items.values(), key=lambda it: it.id)
        if status is None:
            return items
        return [it for it in items if it.status is status]

    def decide(
        self,
        item_id: str,
        reviewer_id: str,
        decision: ReviewStatus,
        note: str,
        expected_version: int,
        reviewer_is_steward: bool,
        decided_at: str = "",
    ) -> ReviewItem:
        if decision not in (ReviewStatus.Approved, ReviewStatus.Denied):
            raise EgressError("decision must be Approved or Denied")
        if not reviewer_is_steward:
            raise NotAuthorized(f"{reviewer_id} lacks the steward role")
        with self._lock:
            item = self._items.get(item_id)
            if item is None:
                raise EgressError(f"unknown review item {item_id}")
            if item.status is not ReviewStatus.Pending:
                raise AlreadyDecided(f"{item_id} already {item.status.value}")
            if item.version != expected_version:
                raise VersionConflict(
                    f"{item_id} at version {item.version}, expected {expected_version}"
                )
            item.status = decision
            item.decided_by = reviewer_id
            item.decided_at = decided_at or datetime.now(timezone.utc).isoformat(
                timespec="seconds"
            )
            item.decision_note = note
            item.version += 1
            return item
