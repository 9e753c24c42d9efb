"""Hash-chained, Ed25519-signed, append-only audit log.

Every entry binds to its predecessor: entry_hash = SHA-256(prev_hash ||
canonical JSON of the entry fields), and the hash is signed. Canonical form
is field-name-sorted JSON with no insignificant whitespace, ASCII-escaped
strings, unquoted integers, and binary rendered as lowercase hex, so any
party holding the public key can re-verify an exported log byte for byte.

Appends are serialized through one writer and durable (fsync) before they
are acknowledged; an audit log that can lose acknowledged entries defeats
attribution.
"""

from __future__ import annotations

import json
import os
import threading
import time
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from hashlib import sha256
from pathlib import Path

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)

GENESIS_HASH = b"\x00" * 32


class AuditAction(Enum):
    DatasetRegistered = "DatasetRegistered"
    Classified = "Classified"
    AccessGranted = "AccessGranted"
    AccessDenied = "AccessDenied"
    RecordsExported = "RecordsExported"
    EgressQueued = "EgressQueued"
    EgressDecided = "EgressDecided"
    AnomalyFlagged = "AnomalyFlagged"
    HoneytokenTripped = "HoneytokenTripped"
    AppealFiled = "AppealFiled"
    AppealDecided = "AppealDecided"
    RegistryUpdated = "RegistryUpdated"
    IntentLogged = "IntentLogged"


class AuditError(Exception):
    pass


class StorageFailure(AuditError):
    pass


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


@dataclass(frozen=True)
class AuditEntry:
    seq_no: int
    ts: int  # UTC epoch milliseconds
    actor: str
    action: AuditAction
    resource: str
    detail: dict
    prev_hash: bytes
    entry_hash: bytes
    signature: bytes

    def hashed_fields(self) -> dict:
        return {
            "seq_no": self.seq_no,
            "ts": self.ts,
            "actor": self.actor,
            "action": self.action.value,
            "resource": self.resource,
            "detail": self.detail,
            "prev_hash": self.prev_hash.hex(),
        }

    def to_json_dict(self) -> dict:
        doc = self.hashed_fields()
        doc["entry_hash"] = self.entry_hash.hex()
        doc["signature"] = self.signature.hex()
        return doc

    def to_line(self) -> str:
        return canonical_json(self.to_json_dict())

    @classmethod
    def from_json_dict(cls, doc: dict) -> "AuditEntry":
        return cls(
            seq_no=doc["seq_no"],
            ts=doc["ts"],
            actor=doc["actor"],
            action=AuditAction(doc["action"]),
            resource=doc["resource"],
            detail=doc["detail"],
            prev_hash=bytes.fromhex(doc["prev_hash"]),
            entry_hash=bytes.fromhex(doc["entry_hash"]),
            signature=bytes.fromhex(doc["signature"]),
        )


def compute_entry_hash(fields: dict, prev_hash: bytes) -> bytes:
    return sha256(prev_hash + canonical_json(fields).encode()).digest()


@dataclass(frozen=True)
class SigningKey:
    """Ed25519 steward key with a simple hex-JSON file form."""

    private: Ed25519PrivateKey
    key_id: str = "steward"

    @classmethod
    def generate(cls, key_id: str = "steward") -> "SigningKey":
        return cls(private=Ed25519PrivateKey.generate(), key_id=key_id)

    def public_bytes(self) -> bytes:
        from cryptography.hazmat.primitives.serialization import (
            Encoding,
            PublicFormat,
        )

        return self.private.public_key().public_bytes(
            Encoding.Raw, PublicFormat.Raw
        )

    def save(self, private_path, public_path=None) -> None:
        from cryptography.hazmat.primitives.serialization import (
            Encoding,
            NoEncryption,
            PrivateFormat,
        )

        raw = self.private.private_bytes(
            Encoding.Raw, PrivateFormat.Raw, NoEncryption()
        )
        Path(private_path).write_text(
            json.dumps({"key_id": self.key_id, "private_hex": raw.hex()}, indent=2)
            + "\n"
        )
        if public_path is not None:
            save_public_key(self.public_bytes(), public_path, self.key_id)

    @classmethod
    def load(cls, path) -> "SigningKey":
        doc = json.loads(Path(path).read_text())
        private = Ed25519PrivateKey.from_private_bytes(
            bytes.fromhex(doc["private_hex"])
        )
        return cls(private=private, key_id=doc.get("key_id", "steward"))


def save_public_key(public: bytes, path, key_id: str = "steward") -> None:
    Path(path).write_text(
        json.dumps({"key_id": key_id, "public_hex": public.hex()}, indent=2) + "\n"
    )


def load_public_key(path) -> bytes:
    return bytes.fromhex(json.loads(Path(path).read_text())["public_hex"])


@lru_cache(maxsize=1 << 17)
def _signature_ok(public: bytes, message: bytes, signature: bytes) -> bool:
    # Pure predicate, safe to memoize; repeat verification of a shared
    # pristine prefix is then free.
    try:
        Ed25519PublicKey.from_public_bytes(public).verify(signature, message)
        return True
    except (InvalidSignature, ValueError):
        return False


@dataclass(frozen=True)
class ProvenanceQuery:
    resource: str | None = None
    actor: str | None = None
    action: AuditAction | None = None
    ts_from: int | None = None
    ts_to: int | None = None

    def __post_init__(self):
        if all(
            v is None
            for v in (self.resource, self.actor, self.action, self.ts_from, self.ts_to)
        ):
            raise AuditError("a provenance query needs at least one filter")

    def matches(self, entry: AuditEntry) -> bool:
        if self.resource is not None and entry.resource != self.resource:
            return False
        if self.actor is not None and entry.actor != self.actor:
            return False
        if self.action is not None and entry.action != self.action:
            return False
        if self.ts_from is not None and entry.ts < self.ts_from:
            return False
        if self.ts_to is not None and entry.ts > self.ts_to:
            return False
        return True


@dataclass(frozen=True)
class VerificationResult:
    ok: bool
    first_bad_index: int | None = None
    entries_checked: int = 0


def verify_chain(
    entries, public_key: bytes, *, expected_head: bytes | None = None
) -> VerificationResult:
    """Recompute every hash and signature over an ordered entry stream.

    Accepts parsed AuditEntry objects or raw JSONL lines (str/bytes); an
    unparseable line counts as the first bad entry. first_bad_index is the
    1-based position where the chain first fails.

    Interior tampering is self-detecting; pure truncation of the tail is
    not, so callers holding a trusted head hash (the health endpoint
    exposes it) should pass expected_head to anchor the check.
    """
    prev_hash = GENESIS_HASH
    count = 0
    for i, item in enumerate(entries):
        position = i + 1
        count += 1
        try:
            if isinstance(item, (str, bytes)):
                text = item.decode("utf-8") if isinstance(item, bytes) else item
                text = text.rstrip("\r\n")
                entry = AuditEntry.from_json_dict(json.loads(text))
                # exported lines are canonical; any re-encoding (even one that
                # decodes to the same content) is a violation
                if entry.to_line() != text:
                    return VerificationResult(False, position, count)
            else:
                entry = item
            if entry.seq_no != position:
                return VerificationResult(False, position, count)
            if entry.prev_hash != prev_hash:
                return VerificationResult(False, position, count)
            recomputed = compute_entry_hash(entry.hashed_fields(), entry.prev_hash)
            if recomputed != entry.entry_hash:
                return VerificationResult(False, position, count)
            if not _signature_ok(public_key, entry.entry_hash, entry.signature):
                return VerificationResult(False, position, count)
        except (ValueError, KeyError, TypeError):
            return VerificationResult(False, position, count)
        prev_hash = entry.entry_hash
    if expected_head is not None and prev_hash != expected_head:
        return VerificationResult(False, count + 1, count)
    return VerificationResult(True, None, count)


def verify_chain_file(path, public_key: bytes) -> VerificationResult:
    with open(path, encoding="utf-8") as fh:
        lines = [line for line in fh.read().splitlines() if line.strip()]
    return verify_chain(lines, public_key)


class AuditLog:
    """Single-writer append-only log, optionally file-backed.

    Entries are kept in memory for queries; the file (JSON lines, one
    canonical entry per line) is the export format itself.
    """

    def __init__(self, signing_key: SigningKey, path=None):
        self._key = signing_key
        self._path = Path(path) if path is not None else None
        self._lock = threading.Lock()
        self._entries: list[AuditEntry] = []
        self._head = GENESIS_HASH
        if self._path is not None and self._path.exists():
            self._resume()

    def _resume(self) -> None:
        for line in self._path.read_text().splitlines():
            if not line.strip():
                continue
            entry = AuditEntry.from_json_dict(json.loads(line))
            self._entries.append(entry)
            self._head = entry.entry_hash

    @property
    def head_hash(self) -> bytes:
        return self._head

    def __len__(self) -> int:
        return len(self._entries)

    @property
    def entries(self) -> list[AuditEntry]:
        return list(self._entries)

    def public_key(self) -> bytes:
        return self._key.public_bytes()

    def append(
        self,
        actor: str,
        action: AuditAction,
        resource: str,
        detail: dict | None = None,
        ts: int | None = None,
    ) -> AuditEntry:
        with self._lock:
            fields = {
                "seq_no": len(self._entries) + 1,
                "ts": int(time.time() * 1000) if ts is None else int(ts),
                "actor": actor,
                "action": action.value,
                "resource": resource,
                "detail": detail or {},
                "prev_hash": self._head.hex(),
            }
            entry_hash = compute_entry_hash(fields, self._head)
            signature = self._key.private.sign(entry_hash)
            entry = AuditEntry(
                seq_no=fields["seq_no"],
                ts=fields["ts"],
                actor=actor,
                action=action,
                resource=resource,
                detail=fields["detail"],
                prev_hash=self._head,
                entry_hash=entry_hash,
                signature=signature,
            )
            if self._path is not None:
                try:
                    with open(self._path, "a", encoding="utf-8") as fh:
                        fh.write(entry.to_line() + "\n")
                        fh.flush()
                        os.fsync(fh.fileno())
                except OSError as exc:
                    raise StorageFailure(f"audit append failed: {exc}") from exc
            self._entries.append(entry)
            self._head = entry_hash
            return entry

    def query(self, q: ProvenanceQuery) -> list[AuditEntry]:
        return [e for e in self._entries if q.matches(e)]

    def verify(self) -> VerificationResult:
        return verify_chain(self._entries, self.public_key())
