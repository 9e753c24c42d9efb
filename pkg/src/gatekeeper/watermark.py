"""Keyed watermarking of coding sequences via synonymous codon choice, plus
honeytoken decoy generation and detection.

The channel: every amino acid with d synonymous codons can carry
floor(log2(d)) payload bits without changing the protein. For each codon
site, the synonymous family is ranked by a keyed pseudorandom ordering
(HMAC-SHA256 of key, site index, amino acid); the payload bits select a
codon among the first 2^b in that order. Embedding always rewrites every
degenerate site (payload, then an appended CRC-16, then zero padding), so
the output is a keyed canonical form and re-embedding is idempotent.

A 16-bit CRC is an integrity check, not error correction: a single edit or
a wrong key is detected with probability 1 - 2^-16, never repaired.
Robustness against deliberate re-synthesis or codon re-optimization is out
of scope.
"""

from __future__ import annotations

import hashlib
import hmac
import json
import math
import random
import secrets
from dataclasses import dataclass
from datetime import datetime, timezone
from enum import Enum

from .seqio import (
    DEFAULT_SCREENING_K,
    GENETIC_CODE,
    SYNONYMOUS_CODONS,
    CodingSequence,
    KmerSet,
    NucleotideSequence,
    kmers,
)

# Payload bits per codon: floor(log2(family size)); stops carry nothing.
BITS_PER_AA: dict[str, int] = {
    aa: (0 if aa == "*" else int(math.log2(len(codons))))
    for aa, codons in SYNONYMOUS_CODONS.items()
}

MAX_PAYLOAD_BITS = 240
CRC_BITS = 16

_FACTORIAL = [math.factorial(i) for i in range(8)]
_ORDER_LABEL = b"gatekeeper-codon-order-v1"


class WatermarkError(Exception):
    pass


class InsufficientCapacity(WatermarkError):
    pass


class CrcMismatch(WatermarkError):
    pass


class ProfileInvalid(WatermarkError):
    pass


class CapacityTooSmall(WatermarkError):
    pass


class Namespace(Enum):
    Export = "Export"
    Decoy = "Decoy"


# Domain separation between namespaces lives in the CRC: the Export CRC is
# appended as-is, the Decoy CRC is XOR-masked. Total embedded length stays
# |bits| + 16 either way, and extraction recovers the namespace by checking
# which mask validates.
_NAMESPACE_MASK = {Namespace.Export: 0x0000, Namespace.Decoy: 0x3CA5}


@dataclass(frozen=True)
class WatermarkKey:
    key_bytes: bytes
    key_id: str = "default"

    def __post_init__(self):
        if len(self.key_bytes) != 32:
            raise WatermarkError("watermark key must be exactly 32 bytes")

    @classmethod
    def generate(cls, key_id: str = "default") -> "WatermarkKey":
        return cls(key_bytes=secrets.token_bytes(32), key_id=key_id)


@dataclass(frozen=True)
class WatermarkPayload:
    """A bit string (as '0'/'1' text) plus its namespace."""

    namespace: Namespace
    bits: str = ""

    def __post_init__(self):
        if len(self.bits) > MAX_PAYLOAD_BITS:
            raise WatermarkError(
                f"payload of {len(self.bits)} bits exceeds {MAX_PAYLOAD_BITS}"
            )
        if set(self.bits) - {"0", "1"}:
            raise WatermarkError("payload bits must be '0'/'1' characters")

    def to_hex(self) -> str:
        return bits_to_hex(self.bits)


def bits_from_bytes(data: bytes) -> str:
    return "".join(format(b, "08b") for b in data)


def bits_to_hex(bits: str) -> str:
    """Hex form; the bit length must be a multiple of 4."""
    if len(bits) % 4 != 0:
        raise WatermarkError("bit string length must be a multiple of 4 for hex")
    return "".join(format(int(bits[i : i + 4], 2), "x") for i in range(0, len(bits), 4))


def bits_from_hex(text: str) -> str:
    try:
        return "".join(format(int(ch, 16), "04b") for ch in text.strip())
    except ValueError:
        raise WatermarkError(f"invalid payload hex {text!r}") from None


def crc16_ccitt(bits: str) -> int:
    """CRC-16/CCITT-FALSE (poly 0x1021, init 0xFFFF) over a bit string."""
    crc = 0xFFFF
    for ch in bits:
        top = (crc >> 15) & 1
        crc = (crc << 1) & 0xFFFF
        if top ^ (ch == "1"):
            crc ^= 0x1021
    return crc


def capacity(cds: CodingSequence) -> int:
    """Total embeddable bits of a coding sequence."""
    return sum(BITS_PER_AA[GENETIC_CODE[c]] for c in cds.codons())


def _keyed_order(key: WatermarkKey, site_index: int, aa: str) -> tuple[str, ...]:
    """The synonymous family of aa, permuted by a keyed hash of the site."""
    family = SYNONYMOUS_CODONS[aa]
    m = len(family)
    if m == 1:
        return family
    digest = hmac.new(
        key.key_bytes,
        _ORDER_LABEL + site_index.to_bytes(4, "big") + aa.encode(),
        hashlib.sha256,
    ).digest()
    r = int.from_bytes(digest[:8], "big") % _FACTORIAL[m]
    pool = list(family)
    out = []
    for i in range(m - 1, -1, -1):
        q, r = divmod(r, _FACTORIAL[i])
        out.append(pool.pop(q))
    return tuple(out)


def embed(
    cds: CodingSequence, payload: WatermarkPayload, key: WatermarkKey
) -> CodingSequence:
    """Rewrite synonymous codons to carry payload || CRC-16 || zero padding.

    Translation is preserved exactly; the result is deterministic in
    (cds, payload, key).
    """
    cap = capacity(cds)
    if len(payload.bits) + CRC_BITS > cap:
        raise InsufficientCapacity(
            f"payload needs {len(payload.bits) + CRC_BITS} bits, capacity is {cap}"
        )
    crc = crc16_ccitt(payload.bits) ^ _NAMESPACE_MASK[payload.namespace]
    stream = payload.bits + format(crc, "016b")
    stream += "0" * (cap - len(stream))

    out_codons: list[str] = []
    pos = 0
    for site, codon in enumerate(cds.codons()):
        aa = GENETIC_CODE[codon]
        b = BITS_PER_AA[aa]
        if b == 0:
            out_codons.append(codon)
            continue
        rank = int(stream[pos : pos + b], 2)
        pos += b
        out_codons.append(_keyed_order(key, site, aa)[rank])
    seq = cds.seq
    return CodingSequence(
        NucleotideSequence("".join(out_codons), id=seq.id, description=seq.description)
    )


def extract(
    cds: CodingSequence, key: WatermarkKey, expected_len: int
) -> WatermarkPayload:
    """Inverse of embed for the matching key; the CRC must verify.

    The whole canonical stream is checked, not just payload and CRC: the
    zero padding must decode to zeros, and a codon whose keyed rank is
    outside the used range (possible in 3- and 6-fold families) can never
    have been emitted by embed. Either condition forces a CrcMismatch, so
    any single synonymous edit anywhere in the sequence is detected.
    """
    if expected_len < 0 or expected_len > MAX_PAYLOAD_BITS:
        raise WatermarkError(f"expected_len {expected_len} out of range")
    cap = capacity(cds)
    needed = expected_len + CRC_BITS
    if needed > cap:
        raise InsufficientCapacity(
            f"expected {needed} bits, capacity is only {cap}"
        )

    chunks: list[str] = []
    poisoned = False
    for site, codon in enumerate(cds.codons()):
        aa = GENETIC_CODE[codon]
        b = BITS_PER_AA[aa]
        if b == 0:
            continue
        order = _keyed_order(key, site, aa)
        rank = order.index(codon)
        if rank >= (1 << b):
            poisoned = True
            rank &= (1 << b) - 1
        chunks.append(format(rank, f"0{b}b"))
    stream = "".join(chunks)

    payload_bits = stream[:expected_len]
    crc_read = int(stream[expected_len:needed], 2)
    padding_clean = set(stream[needed:]) <= {"0"}
    if not poisoned and padding_clean:
        crc_calc = crc16_ccitt(payload_bits)
        for namespace, mask in _NAMESPACE_MASK.items():
            if crc_read == crc_calc ^ mask:
                return WatermarkPayload(namespace=namespace, bits=payload_bits)
    raise CrcMismatch(
        "no valid payload: wrong key, edited sequence, or unwatermarked input"
    )


@dataclass(frozen=True)
class HoneytokenRecord:
    token_id: str
    sequence_hash: str
    kmer_set: KmerSet | None
    created_at: str
    planted_in: str

    def to_json_dict(self) -> dict:
        kset = sorted(self.kmer_set.kmers) if self.kmer_set else []
        return {
            "token_id": self.token_id,
            "sha256": self.sequence_hash,
            "k": self.kmer_set.k if self.kmer_set else DEFAULT_SCREENING_K,
            "kmers_digest": _kmers_digest(kset),
            "planted_in": self.planted_in,
            "created_at": self.created_at,
        }


def _kmers_digest(sorted_kmers: list[str]) -> str:
    return hashlib.sha256("\n".join(sorted_kmers).encode()).hexdigest()


class DetectionMethod(Enum):
    ExactHash = "ExactHash"
    KmerOverlap = "KmerOverlap"
    PayloadExtract = "PayloadExtract"


@dataclass(frozen=True)
class DetectionResult:
    hit: str | None = None
    method: DetectionMethod | None = None
    overlap: float = 0.0


def uniform_codon_profile() -> dict[str, float]:
    """Equal weight to every codon within each sense family."""
    profile: dict[str, float] = {}
    for aa, codons in SYNONYMOUS_CODONS.items():
        if aa == "*":
            continue
        for c in codons:
            profile[c] = 1.0 / len(codons)
    return profile


def _validate_profile(profile: dict[str, float]) -> None:
    for aa, codons in SYNONYMOUS_CODONS.items():
        if aa == "*":
            continue
        total = sum(profile.get(c, 0.0) for c in codons)
        if abs(total - 1.0) > 1e-6:
            raise ProfileInvalid(
                f"codon frequencies for {aa} sum to {total}, expected 1"
            )
        if any(profile.get(c, 0.0) < 0 for c in codons):
            raise ProfileInvalid(f"negative frequency in family {aa}")


_SENSE_AAS = sorted(aa for aa in SYNONYMOUS_CODONS if aa != "*")


def generate_honeytoken(
    profile: dict[str, float],
    length_codons: int,
    key: WatermarkKey,
    token_id: str,
    planted_in: str = "",
    corpus_hashes: frozenset[str] | set[str] = frozenset(),
    k: int = DEFAULT_SCREENING_K,
    rng: random.Random | None = None,
    created_at: str | None = None,
) -> tuple[CodingSequence, HoneytokenRecord]:
    """Sample a plausible decoy CDS and embed the token id as a Decoy payload.

    The decoy is guaranteed absent from the protected corpus (resampled on
    hash collision). Its "impossibility" is operational, not structural:
    corpus absence plus a keyed payload nobody can plant without the key.
    """
    if length_codons < 50:
        raise ProfileInvalid("decoys shorter than 50 codons are too easy to miss")
    _validate_profile(profile)
    rng = rng or random.Random(secrets.randbits(64))

    payload_bits = bits_from_bytes(token_id.encode())
    if len(payload_bits) > MAX_PAYLOAD_BITS:
        raise CapacityTooSmall(f"token id {token_id!r} exceeds payload size")

    capacity_misses = 0
    for _ in range(100):
        codons = ["ATG"]
        for _ in range(length_codons - 1):
            aa = _SENSE_AAS[rng.randrange(len(_SENSE_AAS))]
            family = SYNONYMOUS_CODONS[aa]
            roll = rng.random()
            acc = 0.0
            chosen = family[-1]
            for c in family:
                acc += profile.get(c, 0.0)
                if roll < acc:
                    chosen = c
                    break
            codons.append(chosen)
        cds = CodingSequence(NucleotideSequence("".join(codons), id=token_id))
        if capacity(cds) < len(payload_bits) + CRC_BITS:
            capacity_misses += 1
            continue
        marked = embed(
            cds, WatermarkPayload(namespace=Namespace.Decoy, bits=payload_bits), key
        )
        digest = hashlib.sha256(marked.bases.encode()).hexdigest()
        if digest not in corpus_hashes:
            break
    else:
        if capacity_misses == 100:
            raise CapacityTooSmall(
                f"{length_codons} codons cannot carry token id {token_id!r}"
            )
        raise WatermarkError("could not sample a corpus-absent decoy in 100 tries")

    record = HoneytokenRecord(
        token_id=token_id,
        sequence_hash=digest,
        kmer_set=kmers(marked.bases, k) if len(marked.bases) >= k else None,
        created_at=created_at
        or datetime.now(timezone.utc).isoformat(timespec="seconds"),
        planted_in=planted_in,
    )
    return marked, record


def detect_honeytoken(
    content: NucleotideSequence,
    registry: list[HoneytokenRecord] | set[HoneytokenRecord],
    k: int = DEFAULT_SCREENING_K,
    key: WatermarkKey | None = None,
    overlap_threshold: float = 0.5,
) -> DetectionResult:
    """Check content against planted decoys.

    Methods in order: exact hash, k-mer overlap at/above the threshold,
    then keyed payload extraction over reading frames (needs the steward
    key; skipped without it).
    """
    digest = hashlib.sha256(content.bases.encode()).hexdigest()
    for rec in registry:
        if rec.sequence_hash == digest:
            return DetectionResult(rec.token_id, DetectionMethod.ExactHash, 1.0)

    if len(content.bases) >= k:
        content_kmers = kmers(content, k).kmers
        best: tuple[float, str] | None = None
        for rec in registry:
            if rec.kmer_set is None or rec.kmer_set.k != k or not rec.kmer_set.kmers:
                continue
            frac = len(rec.kmer_set.kmers & content_kmers) / len(rec.kmer_set.kmers)
            if frac >= overlap_threshold and (best is None or frac > best[0]):
                best = (frac, rec.token_id)
        if best:
            return DetectionResult(best[1], DetectionMethod.KmerOverlap, best[0])

    if key is not None:
        for frame in (0, 1, 2):
            sub = content.bases[frame:]
            sub = sub[: len(sub) - len(sub) % 3]
            if len(sub) < 3:
                continue
            try:
                cds = CodingSequence(NucleotideSequence(sub, id="frame"))
            except ValueError:
                continue
            for rec in registry:
                expected = bits_from_bytes(rec.token_id.encode())
                if len(expected) + CRC_BITS > capacity(cds):
                    continue
                try:
                    payload = extract(cds, key, len(expected))
                except WatermarkError:
                    continue
                if payload.namespace is Namespace.Decoy and payload.bits == expected:
                    return DetectionResult(
                        rec.token_id, DetectionMethod.PayloadExtract, 1.0
                    )
    return DetectionResult()


def save_honeytoken_registry(records: list[HoneytokenRecord], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_json_dict(), sort_keys=True) + "\n")


def load_honeytoken_registry(
    path, sequences: dict[str, str] | None = None
) -> list[HoneytokenRecord]:
    """Load records; k-mer sets are rehydrated only for token ids present in
    `sequences` (the persisted form stores a digest, not the k-mers)."""
    records: list[HoneytokenRecord] = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            doc = json.loads(line)
            kset = None
            bases = (sequences or {}).get(doc["token_id"])
            if bases is not None:
                candidate = kmers(bases, doc["k"])
                if _kmers_digest(sorted(candidate.kmers)) != doc["kmers_digest"]:
                    raise WatermarkError(
                        f"k-mer digest mismatch for token {doc['token_id']!r}"
                    )
                kset = candidate
            records.append(
                HoneytokenRecord(
                    token_id=doc["token_id"],
                    sequence_hash=doc["sha256"],
                    kmer_set=kset,
                    created_at=doc["created_at"],
                    planted_in=doc["planted_in"],
                )
            )
    return records
