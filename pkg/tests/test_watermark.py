import hashlib
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_bases, random_cds
from gatekeeper.seqio import CodingSequence, NucleotideSequence, kmers, translate
from gatekeeper.watermark import (
    CapacityTooSmall,
    CrcMismatch,
    HoneytokenRecord,
    InsufficientCapacity,
    Namespace,
    ProfileInvalid,
    WatermarkKey,
    WatermarkPayload,
    bits_from_bytes,
    bits_from_hex,
    bits_to_hex,
    capacity,
    crc16_ccitt,
    detect_honeytoken,
    embed,
    extract,
    generate_honeytoken,
    load_honeytoken_registry,
    save_honeytoken_registry,
    uniform_codon_profile,
)
from test_seqio import oracle_translate

KEY = WatermarkKey(b"\x42" * 32, "test")
OTHER_KEY = WatermarkKey(b"\x43" * 32, "other")


# Degeneracy oracle built from the independent code transcription: for each
# codon, count codons translating to the same amino acid.
def oracle_capacity(bases: str) -> int:
    total = 0
    for i in range(0, len(bases), 3):
        codon = bases[i : i + 3]
        aa = oracle_translate(codon)
        if aa == "*":
            continue
        degeneracy = sum(
            1
            for a in "ACGT"
            for b in "ACGT"
            for c in "ACGT"
            if oracle_translate(a + b + c) == aa
        )
        total += degeneracy.bit_length() - 1  # floor(log2)
    return total


# Table-driven CRC-16/CCITT-FALSE over bytes, transcribed separately from
# the bitwise implementation under test.
def oracle_crc16(data: bytes) -> int:
    crc = 0xFFFF
    for byte in data:
        crc ^= byte << 8
        for _ in range(8):
            crc = ((crc << 1) ^ 0x1021 if crc & 0x8000 else crc << 1) & 0xFFFF
    return crc


class TestCrc:
    def test_known_vector(self):
        assert crc16_ccitt(bits_from_bytes(b"123456789")) == 0x29B1

    def test_matches_bytewise_oracle(self):
        rng = random.Random(21)
        for _ in range(50):
            data = bytes(rng.randrange(256) for _ in range(rng.randint(0, 40)))
            assert crc16_ccitt(bits_from_bytes(data)) == oracle_crc16(data)

    def test_bit_sensitivity(self):
        bits = bits_from_bytes(b"payload")
        base = crc16_ccitt(bits)
        for i in range(len(bits)):
            flipped = bits[:i] + ("1" if bits[i] == "0" else "0") + bits[i + 1 :]
            assert crc16_ccitt(flipped) != base


class TestBitCodecs:
    def test_hex_round_trip(self):
        assert bits_from_hex(bits_to_hex("10110010")) == "10110010"
        assert bits_to_hex("1010") == "a"

    def test_bad_hex(self):
        with pytest.raises(Exception):
            bits_from_hex("zz")


class TestCapacity:
    def test_nondegenerate_codons(self):
        assert capacity(CodingSequence(NucleotideSequence("ATGTGG"))) == 0

    def test_two_fourfold_glycines(self):
        assert capacity(CodingSequence(NucleotideSequence("GGTGGC"))) == 4

    def test_stop_contributes_zero(self):
        assert capacity(CodingSequence(NucleotideSequence("ATGTAA"))) == 0

    def test_against_degeneracy_oracle(self):
        rng = random.Random(22)
        for _ in range(20):
            cds = random_cds(rng, 300)
            assert capacity(cds) == oracle_capacity(cds.bases)

    def test_additivity_on_concatenation(self):
        rng = random.Random(23)
        for _ in range(20):
            c1 = random_cds(rng, rng.randint(5, 60))
            c2 = random_cds(rng, rng.randint(5, 60))
            joined = CodingSequence(NucleotideSequence(c1.bases + c2.bases))
            assert capacity(joined) == capacity(c1) + capacity(c2)


def random_payload(rng: random.Random, max_bits: int) -> WatermarkPayload:
    n = rng.randint(0, min(max_bits, 240))
    bits = "".join(rng.choice("01") for _ in range(n))
    ns = rng.choice([Namespace.Export, Namespace.Decoy])
    return WatermarkPayload(namespace=ns, bits=bits)


class TestEmbedExtract:
    def test_empty_payload_keyed_canonical_form(self):
        rng = random.Random(24)
        cds = random_cds(rng, 60)
        out = embed(cds, WatermarkPayload(Namespace.Export, ""), KEY)
        got = extract(out, KEY, 0)
        assert got.bits == ""
        assert got.namespace is Namespace.Export
        # deterministic canonical form
        again = embed(cds, WatermarkPayload(Namespace.Export, ""), KEY)
        assert again.bases == out.bases

    def test_round_trip_seeded_sample(self):
        rng = random.Random(25)
        for _ in range(100):
            cds = random_cds(rng, rng.randint(50, 300))
            payload = random_payload(rng, capacity(cds) - 16)
            marked = embed(cds, payload, KEY)
            assert translate(marked) == translate(cds)
            assert extract(marked, KEY, len(payload.bits)) == payload

    def test_insufficient_capacity(self):
        cds = CodingSequence(NucleotideSequence("ATGTGG"))
        with pytest.raises(InsufficientCapacity):
            embed(cds, WatermarkPayload(Namespace.Export, "1"), KEY)
        with pytest.raises(InsufficientCapacity):
            extract(cds, KEY, 1)

    def test_namespace_recovered(self):
        rng = random.Random(26)
        cds = random_cds(rng, 120)
        bits = bits_from_bytes(b"tok")
        for ns in Namespace:
            marked = embed(cds, WatermarkPayload(ns, bits), KEY)
            assert extract(marked, KEY, len(bits)).namespace is ns

    def test_idempotent_canonicalization(self):
        rng = random.Random(27)
        for _ in range(20):
            cds = random_cds(rng, rng.randint(40, 150))
            payload = random_payload(rng, capacity(cds) - 16)
            once = embed(cds, payload, KEY)
            twice = embed(once, payload, KEY)
            assert once.bases == twice.bases

    def test_deterministic(self):
        rng = random.Random(28)
        cds = random_cds(rng, 100)
        payload = WatermarkPayload(Namespace.Export, "1011" * 10)
        assert embed(cds, payload, KEY).bases == embed(cds, payload, KEY).bases

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32), st.integers(30, 150), st.integers(0, 60))
    def test_round_trip_property(self, seed, n_codons, payload_len):
        rng = random.Random(seed)
        cds = random_cds(rng, n_codons)
        cap = capacity(cds)
        payload_len = min(payload_len, max(cap - 16, 0))
        payload = WatermarkPayload(
            Namespace.Export, "".join(rng.choice("01") for _ in range(payload_len))
        )
        if payload_len + 16 > cap:
            with pytest.raises(InsufficientCapacity):
                embed(cds, payload, KEY)
            return
        marked = embed(cds, payload, KEY)
        assert translate(marked) == translate(cds)
        assert extract(marked, KEY, payload_len) == payload

    def test_wrong_key_rejected_sample(self):
        rng = random.Random(29)
        cds = random_cds(rng, 100)
        payload = random_payload(rng, capacity(cds) - 16)
        marked = embed(cds, payload, KEY)
        rejected = 0
        for i in range(200):
            wrong = WatermarkKey(hashlib.sha256(f"wk{i}".encode()).digest(), "w")
            try:
                extract(marked, wrong, len(payload.bits))
            except CrcMismatch:
                rejected += 1
        assert rejected >= 199

    def test_single_synonymous_mutation_detected_sample(self):
        from gatekeeper.seqio import GENETIC_CODE, SYNONYMOUS_CODONS

        rng = random.Random(30)
        detected = 0
        trials = 200
        for _ in range(trials):
            cds = random_cds(rng, 120)
            payload = random_payload(rng, capacity(cds) - 16)
            marked = embed(cds, payload, KEY)
            codons = marked.codons()
            # pick a degenerate site and swap in a different synonymous codon
            sites = [
                i for i, c in enumerate(codons) if len(SYNONYMOUS_CODONS[GENETIC_CODE[c]]) > 1
            ]
            site = rng.choice(sites)
            family = [c for c in SYNONYMOUS_CODONS[GENETIC_CODE[codons[site]]] if c != codons[site]]
            codons[site] = rng.choice(family)
            mutated = CodingSequence(NucleotideSequence("".join(codons)))
            try:
                got = extract(mutated, KEY, len(payload.bits))
                if got != payload:
                    detected += 1
            except CrcMismatch:
                detected += 1
        assert detected == trials  # 2^-16 escape odds; none expected in 200


class TestHoneytokens:
    def test_profile_validation(self):
        bad = uniform_codon_profile()
        bad["GGT"] = 0.9  # breaks the glycine family sum
        with pytest.raises(ProfileInvalid):
            generate_honeytoken(bad, 60, KEY, "t1")

    def test_too_short(self):
        with pytest.raises(ProfileInvalid):
            generate_honeytoken(uniform_codon_profile(), 10, KEY, "t1")

    def test_decoy_round_trip_and_no_internal_stop(self):
        rng = random.Random(31)
        decoy, record = generate_honeytoken(
            uniform_codon_profile(), 120, KEY, "ht-0001", rng=rng
        )
        assert "*" not in translate(decoy)[:-1]
        bits = bits_from_bytes(b"ht-0001")
        payload = extract(decoy, KEY, len(bits))
        assert payload.namespace is Namespace.Decoy
        assert payload.bits == bits
        assert record.sequence_hash == hashlib.sha256(decoy.bases.encode()).hexdigest()

    def test_corpus_absence_resampling(self):
        rng = random.Random(32)
        first, _ = generate_honeytoken(
            uniform_codon_profile(), 60, KEY, "t2", rng=random.Random(32)
        )
        taken = frozenset({hashlib.sha256(first.bases.encode()).hexdigest()})
        second, record = generate_honeytoken(
            uniform_codon_profile(), 60, KEY, "t2", corpus_hashes=taken, rng=random.Random(32)
        )
        assert record.sequence_hash not in taken

    def test_detect_exact_hash(self):
        rng = random.Random(33)
        decoy, record = generate_honeytoken(
            uniform_codon_profile(), 100, KEY, "t3", rng=rng
        )
        result = detect_honeytoken(decoy.seq, [record], k=30)
        assert result.hit == "t3"
        assert result.method.value == "ExactHash"

    def test_detect_kmer_overlap_after_mutations(self):
        rng = random.Random(34)
        decoy, record = generate_honeytoken(
            uniform_codon_profile(), 300, KEY, "t4", k=30, rng=rng
        )
        bases = list(decoy.bases)
        positions = rng.sample(range(len(bases)), 10)
        for pos in positions:
            bases[pos] = next(b for b in "ACGT" if b != bases[pos])
        mutated = NucleotideSequence("".join(bases), id="leak")

        # brute-force surviving k-mer fraction, then require detection
        surviving = kmers(mutated.bases, 30).kmers
        frac = len(record.kmer_set.kmers & surviving) / len(record.kmer_set.kmers)
        assert frac >= 0.5
        result = detect_honeytoken(mutated, [record], k=30)
        assert result.hit == "t4"
        assert result.method.value == "KmerOverlap"
        assert result.overlap == pytest.approx(frac)

    def test_detect_payload_extract_when_kmers_missing(self):
        rng = random.Random(35)
        decoy, record = generate_honeytoken(
            uniform_codon_profile(), 100, KEY, "t5", rng=rng
        )
        cold = HoneytokenRecord(
            token_id=record.token_id,
            sequence_hash="0" * 64,  # force hash miss
            kmer_set=None,  # force k-mer skip
            created_at=record.created_at,
            planted_in="",
        )
        result = detect_honeytoken(decoy.seq, [cold], k=30, key=KEY)
        assert result.hit == "t5"
        assert result.method.value == "PayloadExtract"

    def test_unrelated_content_no_hit_sample(self):
        rng = random.Random(36)
        decoy, record = generate_honeytoken(
            uniform_codon_profile(), 300, KEY, "t6", rng=rng
        )
        for _ in range(200):
            noise = NucleotideSequence(random_bases(rng, len(decoy.bases)), id="n")
            assert detect_honeytoken(noise, [record], k=30, key=KEY).hit is None

    def test_registry_round_trip(self, tmp_path):
        rng = random.Random(37)
        decoy, record = generate_honeytoken(
            uniform_codon_profile(), 90, KEY, "t7", planted_in="ds-1", rng=rng
        )
        path = tmp_path / "registry.jsonl"
        save_honeytoken_registry([record], path)
        cold = load_honeytoken_registry(path)
        assert cold[0].token_id == "t7"
        assert cold[0].kmer_set is None
        warm = load_honeytoken_registry(path, sequences={"t7": decoy.bases})
        assert warm[0].kmer_set == record.kmer_set

    def test_capacity_too_small_for_token(self):
        with pytest.raises(CapacityTooSmall):
            generate_honeytoken(
                uniform_codon_profile(), 60, KEY,
                "this-token-id-is-way-too-long-to-fit", rng=random.Random(38),
            )
