import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gatekeeper.seqio import (
    CodingSequence,
    InvalidCodingSequence,
    InvalidSequence,
    KTooLarge,
    KmerSet,
    MalformedFasta,
    NucleotideSequence,
    SeqError,
    kmers,
    parse_fasta,
    serialize_fasta,
    translate,
)

# Independent transcription of the standard genetic code: NCBI table 1
# layout, bases ordered T,C,A,G, first base cycling slowest.
_NCBI_AAS = "FFLLSSSSYY**CC*WLLLLPPPPHHQQRRRRIIIMTTTTNNKKSSRRVVVVAAAADDEEGGGG"
_ORDER = "TCAG"


def oracle_translate(bases: str) -> str:
    out = []
    for i in range(0, len(bases), 3):
        c = bases[i : i + 3]
        idx = 16 * _ORDER.index(c[0]) + 4 * _ORDER.index(c[1]) + _ORDER.index(c[2])
        out.append(_NCBI_AAS[idx])
    return "".join(out)


class TestParseFasta:
    def test_single_record(self):
        records = parse_fasta(">a\nACGT")
        assert len(records) == 1
        assert records[0].id == "a"
        assert records[0].bases == "ACGT"

    def test_line_folding(self):
        records = parse_fasta(">a\nAC\nGT\n>b\nTTT")
        assert [(r.id, r.bases) for r in records] == [("a", "ACGT"), ("b", "TTT")]

    def test_illegal_character_reports_line(self):
        with pytest.raises(MalformedFasta) as err:
            parse_fasta(">a\nACGX")
        assert err.value.line == 2

    def test_body_before_header(self):
        with pytest.raises(MalformedFasta) as err:
            parse_fasta("ACGT\n>a\nACGT")
        assert err.value.line == 1

    def test_empty_body(self):
        with pytest.raises(MalformedFasta):
            parse_fasta(">a\n>b\nACGT")

    def test_trailing_empty_body(self):
        with pytest.raises(MalformedFasta):
            parse_fasta(">a\nACGT\n>b\n")

    def test_empty_document(self):
        assert parse_fasta("") == []

    def test_description_preserved(self):
        (rec,) = parse_fasta(">id1 some description here\nACGT")
        assert rec.id == "id1"
        assert rec.description == "some description here"

    def test_lowercase_normalized(self):
        (rec,) = parse_fasta(">a\nacgt")
        assert rec.bases == "ACGT"

    def test_bytes_input(self):
        assert parse_fasta(b">a\nACGT")[0].bases == "ACGT"

    def test_ambiguity_codes_rejected(self):
        with pytest.raises(MalformedFasta):
            parse_fasta(">a\nACGN")


@st.composite
def record_lists(draw):
    n = draw(st.integers(1, 5))
    records = []
    for i in range(n):
        bases = draw(st.text(alphabet="ACGT", min_size=1, max_size=200))
        records.append(NucleotideSequence(bases=bases, id=f"r{i}"))
    return records


class TestRoundTrip:
    @settings(max_examples=50, deadline=None)
    @given(record_lists())
    def test_parse_serialize_identity(self, records):
        parsed = parse_fasta(serialize_fasta(records))
        assert [(r.id, r.bases) for r in parsed] == [
            (r.id, r.bases) for r in records
        ]

    def test_sixty_column_bodies(self):
        text = serialize_fasta([NucleotideSequence("A" * 130, id="x")])
        body_lines = text.splitlines()[1:]
        assert [len(line) for line in body_lines] == [60, 60, 10]


class TestTypes:
    def test_empty_sequence_rejected(self):
        with pytest.raises(InvalidSequence):
            NucleotideSequence("")

    def test_cds_length_multiple_of_three(self):
        with pytest.raises(InvalidCodingSequence):
            CodingSequence(NucleotideSequence("ACGTA"))

    def test_cds_internal_stop_rejected(self):
        with pytest.raises(InvalidCodingSequence):
            CodingSequence(NucleotideSequence("ATGTAAGGG"))

    def test_cds_trailing_stop_allowed(self):
        cds = CodingSequence(NucleotideSequence("ATGGGGTAA"))
        assert translate(cds) == "MG*"

    def test_kmerset_length_check(self):
        with pytest.raises(SeqError):
            KmerSet(k=12, kmers=frozenset({"ACGT"}))


class TestTranslate:
    def test_met_trp(self):
        assert translate(CodingSequence(NucleotideSequence("ATGTGG"))) == "MW"

    def test_all_glycine_codons(self):
        assert translate(CodingSequence(NucleotideSequence("GGTGGCGGAGGG"))) == "GGGG"

    def test_against_independent_table(self):
        from conftest import random_cds

        rng = random.Random(11)
        for _ in range(25):
            cds = random_cds(rng, 300)
            assert translate(cds) == oracle_translate(cds.bases)

    def test_length_is_codon_count(self):
        from conftest import random_cds

        rng = random.Random(12)
        cds = random_cds(rng, 77)
        assert len(translate(cds)) == 77


class TestKmers:
    def test_enumeration(self):
        result = kmers("ACGTACGTACGTA", k=12)
        assert result.kmers == {"ACGTACGTACGT", "CGTACGTACGTA"}

    def test_boundary_singleton(self):
        seq = "ACGT" * 8  # length 32
        assert len(kmers(seq, k=32)) == 1

    def test_k_too_large(self):
        with pytest.raises(KTooLarge):
            kmers("ACGTACGTACGT", k=13)

    def test_k_below_minimum(self):
        with pytest.raises(SeqError):
            kmers("ACGTACGTACGT", k=4)

    def test_matches_brute_force(self):
        from conftest import random_bases

        rng = random.Random(13)
        for _ in range(20):
            bases = random_bases(rng, rng.randint(40, 400))
            k = rng.randint(11, 35)
            expected = set()
            for i in range(len(bases)):  # naive double loop
                window = bases[i : i + k]
                if len(window) == k:
                    expected.add(window)
            assert kmers(bases, k).kmers == expected

    def test_count_bound(self):
        from conftest import random_bases

        rng = random.Random(14)
        for _ in range(20):
            bases = random_bases(rng, rng.randint(30, 200))
            k = rng.randint(11, 29)
            assert len(kmers(bases, k)) <= len(bases) - k + 1
