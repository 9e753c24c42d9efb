"""Nucleotide sequence primitives: FASTA I/O, the standard genetic code,
translation, and k-mer extraction.

Only the plain A/C/G/T alphabet is accepted. Ambiguity codes are rejected
rather than masked: downstream watermarking and k-mer screening have no
defined semantics over them, and silently degrading input hides data-quality
problems from the operator.
"""

from __future__ import annotations

from dataclasses import dataclass, field

ALPHABET = frozenset("ACGT")
STOP_CODONS = frozenset({"TAA", "TAG", "TGA"})
FASTA_LINE_WIDTH = 60

# k-mers shorter than this are too easy to hit by chance at screening scale.
MIN_K = 11
DEFAULT_SCREENING_K = 30

# Standard genetic code (DNA codons, one-letter amino acids, '*' = stop).
GENETIC_CODE = {
    "TTT": "F", "TTC": "F", "TTA": "L", "TTG": "L",
    "CTT": "L", "CTC": "L", "CTA": "L", "CTG": "L",
    "ATT": "I", "ATC": "I", "ATA": "I", "ATG": "M",
    "GTT": "V", "GTC": "V", "GTA": "V", "GTG": "V",
    "TCT": "S", "TCC": "S", "TCA": "S", "TCG": "S",
    "CCT": "P", "CCC": "P", "CCA": "P", "CCG": "P",
    "ACT": "T", "ACC": "T", "ACA": "T", "ACG": "T",
    "GCT": "A", "GCC": "A", "GCA": "A", "GCG": "A",
    "TAT": "Y", "TAC": "Y", "TAA": "*", "TAG": "*",
    "CAT": "H", "CAC": "H", "CAA": "Q", "CAG": "Q",
    "AAT": "N", "AAC": "N", "AAA": "K", "AAG": "K",
    "GAT": "D", "GAC": "D", "GAA": "E", "GAG": "E",
    "TGT": "C", "TGC": "C", "TGA": "*", "TGG": "W",
    "CGT": "R", "CGC": "R", "CGA": "R", "CGG": "R",
    "AGT": "S", "AGC": "S", "AGA": "R", "AGG": "R",
    "GGT": "G", "GGC": "G", "GGA": "G", "GGG": "G",
}

# amino acid -> synonymous codons, in a fixed canonical (alphabetical) order.
SYNONYMOUS_CODONS: dict[str, tuple[str, ...]] = {}
for _codon, _aa in sorted(GENETIC_CODE.items()):
    SYNONYMOUS_CODONS.setdefault(_aa, ())
    SYNONYMOUS_CODONS[_aa] += (_codon,)


class SeqError(ValueError):
    """Base class for sequence-layer errors."""


class MalformedFasta(SeqError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class InvalidSequence(SeqError):
    pass


class InvalidCodingSequence(SeqError):
    pass


class KTooLarge(SeqError):
    pass


@dataclass(frozen=True)
class NucleotideSequence:
    """A validated A/C/G/T sequence with its FASTA identity."""

    bases: str
    id: str = ""
    description: str = ""

    def __post_init__(self):
        if not self.bases:
            raise InvalidSequence(f"sequence {self.id!r} is empty")
        bad = set(self.bases) - ALPHABET
        if bad:
            raise InvalidSequence(
                f"sequence {self.id!r} contains illegal characters {sorted(bad)}"
            )

    def __len__(self) -> int:
        return len(self.bases)


@dataclass(frozen=True)
class CodingSequence:
    """A nucleotide sequence usable as an open reading frame.

    Length must be a codon multiple and no codon except the last may be a
    stop. The trailing stop is optional.
    """

    seq: NucleotideSequence

    def __post_init__(self):
        n = len(self.seq.bases)
        if n % 3 != 0:
            raise InvalidCodingSequence(
                f"length {n} of {self.seq.id!r} is not a codon multiple"
            )
        for i, codon in enumerate(self.codons()):
            if codon in STOP_CODONS and i != n // 3 - 1:
                raise InvalidCodingSequence(
                    f"internal stop codon {codon} at codon {i} of {self.seq.id!r}"
                )

    @property
    def bases(self) -> str:
        return self.seq.bases

    def codons(self) -> list[str]:
        b = self.seq.bases
        return [b[i : i + 3] for i in range(0, len(b), 3)]

    def __len__(self) -> int:
        return len(self.seq.bases)


@dataclass(frozen=True)
class KmerSet:
    k: int
    kmers: frozenset[str] = field(default_factory=frozenset)

    def __post_init__(self):
        if self.k < MIN_K:
            raise SeqError(f"k={self.k} below minimum {MIN_K}")
        for m in self.kmers:
            if len(m) != self.k:
                raise SeqError(f"k-mer {m!r} has length {len(m)}, expected {self.k}")

    def __len__(self) -> int:
        return len(self.kmers)


def parse_fasta(document: str | bytes) -> list[NucleotideSequence]:
    """Parse FASTA text into records, preserving order.

    Body lines are folded together; whitespace is ignored; lowercase bases
    are normalized to uppercase. Raises MalformedFasta (with a line number)
    on body text before the first header, an empty record body, or a
    character outside A/C/G/T.
    """
    if isinstance(document, bytes):
        try:
            document = document.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedFasta(f"not valid UTF-8: {exc}", 1) from None

    records: list[NucleotideSequence] = []
    header: str | None = None
    header_line = 0
    body: list[str] = []

    def flush(at_line: int):
        if header is None:
            return
        bases = "".join(body)
        if not bases:
            raise MalformedFasta(f"record {header!r} has an empty body", header_line)
        name, _, desc = header.partition(" ")
        records.append(NucleotideSequence(bases=bases, id=name, description=desc))

    for lineno, raw in enumerate(document.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith(">"):
            flush(lineno)
            header = line[1:].strip()
            header_line = lineno
            body = []
            continue
        if header is None:
            raise MalformedFasta("sequence body before first '>' header", lineno)
        chunk = "".join(line.split()).upper()
        bad = set(chunk) - ALPHABET
        if bad:
            raise MalformedFasta(
                f"illegal character(s) {sorted(bad)} in record {header!r}", lineno
            )
        body.append(chunk)

    flush(lineno if document else 0)
    return records


def serialize_fasta(records: list[NucleotideSequence]) -> str:
    """Render records as FASTA with 60-column bodies."""
    out: list[str] = []
    for rec in records:
        head = rec.id if not rec.description else f"{rec.id} {rec.description}"
        out.append(f">{head}")
        for i in range(0, len(rec.bases), FASTA_LINE_WIDTH):
            out.append(rec.bases[i : i + FASTA_LINE_WIDTH])
    return "\n".join(out) + ("\n" if out else "")


def translate(cds: CodingSequence) -> str:
    """Translate a coding sequence; a trailing stop renders as '*'."""
    return "".join(GENETIC_CODE[c] for c in cds.codons())


def kmers(seq: NucleotideSequence | str, k: int = DEFAULT_SCREENING_K) -> KmerSet:
    """All deduplicated length-k substrings of the sequence."""
    bases = seq if isinstance(seq, str) else seq.bases
    if k < MIN_K:
        raise SeqError(f"k={k} below minimum {MIN_K}")
    if k > len(bases):
        raise KTooLarge(f"k={k} exceeds sequence length {len(bases)}")
    return KmerSet(k=k, kmers=frozenset(bases[i : i + k] for i in range(len(bases) - k + 1)))
