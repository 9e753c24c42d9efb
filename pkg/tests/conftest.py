import json
import random
from pathlib import Path

import pytest

from gatekeeper.config import load_config, scaffold_deployment
from gatekeeper.seqio import SYNONYMOUS_CODONS, CodingSequence, NucleotideSequence
from gatekeeper.service import GatewayService

SENSE_CODONS = [
    codon
    for aa, codons in sorted(SYNONYMOUS_CODONS.items())
    if aa != "*"
    for codon in codons
]


def random_cds(rng: random.Random, n_codons: int, rec_id: str = "cds") -> CodingSequence:
    """A random coding sequence: ATG start, no internal stops."""
    codons = ["ATG"] + [rng.choice(SENSE_CODONS) for _ in range(n_codons - 1)]
    return CodingSequence(NucleotideSequence("".join(codons), id=rec_id))


def random_bases(rng: random.Random, n: int) -> str:
    return "".join(rng.choice("ACGT") for _ in range(n))


def cds_fasta(rng: random.Random, records: int, codons: int = 90) -> str:
    lines = []
    for i in range(records):
        lines.append(f">rec{i}")
        lines.append(random_cds(rng, codons).bases)
    return "\n".join(lines) + "\n"


DEFAULT_FAMILIES = [
    {"name": "BenignFam", "class": "NonConcern"},
    {"name": "PlantFam", "class": "EukaryoteInfecting"},
    {"name": "SwineFam", "class": "AnimalPandemicCapable"},
    {"name": "HumanFam", "class": "HumanInfecting"},
    {"name": "PandemicFam", "class": "HumanPandemicPotential"},
    {"name": "OutbreakFam", "class": "HumanPandemicPotential", "outbreak": True},
]

RESEARCHER = {
    "token": "researcher-token",
    "id": "researcher-1",
    "identity_level": "Accredited",
    "second_factor_enrolled": True,
    "trust_score": 0.9,
    "approved_projects": ["proj-x"],
    "home_institution": "uni-a",
    "usual_countries": ["US"],
    "roles": [],
}

REGISTERED_USER = {
    "token": "registered-token",
    "id": "registered-1",
    "identity_level": "Registered",
    "second_factor_enrolled": False,
    "trust_score": 0.8,
    "approved_projects": [],
    "home_institution": "uni-b",
    "usual_countries": ["US"],
    "roles": [],
}


def make_deployment(tmp_path: Path, **config_overrides):
    """Scaffold a deployment with the fixture registry and principals."""
    cfg_path = scaffold_deployment(tmp_path)
    (tmp_path / "registry.json").write_text(
        json.dumps({"version": 2, "families": DEFAULT_FAMILIES})
    )
    doc = json.loads((tmp_path / "principals.json").read_text())
    doc["principals"] += [RESEARCHER, REGISTERED_USER]
    (tmp_path / "principals.json").write_text(json.dumps(doc))
    if config_overrides:
        cfg_doc = json.loads(cfg_path.read_text())
        cfg_doc.update(config_overrides)
        cfg_path.write_text(json.dumps(cfg_doc))
    return load_config(cfg_path)


class FakeClock:
    def __init__(self, start: float = 1_700_000_000.0):
        self.now = start

    def __call__(self) -> float:
        return self.now

    def advance(self, seconds: float) -> None:
        self.now += seconds


@pytest.fixture
def clock():
    return FakeClock()


@pytest.fixture
def service(tmp_path, clock):
    config = make_deployment(tmp_path)
    return GatewayService(config, clock=clock, rng=random.Random(2024))
