"""Biosecurity Data Level (BDL) tier system.

Classifies dataset descriptors into tiers BDL-0..BDL-4 with a fixed,
first-match-wins rule table, and maps each tier to the enforcement profile
the rest of the gateway applies. Which viral family belongs to which risk
class is operator data (the family registry), never a judgment made here.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from enum import Enum, IntEnum


class BdlTier(IntEnum):
    BDL0 = 0
    BDL1 = 1
    BDL2 = 2
    BDL3 = 3
    BDL4 = 4


class DataModality(Enum):
    SequenceRaw = "SequenceRaw"
    SequenceAnnotated = "SequenceAnnotated"
    ProteinStructure = "ProteinStructure"
    FunctionalAssay = "FunctionalAssay"
    ProteinInteraction = "ProteinInteraction"
    DiagnosticComparison = "DiagnosticComparison"
    EnvironmentalStabilityAssay = "EnvironmentalStabilityAssay"
    PhenotypicAnimalModel = "PhenotypicAnimalModel"
    TransmissionRate = "TransmissionRate"
    Other = "Other"


# Modalities that can carry functional signal about pathogen properties.
FUNCTIONAL_MODALITIES = frozenset(
    {
        DataModality.SequenceAnnotated,
        DataModality.FunctionalAssay,
        DataModality.ProteinInteraction,
        DataModality.DiagnosticComparison,
        DataModality.EnvironmentalStabilityAssay,
        DataModality.PhenotypicAnimalModel,
        DataModality.TransmissionRate,
    }
)


class FamilyRiskClass(IntEnum):
    NonConcern = 0
    EukaryoteInfecting = 1
    AnimalPandemicCapable = 2
    HumanInfecting = 3
    HumanPandemicPotential = 4


class PropertyOfConcern(Enum):
    ZoonoticCrossover = "ZoonoticCrossover"
    EnvironmentalStability = "EnvironmentalStability"
    HostRange = "HostRange"
    HostSusceptibility = "HostSusceptibility"
    DetectionEvasion = "DetectionEvasion"
    Transmissibility = "Transmissibility"
    Virulence = "Virulence"
    ImmuneEvasion = "ImmuneEvasion"
    CountermeasureResistance = "CountermeasureResistance"


TIER2_PROPERTIES = frozenset(
    {
        PropertyOfConcern.ZoonoticCrossover,
        PropertyOfConcern.EnvironmentalStability,
        PropertyOfConcern.HostRange,
        PropertyOfConcern.HostSusceptibility,
        PropertyOfConcern.DetectionEvasion,
    }
)

TIER34_PROPERTIES = frozenset(
    {
        PropertyOfConcern.Transmissibility,
        PropertyOfConcern.Virulence,
        PropertyOfConcern.ImmuneEvasion,
        PropertyOfConcern.CountermeasureResistance,
    }
)

# Top-tier escalation requires demonstrated enhancement of one of these.
ENHANCEMENT_PROPERTIES = frozenset(
    {
        PropertyOfConcern.Transmissibility,
        PropertyOfConcern.Virulence,
        PropertyOfConcern.ImmuneEvasion,
    }
)


class IdentityLevel(IntEnum):
    Anonymous = 0
    Registered = 1
    Accredited = 2
    PreScreened = 3


class Monitoring(Enum):
    AuditLog = "AuditLog"
    AnomalyDetection = "AnomalyDetection"
    RateLimit = "RateLimit"
    RiskScoring = "RiskScoring"
    IntentLogging = "IntentLogging"
    Honeytokens = "Honeytokens"
    ProvenanceRecording = "ProvenanceRecording"


class TaxonomyError(ValueError):
    pass


class ParseError(TaxonomyError):
    pass


class DuplicateFamily(TaxonomyError):
    pass


@dataclass(frozen=True)
class DatasetDescriptor:
    """Structured metadata driving classification.

    record_count and total_bases do not affect the tier in v1; they feed
    rate limiting and risk scoring downstream.
    """

    modality: DataModality
    family_class: FamilyRiskClass
    properties: frozenset[PropertyOfConcern] = frozenset()
    enhancement_demonstrated: bool = False
    outbreak_exception: bool = False
    family_name: str = ""
    record_count: int = 0
    total_bases: int = 0

    def __post_init__(self):
        if self.enhancement_demonstrated and not self.properties:
            raise TaxonomyError(
                "enhancement_demonstrated requires a nonempty property set"
            )
        if self.record_count < 0 or self.total_bases < 0:
            raise TaxonomyError("record_count and total_bases must be nonnegative")
        if self.record_count == 0 and self.total_bases != 0:
            raise TaxonomyError("total_bases must be 0 when record_count is 0")

    def to_json_dict(self) -> dict:
        return {
            "modality": self.modality.value,
            "family_class": self.family_class.name,
            "properties": sorted(p.value for p in self.properties),
            "enhancement_demonstrated": self.enhancement_demonstrated,
            "outbreak_exception": self.outbreak_exception,
            "family_name": self.family_name,
            "record_count": self.record_count,
            "total_bases": self.total_bases,
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "DatasetDescriptor":
        try:
            return cls(
                modality=DataModality(doc["modality"]),
                family_class=_family_class(doc["family_class"]),
                properties=frozenset(
                    PropertyOfConcern(p) for p in doc.get("properties", [])
                ),
                enhancement_demonstrated=bool(doc.get("enhancement_demonstrated", False)),
                outbreak_exception=bool(doc.get("outbreak_exception", False)),
                family_name=str(doc.get("family_name", "")),
                record_count=int(doc.get("record_count", 0)),
                total_bases=int(doc.get("total_bases", 0)),
            )
        except (KeyError, ValueError, TypeError) as exc:
            if isinstance(exc, TaxonomyError):
                raise
            raise ParseError(f"bad descriptor document: {exc}") from None


def _family_class(value) -> FamilyRiskClass:
    if isinstance(value, str) and not value.isdigit():
        return FamilyRiskClass[value]
    return FamilyRiskClass(int(value))


@dataclass(frozen=True)
class ClassificationResult:
    tier: BdlTier
    matched_rule: str
    warnings: tuple[str, ...] = ()

    def to_json_dict(self) -> dict:
        return {
            "tier": int(self.tier),
            "matched_rule": self.matched_rule,
            "warnings": list(self.warnings),
        }


def classify(descriptor: DatasetDescriptor) -> ClassificationResult:
    """Assign a BDL tier. Pure; first matching rule wins.

    Rule order: R0 outbreak override, then R4 down to R1, else BDL-0.
    """
    d = descriptor
    warnings: list[str] = []

    functional = d.modality in FUNCTIONAL_MODALITIES
    if (
        functional
        and not d.properties
        and d.family_class >= FamilyRiskClass.HumanInfecting
        and d.modality is not DataModality.SequenceAnnotated
    ):
        # Functional data with no scored property falls through to low tiers;
        # surface that for a curator rather than guessing upward.
        warnings.append("unscored-functional-data")

    if d.outbreak_exception:
        return ClassificationResult(
            BdlTier.BDL0, "R0", tuple(["outbreak-override"] + warnings)
        )

    if (
        d.family_class == FamilyRiskClass.HumanPandemicPotential
        and functional
        and d.properties & ENHANCEMENT_PROPERTIES
        and d.enhancement_demonstrated
    ):
        return ClassificationResult(BdlTier.BDL4, "R4", tuple(warnings))

    if d.family_class >= FamilyRiskClass.HumanInfecting and (
        (functional and d.properties & TIER34_PROPERTIES)
        or d.modality is DataModality.SequenceAnnotated
    ):
        return ClassificationResult(BdlTier.BDL3, "R3", tuple(warnings))

    if d.family_class >= FamilyRiskClass.AnimalPandemicCapable and (
        d.modality is DataModality.SequenceAnnotated
        or (functional and d.properties & TIER2_PROPERTIES)
    ):
        return ClassificationResult(BdlTier.BDL2, "R2", tuple(warnings))

    if d.family_class >= FamilyRiskClass.EukaryoteInfecting and d.modality in (
        DataModality.SequenceRaw,
        DataModality.ProteinStructure,
        DataModality.SequenceAnnotated,
    ):
        return ClassificationResult(BdlTier.BDL1, "R1", tuple(warnings))

    return ClassificationResult(BdlTier.BDL0, "default", tuple(warnings))


@dataclass(frozen=True)
class EnforcementProfile:
    tier: BdlTier
    min_identity: IdentityLevel
    second_factor_required: bool
    use_approval_required: bool
    pre_screen_required: bool
    raw_export_allowed: bool
    watermark_on_export: bool
    tre_only: bool
    mandatory_human_egress_review: bool
    monitoring: frozenset[Monitoring]

    def __post_init__(self):
        if self.tre_only and self.raw_export_allowed:
            raise TaxonomyError("tre_only forbids raw export")


_BASE_MONITORING = frozenset(
    {
        Monitoring.AuditLog,
        Monitoring.AnomalyDetection,
        Monitoring.RateLimit,
        Monitoring.RiskScoring,
        Monitoring.IntentLogging,
    }
)

_PROFILES: dict[BdlTier, EnforcementProfile] = {
    BdlTier.BDL0: EnforcementProfile(
        tier=BdlTier.BDL0,
        min_identity=IdentityLevel.Anonymous,
        second_factor_required=False,
        use_approval_required=False,
        pre_screen_required=False,
        raw_export_allowed=True,
        watermark_on_export=False,
        tre_only=False,
        mandatory_human_egress_review=False,
        monitoring=frozenset(),
    ),
    BdlTier.BDL1: EnforcementProfile(
        tier=BdlTier.BDL1,
        min_identity=IdentityLevel.Registered,
        second_factor_required=False,
        use_approval_required=False,
        pre_screen_required=False,
        raw_export_allowed=True,
        watermark_on_export=False,
        tre_only=False,
        mandatory_human_egress_review=False,
        monitoring=_BASE_MONITORING,
    ),
    BdlTier.BDL2: EnforcementProfile(
        tier=BdlTier.BDL2,
        min_identity=IdentityLevel.Accredited,
        second_factor_required=True,
        use_approval_required=False,
        pre_screen_required=False,
        raw_export_allowed=True,
        watermark_on_export=True,
        tre_only=False,
        mandatory_human_egress_review=False,
        monitoring=_BASE_MONITORING,
    ),
    BdlTier.BDL3: EnforcementProfile(
        tier=BdlTier.BDL3,
        min_identity=IdentityLevel.Accredited,
        second_factor_required=True,
        use_approval_required=True,
        pre_screen_required=False,
        raw_export_allowed=False,
        watermark_on_export=True,
        tre_only=True,
        mandatory_human_egress_review=False,
        monitoring=_BASE_MONITORING | {Monitoring.Honeytokens},
    ),
    BdlTier.BDL4: EnforcementProfile(
        tier=BdlTier.BDL4,
        # Stays Accredited so a missing pre-screen is reported as
        # PreScreenRequired instead of being shadowed by IdentityTooLow.
        min_identity=IdentityLevel.Accredited,
        second_factor_required=True,
        use_approval_required=True,
        pre_screen_required=True,
        raw_export_allowed=False,
        watermark_on_export=True,
        tre_only=True,
        mandatory_human_egress_review=True,
        monitoring=_BASE_MONITORING
        | {Monitoring.Honeytokens, Monitoring.ProvenanceRecording},
    ),
}


def enforcement_profile(tier: BdlTier) -> EnforcementProfile:
    """The per-tier control bundle (identity, export, monitoring)."""
    return _PROFILES[BdlTier(tier)]


@dataclass(frozen=True)
class FamilyRegistry:
    """Operator-curated mapping of family names to risk classes.

    Unregistered families resolve to NonConcern with an advisory warning;
    the registry never silently elevates a family the curator has not seen.
    """

    entries: dict[str, FamilyRiskClass] = field(default_factory=dict)
    version: int = 1
    active_outbreak_families: frozenset[str] = frozenset()

    def lookup(self, family_name: str) -> tuple[FamilyRiskClass, list[str]]:
        if family_name in self.entries:
            return self.entries[family_name], []
        return FamilyRiskClass.NonConcern, [f"unregistered-family:{family_name}"]

    def annotate(
        self, descriptor: DatasetDescriptor
    ) -> tuple[DatasetDescriptor, list[str]]:
        """Overlay curator data onto a descriptor before classification.

        Registered names take the registry's risk class and outbreak status,
        overriding whatever the submitter claimed; unregistered names keep
        the descriptor as supplied, flagged for curation.
        """
        name = descriptor.family_name
        if not name or name not in self.entries:
            warnings = [] if not name else [f"unregistered-family:{name}"]
            return descriptor, warnings
        warnings = []
        cls = self.entries[name]
        outbreak = name in self.active_outbreak_families
        if cls != descriptor.family_class:
            warnings.append(f"registry-overrides-family-class:{name}")
        updated = replace(
            descriptor, family_class=cls, outbreak_exception=outbreak
        )
        return updated, warnings


def load_family_registry(source: str | bytes | dict) -> FamilyRegistry:
    """Load the registry document {version, families:[{name, class, outbreak}]}."""
    if isinstance(source, (str, bytes)):
        try:
            doc = json.loads(source)
        except json.JSONDecodeError as exc:
            raise ParseError(f"registry is not valid JSON: {exc}") from None
    else:
        doc = source
    if not isinstance(doc, dict) or not isinstance(doc.get("families", []), list):
        raise ParseError("registry must be an object with a 'families' list")

    entries: dict[str, FamilyRiskClass] = {}
    outbreaks: set[str] = set()
    for item in doc.get("families", []):
        try:
            name = str(item["name"])
            cls = _family_class(item["class"])
        except (KeyError, ValueError, TypeError) as exc:
            raise ParseError(f"bad family entry {item!r}: {exc}") from None
        if name in entries:
            raise DuplicateFamily(f"family {name!r} listed twice")
        entries[name] = cls
        if item.get("outbreak", False):
            outbreaks.add(name)
    return FamilyRegistry(
        entries=entries,
        version=int(doc.get("version", 1)),
        active_outbreak_families=frozenset(outbreaks),
    )
