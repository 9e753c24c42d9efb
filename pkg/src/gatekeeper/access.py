"""Access decisions against enforcement profiles: identity and factor
checks, token-bucket rate limiting, weighted risk scoring, and behavioral
anomaly detection.

decide() applies its checks in one fixed order so every denial has exactly
one reason and the decision is reproducible from its inputs. Anomaly flags
are advisory: they feed the review queue and audit log, never a denial.
"""

from __future__ import annotations

import math
import statistics
import threading
from dataclasses import dataclass, field
from datetime import date, datetime
from enum import Enum
from fractions import Fraction

from .taxonomy import BdlTier, EnforcementProfile, IdentityLevel, Monitoring


class AccessError(Exception):
    pass


class ConfigInvalid(AccessError):
    pass


class RequestAction(Enum):
    ReadMetadata = "ReadMetadata"
    ReadRecords = "ReadRecords"
    ExportRecords = "ExportRecords"
    SubmitJob = "SubmitJob"


class Outcome(Enum):
    Allow = "Allow"
    Deny = "Deny"
    Escalate = "Escalate"


class Reason(Enum):
    TierOpen = "TierOpen"
    Ok = "Ok"
    IdentityTooLow = "IdentityTooLow"
    SecondFactorRequired = "SecondFactorRequired"
    IntentRequired = "IntentRequired"
    ProjectApprovalRequired = "ProjectApprovalRequired"
    PreScreenRequired = "PreScreenRequired"
    ExportForbiddenTreOnly = "ExportForbiddenTreOnly"
    RateLimited = "RateLimited"
    RiskBlocked = "RiskBlocked"
    RiskReview = "RiskReview"


class Obligation(Enum):
    WatermarkExport = "WatermarkExport"
    LogIntent = "LogIntent"
    RecordProvenance = "RecordProvenance"
    SeedHoneytokens = "SeedHoneytokens"


@dataclass(frozen=True)
class Principal:
    id: str
    identity_level: IdentityLevel = IdentityLevel.Anonymous
    second_factor_enrolled: bool = False
    trust_score: float = 0.5
    approved_projects: frozenset[str] = frozenset()
    home_institution: str = ""
    usual_countries: frozenset[str] = frozenset()

    def __post_init__(self):
        if not 0.0 <= self.trust_score <= 1.0:
            raise AccessError(f"trust_score {self.trust_score} outside [0,1]")


ANONYMOUS = Principal(id="anonymous")


@dataclass(frozen=True)
class AccessRequest:
    principal_id: str
    dataset_id: str
    action: RequestAction
    project_id: str | None = None
    intent_statement: str | None = None
    second_factor_presented: bool = False
    origin_country: str = ""
    requested_records: int = 0
    requested_bytes: int = 0
    at: float = 0.0  # epoch seconds

    def __post_init__(self):
        if self.action is RequestAction.ExportRecords and self.requested_records < 1:
            raise AccessError("ExportRecords requires requested_records >= 1")
        if self.requested_records < 0 or self.requested_bytes < 0:
            raise AccessError("requested quantities must be nonnegative")


@dataclass(frozen=True)
class AccessDecision:
    outcome: Outcome
    reason: Reason
    obligations: frozenset[Obligation] = frozenset()

    def __post_init__(self):
        if self.outcome is Outcome.Allow and self.reason not in (
            Reason.TierOpen,
            Reason.Ok,
        ):
            raise AccessError(f"Allow cannot carry reason {self.reason}")

    def to_json_dict(self) -> dict:
        return {
            "outcome": self.outcome.value,
            "reason": self.reason.value,
            "obligations": sorted(o.value for o in self.obligations),
        }


# --- rate limiting -----------------------------------------------------------


@dataclass(frozen=True)
class TierLimit:
    capacity_records: int
    capacity_bytes: int
    refill_period_seconds: float

    def __post_init__(self):
        if min(self.capacity_records, self.capacity_bytes) <= 0:
            raise ConfigInvalid("rate capacities must be positive")
        if self.refill_period_seconds <= 0:
            raise ConfigInvalid("refill period must be positive")


@dataclass(frozen=True)
class RateLimitPolicy:
    per_tier: dict[BdlTier, TierLimit]

    def __post_init__(self):
        tiers = sorted(self.per_tier)
        for lo, hi in zip(tiers, tiers[1:]):
            a, b = self.per_tier[lo], self.per_tier[hi]
            if b.capacity_records > a.capacity_records or (
                b.capacity_bytes > a.capacity_bytes
            ):
                raise ConfigInvalid(
                    f"capacities must not increase with tier ({lo} -> {hi})"
                )

    @classmethod
    def default(cls) -> "RateLimitPolicy":
        day = 86400.0
        return cls(
            per_tier={
                BdlTier.BDL1: TierLimit(10_000, 1_000_000_000, day),
                BdlTier.BDL2: TierLimit(1_000, 100_000_000, day),
                BdlTier.BDL3: TierLimit(500, 10_000_000, day),
                BdlTier.BDL4: TierLimit(100, 1_000_000, day),
            }
        )


@dataclass
class _Bucket:
    records: Fraction
    bytes_: Fraction
    last: Fraction


class TokenBucketLimiter:
    """Two token buckets (records, bytes) per (principal, tier).

    Token arithmetic is exact (Fractions), so behavior is bit-reproducible
    against a reference simulation regardless of schedule.
    """

    def __init__(self, policy: RateLimitPolicy):
        self.policy = policy
        self._buckets: dict[tuple[str, BdlTier], _Bucket] = {}
        self._lock = threading.Lock()

    def _refill(self, key: tuple[str, BdlTier], limit: TierLimit, now: Fraction) -> _Bucket:
        bucket = self._buckets.get(key)
        if bucket is None:
            bucket = _Bucket(
                records=Fraction(limit.capacity_records),
                bytes_=Fraction(limit.capacity_bytes),
                last=now,
            )
            self._buckets[key] = bucket
            return bucket
        elapsed = now - bucket.last
        if elapsed > 0:
            period = Fraction(limit.refill_period_seconds)
            bucket.records = min(
                Fraction(limit.capacity_records),
                bucket.records + elapsed * limit.capacity_records / period,
            )
            bucket.bytes_ = min(
                Fraction(limit.capacity_bytes),
                bucket.bytes_ + elapsed * limit.capacity_bytes / period,
            )
            bucket.last = now
        return bucket

    def check_and_consume(
        self,
        principal_id: str,
        tier: BdlTier,
        requested_records: int,
        requested_bytes: int,
        now: float,
    ) -> bool:
        """Allowed iff both buckets cover the request; deducts atomically."""
        limit = self.policy.per_tier.get(BdlTier(tier))
        if limit is None:
            return True
        with self._lock:
            bucket = self._refill((principal_id, tier), limit, Fraction(now))
            if bucket.records >= requested_records and bucket.bytes_ >= requested_bytes:
                bucket.records -= requested_records
                bucket.bytes_ -= requested_bytes
                return True
            return False

    def retry_after(
        self,
        principal_id: str,
        tier: BdlTier,
        requested_records: int,
        requested_bytes: int,
        now: float,
    ) -> float:
        """Seconds until the request could be afforded; inf if it never can."""
        limit = self.policy.per_tier.get(BdlTier(tier))
        if limit is None:
            return 0.0
        if (
            requested_records > limit.capacity_records
            or requested_bytes > limit.capacity_bytes
        ):
            return math.inf
        with self._lock:
            bucket = self._refill((principal_id, tier), limit, Fraction(now))
            waits = [Fraction(0)]
            if bucket.records < requested_records:
                deficit = requested_records - bucket.records
                waits.append(
                    deficit * Fraction(limit.refill_period_seconds) / limit.capacity_records
                )
            if bucket.bytes_ < requested_bytes:
                deficit = requested_bytes - bucket.bytes_
                waits.append(
                    deficit * Fraction(limit.refill_period_seconds) / limit.capacity_bytes
                )
            return float(max(waits))


# --- risk scoring ------------------------------------------------------------


class RiskAction(Enum):
    Pass = "Pass"
    Review = "Review"
    Block = "Block"


@dataclass(frozen=True)
class RiskWeights:
    similarity: float = 0.5
    provenance: float = 0.2
    trust: float = 0.2
    tier: float = 0.1

    def __post_init__(self):
        values = (self.similarity, self.provenance, self.trust, self.tier)
        if any(w < 0 for w in values):
            raise ConfigInvalid("risk weights must be nonnegative")
        if abs(sum(values) - 1.0) > 1e-9:
            raise ConfigInvalid(f"risk weights sum to {sum(values)}, expected 1")


@dataclass(frozen=True)
class RiskConfig:
    weights: RiskWeights = RiskWeights()
    review_threshold: float = 0.5
    block_threshold: float = 0.8

    def __post_init__(self):
        if not 0 <= self.review_threshold <= self.block_threshold:
            raise ConfigInvalid("thresholds must satisfy 0 <= review <= block")


@dataclass(frozen=True)
class RiskScore:
    similarity: float
    provenance_deficit: float
    trust_deficit: float
    tier_weight: float
    total: float
    action: RiskAction

    def to_json_dict(self) -> dict:
        return {
            "similarity": self.similarity,
            "provenance_deficit": self.provenance_deficit,
            "trust_deficit": self.trust_deficit,
            "tier_weight": self.tier_weight,
            "total": self.total,
            "action": self.action.value,
        }


def risk_score(
    similarity: float,
    provenance_deficit: float,
    trust: float,
    tier: BdlTier,
    config: RiskConfig = RiskConfig(),
) -> RiskScore:
    """Weighted risk in [0,1]; thresholds pick Pass / Review / Block."""
    for name, v in (
        ("similarity", similarity),
        ("provenance_deficit", provenance_deficit),
        ("trust", trust),
    ):
        if not 0.0 <= v <= 1.0:
            raise AccessError(f"{name}={v} outside [0,1]")
    trust_deficit = 1.0 - trust
    tier_weight = int(tier) / 4.0
    w = config.weights
    total = (
        w.similarity * similarity
        + w.provenance * provenance_deficit
        + w.trust * trust_deficit
        + w.tier * tier_weight
    )
    if total >= config.block_threshold:
        action = RiskAction.Block
    elif total >= config.review_threshold:
        action = RiskAction.Review
    else:
        action = RiskAction.Pass
    return RiskScore(
        similarity=similarity,
        provenance_deficit=provenance_deficit,
        trust_deficit=trust_deficit,
        tier_weight=tier_weight,
        total=total,
        action=action,
    )


@dataclass(frozen=True)
class RiskInputs:
    similarity: float = 0.0
    provenance_deficit: float = 0.0


# --- the decision procedure --------------------------------------------------


def decide(
    request: AccessRequest,
    principal: Principal,
    tier: BdlTier,
    profile: EnforcementProfile,
    limiter: TokenBucketLimiter | None = None,
    risk_inputs: RiskInputs | None = None,
    risk_config: RiskConfig = RiskConfig(),
) -> AccessDecision:
    """Fixed-order policy checks; the first failing check names the reason.

    Order: tier-0 open, identity floor, second factor, intent, project
    approval, pre-screening, TRE export bar, rate limit, risk score.
    Rate tokens are deducted when the rate check passes, even if risk
    scoring later denies.
    """
    if tier == BdlTier.BDL0:
        return AccessDecision(Outcome.Allow, Reason.TierOpen)

    if principal.identity_level < profile.min_identity:
        return AccessDecision(Outcome.Deny, Reason.IdentityTooLow)

    if profile.second_factor_required and not request.second_factor_presented:
        return AccessDecision(Outcome.Deny, Reason.SecondFactorRequired)

    intent_required = (
        Monitoring.IntentLogging in profile.monitoring
        and request.action is not RequestAction.ReadMetadata
    )
    if intent_required and not (request.intent_statement or "").strip():
        return AccessDecision(Outcome.Deny, Reason.IntentRequired)

    if profile.use_approval_required and (
        request.project_id is None
        or request.project_id not in principal.approved_projects
    ):
        return AccessDecision(Outcome.Deny, Reason.ProjectApprovalRequired)

    if profile.pre_screen_required and principal.identity_level < IdentityLevel.PreScreened:
        return AccessDecision(Outcome.Deny, Reason.PreScreenRequired)

    if request.action is RequestAction.ExportRecords and profile.tre_only:
        return AccessDecision(Outcome.Deny, Reason.ExportForbiddenTreOnly)

    if Monitoring.RateLimit in profile.monitoring and limiter is not None:
        allowed = limiter.check_and_consume(
            request.principal_id,
            tier,
            request.requested_records,
            request.requested_bytes,
            request.at,
        )
        if not allowed:
            return AccessDecision(Outcome.Deny, Reason.RateLimited)

    if Monitoring.RiskScoring in profile.monitoring and risk_inputs is not None:
        score = risk_score(
            risk_inputs.similarity,
            risk_inputs.provenance_deficit,
            principal.trust_score,
            tier,
            risk_config,
        )
        if score.action is RiskAction.Block:
            return AccessDecision(Outcome.Deny, Reason.RiskBlocked)
        if score.action is RiskAction.Review:
            return AccessDecision(Outcome.Escalate, Reason.RiskReview)

    obligations = set()
    if profile.watermark_on_export and request.action is RequestAction.ExportRecords:
        obligations.add(Obligation.WatermarkExport)
    if intent_required:
        obligations.add(Obligation.LogIntent)
    if Monitoring.ProvenanceRecording in profile.monitoring:
        obligations.add(Obligation.RecordProvenance)
    if profile.tre_only:
        obligations.add(Obligation.SeedHoneytokens)
    return AccessDecision(Outcome.Allow, Reason.Ok, frozenset(obligations))


# --- anomaly detection -------------------------------------------------------


class AnomalyKind(Enum):
    VolumeSurge = "VolumeSurge"
    RateSurge = "RateSurge"
    NewGeography = "NewGeography"


@dataclass(frozen=True)
class AnomalyFlag:
    principal_id: str
    kind: AnomalyKind
    z_value: float | None
    at: datetime

    def to_json_dict(self) -> dict:
        return {
            "principal_id": self.principal_id,
            "kind": self.kind.value,
            "z_value": self.z_value,
            "at": self.at.isoformat(),
        }


@dataclass(frozen=True)
class AnomalyConfig:
    z_threshold: float = 3.0
    cold_start_days: int = 7
    window_days: int = 30


@dataclass(frozen=True)
class DayStat:
    day: date
    request_count: int
    bytes_downloaded: int


@dataclass
class AnomalyBaseline:
    """Rolling per-principal activity window plus the current day's tallies."""

    principal_id: str
    days: list[DayStat] = field(default_factory=list)
    today: date | None = None
    today_requests: int = 0
    today_bytes: int = 0
    seen_countries: set[str] = field(default_factory=set)
    flagged_today: set[AnomalyKind] = field(default_factory=set)


@dataclass(frozen=True)
class AccessEvent:
    principal_id: str
    at: datetime
    bytes_downloaded: int = 0
    origin_country: str = ""


def _z(value: float, window: list[int], threshold: float) -> float | None:
    """z-score vs the window; exceeding the threshold returns the value.

    Zero stddev is defined as z=0 when the value equals the mean and an
    unconditional flag (inf) otherwise.
    """
    mean = statistics.fmean(window)
    std = statistics.pstdev(window)
    if std == 0:
        z = 0.0 if value == mean else math.inf
    else:
        z = (value - mean) / std
    return z if z > threshold else None


def observe_and_flag(
    baseline: AnomalyBaseline,
    event: AccessEvent,
    usual_countries: frozenset[str] = frozenset(),
    config: AnomalyConfig = AnomalyConfig(),
) -> tuple[AnomalyBaseline, list[AnomalyFlag]]:
    """Fold one access event into the baseline and emit advisory flags.

    Surge kinds fire at most once per day per principal. Days with no
    activity count as zero-volume days in the window, so a quiet stretch
    followed by a bulk download still stands out.
    """
    day = event.at.date()
    if baseline.today is not None and day < baseline.today:
        raise AccessError("event predates the baseline's current day")

    if baseline.today is None:
        baseline.today = day
    elif day > baseline.today:
        baseline.days.append(
            DayStat(baseline.today, baseline.today_requests, baseline.today_bytes)
        )
        gap = (day - baseline.today).days - 1
        cursor = baseline.today
        for _ in range(min(gap, config.window_days)):
            cursor = date.fromordinal(cursor.toordinal() + 1)
            baseline.days.append(DayStat(cursor, 0, 0))
        baseline.days = baseline.days[-config.window_days :]
        baseline.today = day
        baseline.today_requests = 0
        baseline.today_bytes = 0
        baseline.flagged_today = set()

    baseline.today_requests += 1
    baseline.today_bytes += event.bytes_downloaded

    flags: list[AnomalyFlag] = []
    if len(baseline.days) >= config.cold_start_days:
        z_bytes = _z(
            baseline.today_bytes,
            [d.bytes_downloaded for d in baseline.days],
            config.z_threshold,
        )
        if z_bytes is not None and AnomalyKind.VolumeSurge not in baseline.flagged_today:
            baseline.flagged_today.add(AnomalyKind.VolumeSurge)
            flags.append(
                AnomalyFlag(baseline.principal_id, AnomalyKind.VolumeSurge, z_bytes, event.at)
            )
        z_req = _z(
            baseline.today_requests,
            [d.request_count for d in baseline.days],
            config.z_threshold,
        )
        if z_req is not None and AnomalyKind.RateSurge not in baseline.flagged_today:
            baseline.flagged_today.add(AnomalyKind.RateSurge)
            flags.append(
                AnomalyFlag(baseline.principal_id, AnomalyKind.RateSurge, z_req, event.at)
            )

    country = event.origin_country
    if country and country not in baseline.seen_countries | set(usual_countries):
        flags.append(
            AnomalyFlag(baseline.principal_id, AnomalyKind.NewGeography, None, event.at)
        )
    if country:
        baseline.seen_countries.add(country)

    return baseline, flags


# --- policy configuration ----------------------------------------------------


@dataclass(frozen=True)
class AccessConfig:
    """Operator policy knobs, loadable from the gateway's JSON config."""

    risk: RiskConfig = RiskConfig()
    rate_policy: RateLimitPolicy = field(default_factory=RateLimitPolicy.default)
    anomaly: AnomalyConfig = AnomalyConfig()

    @classmethod
    def from_json_dict(cls, doc: dict) -> "AccessConfig":
        risk_doc = doc.get("risk", {})
        weights_doc = risk_doc.get("weights", {})
        risk = RiskConfig(
            weights=RiskWeights(
                similarity=weights_doc.get("similarity", 0.5),
                provenance=weights_doc.get("provenance", 0.2),
                trust=weights_doc.get("trust", 0.2),
                tier=weights_doc.get("tier", 0.1),
            ),
            review_threshold=risk_doc.get("review_threshold", 0.5),
            block_threshold=risk_doc.get("block_threshold", 0.8),
        )
        rate_doc = doc.get("rate_limits")
        if rate_doc:
            per_tier = {
                BdlTier(int(tier)): TierLimit(
                    capacity_records=int(limits["capacity_records"]),
                    capacity_bytes=int(limits["capacity_bytes"]),
                    refill_period_seconds=float(limits["refill_period_seconds"]),
                )
                for tier, limits in rate_doc.items()
            }
            rate_policy = RateLimitPolicy(per_tier=per_tier)
        else:
            rate_policy = RateLimitPolicy.default()
        anomaly_doc = doc.get("anomaly", {})
        anomaly = AnomalyConfig(
            z_threshold=float(anomaly_doc.get("z_threshold", 3.0)),
            cold_start_days=int(anomaly_doc.get("cold_start_days", 7)),
            window_days=int(anomaly_doc.get("window_days", 30)),
        )
        return cls(risk=risk, rate_policy=rate_policy, anomaly=anomaly)
