"""Gateway business operations.

One GatewayService instance owns the store, the audit log, key material,
and policy configuration. All mutating operations run under a single
writer lock so audit order equals state-change order, and every one of
them appends at least one audit entry. The wall clock and RNG are
injectable for deterministic tests.
"""

from __future__ import annotations

import base64
import hashlib
import json
import random
import threading
import time

from . import __version__
from .access import (
    AccessEvent,
    AccessRequest,
    AnomalyBaseline,
    Obligation,
    Outcome,
    Principal,
    Reason,
    RequestAction,
    RiskInputs,
    TokenBucketLimiter,
    observe_and_flag,
)
from .auditlog import AuditAction, AuditEntry, AuditLog, ProvenanceQuery, SigningKey
from .config import GatewayConfig, load_watermark_key
from .egress import (
    ArtifactKind,
    EgressOutcome,
    EgressReason,
    EgressRequest,
    EgressVerdict,
    ReviewItem,
    ReviewKind,
    ReviewStatus,
    check_egress,
    screen,
)
from .seqio import CodingSequence, parse_fasta, serialize_fasta
from .store import (
    Appeal,
    AppealStatus,
    ClassificationRequest,
    DatasetRecordSet,
    IllegalTransition,
    RequestStatus,
    Store,
    UnknownResource,
)
from .taxonomy import (
    BdlTier,
    DatasetDescriptor,
    IdentityLevel,
    classify,
    enforcement_profile,
    load_family_registry,
)
from .watermark import (
    Namespace,
    WatermarkPayload,
    bits_from_bytes,
    embed,
    generate_honeytoken,
    uniform_codon_profile,
)


class GatewayError(Exception):
    pass


class Unauthenticated(GatewayError):
    pass


class NotSteward(GatewayError):
    pass


class MissingProvenance(GatewayError):
    pass


class OverrideWithoutReason(GatewayError):
    pass


class GatewayService:
    def __init__(self, config: GatewayConfig, clock=None, rng: random.Random | None = None):
        config.validate_files()
        self.config = config
        self.clock = clock or time.time
        self.rng = rng or random.Random()
        self._write_lock = threading.RLock()

        self.signing_key = SigningKey.load(config.signing_key_path)
        self.watermark_key = load_watermark_key(config.watermark_key_path)
        self.registry = load_family_registry(config.registry_path.read_text())
        self._principals = self._load_principals(config.principals_path)

        config.store_dir.mkdir(parents=True, exist_ok=True)
        self.audit = AuditLog(self.signing_key, config.store_dir / "audit.jsonl")
        self.store = Store(config.store_dir / "events.jsonl", config.screening_k)
        self.limiter = TokenBucketLimiter(config.access.rate_policy)
        self.baselines: dict[str, AnomalyBaseline] = {}

        self._audit_registry_version()

    # -- principals ---------------------------------------------------------

    @staticmethod
    def _load_principals(path) -> dict[str, tuple[Principal, frozenset[str]]]:
        doc = json.loads(path.read_text())
        table: dict[str, tuple[Principal, frozenset[str]]] = {}
        for row in doc.get("principals", []):
            principal = Principal(
                id=row["id"],
                identity_level=IdentityLevel[row.get("identity_level", "Registered")],
                second_factor_enrolled=bool(row.get("second_factor_enrolled", False)),
                trust_score=float(row.get("trust_score", 0.5)),
                approved_projects=frozenset(row.get("approved_projects", [])),
                home_institution=row.get("home_institution", ""),
                usual_countries=frozenset(row.get("usual_countries", [])),
            )
            table[row["token"]] = (principal, frozenset(row.get("roles", [])))
        return table

    def authenticate(self, token: str | None) -> tuple[Principal, frozenset[str]]:
        if token is None:
            return Principal(id="anonymous"), frozenset()
        entry = self._principals.get(token)
        if entry is None:
            raise Unauthenticated("unknown bearer token")
        return entry

    def _require_steward(self, principal: Principal, roles: frozenset[str]) -> None:
        if "steward" not in roles:
            raise NotSteward(f"{principal.id} lacks the steward role")

    def _audit_registry_version(self) -> None:
        previous = [
            e for e in self.audit.entries if e.action is AuditAction.RegistryUpdated
        ]
        version = self.registry.version
        if previous and previous[-1].detail.get("version") == version:
            return
        self.audit.append(
            "system",
            AuditAction.RegistryUpdated,
            "family-registry",
            {"version": version, "families": len(self.registry.entries)},
            ts=self._now_ms(),
        )

    def _now_ms(self) -> int:
        return int(self.clock() * 1000)

    # -- dataset registration ------------------------------------------------

    def register_dataset(
        self,
        descriptor: DatasetDescriptor,
        fasta_text: str,
        provenance: str,
        principal: Principal,
        classification_request_id: str | None = None,
    ) -> DatasetRecordSet:
        if principal.identity_level is IdentityLevel.Anonymous:
            raise Unauthenticated("dataset registration requires authentication")
        sequences = parse_fasta(fasta_text)

        annotated, reg_warnings = self.registry.annotate(descriptor)
        result = classify(annotated)
        tier = result.tier
        warnings = reg_warnings + list(result.warnings)

        if tier >= BdlTier.BDL2 and not provenance.strip():
            raise MissingProvenance(
                f"tier {int(tier)} registration requires provenance information"
            )
        if (
            classification_request_id
            and classification_request_id not in self.store.classification_requests
        ):
            raise UnknownResource(
                f"unknown classification request {classification_request_id}"
            )

        with self._write_lock:
            now = self.clock()
            dataset_id = self.store.next_id("ds")
            similarity = 0.0
            if self.store.corpus.kmer_index or self.store.corpus.sequence_hashes:
                similarity = screen(
                    serialize_fasta(sequences), self.store.corpus
                ).max_containment

            honeytoken_docs = []
            stored = list(sequences)
            if tier >= BdlTier.BDL3:
                count = self.config.honeytokens.count_for(len(sequences))
                own_hashes = {
                    hashlib.sha256(s.bases.encode()).hexdigest() for s in stored
                }
                taken = self.store.corpus.sequence_hashes | own_hashes
                for _ in range(count):
                    token_id = self.store.next_id("ht")
                    decoy, record = generate_honeytoken(
                        uniform_codon_profile(),
                        self.config.honeytokens.length_codons,
                        self.watermark_key,
                        token_id,
                        planted_in=dataset_id,
                        corpus_hashes=frozenset(taken),
                        k=self.config.screening_k,
                        rng=self.rng,
                    )
                    taken.add(record.sequence_hash)
                    slot = self.rng.randrange(len(stored) + 1)
                    stored.insert(slot, decoy.seq)
                    doc = record.to_json_dict()
                    doc["sequence"] = decoy.bases
                    honeytoken_docs.append(doc)

            self.store.commit(
                {
                    "type": "dataset_registered",
                    "dataset_id": dataset_id,
                    "descriptor": annotated.to_json_dict(),
                    "tier": int(tier),
                    "fasta": serialize_fasta(stored),
                    "provenance": provenance,
                    "registered_by": principal.id,
                    "registered_at": now,
                    "similarity": similarity,
                    "honeytokens": honeytoken_docs,
                    "classification_request_id": classification_request_id,
                    "warnings": warnings,
                }
            )
            self.audit.append(
                principal.id,
                AuditAction.DatasetRegistered,
                dataset_id,
                {
                    "records": len(stored),
                    "tier": int(tier),
                    "similarity": similarity,
                    "provenance": provenance,
                    "honeytokens_planted": len(honeytoken_docs),
                },
                ts=self._now_ms(),
            )
            self.audit.append(
                principal.id,
                AuditAction.Classified,
                dataset_id,
                {
                    "tier": int(tier),
                    "matched_rule": result.matched_rule,
                    "warnings": warnings,
                },
                ts=self._now_ms(),
            )
            return self.store.datasets[dataset_id]

    # -- record access ---------------------------------------------------------

    def request_records(
        self, request: AccessRequest, principal: Principal
    ) -> tuple[dict, int]:
        """Returns (response document, http-ish status)."""
        dataset = self.store.datasets.get(request.dataset_id)
        if dataset is None:
            raise UnknownResource(f"unknown dataset {request.dataset_id}")
        tier = dataset.tier
        profile = enforcement_profile(tier)

        data_actions = (RequestAction.ReadRecords, RequestAction.ExportRecords)
        record_count = len(dataset.sequences)
        n_records = request.requested_records
        if request.action in data_actions:
            n_records = min(n_records or record_count, record_count)
        to_return = dataset.sequences[:n_records] if request.action in data_actions else []
        bytes_out = sum(len(s) for s in to_return)
        effective = AccessRequest(
            principal_id=request.principal_id,
            dataset_id=request.dataset_id,
            action=request.action,
            project_id=request.project_id,
            intent_statement=request.intent_statement,
            second_factor_presented=request.second_factor_presented,
            origin_country=request.origin_country,
            requested_records=n_records,
            requested_bytes=bytes_out if request.action in data_actions else 0,
            at=request.at or self.clock(),
        )

        risk = RiskInputs(
            similarity=dataset.similarity,
            provenance_deficit=0.0 if dataset.provenance.strip() else 1.0,
        )
        with self._write_lock:
            decision = self._decide(effective, principal, tier, profile, risk)
            response: dict = {"decision": decision.to_json_dict(), "dataset_id": dataset.dataset_id}
            sampled_out = (
                tier == BdlTier.BDL0
                and request.action in (RequestAction.ReadMetadata, RequestAction.ReadRecords)
                and self.rng.random() >= self.config.bdl0_read_sample_rate
            )

            if decision.outcome is Outcome.Deny:
                detail = {"action": request.action.value, "reason": decision.reason.value}
                if decision.reason is Reason.RateLimited:
                    detail["retry_after_seconds"] = self.limiter.retry_after(
                        principal.id, tier, effective.requested_records,
                        effective.requested_bytes, effective.at,
                    )
                    response["retry_after_seconds"] = detail["retry_after_seconds"]
                self.audit.append(
                    principal.id, AuditAction.AccessDenied, dataset.dataset_id,
                    detail, ts=self._now_ms(),
                )
                return response, 403

            if decision.outcome is Outcome.Escalate:
                item = self._open_review(
                    ReviewKind.AccessEscalation,
                    {
                        "principal_id": principal.id,
                        "dataset_id": dataset.dataset_id,
                        "action": request.action.value,
                        "reason": decision.reason.value,
                        "similarity": dataset.similarity,
                        "tier": int(tier),
                    },
                )
                response["review_item"] = item.id
                self.audit.append(
                    principal.id, AuditAction.AccessDenied, dataset.dataset_id,
                    {
                        "action": request.action.value,
                        "reason": decision.reason.value,
                        "outcome": "Escalate",
                        "review_item": item.id,
                    },
                    ts=self._now_ms(),
                )
                return response, 202

            # Allowed from here on.
            if Obligation.LogIntent in decision.obligations:
                self.audit.append(
                    principal.id, AuditAction.IntentLogged, dataset.dataset_id,
                    {"statement": request.intent_statement or ""}, ts=self._now_ms(),
                )

            if request.action is RequestAction.ReadMetadata:
                response["metadata"] = dataset.metadata()
            elif request.action is RequestAction.SubmitJob:
                job_id = self.store.next_id("job")
                self.store.commit(
                    {
                        "type": "job_submitted",
                        "id": job_id,
                        "principal_id": principal.id,
                        "dataset_id": dataset.dataset_id,
                        "submitted_at": effective.at,
                        "provenance": dataset.provenance,
                    }
                )
                response["job"] = {"id": job_id, "status": "Completed", "runner": "no-op"}
            elif profile.tre_only:
                # Raw content from TRE-bound tiers never leaves this endpoint.
                response["records"] = [
                    {"id": s.id, "length": len(s)} for s in to_return
                ]
                response["note"] = "tier is TRE-only; content available to submitted jobs only"
                bytes_out = 0
            elif request.action is RequestAction.ReadRecords:
                response["fasta"] = serialize_fasta(to_return)
            else:  # ExportRecords at an exportable tier
                exported, payload_hex = self._export_sequences(
                    to_return, principal, dataset, decision, effective.at
                )
                response["fasta"] = serialize_fasta(exported)
                response["watermark_payload_hex"] = payload_hex

            if not sampled_out:
                action = (
                    AuditAction.RecordsExported
                    if request.action is RequestAction.ExportRecords
                    else AuditAction.AccessGranted
                )
                detail = {
                    "action": request.action.value,
                    "records": len(to_return),
                    "bytes": bytes_out,
                    "obligations": sorted(o.value for o in decision.obligations),
                }
                if request.action is RequestAction.ExportRecords:
                    detail["watermark_payload_hex"] = response.get("watermark_payload_hex")
                self.audit.append(
                    principal.id, action, dataset.dataset_id, detail, ts=self._now_ms()
                )

            self._observe(principal, effective, bytes_out)
            return response, 200

    def _decide(self, request, principal, tier, profile, risk):
        from .access import decide

        return decide(
            request,
            principal,
            tier,
            profile,
            limiter=self.limiter,
            risk_inputs=risk,
            risk_config=self.config.access.risk,
        )

    def _export_sequences(self, sequences, principal, dataset, decision, at):
        payload_hex = None
        out = list(sequences)
        if Obligation.WatermarkExport in decision.obligations:
            seed = f"{principal.id}|{dataset.dataset_id}|{int(at * 1000)}".encode()
            payload_bits = bits_from_bytes(hashlib.sha256(seed).digest()[:12])
            payload = WatermarkPayload(namespace=Namespace.Export, bits=payload_bits)
            payload_hex = payload.to_hex()
            marked = []
            for seq in out:
                try:
                    cds = CodingSequence(seq)
                    marked.append(embed(cds, payload, self.watermark_key).seq)
                except ValueError:
                    marked.append(seq)  # not a CDS; carried unmodified
                except Exception:
                    marked.append(seq)
            out = marked
        return out, payload_hex

    def _observe(self, principal: Principal, request: AccessRequest, bytes_out: int):
        from datetime import datetime, timezone

        baseline = self.baselines.setdefault(
            principal.id, AnomalyBaseline(principal_id=principal.id)
        )
        event = AccessEvent(
            principal_id=principal.id,
            at=datetime.fromtimestamp(request.at, tz=timezone.utc),
            bytes_downloaded=bytes_out,
            origin_country=request.origin_country,
        )
        _, flags = observe_and_flag(
            baseline, event, principal.usual_countries, self.config.access.anomaly
        )
        for flag in flags:
            item = self._open_review(ReviewKind.AnomalyTriage, flag.to_json_dict())
            self.audit.append(
                principal.id,
                AuditAction.AnomalyFlagged,
                request.dataset_id,
                {**flag.to_json_dict(), "review_item": item.id},
                ts=self._now_ms(),
            )

    # -- governance -------------------------------------------------------------

    def submit_classification_request(
        self, descriptor: DatasetDescriptor, principal: Principal
    ) -> ClassificationRequest:
        if principal.identity_level is IdentityLevel.Anonymous:
            raise Unauthenticated("classification requests require authentication")
        annotated, _ = self.registry.annotate(descriptor)
        proposal = classify(annotated)
        with self._write_lock:
            now = self.clock()
            cr_id = self.store.next_id("cr")
            due = now + self.config.decision_window_days * 86400
            self.store.commit(
                {
                    "type": "cr_submitted",
                    "id": cr_id,
                    "descriptor": annotated.to_json_dict(),
                    "submitted_by": principal.id,
                    "submitted_at": now,
                    "due_at": due,
                    "proposed_tier": int(proposal.tier),
                }
            )
            self.audit.append(
                principal.id,
                AuditAction.Classified,
                cr_id,
                {
                    "stage": "submitted",
                    "proposed_tier": int(proposal.tier),
                    "matched_rule": proposal.matched_rule,
                    "due_at": due,
                },
                ts=self._now_ms(),
            )
            return self.store.classification_requests[cr_id]

    def decide_classification(
        self,
        request_id: str,
        principal: Principal,
        roles: frozenset[str],
        tier_override: BdlTier | None = None,
        override_reason: str | None = None,
    ) -> ClassificationRequest:
        self._require_steward(principal, roles)
        with self._write_lock:
            cr = self.store.classification_requests.get(request_id)
            if cr is None:
                raise UnknownResource(f"unknown classification request {request_id}")
            if cr.status is RequestStatus.Decided:
                raise IllegalTransition(f"{request_id} is already decided")

            proposal = cr.proposed_tier
            if tier_override is not None and tier_override != proposal:
                if not (override_reason or "").strip():
                    raise OverrideWithoutReason(
                        "overriding the proposed tier requires a reason"
                    )
                decided = BdlTier(tier_override)
            else:
                decided = proposal
                override_reason = None

            now = self.clock()
            late = now > cr.due_at
            self.store.commit(
                {
                    "type": "cr_decided",
                    "id": request_id,
                    "tier": int(decided),
                    "decided_at": now,
                    "decided_by": principal.id,
                    "override_reason": override_reason,
                }
            )
            self.audit.append(
                principal.id,
                AuditAction.Classified,
                request_id,
                {
                    "stage": "decided",
                    "tier": int(decided),
                    "proposed_tier": int(proposal),
                    "override_reason": override_reason,
                    "late": late,
                },
                ts=self._now_ms(),
            )
            if cr.dataset_id and cr.dataset_id in self.store.datasets:
                self._change_dataset_tier(cr.dataset_id, decided, principal.id, request_id)
            return cr

    def _change_dataset_tier(self, dataset_id, tier, actor, cause):
        dataset = self.store.datasets[dataset_id]
        if dataset.tier == tier:
            return
        self.store.commit(
            {"type": "dataset_tier_changed", "dataset_id": dataset_id, "tier": int(tier)}
        )
        self.audit.append(
            actor,
            AuditAction.Classified,
            dataset_id,
            {"tier": int(tier), "cause": cause},
            ts=self._now_ms(),
        )

    def file_appeal(
        self, request_id: str, grounds: str, principal: Principal
    ) -> Appeal:
        if principal.identity_level is IdentityLevel.Anonymous:
            raise Unauthenticated("appeals require authentication")
        if not grounds.strip():
            raise GatewayError("appeal grounds must be nonempty")
        with self._write_lock:
            cr = self.store.classification_requests.get(request_id)
            if cr is None:
                raise UnknownResource(f"unknown classification request {request_id}")
            if cr.status is not RequestStatus.Decided:
                raise IllegalTransition("only decided classifications can be appealed")
            appeal_id = self.store.next_id("ap")
            item = self._open_review(
                ReviewKind.Appeal,
                {"appeal_id": appeal_id, "classification_request_id": request_id,
                 "grounds": grounds, "filed_by": principal.id},
            )
            self.store.commit(
                {
                    "type": "appeal_filed",
                    "id": appeal_id,
                    "classification_request_id": request_id,
                    "filed_by": principal.id,
                    "grounds": grounds,
                    "review_item_id": item.id,
                }
            )
            self.audit.append(
                principal.id,
                AuditAction.AppealFiled,
                appeal_id,
                {"classification_request": request_id, "grounds": grounds},
                ts=self._now_ms(),
            )
            return self.store.appeals[appeal_id]

    def decide_appeal(
        self,
        appeal_id: str,
        principal: Principal,
        roles: frozenset[str],
        outcome: str,
        new_tier: BdlTier | None = None,
    ) -> Appeal:
        self._require_steward(principal, roles)
        try:
            target = AppealStatus(outcome)
        except ValueError:
            raise GatewayError(f"unknown appeal outcome {outcome!r}") from None
        with self._write_lock:
            appeal = self.store.appeals.get(appeal_id)
            if appeal is None:
                raise UnknownResource(f"unknown appeal {appeal_id}")
            allowed = {
                AppealStatus.Filed: {AppealStatus.UnderReview},
                AppealStatus.UnderReview: {AppealStatus.Upheld, AppealStatus.Overturned},
            }
            if target not in allowed.get(appeal.status, set()):
                raise IllegalTransition(
                    f"appeal {appeal_id} cannot move {appeal.status.value} -> {target.value}"
                )
            if target is AppealStatus.Overturned and new_tier is None:
                raise GatewayError("overturning an appeal requires new_tier")

            self.store.commit(
                {
                    "type": "appeal_decided",
                    "id": appeal_id,
                    "status": target.value,
                    "new_tier": None if new_tier is None else int(new_tier),
                }
            )
            cr = self.store.classification_requests.get(appeal.classification_request_id)
            detail = {
                "outcome": target.value,
                "classification_request": appeal.classification_request_id,
            }
            if target is AppealStatus.Overturned and cr is not None:
                self.store.commit(
                    {
                        "type": "cr_decided",
                        "id": cr.id,
                        "tier": int(new_tier),
                        "decided_at": self.clock(),
                        "decided_by": principal.id,
                        "override_reason": f"appeal {appeal_id} overturned",
                    }
                )
                detail["new_tier"] = int(new_tier)
                if cr.dataset_id and cr.dataset_id in self.store.datasets:
                    detail["dataset_id"] = cr.dataset_id
            self.audit.append(
                principal.id, AuditAction.AppealDecided, appeal_id, detail,
                ts=self._now_ms(),
            )
            if (
                target is AppealStatus.Overturned
                and cr is not None
                and cr.dataset_id
                and cr.dataset_id in self.store.datasets
            ):
                self._change_dataset_tier(
                    cr.dataset_id, BdlTier(new_tier), principal.id, appeal_id
                )
            # The queue tracker closes with the appeal.
            if appeal.review_item_id:
                tracker = self.store.review_queue.get(appeal.review_item_id)
                if tracker is not None and tracker.status is ReviewStatus.Pending:
                    decision = (
                        ReviewStatus.Approved
                        if target is AppealStatus.Overturned
                        else ReviewStatus.Denied
                    )
                    if target is not AppealStatus.UnderReview:
                        self._commit_review_decision(
                            tracker, principal.id, decision,
                            f"appeal {target.value.lower()}", tracker.version,
                        )
            return appeal

    def sweep_overdue(self, now: float | None = None) -> list[ReviewItem]:
        """Materialize ClassificationOverdue review items for late requests."""
        now = self.clock() if now is None else now
        opened: list[ReviewItem] = []
        with self._write_lock:
            for cr in self.store.classification_requests.values():
                if (
                    cr.status_at(now) is RequestStatus.Overdue
                    and cr.overdue_item_id is None
                ):
                    item = self._open_review(
                        ReviewKind.ClassificationOverdue,
                        {
                            "classification_request_id": cr.id,
                            "due_at": cr.due_at,
                            "submitted_by": cr.submitted_by,
                            "proposed_tier": int(cr.proposed_tier),
                        },
                    )
                    self.store.commit(
                        {"type": "cr_overdue_opened", "id": cr.id, "review_item_id": item.id}
                    )
                    opened.append(item)
        return opened

    # -- egress -------------------------------------------------------------------

    def submit_egress(
        self,
        principal: Principal,
        artifact_kind: ArtifactKind,
        content: bytes,
        declared_provenance: str,
        scope_dataset_ids: list[str],
        session_id: str = "",
    ) -> tuple[EgressVerdict, object]:
        if principal.identity_level is IdentityLevel.Anonymous:
            raise Unauthenticated("egress requests require authentication")
        tier = BdlTier.BDL0
        for ds_id in scope_dataset_ids:
            ds = self.store.datasets.get(ds_id)
            if ds is None:
                raise UnknownResource(f"unknown dataset {ds_id}")
            tier = max(tier, ds.tier)
        profile = enforcement_profile(tier)

        with self._write_lock:
            egress_id = self.store.next_id("eg")
            request = EgressRequest(
                id=egress_id,
                principal_id=principal.id,
                session_id=session_id or principal.id,
                artifact_kind=artifact_kind,
                content=content,
                declared_provenance=declared_provenance,
                at=self.clock(),
            )
            verdict = check_egress(
                request,
                tier,
                profile,
                self.store.corpus,
                self.store.honeytokens,
                self.config.egress_thresholds,
                steward_key=self.watermark_key,
                k=self.config.screening_k,
            )

            review_item_id = None
            if verdict.outcome is EgressOutcome.Queued:
                item = self._open_review(
                    ReviewKind.Egress,
                    {
                        "egress_id": egress_id,
                        "principal_id": principal.id,
                        "artifact_kind": artifact_kind.value,
                        "tier": int(tier),
                        "reason": verdict.reason.value,
                        "similarity": verdict.similarity,
                        "matched_datasets": sorted(verdict.matched_datasets),
                        "declared_provenance": declared_provenance,
                    },
                )
                review_item_id = item.id
                verdict = EgressVerdict(
                    outcome=verdict.outcome,
                    reason=verdict.reason,
                    similarity=verdict.similarity,
                    review_item=item.id,
                    matched_datasets=verdict.matched_datasets,
                    honeytoken_id=verdict.honeytoken_id,
                )

            self.store.commit(
                {
                    "type": "egress_submitted",
                    "id": egress_id,
                    "principal_id": principal.id,
                    "session_id": request.session_id,
                    "artifact_kind": artifact_kind.value,
                    "content_b64": base64.b64encode(content).decode(),
                    "declared_provenance": declared_provenance,
                    "at": request.at,
                    "tier": int(tier),
                    "scope": list(scope_dataset_ids),
                    "outcome": verdict.outcome.value,
                    "reason": verdict.reason.value,
                    "similarity": verdict.similarity,
                    "review_item_id": review_item_id,
                }
            )

            # Exactly one audit entry per blocked / queued verdict.
            if verdict.reason is EgressReason.HoneytokenHit:
                self.audit.append(
                    principal.id,
                    AuditAction.HoneytokenTripped,
                    egress_id,
                    {
                        "token_id": verdict.honeytoken_id,
                        "artifact_kind": artifact_kind.value,
                        "tier": int(tier),
                    },
                    ts=self._now_ms(),
                )
            elif verdict.outcome is EgressOutcome.Queued:
                self.audit.append(
                    principal.id,
                    AuditAction.EgressQueued,
                    egress_id,
                    {
                        "reason": verdict.reason.value,
                        "similarity": verdict.similarity,
                        "review_item": review_item_id,
                        "tier": int(tier),
                    },
                    ts=self._now_ms(),
                )
            else:
                self.audit.append(
                    principal.id,
                    AuditAction.EgressDecided,
                    egress_id,
                    {
                        "outcome": verdict.outcome.value,
                        "reason": verdict.reason.value,
                        "similarity": verdict.similarity,
                        "decided_by": "policy",
                    },
                    ts=self._now_ms(),
                )
            return verdict, self.store.egress_requests[egress_id]

    # -- review queue -----------------------------------------------------------

    def _open_review(self, kind: ReviewKind, payload: dict) -> ReviewItem:
        item = self.store.review_queue.open_item(
            kind, payload, created_at=str(self.clock())
        )
        self.store.commit({"type": "review_opened", "item": item.to_json_dict()})
        return item

    def list_review_items(self, status: ReviewStatus | None = None) -> list[ReviewItem]:
        self.sweep_overdue()
        return self.store.review_queue.list_items(status)

    def decide_review(
        self,
        item_id: str,
        principal: Principal,
        roles: frozenset[str],
        decision: ReviewStatus,
        note: str,
        expected_version: int,
    ) -> ReviewItem:
        item = self.store.review_queue.get(item_id)
        if item is None:
            raise UnknownResource(f"unknown review item {item_id}")
        if item.kind is ReviewKind.Appeal:
            raise IllegalTransition(
                "appeal items are decided through the appeals endpoint"
            )
        if decision is ReviewStatus.Denied and not note.strip():
            raise GatewayError("denials require a decision note")
        with self._write_lock:
            self.store.review_queue.decide(
                item_id,
                principal.id,
                decision,
                note,
                expected_version,
                reviewer_is_steward="steward" in roles,
                decided_at=str(self.clock()),
            )
            return self._commit_review_decision(
                item, principal.id, decision, note, item.version, already_applied=True
            )

    def _commit_review_decision(
        self, item, reviewer_id, decision, note, version, already_applied=False
    ):
        if not already_applied:
            self.store.review_queue.decide(
                item.id, reviewer_id, decision, note, version,
                reviewer_is_steward=True, decided_at=str(self.clock()),
            )
        item = self.store.review_queue.get(item.id)
        self.store.commit(
            {
                "type": "review_decided",
                "id": item.id,
                "decision": item.status.value,
                "decided_by": item.decided_by,
                "decided_at": item.decided_at,
                "note": item.decision_note,
                "version": item.version,
            }
        )
        detail = {
            "review_item": item.id,
            "kind": item.kind.value,
            "decision": item.status.value,
            "note": item.decision_note,
        }

        if item.kind is ReviewKind.Egress:
            egress_id = item.payload.get("egress_id")
            record = self.store.egress_requests.get(egress_id)
            if record is not None:
                released = item.status is ReviewStatus.Approved
                provenance = None
                if released and record.tier >= BdlTier.BDL4:
                    provenance = {
                        "declared_provenance": record.declared_provenance,
                        "scope": record.scope,
                        "decided_by": item.decided_by,
                        "decided_at": item.decided_at,
                    }
                self.store.commit(
                    {
                        "type": "egress_resolved",
                        "id": egress_id,
                        "outcome": "Allowed" if released else "Blocked",
                        "reason": EgressReason.ReviewerDecision.value,
                        "released": released,
                        "release_provenance": provenance,
                    }
                )
                detail["egress_id"] = egress_id
                detail["released"] = released
                if provenance:
                    detail["release_provenance"] = provenance
        self.audit.append(
            item.decided_by or reviewer_id,
            AuditAction.EgressDecided,
            item.id,
            detail,
            ts=self._now_ms(),
        )
        return item

    # -- audit views --------------------------------------------------------------

    def audit_query(self, query: ProvenanceQuery) -> list[AuditEntry]:
        return self.audit.query(query)

    def verify_audit(self):
        return self.audit.verify()

    def health(self) -> dict:
        return {
            "version": __version__,
            "chain_head_hash": self.audit.head_hash.hex(),
            "entries": len(self.audit),
        }

    def state_view(self) -> dict:
        """Current tiers and review outcomes, for replay consistency checks."""
        return {
            "dataset_tiers": {
                ds_id: int(ds.tier) for ds_id, ds in self.store.datasets.items()
            },
            "review_outcomes": {
                it.id: it.status.value
                for it in self.store.review_queue.list_items()
                if it.status is not ReviewStatus.Pending
            },
        }


def replay_view(entries: list[AuditEntry]) -> dict:
    """Fold the audit trail into dataset tiers and review outcomes.

    Independent of the store: uses only what the signed entries carry, so a
    verifier can reconstruct outcomes from an exported log.
    """
    tiers: dict[str, int] = {}
    outcomes: dict[str, str] = {}
    for entry in entries:
        if entry.action is AuditAction.Classified and entry.resource.startswith("ds-"):
            tiers[entry.resource] = entry.detail["tier"]
        elif entry.action is AuditAction.EgressDecided and "review_item" in entry.detail:
            outcomes[entry.detail["review_item"]] = entry.detail["decision"]
    return {"dataset_tiers": tiers, "review_outcomes": outcomes}
