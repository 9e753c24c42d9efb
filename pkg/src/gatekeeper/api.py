"""HTTP/JSON surface of the gateway (FastAPI).

Everything mutating requires a bearer token known to the principals table;
denials map to 403, conflicts and illegal transitions to 409, validation
problems to 422. Error bodies are {error_code, message}.
"""

from __future__ import annotations

import base64

import uvicorn
from fastapi import Depends, FastAPI, Header, Query, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from .access import AccessError, AccessRequest, RequestAction
from .auditlog import AuditAction, AuditError, ProvenanceQuery
from .config import GatewayConfig
from .egress import (
    AlreadyDecided,
    ArtifactKind,
    EgressError,
    NotAuthorized,
    ReviewStatus,
    VersionConflict,
)
from .seqio import SeqError
from .service import (
    GatewayError,
    GatewayService,
    MissingProvenance,
    NotSteward,
    OverrideWithoutReason,
    Unauthenticated,
)
from .store import IllegalTransition, UnknownResource
from .taxonomy import BdlTier, DatasetDescriptor, TaxonomyError
from .watermark import WatermarkError


class RegisterDatasetBody(BaseModel):
    descriptor: dict
    fasta: str
    provenance: str = ""
    classification_request_id: str | None = None


class RecordsRequestBody(BaseModel):
    action: str = "ReadMetadata"
    project_id: str | None = None
    intent_statement: str | None = None
    second_factor_presented: bool = False
    origin_country: str = ""
    requested_records: int = Field(default=0, ge=0)
    requested_bytes: int = Field(default=0, ge=0)


class ClassificationRequestBody(BaseModel):
    descriptor: dict


class DecideClassificationBody(BaseModel):
    tier_override: int | None = None
    override_reason: str | None = None


class AppealBody(BaseModel):
    classification_request_id: str
    grounds: str


class DecideAppealBody(BaseModel):
    outcome: str
    new_tier: int | None = None


class EgressBody(BaseModel):
    artifact_kind: str
    content_text: str | None = None
    content_b64: str | None = None
    declared_provenance: str = ""
    scope_dataset_ids: list[str] = Field(default_factory=list)
    session_id: str = ""


class DecideReviewBody(BaseModel):
    decision: str
    note: str = ""
    expected_version: int


_ERROR_STATUS = [
    (Unauthenticated, 401, "unauthenticated"),
    (NotSteward, 403, "not_authorized"),
    (NotAuthorized, 403, "not_authorized"),
    (UnknownResource, 404, "unknown_resource"),
    (AlreadyDecided, 409, "already_decided"),
    (VersionConflict, 409, "version_conflict"),
    (IllegalTransition, 409, "illegal_transition"),
    (MissingProvenance, 422, "missing_provenance"),
    (OverrideWithoutReason, 422, "override_without_reason"),
    (SeqError, 422, "malformed_sequence"),
    (TaxonomyError, 422, "invalid_descriptor"),
    (WatermarkError, 422, "watermark_error"),
    (AccessError, 422, "invalid_request"),
    (AuditError, 422, "invalid_query"),
    (EgressError, 422, "invalid_request"),
    (GatewayError, 422, "invalid_request"),
    (ValueError, 422, "validation_error"),
]


def _error_response(exc: Exception) -> JSONResponse:
    for cls, status, code in _ERROR_STATUS:
        if isinstance(exc, cls):
            return JSONResponse(
                status_code=status,
                content={"error_code": code, "message": str(exc)},
            )
    raise exc


def create_app(service: GatewayService) -> FastAPI:
    app = FastAPI(title="gatekeeper", version=service.health()["version"])
    app.state.service = service
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )

    def principal_dep(authorization: str | None = Header(default=None)):
        token = None
        if authorization and authorization.lower().startswith("bearer "):
            token = authorization[7:].strip()
        return service.authenticate(token)

    @app.exception_handler(Exception)
    async def handle_known(request: Request, exc: Exception):
        return _error_response(exc)

    @app.get("/healthz")
    @app.get("/api/v1/healthz")
    def healthz():
        return service.health()

    @app.post("/api/v1/datasets", status_code=201)
    def register_dataset(body: RegisterDatasetBody, auth=Depends(principal_dep)):
        principal, _ = auth
        descriptor = DatasetDescriptor.from_json_dict(body.descriptor)
        ds = service.register_dataset(
            descriptor,
            body.fasta,
            body.provenance,
            principal,
            body.classification_request_id,
        )
        return ds.metadata()

    @app.get("/api/v1/datasets/{dataset_id}")
    def get_dataset(dataset_id: str, auth=Depends(principal_dep)):
        ds = service.store.datasets.get(dataset_id)
        if ds is None:
            raise UnknownResource(f"unknown dataset {dataset_id}")
        return ds.metadata()

    @app.post("/api/v1/datasets/{dataset_id}/records:request")
    def request_records(
        dataset_id: str, body: RecordsRequestBody, auth=Depends(principal_dep)
    ):
        principal, _ = auth
        request = AccessRequest(
            principal_id=principal.id,
            dataset_id=dataset_id,
            action=RequestAction(body.action),
            project_id=body.project_id,
            intent_statement=body.intent_statement,
            second_factor_presented=body.second_factor_presented,
            origin_country=body.origin_country,
            requested_records=body.requested_records,
            requested_bytes=body.requested_bytes,
            at=service.clock(),
        )
        response, status = service.request_records(request, principal)
        return JSONResponse(status_code=status, content=response)

    @app.post("/api/v1/classification-requests", status_code=201)
    def submit_classification(
        body: ClassificationRequestBody, auth=Depends(principal_dep)
    ):
        principal, _ = auth
        descriptor = DatasetDescriptor.from_json_dict(body.descriptor)
        cr = service.submit_classification_request(descriptor, principal)
        return cr.to_json_dict(service.clock())

    @app.get("/api/v1/classification-requests/{request_id}")
    def get_classification(request_id: str, auth=Depends(principal_dep)):
        service.sweep_overdue()
        cr = service.store.classification_requests.get(request_id)
        if cr is None:
            raise UnknownResource(f"unknown classification request {request_id}")
        return cr.to_json_dict(service.clock())

    @app.post("/api/v1/classification-requests/{request_id}:decide")
    def decide_classification(
        request_id: str, body: DecideClassificationBody, auth=Depends(principal_dep)
    ):
        principal, roles = auth
        override = None if body.tier_override is None else BdlTier(body.tier_override)
        cr = service.decide_classification(
            request_id, principal, roles, override, body.override_reason
        )
        return cr.to_json_dict(service.clock())

    @app.post("/api/v1/appeals", status_code=201)
    def file_appeal(body: AppealBody, auth=Depends(principal_dep)):
        principal, _ = auth
        appeal = service.file_appeal(
            body.classification_request_id, body.grounds, principal
        )
        return appeal.to_json_dict()

    @app.post("/api/v1/appeals/{appeal_id}:decide")
    def decide_appeal(
        appeal_id: str, body: DecideAppealBody, auth=Depends(principal_dep)
    ):
        principal, roles = auth
        new_tier = None if body.new_tier is None else BdlTier(body.new_tier)
        appeal = service.decide_appeal(
            appeal_id, principal, roles, body.outcome, new_tier
        )
        return appeal.to_json_dict()

    @app.post("/api/v1/egress-requests", status_code=201)
    def submit_egress(body: EgressBody, auth=Depends(principal_dep)):
        principal, _ = auth
        if body.content_b64 is not None:
            content = base64.b64decode(body.content_b64)
        elif body.content_text is not None:
            content = body.content_text.encode()
        else:
            raise GatewayError("one of content_text or content_b64 is required")
        verdict, record = service.submit_egress(
            principal,
            ArtifactKind(body.artifact_kind),
            content,
            body.declared_provenance,
            body.scope_dataset_ids,
            body.session_id,
        )
        doc = verdict.to_json_dict()
        doc["egress_id"] = record.id
        return doc

    @app.get("/api/v1/egress-requests/{egress_id}")
    def get_egress(egress_id: str, auth=Depends(principal_dep)):
        record = service.store.egress_requests.get(egress_id)
        if record is None:
            raise UnknownResource(f"unknown egress request {egress_id}")
        doc = record.to_json_dict()
        if record.released:
            doc["content_b64"] = base64.b64encode(record.content).decode()
        return doc

    @app.get("/api/v1/review-queue")
    def review_queue(
        status: str = Query(default="pending"), auth=Depends(principal_dep)
    ):
        wanted = None if status == "all" else ReviewStatus(status.capitalize())
        items = service.list_review_items(wanted)
        return {"items": [it.to_json_dict() for it in items]}

    @app.post("/api/v1/review-queue/{item_id}:decide")
    def decide_review(
        item_id: str, body: DecideReviewBody, auth=Depends(principal_dep)
    ):
        principal, roles = auth
        item = service.decide_review(
            item_id,
            principal,
            roles,
            ReviewStatus(body.decision),
            body.note,
            body.expected_version,
        )
        return item.to_json_dict()

    @app.get("/api/v1/audit")
    def audit_query(
        actor: str | None = None,
        resource: str | None = None,
        action: str | None = None,
        ts_from: int | None = None,
        ts_to: int | None = None,
        limit: int = Query(default=500, ge=1, le=5000),
        offset: int = Query(default=0, ge=0),
        auth=Depends(principal_dep),
    ):
        if any(v is not None for v in (actor, resource, action, ts_from, ts_to)):
            query = ProvenanceQuery(
                resource=resource,
                actor=actor,
                action=AuditAction(action) if action else None,
                ts_from=ts_from,
                ts_to=ts_to,
            )
            entries = service.audit_query(query)
        else:
            entries = service.audit.entries
        total = len(entries)
        page = entries[offset : offset + limit]
        return {
            "total": total,
            "offset": offset,
            "entries": [e.to_json_dict() for e in page],
        }

    @app.get("/api/v1/audit:verify")
    def audit_verify(auth=Depends(principal_dep)):
        result = service.verify_audit()
        return {
            "ok": result.ok,
            "first_bad_index": result.first_bad_index,
            "entries_checked": result.entries_checked,
        }

    return app


def serve(config: GatewayConfig, service: GatewayService | None = None) -> None:
    service = service or GatewayService(config)
    app = create_app(service)
    uvicorn.run(
        app, host=config.listen_host, port=config.listen_port, log_level="warning"
    )
