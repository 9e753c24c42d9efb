"""Gateway configuration.

One JSON file wires together key material, the family registry, policy
knobs, and the store location. Relative paths resolve against the config
file's own directory so a deployment directory is relocatable. Lookup
order for the file itself: --config flag, then the GATEKEEPER_CONFIG
environment variable.

The extension_points table reserves names for controls this build does not
implement (behavioral biometrics, facial recognition, federated learning,
confidential computing); they are carried through verbatim so operators
can configure external integrations without a schema change.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .access import AccessConfig
from .egress import EgressThresholds

ENV_VAR = "GATEKEEPER_CONFIG"

RESERVED_EXTENSION_POINTS = (
    "behavioral_biometrics",
    "facial_recognition",
    "federated_learning",
    "confidential_computing",
)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class HoneytokenPolicy:
    per_records: int = 100
    min_per_dataset: int = 1
    length_codons: int = 120

    def count_for(self, record_count: int) -> int:
        return max(self.min_per_dataset, record_count // self.per_records)


@dataclass(frozen=True)
class GatewayConfig:
    base_dir: Path
    listen_host: str = "127.0.0.1"
    listen_port: int = 8400
    decision_window_days: float = 14.0
    store_dir: Path = Path("store")
    registry_path: Path = Path("registry.json")
    signing_key_path: Path = Path("keys/signing.json")
    watermark_key_path: Path = Path("keys/watermark.json")
    principals_path: Path = Path("principals.json")
    screening_k: int = 30
    egress_thresholds: EgressThresholds = EgressThresholds()
    access: AccessConfig = field(default_factory=AccessConfig)
    honeytokens: HoneytokenPolicy = HoneytokenPolicy()
    bdl0_read_sample_rate: float = 0.0
    extension_points: dict = field(default_factory=dict)

    def validate_files(self) -> None:
        for label, path in (
            ("registry", self.registry_path),
            ("signing key", self.signing_key_path),
            ("watermark key", self.watermark_key_path),
            ("principals", self.principals_path),
        ):
            if not path.exists():
                raise ConfigError(f"{label} file missing: {path}")


def _resolve(base: Path, value: str) -> Path:
    p = Path(value)
    return p if p.is_absolute() else base / p


def load_config(path=None) -> GatewayConfig:
    """Load and validate the gateway config; see module docstring for lookup."""
    if path is None:
        path = os.environ.get(ENV_VAR)
    if not path:
        raise ConfigError(f"no config file given (flag or {ENV_VAR})")
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file missing: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None

    base = path.parent.resolve()
    listen = doc.get("listen", {})
    screening = doc.get("screening", {})
    try:
        thresholds = EgressThresholds(
            review=float(screening.get("review_threshold", 0.3)),
            block=float(screening.get("block_threshold", 0.8)),
            honeytoken_overlap=float(screening.get("honeytoken_overlap", 0.5)),
        )
        access = AccessConfig.from_json_dict(doc)
        ht = doc.get("honeytokens", {})
        policy = HoneytokenPolicy(
            per_records=int(ht.get("per_records", 100)),
            min_per_dataset=int(ht.get("min_per_dataset", 1)),
            length_codons=int(ht.get("length_codons", 120)),
        )
        config = GatewayConfig(
            base_dir=base,
            listen_host=listen.get("host", "127.0.0.1"),
            listen_port=int(listen.get("port", 8400)),
            decision_window_days=float(doc.get("decision_window_days", 14)),
            store_dir=_resolve(base, doc.get("store_dir", "store")),
            registry_path=_resolve(base, doc.get("registry_path", "registry.json")),
            signing_key_path=_resolve(
                base, doc.get("signing_key_path", "keys/signing.json")
            ),
            watermark_key_path=_resolve(
                base, doc.get("watermark_key_path", "keys/watermark.json")
            ),
            principals_path=_resolve(
                base, doc.get("principals_path", "principals.json")
            ),
            screening_k=int(screening.get("k", 30)),
            egress_thresholds=thresholds,
            access=access,
            honeytokens=policy,
            bdl0_read_sample_rate=float(
                doc.get("audit", {}).get("bdl0_read_sample_rate", 0.0)
            ),
            extension_points=doc.get("extension_points", {}),
        )
    except (ValueError, TypeError, KeyError) as exc:
        raise ConfigError(f"invalid config: {exc}") from None
    config.validate_files()
    return config


def scaffold_deployment(directory, host: str = "127.0.0.1", port: int = 8400) -> Path:
    """Create a runnable deployment skeleton: keys, empty registry, a sample
    steward principal, and config.json. Returns the config path."""
    from .auditlog import SigningKey
    from .watermark import WatermarkKey

    base = Path(directory)
    (base / "keys").mkdir(parents=True, exist_ok=True)
    (base / "store").mkdir(parents=True, exist_ok=True)

    SigningKey.generate().save(
        base / "keys" / "signing.json", base / "keys" / "signing.pub.json"
    )
    wm = WatermarkKey.generate()
    (base / "keys" / "watermark.json").write_text(
        json.dumps({"key_id": wm.key_id, "key_hex": wm.key_bytes.hex()}, indent=2)
        + "\n"
    )
    (base / "registry.json").write_text(
        json.dumps({"version": 1, "families": []}, indent=2) + "\n"
    )
    (base / "principals.json").write_text(
        json.dumps(
            {
                "principals": [
                    {
                        "token": "steward-token",
                        "id": "steward-1",
                        "identity_level": "PreScreened",
                        "second_factor_enrolled": True,
                        "trust_score": 0.9,
                        "approved_projects": [],
                        "home_institution": "example",
                        "usual_countries": ["US"],
                        "roles": ["steward"],
                    }
                ]
            },
            indent=2,
        )
        + "\n"
    )
    config = {
        "listen": {"host": host, "port": port},
        "decision_window_days": 14,
        "store_dir": "store",
        "registry_path": "registry.json",
        "signing_key_path": "keys/signing.json",
        "watermark_key_path": "keys/watermark.json",
        "principals_path": "principals.json",
        "screening": {
            "k": 30,
            "review_threshold": 0.3,
            "block_threshold": 0.8,
            "honeytoken_overlap": 0.5,
        },
        "risk": {
            "weights": {"similarity": 0.5, "provenance": 0.2, "trust": 0.2, "tier": 0.1},
            "review_threshold": 0.5,
            "block_threshold": 0.8,
        },
        "anomaly": {"z_threshold": 3.0, "cold_start_days": 7, "window_days": 30},
        "honeytokens": {"per_records": 100, "min_per_dataset": 1, "length_codons": 120},
        "audit": {"bdl0_read_sample_rate": 0.0},
        "extension_points": {name: None for name in RESERVED_EXTENSION_POINTS},
    }
    config_path = base / "config.json"
    config_path.write_text(json.dumps(config, indent=2) + "\n")
    return config_path


def load_watermark_key(path):
    from .watermark import WatermarkKey

    doc = json.loads(Path(path).read_text())
    return WatermarkKey(
        key_bytes=bytes.fromhex(doc["key_hex"]), key_id=doc.get("key_id", "default")
    )
