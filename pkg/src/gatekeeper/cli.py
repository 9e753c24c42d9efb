"""Operator command line.

Exit codes are script-friendly: classify exits with the tier number,
audit verify with 0/1, usage and parse errors with 64, CRC mismatches
with 65, capacity shortfalls with 66.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from . import __version__
from .auditlog import SigningKey, load_public_key, verify_chain_file
from .config import load_config, load_watermark_key, scaffold_deployment
from .egress import build_corpus
from .report import generate_report
from .seqio import CodingSequence, parse_fasta, serialize_fasta
from .taxonomy import DatasetDescriptor, classify, load_family_registry
from .watermark import (
    CrcMismatch,
    InsufficientCapacity,
    Namespace,
    WatermarkError,
    WatermarkKey,
    WatermarkPayload,
    bits_from_hex,
    embed,
    extract,
    generate_honeytoken,
    save_honeytoken_registry,
    uniform_codon_profile,
)

EXIT_USAGE = 64
EXIT_CRC = 65
EXIT_CAPACITY = 66


def _read_input(path: str) -> str:
    if path == "-":
        return sys.stdin.read()
    return Path(path).read_text()


def _write_output(path: str | None, text: str) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


@click.group()
@click.version_option(__version__)
def main():
    """Data stewardship gateway tools."""


@main.command("classify")
@click.argument("descriptor_file")
@click.option("--registry", "registry_file", default=None, help="Family registry JSON.")
def cli_classify(descriptor_file, registry_file):
    """Classify a dataset descriptor; exit code is the tier."""
    try:
        doc = json.loads(_read_input(descriptor_file))
        descriptor = DatasetDescriptor.from_json_dict(doc)
        warnings: list[str] = []
        if registry_file:
            registry = load_family_registry(_read_input(registry_file))
            descriptor, warnings = registry.annotate(descriptor)
        result = classify(descriptor)
    except (ValueError, OSError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_USAGE)
    out = result.to_json_dict()
    out["warnings"] = warnings + out["warnings"]
    click.echo(json.dumps(out, sort_keys=True))
    sys.exit(int(result.tier))


@main.command("keygen")
@click.option("--kind", type=click.Choice(["watermark", "signing"]), required=True)
@click.option("--out", "out_file", required=True)
@click.option("--public-out", "public_file", default=None)
@click.option("--key-id", default="default")
def cli_keygen(kind, out_file, public_file, key_id):
    """Generate key material as hex JSON files."""
    if kind == "watermark":
        key = WatermarkKey.generate(key_id)
        Path(out_file).write_text(
            json.dumps({"key_id": key.key_id, "key_hex": key.key_bytes.hex()}, indent=2)
            + "\n"
        )
    else:
        key = SigningKey.generate(key_id)
        key.save(out_file, public_file)
    click.echo(f"wrote {out_file}")


@main.group("watermark")
def watermark_group():
    """Embed or extract coding-sequence watermarks."""


@watermark_group.command("embed")
@click.option("--in", "in_file", required=True, help="FASTA with coding sequences.")
@click.option("--key", "key_file", required=True)
@click.option("--payload", "payload_hex", required=True, help="Payload bits as hex.")
@click.option("--out", "out_file", default=None)
def wm_embed(in_file, key_file, payload_hex, out_file):
    try:
        key = load_watermark_key(key_file)
        records = parse_fasta(_read_input(in_file))
        payload = WatermarkPayload(Namespace.Export, bits_from_hex(payload_hex))
        marked = [embed(CodingSequence(rec), payload, key).seq for rec in records]
    except InsufficientCapacity as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_CAPACITY)
    except (ValueError, OSError, WatermarkError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_USAGE)
    _write_output(out_file, serialize_fasta(marked))


@watermark_group.command("extract")
@click.option("--in", "in_file", required=True)
@click.option("--key", "key_file", required=True)
@click.option("--len", "bit_len", type=int, required=True, help="Payload bit length.")
def wm_extract(in_file, key_file, bit_len):
    try:
        key = load_watermark_key(key_file)
        records = parse_fasta(_read_input(in_file))
    except (ValueError, OSError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_USAGE)
    for rec in records:
        try:
            payload = extract(CodingSequence(rec), key, bit_len)
        except CrcMismatch:
            click.echo(f"{rec.id}\tCrcMismatch", err=True)
            sys.exit(EXIT_CRC)
        except InsufficientCapacity as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_CAPACITY)
        except (ValueError, WatermarkError) as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_USAGE)
        click.echo(f"{rec.id}\t{payload.namespace.value}\t{payload.to_hex()}")


@main.group("audit")
def audit_group():
    """Audit chain tools."""


@audit_group.command("verify")
@click.option("--log", "log_file", required=True)
@click.option("--public-key", "public_key_file", required=True)
def audit_verify(log_file, public_key_file):
    """Verify a chain export; exit 0 iff the whole chain is intact."""
    try:
        public = load_public_key(public_key_file)
        result = verify_chain_file(log_file, public)
    except (ValueError, OSError, KeyError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_USAGE)
    if result.ok:
        click.echo(f"ok: {result.entries_checked} entries")
        sys.exit(0)
    click.echo(f"TAMPERED: first_bad_index={result.first_bad_index}")
    sys.exit(1)


@main.command("corpus")
@click.option("--k", type=int, default=30, show_default=True)
@click.option("--out", "out_file", required=True)
@click.argument("datasets", nargs=-1, required=True)
def cli_corpus(k, out_file, datasets):
    """Build a k-mer index from DATASETS given as name=path.fasta pairs."""
    table = {}
    try:
        for spec_arg in datasets:
            name, _, path = spec_arg.partition("=")
            if not path:
                raise ValueError(f"expected name=path, got {spec_arg!r}")
            table[name] = parse_fasta(_read_input(path))
        corpus = build_corpus(table, k=k)
        corpus.save(out_file)
    except (ValueError, OSError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_USAGE)
    click.echo(f"indexed {len(corpus)} k-mers from {len(table)} dataset(s)")


@main.command("honeytoken")
@click.option("--key", "key_file", required=True)
@click.option("--token-id", required=True)
@click.option("--length", "length_codons", type=int, default=120, show_default=True)
@click.option("--out", "out_file", default=None, help="Decoy FASTA destination.")
@click.option("--registry", "registry_file", default=None, help="Append record here.")
@click.option("--k", type=int, default=30, show_default=True)
def cli_honeytoken(key_file, token_id, length_codons, out_file, registry_file, k):
    """Generate a decoy coding sequence carrying TOKEN-ID."""
    try:
        key = load_watermark_key(key_file)
        decoy, record = generate_honeytoken(
            uniform_codon_profile(), length_codons, key, token_id, k=k
        )
    except InsufficientCapacity as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_CAPACITY)
    except (ValueError, OSError, WatermarkError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_USAGE)
    _write_output(out_file, serialize_fasta([decoy.seq]))
    if registry_file:
        existing = []
        if Path(registry_file).exists():
            from .watermark import load_honeytoken_registry

            existing = load_honeytoken_registry(registry_file)
        save_honeytoken_registry(existing + [record], registry_file)
        click.echo(f"registered {token_id} in {registry_file}", err=True)


@main.command("report")
@click.option("--log", "log_file", required=True, help="Audit JSONL export.")
@click.option("--out-dir", required=True)
def cli_report(log_file, out_dir):
    """Render summary.csv plus activity figures from an audit log."""
    try:
        result = generate_report(log_file, out_dir)
    except (ValueError, OSError, KeyError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_USAGE)
    click.echo(json.dumps(result, indent=2))


@main.command("init")
@click.option("--dir", "directory", required=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8400, show_default=True)
def cli_init(directory, host, port):
    """Scaffold a deployment directory (keys, registry, config)."""
    config_path = scaffold_deployment(directory, host, port)
    click.echo(str(config_path))


@main.command("serve")
@click.option("--config", "config_file", default=None, help="Overrides GATEKEEPER_CONFIG.")
def cli_serve(config_file):
    """Run the gateway HTTP service."""
    from .api import serve

    try:
        config = load_config(config_file)
    except ValueError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_USAGE)
    serve(config)


if __name__ == "__main__":
    main()
