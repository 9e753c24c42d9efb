"""Acceptance criteria, one test per criterion.

Each test enforces its stated scale and runtime budget and prints a
PASS line; run with `pytest tests/test_acceptance.py -v -s` to see them.
"""

import itertools
import random
import threading
import time
from datetime import datetime, timedelta, timezone
from fractions import Fraction

import httpx
import pytest
import uvicorn

from conftest import FakeClock, cds_fasta, make_deployment, random_bases, random_cds
from gatekeeper.access import (
    AccessEvent,
    AnomalyBaseline,
    AnomalyConfig,
    AnomalyKind,
    IdentityLevel,
    RateLimitPolicy,
    RequestAction,
    RiskInputs,
    TierLimit,
    TokenBucketLimiter,
    decide,
    observe_and_flag,
)
from gatekeeper.api import create_app
from gatekeeper.auditlog import AuditAction, AuditLog, SigningKey, verify_chain
from gatekeeper.egress import build_corpus, screen
from gatekeeper.seqio import GENETIC_CODE, SYNONYMOUS_CODONS, CodingSequence, NucleotideSequence, translate
from gatekeeper.service import GatewayService
from gatekeeper.store import RequestStatus
from gatekeeper.taxonomy import (
    BdlTier,
    DataModality,
    DatasetDescriptor,
    FamilyRiskClass,
    PropertyOfConcern,
    classify,
    enforcement_profile,
)
from gatekeeper.watermark import (
    CrcMismatch,
    Namespace,
    WatermarkKey,
    WatermarkPayload,
    capacity,
    embed,
    extract,
)
from test_access import oracle_decide, principal, request
from test_taxonomy import oracle_tier

M = DataModality
F = FamilyRiskClass
P = PropertyOfConcern


class Budget:
    def __init__(self, name: str, seconds: float):
        self.name = name
        self.seconds = seconds

    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, exc_type, *rest):
        elapsed = time.perf_counter() - self.start
        if exc_type is None:
            assert elapsed < self.seconds, (
                f"{self.name} took {elapsed:.1f}s, budget {self.seconds}s"
            )
            print(f"PASS {self.name} ({elapsed:.2f}s < {self.seconds:.0f}s)")
        return False


def D(modality, family, props=(), enh=False, outbreak=False):
    return DatasetDescriptor(
        modality=modality,
        family_class=family,
        properties=frozenset(props),
        enhancement_demonstrated=enh,
        outbreak_exception=outbreak,
    )


# One fixture per listed data type, bottom-up through the tier bullets,
# plus open-tier and outbreak-override cases.
TAXONOMY_FIXTURES = [
    # open tier: everything not named below
    (D(M.SequenceRaw, F.NonConcern), 0),             # bacterial genome
    (D(M.Other, F.HumanInfecting), 0),                # unlisted data type
    (D(M.ProteinStructure, F.NonConcern), 0),
    (D(M.FunctionalAssay, F.NonConcern, (P.HostRange,)), 0),
    # tier 1: eukaryote-infecting viral composition
    (D(M.SequenceRaw, F.EukaryoteInfecting), 1),      # genomic sequencing
    (D(M.ProteinStructure, F.EukaryoteInfecting), 1), # structure data
    (D(M.SequenceRaw, F.HumanInfecting), 1),          # raw stays tier 1
    (D(M.SequenceAnnotated, F.EukaryoteInfecting), 1),
    # tier 2: animal-pandemic-capable family properties
    (D(M.SequenceAnnotated, F.AnimalPandemicCapable), 2),
    (D(M.FunctionalAssay, F.AnimalPandemicCapable, (P.HostRange,)), 2),
    (D(M.FunctionalAssay, F.AnimalPandemicCapable, (P.HostSusceptibility,)), 2),
    (D(M.ProteinInteraction, F.AnimalPandemicCapable, (P.ZoonoticCrossover,)), 2),
    (D(M.DiagnosticComparison, F.AnimalPandemicCapable, (P.DetectionEvasion,)), 2),
    (D(M.EnvironmentalStabilityAssay, F.AnimalPandemicCapable, (P.EnvironmentalStability,)), 2),
    (D(M.ProteinInteraction, F.HumanPandemicPotential, (P.ZoonoticCrossover,)), 2),
    # tier 3: human-pathogenic family properties
    (D(M.SequenceAnnotated, F.HumanInfecting), 3),
    (D(M.SequenceAnnotated, F.HumanPandemicPotential), 3),
    (D(M.FunctionalAssay, F.HumanInfecting, (P.Transmissibility,)), 3),
    (D(M.FunctionalAssay, F.HumanInfecting, (P.Virulence,)), 3),
    (D(M.FunctionalAssay, F.HumanInfecting, (P.ImmuneEvasion,)), 3),
    (D(M.FunctionalAssay, F.HumanInfecting, (P.CountermeasureResistance,)), 3),
    (D(M.ProteinInteraction, F.HumanInfecting, (P.ImmuneEvasion,)), 3),
    (D(M.PhenotypicAnimalModel, F.HumanInfecting, (P.Virulence,)), 3),
    (D(M.TransmissionRate, F.HumanInfecting, (P.Transmissibility,)), 3),
    (D(M.FunctionalAssay, F.HumanPandemicPotential, (P.Transmissibility,)), 3),  # no enhancement
    # tier 4: demonstrated enhancement in pandemic-potential families
    (D(M.SequenceAnnotated, F.HumanPandemicPotential, (P.Transmissibility,), enh=True), 4),
    (D(M.FunctionalAssay, F.HumanPandemicPotential, (P.Virulence,), enh=True), 4),
    (D(M.ProteinInteraction, F.HumanPandemicPotential, (P.ImmuneEvasion,), enh=True), 4),
    # outbreak exception removes restrictions
    (D(M.FunctionalAssay, F.HumanPandemicPotential, (P.Transmissibility,), enh=True, outbreak=True), 0),
    (D(M.SequenceAnnotated, F.HumanInfecting, outbreak=True), 0),
]


class TestTaxonomyAcceptance:
    def test_fixture_suite_and_exhaustive_monotonicity(self):
        with Budget("taxonomy fixture suite + exhaustive monotonicity", 5.0):
            assert len(TAXONOMY_FIXTURES) >= 25
            for desc, expected in TAXONOMY_FIXTURES:
                got = classify(desc)
                assert int(got.tier) == expected, (desc, expected, got)

            # full cross-product: modality x class x property subset x flags
            props = list(P)
            table: dict[tuple, int] = {}
            for modality, family in itertools.product(M, F):
                for mask in range(512):
                    chosen = frozenset(p for i, p in enumerate(props) if mask >> i & 1)
                    for enh in (False, True):
                        if enh and not chosen:
                            continue
                        for outbreak in (False, True):
                            desc = D(modality, family, chosen, enh, outbreak)
                            tier = int(classify(desc).tier)
                            table[(modality, family, mask, enh, outbreak)] = tier
                            assert tier == oracle_tier(desc)  # rule-table equivalence
                            if outbreak:
                                assert tier == 0  # outbreak dominance

            for (modality, family, mask, enh, outbreak), tier in table.items():
                if family < F.HumanPandemicPotential:  # raising class never lowers
                    assert table[(modality, F(family + 1), mask, enh, outbreak)] >= tier
                for i in range(9):  # adding a property never lowers
                    if not mask >> i & 1:
                        assert table[(modality, family, mask | 1 << i, enh, outbreak)] >= tier
                if not enh and mask:  # demonstrating enhancement never lowers
                    assert table[(modality, family, mask, True, outbreak)] >= tier


class TestEnforcementMatrixAcceptance:
    def test_matrix_against_hand_enumerated_table(self):
        with Budget("enforcement matrix vs oracle", 5.0):
            cases = 0
            for tier in BdlTier:
                profile = enforcement_profile(tier)
                for level in IdentityLevel:
                    prin = principal(level, projects=("proj-a",))
                    for action in (RequestAction.ReadRecords, RequestAction.ExportRecords):
                        for sf in (False, True):
                            for intent in (None, "stated purpose"):
                                for proj in (None, "proj-a"):
                                    req = request(action=action, sf=sf, intent=intent,
                                                  project=proj, records=1, nbytes=8)
                                    dec = decide(req, prin, tier, profile)
                                    expected = oracle_decide(req, prin, tier, profile)
                                    assert (
                                        dec.outcome.value,
                                        dec.reason.value,
                                        {o.value for o in dec.obligations},
                                    ) == expected
                                    cases += 1

            # rate-limited and risk-driven rows of the table
            for tier in (BdlTier.BDL1, BdlTier.BDL2, BdlTier.BDL3, BdlTier.BDL4):
                profile = enforcement_profile(tier)
                prin = principal(IdentityLevel.PreScreened, projects=("proj-a",))
                req = request(sf=True, project="proj-a", records=100, nbytes=10**9)
                limiter = TokenBucketLimiter(
                    RateLimitPolicy({t: TierLimit(1, 1, 60.0) for t in list(BdlTier)[1:]})
                )
                dec = decide(req, prin, tier, profile, limiter=limiter)
                assert (dec.outcome.value, dec.reason.value) == oracle_decide(
                    req, prin, tier, profile, rate_ok=False
                )[:2]
                for risk, inputs, trust in (
                    ("Review", RiskInputs(similarity=1.0), 1.0),
                    ("Block", RiskInputs(similarity=1.0, provenance_deficit=1.0), 0.0),
                ):
                    prin2 = principal(IdentityLevel.PreScreened, projects=("proj-a",), trust=trust)
                    dec = decide(req, prin2, tier, profile, risk_inputs=inputs)
                    assert (dec.outcome.value, dec.reason.value) == oracle_decide(
                        req, prin2, tier, profile, risk_action=risk
                    )[:2]
                cases += 12
            assert cases >= 200
            print(f"  ({cases} matrix cases)")


class TestWatermarkAcceptance:
    def test_watermark_properties_at_scale(self):
        with Budget("watermark round-trip / wrong-key / mutation detection", 60.0):
            rng = random.Random(8071)
            key = WatermarkKey(bytes(range(32)), "acceptance")

            # 1000 random CDSs, 100..1000 codons: exact round-trip, exact translation
            failures = 0
            pool = []
            for _ in range(1000):
                cds = random_cds(rng, rng.randint(100, 1000))
                cap = capacity(cds)
                bits = "".join(rng.choice("01") for _ in range(rng.randint(0, min(cap - 16, 240))))
                payload = WatermarkPayload(Namespace.Export, bits)
                marked = embed(cds, payload, key)
                if translate(marked) != translate(cds):
                    failures += 1
                elif extract(marked, key, len(bits)) != payload:
                    failures += 1
                if len(pool) < 100 and len(marked.codons()) <= 400:
                    pool.append((marked, payload))
            assert failures == 0

            # wrong-key extraction must CRC-fail at rate >= 0.999 over 1e4 trials
            small = random_cds(rng, 100)
            small_payload = WatermarkPayload(
                Namespace.Export, "".join(rng.choice("01") for _ in range(64))
            )
            small_marked = embed(small, small_payload, key)
            rejected = 0
            for i in range(10_000):
                wrong = WatermarkKey(
                    random.Random(i).getrandbits(256).to_bytes(32, "big"), "w"
                )
                try:
                    got = extract(small_marked, wrong, 64)
                    if got != small_payload:
                        rejected += 1
                except CrcMismatch:
                    rejected += 1
            assert rejected / 10_000 >= 0.999
            print(f"  (wrong-key rejection {rejected / 10_000:.4f})")

            # single synonymous mutation detection >= 0.999 over 1e4 trials
            detected = 0
            for i in range(10_000):
                marked, payload = pool[i % len(pool)]
                codons = marked.codons()
                sites = [
                    j for j, c in enumerate(codons)
                    if len(SYNONYMOUS_CODONS[GENETIC_CODE[c]]) > 1
                ]
                site = rng.choice(sites)
                family = [
                    c for c in SYNONYMOUS_CODONS[GENETIC_CODE[codons[site]]]
                    if c != codons[site]
                ]
                codons[site] = rng.choice(family)
                mutated = CodingSequence(NucleotideSequence("".join(codons)))
                try:
                    if extract(mutated, key, len(payload.bits)) != payload:
                        detected += 1
                except CrcMismatch:
                    detected += 1
            assert detected / 10_000 >= 0.999
            print(f"  (mutation detection {detected / 10_000:.4f})")


class TestAuditTamperAcceptance:
    def test_tamper_suite_on_thousand_entry_chain(self):
        with Budget("audit tamper suite (1000-entry chain)", 30.0):
            rng = random.Random(4099)
            key = SigningKey.generate("acceptance")
            log = AuditLog(key)
            actions = list(AuditAction)
            for i in range(1000):
                log.append(
                    actor=f"user{i % 17}",
                    action=actions[i % len(actions)],
                    resource=f"ds-{i % 31:05d}",
                    detail={"n": i, "note": f"entry {i}"},
                    ts=1_700_000_000_000 + i * 997,
                )
            entries = log.entries
            public = log.public_bytes() if hasattr(log, "public_bytes") else log.public_key()
            head = log.head_hash

            assert verify_chain(entries, public).ok  # pristine verifies

            # >= 500 random single-byte mutations across the serialized log
            blob = "\n".join(e.to_line() for e in entries).encode()
            newline_offsets = [i for i, b in enumerate(blob) if b == 10]
            tested = 0
            while tested < 500:
                pos = rng.randrange(len(blob))
                old = blob[pos]
                new = rng.randrange(256)
                if new == old or new in (10, 13) or old == 10:
                    continue
                mutated = blob[:pos] + bytes([new]) + blob[pos + 1 :]
                expected_bad = sum(1 for off in newline_offsets if off < pos) + 1
                lines = mutated.split(b"\n")
                # splice the mutated raw line into the parsed stream
                stream = (
                    entries[: expected_bad - 1]
                    + [lines[expected_bad - 1]]
                    + entries[expected_bad:]
                )
                result = verify_chain(stream, public)
                assert not result.ok
                assert result.first_bad_index == expected_bad, (pos, expected_bad)
                tested += 1

            # every single-entry deletion (with the recorded head as anchor)
            for i in range(1000):
                mutated = entries[:i] + entries[i + 1 :]
                result = verify_chain(mutated, public, expected_head=head)
                assert not result.ok
                assert result.first_bad_index == i + 1

            # every adjacent reorder
            for i in range(999):
                mutated = list(entries)
                mutated[i], mutated[i + 1] = mutated[i + 1], mutated[i]
                result = verify_chain(mutated, public)
                assert not result.ok
                assert result.first_bad_index == i + 1
            print("  (500 mutations, 1000 deletions, 999 reorders)")


class TestScreeningAcceptance:
    def test_oracle_equivalence_100_instances(self):
        with Budget("screening containment vs brute-force oracle", 60.0):
            rng = random.Random(9391)
            for instance in range(100):
                k = rng.choice([21, 25, 30])
                n_datasets = rng.randint(1, 4)
                total = rng.randint(20_000, 100_000)
                seqs = []
                remaining = total
                for i in range(n_datasets):
                    n = remaining // (n_datasets - i)
                    seqs.append(random_bases(rng, max(n, k)))
                    remaining -= n
                corpus = build_corpus({f"ds{i}": [s] for i, s in enumerate(seqs)}, k=k)

                # query: noise spliced with corpus fragments, <= 1e4 nt
                parts = [random_bases(rng, rng.randint(100, 2000))]
                for _ in range(rng.randint(0, 3)):
                    src = rng.choice(seqs)
                    start = rng.randrange(max(len(src) - 500, 1))
                    parts.append(src[start : start + rng.randint(k, 500)])
                    parts.append(random_bases(rng, rng.randint(50, 1500)))
                query = "".join(parts)[:10_000]

                got = screen(query, corpus).max_containment

                corpus_windows = set()
                for s in seqs:
                    for i in range(len(s) - k + 1):
                        corpus_windows.add(s[i : i + k])
                query_windows = {query[i : i + k] for i in range(len(query) - k + 1)}
                expected = (
                    sum(1 for w in query_windows if w in corpus_windows) / len(query_windows)
                    if query_windows
                    else 0.0
                )
                assert got == expected, f"instance {instance}"


class TestRateLimiterAcceptance:
    def test_thousand_schedules_match_oracle(self):
        with Budget("rate limiter conformance (1000 schedules)", 30.0):
            for schedule in range(1000):
                rng = random.Random(20_000 + schedule)
                cap_r = rng.randint(1, 50)
                cap_b = rng.randint(10, 5000)
                period = rng.choice([1.0, 7.5, 60.0, 3600.0, 86400.0])
                policy = RateLimitPolicy({BdlTier.BDL1: TierLimit(cap_r, cap_b, period)})
                limiter = TokenBucketLimiter(policy)

                buckets: dict[str, list] = {}
                t = 0.0
                for _ in range(40):
                    t += rng.choice([0.0, 0.01, 1.0, period / 7, period / 2, 2 * period]) * rng.random()
                    who = rng.choice(["alice", "bob"])
                    recs = rng.randint(0, cap_r + 3)
                    nbytes = rng.randint(0, cap_b + 100)

                    # independent discrete-event simulation, exact arithmetic
                    state = buckets.get(who)
                    if state is None:
                        state = [Fraction(cap_r), Fraction(cap_b), Fraction(t)]
                        buckets[who] = state
                    elapsed = Fraction(t) - state[2]
                    state[0] = min(Fraction(cap_r), state[0] + elapsed * cap_r / Fraction(period))
                    state[1] = min(Fraction(cap_b), state[1] + elapsed * cap_b / Fraction(period))
                    state[2] = Fraction(t)
                    expect = state[0] >= recs and state[1] >= nbytes
                    if expect:
                        state[0] -= recs
                        state[1] -= nbytes

                    got = limiter.check_and_consume(who, BdlTier.BDL1, recs, nbytes, t)
                    assert got == expect, f"schedule {schedule} t={t}"


class TestAnomalyAcceptance:
    def test_flat_baseline_single_burst_single_flag(self):
        config = AnomalyConfig()
        baseline = AnomalyBaseline("acc-user")
        day0 = datetime(2026, 2, 1, 9, 0, tzinfo=timezone.utc)
        usual = frozenset({"US"})
        # 30 days alternating 9.8 / 10.2 MB: mean 10 MB, pstdev 0.2 MB
        volumes = [9_800_000 if i % 2 == 0 else 10_200_000 for i in range(30)]
        all_flags = []
        for i, v in enumerate(volumes):
            _, flags = observe_and_flag(
                baseline, AccessEvent("acc-user", day0 + timedelta(days=i), v, "US"),
                usual, config,
            )
            all_flags += flags
        assert all_flags == []  # a steady month raises nothing

        import statistics
        mean, std = statistics.fmean(volumes), statistics.pstdev(volumes)
        burst = int(mean + 10 * std)
        _, flags = observe_and_flag(
            baseline, AccessEvent("acc-user", day0 + timedelta(days=30), burst, "US"),
            usual, config,
        )
        assert len(flags) == 1
        assert flags[0].kind is AnomalyKind.VolumeSurge
        assert flags[0].z_value == pytest.approx(10.0)
        # a same-day repeat never duplicates the VolumeSurge flag
        _, flags = observe_and_flag(
            baseline, AccessEvent("acc-user", day0 + timedelta(days=30), burst, "US"),
            usual, config,
        )
        assert AnomalyKind.VolumeSurge not in {f.kind for f in flags}
        print("PASS anomaly injection (single 10-sigma burst, one flag)")

    def test_cold_start_never_flags(self):
        config = AnomalyConfig()
        day0 = datetime(2026, 2, 1, 9, 0, tzinfo=timezone.utc)
        baseline = AnomalyBaseline("cold-user")
        for i in range(6):  # window never reaches 7 completed days
            _, flags = observe_and_flag(
                baseline,
                AccessEvent("cold-user", day0 + timedelta(days=i), 10**12, "US"),
                frozenset({"US"}), config,
            )
            assert flags == []
        print("PASS anomaly cold start (zero flags under 7 days)")


BDL3_DESCRIPTOR = {
    "modality": "PhenotypicAnimalModel",
    "family_class": "NonConcern",
    "properties": ["Virulence"],
    "family_name": "HumanFam",
    "record_count": 120,
    "total_bases": 120 * 270,
}


class TestEndToEndExfiltration:
    def test_http_scenario_against_live_gateway(self, tmp_path):
        with Budget("end-to-end exfiltration scenario over HTTP", 30.0):
            config = make_deployment(tmp_path)
            service = GatewayService(config, rng=random.Random(8123))
            app = create_app(service)
            uv_config = uvicorn.Config(app, host="127.0.0.1", port=0, log_level="error")
            server = uvicorn.Server(uv_config)
            thread = threading.Thread(target=server.run, daemon=True)
            thread.start()
            deadline = time.time() + 10
            while not server.started:
                assert time.time() < deadline, "server failed to start"
                time.sleep(0.01)
            port = server.servers[0].sockets[0].getsockname()[1]
            base = f"http://127.0.0.1:{port}/api/v1"
            researcher = {"Authorization": "Bearer researcher-token"}
            steward = {"Authorization": "Bearer steward-token"}

            try:
                with httpx.Client(timeout=10) as client:
                    # register a BDL-3 dataset
                    fasta = cds_fasta(random.Random(61), 120)
                    r = client.post(
                        f"{base}/datasets",
                        json={"descriptor": BDL3_DESCRIPTOR, "fasta": fasta,
                              "provenance": "animal model study"},
                        headers=researcher,
                    )
                    assert r.status_code == 201, r.text
                    meta = r.json()
                    assert meta["tier"] == 3
                    dataset_id = meta["dataset_id"]

                    # raw export attempt is denied
                    r = client.post(
                        f"{base}/datasets/{dataset_id}/records:request",
                        json={"action": "ExportRecords", "project_id": "proj-x",
                              "intent_statement": "bulk pull",
                              "second_factor_presented": True,
                              "requested_records": 120},
                        headers=researcher,
                    )
                    assert r.status_code == 403
                    assert r.json()["decision"]["reason"] == "ExportForbiddenTreOnly"

                    # reads never leak tier-3 sequence content
                    r = client.post(
                        f"{base}/datasets/{dataset_id}/records:request",
                        json={"action": "ReadRecords", "project_id": "proj-x",
                              "intent_statement": "inspect", "second_factor_presented": True},
                        headers=researcher,
                    )
                    assert r.status_code == 200
                    stored = service.store.datasets[dataset_id].sequences
                    for seq in stored:
                        assert seq.bases not in r.text

                    # egress of content containing a planted decoy is blocked
                    ds = service.store.datasets[dataset_id]
                    decoy_bases = next(
                        s.bases for s in ds.sequences if s.id in ds.honeytoken_ids
                    )
                    r = client.post(
                        f"{base}/egress-requests",
                        json={"artifact_kind": "SequenceContent",
                              "content_text": decoy_bases,
                              "scope_dataset_ids": [dataset_id]},
                        headers=researcher,
                    )
                    assert r.status_code == 201
                    verdict = r.json()
                    assert verdict["outcome"] == "Blocked"
                    assert verdict["reason"] == "HoneytokenHit"

                    r = client.get(
                        f"{base}/audit", params={"action": "HoneytokenTripped"},
                        headers=steward,
                    )
                    assert r.json()["total"] == 1

                    # an aggregate table passes
                    r = client.post(
                        f"{base}/egress-requests",
                        json={"artifact_kind": "AggregateStats",
                              "content_text": "n=120 mean_titer=4.6 sd=0.8",
                              "scope_dataset_ids": [dataset_id]},
                        headers=researcher,
                    )
                    assert r.json()["outcome"] == "Allowed"
                    assert r.json()["reason"] == "Aggregate"

                    r = client.get(f"{base}/audit:verify", headers=steward)
                    assert r.json()["ok"] is True
            finally:
                server.should_exit = True
                thread.join(timeout=10)

            # after graceful shutdown the on-disk chain still verifies
            from gatekeeper.auditlog import verify_chain_file

            result = verify_chain_file(
                config.store_dir / "audit.jsonl", service.audit.public_key()
            )
            assert result.ok


class TestGovernanceAcceptance:
    def test_clock_advanced_workflow(self, tmp_path):
        clock = FakeClock()
        config = make_deployment(tmp_path)
        service = GatewayService(config, clock=clock, rng=random.Random(3))
        researcher, _ = service.authenticate("researcher-token")
        steward, roles = service.authenticate("steward-token")

        descriptor = DatasetDescriptor.from_json_dict(BDL3_DESCRIPTOR)
        cr = service.submit_classification_request(descriptor, researcher)

        # Overdue begins strictly after due_at
        assert cr.status_at(cr.due_at) is RequestStatus.Pending
        assert cr.status_at(cr.due_at + 1e-3) is RequestStatus.Overdue
        clock.now = cr.due_at
        assert service.sweep_overdue() == []
        clock.now = cr.due_at + 1e-3
        opened = service.sweep_overdue()
        assert [i.kind.value for i in opened] == ["ClassificationOverdue"]

        ds = service.register_dataset(
            descriptor, cds_fasta(random.Random(62), 120), "prov", researcher,
            classification_request_id=cr.id,
        )
        service.decide_classification(cr.id, steward, roles)
        assert service.store.datasets[ds.dataset_id].tier == BdlTier.BDL3

        appeal = service.file_appeal(cr.id, "tier too high for this assay", researcher)
        from gatekeeper.store import IllegalTransition

        with pytest.raises(IllegalTransition):
            service.decide_appeal(appeal.id, steward, roles, "Overturned", BdlTier.BDL1)
        service.decide_appeal(appeal.id, steward, roles, "UnderReview")
        with pytest.raises(IllegalTransition):
            service.decide_appeal(appeal.id, steward, roles, "UnderReview")
        service.decide_appeal(appeal.id, steward, roles, "Overturned", BdlTier.BDL1)

        assert service.store.datasets[ds.dataset_id].tier == BdlTier.BDL1
        actions = [e.action for e in service.audit.entries]
        assert AuditAction.AppealFiled in actions
        assert AuditAction.AppealDecided in actions
        # the tier change is in the signed trail and the chain verifies
        tier_entries = [
            e for e in service.audit.entries
            if e.action is AuditAction.Classified and e.resource == ds.dataset_id
        ]
        assert tier_entries[-1].detail["tier"] == 1
        assert service.verify_audit().ok
        print("PASS governance workflow (deadline, appeal state machine, tier update)")
