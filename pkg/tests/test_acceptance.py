"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``PASS``/``FAIL`` line (also repeated in the
terminal summary) before asserting, at the tolerance the criterion states.
Criteria 7, 8 and 9 talk to a gateway running in a separate process so the
client's timing loop does not share an interpreter lock with the server.
"""

from __future__ import annotations

import json
import os
import random
import subprocess
import sys
import textwrap
import time
from fractions import Fraction
from pathlib import Path

import pytest
from hypothesis import HealthCheck, Phase, given, settings
from hypothesis import strategies as st

import conftest
from conftest import SATURDAY, WEEKDAY
from faults import run_trial
from objguard import bench
from objguard.backend import FileBackend
from objguard.client import GatewayClient
from objguard.crypto import (
    HomCiphertext,
    ReEncToken,
    hom_add,
    hom_decrypt,
    hom_encrypt,
    hom_keygen,
    peks_encrypt,
    peks_keygen,
    peks_test,
    peks_trapdoor,
    pre_decrypt,
    pre_reencrypt,
    pre_token,
)
from objguard.datasets import DatasetKeys, generate
from objguard.engine import MetadataStore, publish_key, set_label
from objguard.errors import DiscreteLogNotFound, HttpError, KeyMismatch, LevelMismatch
from objguard.gateway import GatewayConfig, make_server
from objguard.stream import JsonStreamBuilder, compile_event_spec, install, run_stream
from objguard.udf import Clac, Requester, UdfContext
from oracles import clac_filter, matching_paths, parse, plain
from strategies import chunkings, container_trees, documents, expressions_for, render

MB = 1024 * 1024
ROOT = Path(__file__).resolve().parents[1]


def verdict(number: int, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'} criterion {number:>2}: {detail}"
    conftest.ACCEPTANCE.append(line)
    print(line, file=sys.__stdout__, flush=True)


def count_cases(n: int, strategy, check) -> tuple[int, list]:
    """Run ``check`` on ``n`` generated cases; return (cases seen, failing cases)."""
    seen, failures = [0], []

    @settings(
        max_examples=n,
        database=None,
        derandomize=True,
        deadline=None,
        phases=[Phase.generate],
        suppress_health_check=list(HealthCheck),
    )
    @given(strategy)
    def inner(case):
        seen[0] += 1
        if not check(case):
            failures.append(case)

    inner()
    return seen[0], failures


# -- 1. two views of the employee file ---------------------------------------------


def test_criterion_01_employee_views(tmp_path):
    start = time.perf_counter()
    rng = random.Random(11)
    owner, treasurer = hom_keygen(rng), hom_keygen(rng)
    data, truth, policy = generate("employees", 100, DatasetKeys(owner=owner.pk, owner_name="Alice"), seed=11)
    store = MetadataStore()
    tokens = {"a": "Alice", "t": "tina", "u": "uma"}
    server = make_server(
        GatewayConfig(listen="127.0.0.1:0", tokens=tokens, test_mode=True), store=store, backend=FileBackend(str(tmp_path))
    ).start_background()
    try:
        publish_key(store, "Alice", "hom", owner.pk.to_bytes())
        set_label(store, "tina", "treasurer")
        set_label(store, "uma", "user")
        alice = GatewayClient(server.url, "a")
        alice.put_object("/acct/hr/employees.json", data)
        alice.put_policy(json.dumps(policy))
        clock = {"X-Test-Clock": WEEKDAY.isoformat()}
        token = pre_token(owner, treasurer.pk).to_b64()

        raw = [dict(v) for _, v in json.loads(data, object_pairs_hook=list)]
        expected = [{k: v for k, v in r.items() if k != "salary"} for r in raw]

        user_view = GatewayClient(server.url, "u").get_object("/acct/hr/employees.json", headers=clock).body
        user_pairs = json.loads(user_view, object_pairs_hook=list)
        user_ok = '"salary"' not in user_view.decode() and [dict(v) for k, v in user_pairs if k == "employee"] == expected

        tina_view = GatewayClient(server.url, "t").get_object("/acct/hr/employees.json", headers={**clock, "X-ReEnc-Token": token}).body
        tina_pairs = json.loads(tina_view, object_pairs_hook=list)
        total = dict(dict(tina_pairs)["average_salary"])
        decrypted = pre_decrypt(treasurer, HomCiphertext.from_b64(total["sum"]))
        average = Fraction(decrypted, total["count"])
        tina_ok = (
            [dict(v) for k, v in tina_pairs if k == "employee"] == expected
            and '"salary"' not in tina_view.decode()
            and average == Fraction(truth["average"])
        )
        with pytest.raises(HttpError):
            GatewayClient(server.url, "t").get_object("/acct/hr/employees.json", headers={"X-Test-Clock": SATURDAY.isoformat()})
    finally:
        server.stop()
    elapsed = time.perf_counter() - start
    ok = user_ok and tina_ok and elapsed < 10
    verdict(1, ok, f"user view salary-free={user_ok}, treasurer average {average} vs sidecar {truth['average']}, {elapsed:.2f}s (< 10 s)")
    assert ok


# -- 2. homomorphic addition ----------------------------------------------------------


def test_criterion_02_homomorphic_sum():
    rng = random.Random(22)
    key = hom_keygen(rng)
    start = time.perf_counter()
    failures = 0
    for _ in range(1000):
        m1, m2 = rng.randrange(1 << 31), rng.randrange(1 << 31)
        c = hom_add(hom_encrypt(key.pk, m1, rng=rng), hom_encrypt(key.pk, m2, rng=rng))
        failures += hom_decrypt(key, c, bound=1 << 32) != m1 + m2
    elapsed = time.perf_counter() - start
    ok = failures == 0 and elapsed < 60
    verdict(2, ok, f"1000 pairs in [0, 2^31), {failures} failures, {elapsed:.1f}s (< 60 s)")
    assert ok


# -- 3. proxy re-encryption -----------------------------------------------------------


def test_criterion_03_proxy_reencryption():
    rng = random.Random(33)
    owner, receiver, third = hom_keygen(rng), hom_keygen(rng), hom_keygen(rng)
    token = pre_token(owner, receiver.pk)
    round_trip_failures = 0
    for _ in range(100):
        m = rng.randrange(1 << 31)
        round_trip_failures += pre_decrypt(receiver, pre_reencrypt(token, hom_encrypt(owner.pk, m, rng=rng)), bound=1 << 32) != m

    first_level = pre_reencrypt(token, hom_encrypt(owner.pk, 7, rng=rng))
    onward = pre_token(receiver, third.pk)
    try:
        pre_reencrypt(onward, first_level)
        single_hop = False
    except LevelMismatch:
        single_hop = True

    # neither applying the receiver's onward token to the owner's ciphertext
    # nor splicing the two tokens lets the third party decrypt
    c = hom_encrypt(owner.pk, 7, rng=rng)
    try:
        pre_reencrypt(onward, c)
        direct_rejected = False
    except KeyMismatch:
        direct_rejected = True
    spliced_rejected = True
    for element in (onward.element, token.element + onward.element):
        try:
            pre_decrypt(third, pre_reencrypt(ReEncToken(owner.key_id, third.key_id, element), c), bound=1 << 16)
            spliced_rejected = False
        except DiscreteLogNotFound:
            pass
    ok = round_trip_failures == 0 and single_hop and direct_rejected and spliced_rejected
    verdict(
        3,
        ok,
        f"100 round trips, {round_trip_failures} failures; second hop rejected={single_hop}; "
        f"chained tokens rejected={direct_rejected and spliced_rejected}",
    )
    assert ok


# -- 4. keyword search --------------------------------------------------------------


def test_criterion_04_keyword_search():
    rng = random.Random(44)
    keys = [peks_keygen(rng) for _ in range(5)]
    words = [f"kw{i}" for i in range(14)]
    bad_counts = []
    for n in range(1, 6):
        for ell in range(1, 6):
            ct = peks_encrypt([k.pk for k in keys[:n]], words[:ell], rng=rng)
            if ct.components != n + ell + 1:
                bad_counts.append((n, ell, ct.components))

    searcher = keys[0]
    records = [set(rng.sample(words, rng.randrange(1, 6))) for _ in range(50)]
    cts = [peks_encrypt([searcher.pk, keys[1].pk], sorted(r), rng=rng) for r in records]
    traps = {w: peks_trapdoor(searcher, [w], rng) for w in words}
    mismatches = sum(peks_test(searcher.pk, traps[w], ct) != (w in r) for ct, r in zip(cts, records) for w in words)
    ok = not bad_counts and mismatches == 0
    verdict(4, ok, f"component count n+l+1 for 25 (n, l) pairs, {len(bad_counts)} wrong; 50x14 grid, {mismatches} mismatches")
    assert ok


# -- 5. label-based filtering vs the materialize-and-filter oracle ---------------------


LABELS = ["public", "salary", "medical"]
ULABELS = ["staff", "HR manager", "auditor"]


@st.composite
def clac_cases(draw):
    tree = draw(container_trees)
    markers = draw(st.lists(st.tuples(expressions_for(tree), st.sampled_from(LABELS)), min_size=1, max_size=4))
    rules = draw(st.sets(st.tuples(st.sampled_from(ULABELS), st.sampled_from(LABELS)), min_size=1, max_size=6))
    ulabel = draw(st.sampled_from(ULABELS + [None]))
    return tree, markers, rules, ulabel


def clac_agrees(case) -> bool:
    tree, markers, rules, ulabel = case
    data = render(tree).encode()
    inputs = [{"Predicate": p, "olabel": o} for p, o in markers] + [{"ulabel": u, "olabel": o} for u, o in sorted(rules)]
    spec = compile_event_spec("JSONPathMarkerEvent", [{"Predicate": p, "olabel": o} for p, o in markers])
    ctx = UdfContext(Requester("r", ulabel)).for_step("s1", tuple(inputs))
    udf = Clac()
    udf.setup(ctx)
    builder = JsonStreamBuilder()
    builder.install(spec, udf, ctx)
    out = bytearray()
    builder.run(data, out.extend)
    return plain(parse(bytes(out))) == plain(clac_filter(parse(data), markers, rules, ulabel))


def test_criterion_05_clac_oracle():
    seen, failures = count_cases(500, clac_cases(), clac_agrees)
    ok = seen >= 500 and not failures
    verdict(5, ok, f"{seen} random (document, labeling, rules, requester) cases, {len(failures)} mismatches")
    assert ok, failures[:3]


# -- 6. streamed events vs the tree walk --------------------------------------------


@st.composite
def event_cases(draw):
    tree, text = draw(documents())
    return text, draw(expressions_for(tree)), draw(chunkings(text))


class _Collect:
    def __init__(self):
        self.events = []

    def update(self, event, ctx):
        self.events.append((event.path, plain(parse(event.raw))))


def events_agree(case) -> bool:
    text, expr, chunks = case
    rec = _Collect()
    builder = JsonStreamBuilder()
    install(builder, compile_event_spec("JSONPathEvent", [{"Predicate": expr}]), rec)
    run_stream(builder, chunks, lambda _: None)
    return rec.events == [(p, plain(v)) for p, v in matching_paths(parse(text), expr)]


def test_criterion_06_event_oracle():
    seen, failures = count_cases(1000, event_cases(), events_agree)
    ok = seen >= 1000 and not failures
    verdict(6, ok, f"{seen} random (document, expression) pairs, {len(failures)} mismatches")
    assert ok, failures[:3]


# -- gateway in a separate process ------------------------------------------------------


@pytest.fixture(scope="module")
def remote_gateway(tmp_path_factory):
    root = tmp_path_factory.mktemp("remote")
    config = root / "gateway.json"
    config.write_text(
        json.dumps(
            {
                "listen": "127.0.0.1:0",
                "backend_root": str(root / "objects"),
                "tokens": {"bench": {"user": "bench", "admin": True}},
            }
        )
    )
    proc = subprocess.Popen(
        [sys.executable, "-m", "objguard", "serve", "--config", str(config)],
        stdout=subprocess.PIPE,
        stderr=subprocess.DEVNULL,
        text=True,
    )
    line = proc.stdout.readline()
    assert line.startswith("listening on "), line
    url = line.split()[-1]
    try:
        yield url
    finally:
        proc.terminate()
        proc.wait(10)


# -- 7. chain length ----------------------------------------------------------------------


def test_criterion_07_chain_overhead(remote_gateway):
    reps = bench.bench_chain(remote_gateway, "bench", size=MB, trials=200, lengths=[1, 10], warmup=3)
    one, ten = (r.summary["mean"] for r in reps)
    ratio = ten / one
    ok = all(r.summary["n"] >= 200 for r in reps) and ratio <= 1.5
    verdict(7, ok, f"1 MB, 200 trials: length 1 {one:.1f} ms, length 10 {ten:.1f} ms, ratio {ratio:.2f} (<= 1.5)")
    assert ok


# -- 8. NOOP time to first byte ------------------------------------------------------------


def test_criterion_08_noop_ttfb(remote_gateway):
    reps = bench.bench_ttfb(remote_gateway, "bench", sizes=[MB], trials=500, warmup=5)
    raw, noop = reps
    delta = noop.notes["overhead_ms"]
    ok = raw.summary["n"] >= 500 and noop.summary["n"] >= 500 and delta < 50
    verdict(
        8,
        ok,
        f"1 MB, 500 trials: raw {raw.summary['mean']:.2f} ms, noop {noop.summary['mean']:.2f} ms, "
        f"delta {delta:.2f} ms (< 50; reference {noop.notes['reference_overhead_ms']} ms)",
    )
    assert ok


# -- 9. bandwidth-capped use cases ----------------------------------------------------------


def test_criterion_09_bandwidth_usecases(remote_gateway):
    covid = bench.bench_usecase(remote_gateway, "bench", profile="4g", usecase="covid", trials=3, records=130, seed=9)
    raw, view = covid
    size = view.notes["raw_bytes"]
    speedup = raw.summary["mean"] / view.summary["mean"]
    adult = bench.bench_usecase(remote_gateway, "bench", profile="lan", usecase="adult", trials=3, records=2000, seed=9)
    adult_ratio = adult[1].summary["mean"] / adult[0].summary["mean"]
    ok = size >= 10 * 1_000_000 and speedup >= 20
    verdict(
        9,
        ok,
        f"covid {size / 1e6:.1f} MB at 28.9 Mbps: raw {raw.summary['mean']:.0f} ms, view {view.summary['mean']:.0f} ms, "
        f"speedup {speedup:.1f}x (>= 20; reference 72.1x); adult at LAN: view/raw {adult_ratio:.1f}x (reported only, reference 3.3x)",
    )
    assert ok


# -- 10. crypto micro-benchmark --------------------------------------------------------------


def test_criterion_10_crypto_bench():
    reps = bench.bench_crypto(trials=200, seed=10)
    parts = [f"{r.label} {r.notes['ops_per_sec']} ops/s {r.summary['mean']:.3f} ms (ref {r.notes['reference']})" for r in reps]
    ok = [r.label for r in reps] == ["SUM", "PRE", "SEARCH"] and all(r.summary["n"] == 200 for r in reps)
    verdict(10, ok, "; ".join(parts))
    assert ok


# -- 11. fail-closed fault injection ----------------------------------------------------------


def test_criterion_11_fail_closed(tmp_path, hom_keys, employee_policy_text):
    leaks, denied, kinds = [], 0, set()
    for seed in range(1000):
        outcome = run_trial(seed, tmp_path / str(seed), hom_keys, employee_policy_text, WEEKDAY)
        kinds.add(outcome.fault)
        denied += outcome.denied
        if outcome.leaked:
            leaks.append((seed, outcome.fault))
    ok = not leaks
    verdict(11, ok, f"1000 injections over {len(kinds)} fault kinds, {denied} denied, {len(leaks)} leaks")
    assert ok, leaks[:5]


# -- 12. bounded memory -----------------------------------------------------------------------


_MEMORY_PROBE = textwrap.dedent(
    """
    import json, sys, time
    from objguard.backend import FileBackend
    from objguard.engine import EnforcementRequest, MetadataStore, PolicyCache, enforce_get, put_policy
    from objguard.policy import ObjectPath

    root = sys.argv[1]
    store, cache = MetadataStore(), PolicyCache()
    policy = {
        "Id": "noop.big",
        "Object": "v1/{account}/{container}/big.json",
        "Action": {"StartAt": "S1", "Steps": {"S1": {
            "Id": "NOOP",
            "EventType": {"Type": "JSONPathEvent", "Input": [{"Predicate": "$.records.*.value"}]},
            "Next": "End",
        }}},
    }
    put_policy(store, cache, json.dumps(policy))
    start = time.perf_counter()
    view = enforce_get(EnforcementRequest(ObjectPath.parse("/acct/cont/big.json"), "u"), FileBackend(root), store, cache)
    total = sum(len(chunk) for chunk in view.stream)
    print(json.dumps({
        "bytes_out": total,
        "events": view.stats.events_emitted,
        "seconds": time.perf_counter() - start,
        # VmHWM is this address space's peak; ru_maxrss would carry over the parent's peak across exec
        "maxrss_kb": next(int(l.split()[1]) for l in open("/proc/self/status") if l.startswith("VmHWM")),
        "crypto_loaded": any("mcl" in m for m in sys.modules),
    }))
    """
)


def _write_big_object(path: Path, size: int) -> int:
    rng = random.Random(12)
    pool = ["".join(rng.choice("abcdefghij") for _ in range(40)) for _ in range(997)]
    path.parent.mkdir(parents=True, exist_ok=True)
    written = 0
    with open(path, "wb") as fh:
        fh.write(b'{"records":[')
        written += 12
        i = 0
        batch = []
        while written < size:
            rec = f'{{"id":{i},"name":"record-{i}","value":"{pool[i % 997]}"}}'
            if i:
                rec = "," + rec
            batch.append(rec)
            written += len(rec)
            i += 1
            if len(batch) == 10_000:
                fh.write("".join(batch).encode())
                batch.clear()
        fh.write(("".join(batch) + "]}").encode())
        written += 2
    return written


def test_criterion_12_bounded_memory(tmp_path):
    size = _write_big_object(tmp_path / "acct" / "cont" / "big.json", 100 * MB)
    env = dict(os.environ, PYTHONPATH=str(ROOT / "src") + os.pathsep + os.environ.get("PYTHONPATH", ""))
    proc = subprocess.run([sys.executable, "-c", _MEMORY_PROBE, str(tmp_path)], capture_output=True, text=True, env=env, timeout=900)
    assert proc.returncode == 0, proc.stderr
    result = json.loads(proc.stdout)
    rss_mb = result["maxrss_kb"] / 1024
    ok = result["bytes_out"] == size and result["events"] > 0 and rss_mb < 64
    verdict(
        12,
        ok,
        f"{size / MB:.0f} MB through NOOP in {result['seconds']:.1f}s, output identical in length, peak RSS {rss_mb:.1f} MB (< 64)",
    )
    assert ok
