"""Desk-scale benchmarks against a running gateway, plus a crypto micro-bench.

* ``ttfb``: time to first byte of raw reads vs NOOP-policy reads.
* ``chain``: full-read latency for NOOP chains of length 0 (no policy) to N.
* ``usecase``: bandwidth-capped download time of a raw dataset vs its view.
* ``crypto``: SUM / PRE / SEARCH primitives in isolation.

Bandwidth caps are enforced on the client with a token bucket, checked in
chunks of at most 64 KB.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
import random
import statistics
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

from objguard.client import GatewayClient

logger = logging.getLogger(__name__)

PROFILES_MBPS = {"4g": 28.9, "fiber": 55.98, "lan": 887.0}
DEFAULT_TTFB_SIZES = (10 * 1024, 100 * 1024, 1024 * 1024)
CHUNK = 64 * 1024

# reference figures reported for the original system, printed next to ours
REFERENCE_NOOP_OVERHEAD_MS = 9.0
REFERENCE_SPEEDUP = {("covid", "4g"): 72.1}
REFERENCE_SLOWDOWN_ADULT = 3.3
REFERENCE_CRYPTO = {
    "SUM": (616.0, 1.62),
    "PRE": (137.0, 7.29),
    "SEARCH": (166.0, 6.02),
}

REPORT_HEADER = ("scenario", "label", "trial", "latency_ms", "bytes")


# -- rate limiting ---------------------------------------------------------


class RateLimiter:
    """Blocking token bucket in bytes, filled at ``rate_bps / 8`` bytes per second.

    The bucket starts empty and holds at most ``capacity`` bytes, so the
    bytes released over any window of ``w`` seconds never exceed
    ``rate * w + capacity``. The default capacity is the smaller of one chunk
    and 5% of a second's worth of data.
    """

    def __init__(self, rate_bps: float, capacity: int | None = None, clock: Callable[[], float] = time.monotonic, sleep: Callable[[float], None] = time.sleep) -> None:
        if rate_bps <= 0:
            raise ValueError("rate must be positive")
        self.rate = rate_bps / 8.0
        self.capacity = max(1, int(capacity if capacity is not None else min(CHUNK, 0.05 * self.rate)))
        self._clock = clock
        self._sleep = sleep
        self._tokens = 0.0
        self._stamp = clock()
        self._lock = threading.Lock()

    def _refill(self) -> None:
        now = self._clock()
        self._tokens = min(self.capacity, self._tokens + (now - self._stamp) * self.rate)
        self._stamp = now

    def consume(self, nbytes: int) -> None:
        """Block until ``nbytes`` may be delivered."""
        remaining = nbytes
        while remaining > 0:
            piece = min(remaining, self.capacity)
            with self._lock:
                while True:
                    self._refill()
                    # slack absorbs float rounding when the clock step is tiny
                    if self._tokens + 1e-6 >= piece:
                        self._tokens = max(0.0, self._tokens - piece)
                        break
                    self._sleep((piece - self._tokens) / self.rate)
            remaining -= piece

    __call__ = consume


# -- reports ---------------------------------------------------------------


@dataclass
class BenchReport:
    scenario: str
    label: str
    latencies_ms: list[float] = field(default_factory=list)
    bytes_transferred: list[int] = field(default_factory=list)
    notes: dict[str, Any] = field(default_factory=dict)

    def add(self, latency_ms: float, nbytes: int) -> None:
        self.latencies_ms.append(latency_ms)
        self.bytes_transferred.append(nbytes)

    @property
    def summary(self) -> dict[str, float]:
        xs = sorted(self.latencies_ms)
        if not xs:
            return {"n": 0, "mean": math.nan, "p50": math.nan, "p95": math.nan, "stddev": math.nan}
        return {
            "n": len(xs),
            "mean": statistics.fmean(xs),
            "p50": percentile(xs, 50),
            "p95": percentile(xs, 95),
            "stddev": statistics.stdev(xs) if len(xs) > 1 else 0.0,
        }

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "label": self.label,
            "summary": self.summary,
            "latencies_ms": self.latencies_ms,
            "bytes": self.bytes_transferred,
            "notes": self.notes,
        }


def percentile(sorted_xs: Sequence[float], q: float) -> float:
    """Linear-interpolated percentile of an already sorted sample."""
    if not sorted_xs:
        return math.nan
    k = (len(sorted_xs) - 1) * q / 100.0
    lo = math.floor(k)
    hi = math.ceil(k)
    if lo == hi:
        return float(sorted_xs[lo])
    return sorted_xs[lo] + (sorted_xs[hi] - sorted_xs[lo]) * (k - lo)


def write_reports(reports: Sequence[BenchReport], path: str) -> None:
    """One CSV row per trial; a JSON summary is written next to it."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(REPORT_HEADER)
        for rep in reports:
            for i, (lat, nbytes) in enumerate(zip(rep.latencies_ms, rep.bytes_transferred)):
                writer.writerow((rep.scenario, rep.label, i, f"{lat:.4f}", nbytes))
    with open(os.path.splitext(path)[0] + ".summary.json", "w", encoding="utf-8") as fh:
        json.dump([{k: v for k, v in r.to_dict().items() if k not in ("latencies_ms", "bytes")} for r in reports], fh, indent=1)


def format_reports(reports: Sequence[BenchReport]) -> str:
    lines = [f"{'scenario':<10} {'label':<28} {'n':>5} {'mean ms':>10} {'p50 ms':>10} {'p95 ms':>10} {'sd ms':>9}"]
    for r in reports:
        s = r.summary
        lines.append(f"{r.scenario:<10} {r.label:<28} {s['n']:>5} {s['mean']:>10.3f} {s['p50']:>10.3f} {s['p95']:>10.3f} {s['stddev']:>9.3f}")
        for k, v in r.notes.items():
            lines.append(f"{'':<10} {k}: {v}")
    return "\n".join(lines)


# -- workload helpers --------------------------------------------------------


def bench_object(size: int, seed: int = 0) -> bytes:
    """A JSON document of about ``size`` bytes: ``{"records": [{id, name, value}, ...]}``."""
    rng = random.Random(seed)
    parts = []
    total = len('{"records":[]}')
    i = 0
    while total < size:
        rec = json.dumps({"id": i, "name": f"record-{i}", "value": "".join(rng.choice("abcdefghij") for _ in range(40))}, separators=(",", ":"))
        parts.append(rec)
        total += len(rec) + 1
        i += 1
    return ('{"records":[' + ",".join(parts) + "]}").encode()


NOOP_PREDICATE = "$.records.*.value"


def _noop_policy(object_name: str, length: int) -> str:
    from objguard.datasets import noop_policy

    return json.dumps(noop_policy(object_name, length, NOOP_PREDICATE, policy_id=f"bench.{object_name}"))


def _run_trials(
    target: str,
    token: str,
    trials: int,
    clients: int,
    once: Callable[[GatewayClient], tuple[float, int]],
    scenario: str,
    label: str,
) -> list[BenchReport]:
    """``once(client) -> (latency_ms, bytes)``; per-client reports plus an overall one when clients > 1."""
    clients = max(1, clients)
    per_client = [BenchReport(scenario, f"{label} client={c}" if clients > 1 else label) for c in range(clients)]

    def worker(c: int) -> None:
        with GatewayClient(target, token) as client:
            for t in range(c, trials, clients):
                per_client[c].add(*once(client))

    if clients == 1:
        worker(0)
        return per_client
    with ThreadPoolExecutor(clients) as pool:
        list(pool.map(worker, range(clients)))
    overall = BenchReport(scenario, f"{label} overall")
    for rep in per_client:
        for lat, nbytes in zip(rep.latencies_ms, rep.bytes_transferred):
            overall.add(lat, nbytes)
    return per_client + [overall]


# -- benchmarks --------------------------------------------------------------


def bench_ttfb(
    target: str,
    token: str,
    sizes: Sequence[int] = DEFAULT_TTFB_SIZES,
    trials: int = 100,
    policies: Sequence[str] = ("none", "noop"),
    clients: int = 1,
    account: str = "bench",
    container: str = "ttfb",
    warmup: int = 3,
) -> list[BenchReport]:
    setup = GatewayClient(target, token)
    reports: list[BenchReport] = []
    for size in sizes:
        body = bench_object(size)
        raw_name = f"raw-{size}.json"
        noop_name = f"noop-{size}.json"
        setup.put_object(f"/{account}/{container}/{raw_name}", body)
        setup.put_object(f"/{account}/{container}/{noop_name}", body)
        setup.put_policy(_noop_policy(noop_name, 1))
        by_policy = {}
        for policy in policies:
            name = raw_name if policy == "none" else noop_name
            path = f"/{account}/{container}/{name}"

            def once(client: GatewayClient, path: str = path) -> tuple[float, int]:
                d = client.get_object(path, keep_body=False)
                return d.ttfb * 1000.0, d.size

            with GatewayClient(target, token) as warm:
                for _ in range(warmup):
                    once(warm)
            reps = _run_trials(target, token, trials, clients, once, "ttfb", f"{policy} {size}B")
            by_policy[policy] = reps[-1]
            reports.extend(reps)
        if "none" in by_policy and "noop" in by_policy:
            delta = by_policy["noop"].summary["mean"] - by_policy["none"].summary["mean"]
            by_policy["noop"].notes["overhead_ms"] = round(delta, 3)
            by_policy["noop"].notes["reference_overhead_ms"] = REFERENCE_NOOP_OVERHEAD_MS
    setup.close()
    return reports


def bench_chain(
    target: str,
    token: str,
    max_len: int = 10,
    size: int = 1024 * 1024,
    trials: int = 20,
    clients: int = 1,
    lengths: Sequence[int] | None = None,
    account: str = "bench",
    container: str = "chain",
    warmup: int = 2,
) -> list[BenchReport]:
    """Full-read latency per NOOP chain length; length 0 is the raw baseline."""
    setup = GatewayClient(target, token)
    body = bench_object(size)
    lengths = list(lengths) if lengths is not None else list(range(0, max_len + 1))
    paths = {}
    for n in lengths:
        name = f"chain-{n}.json"
        setup.put_object(f"/{account}/{container}/{name}", body)
        if n > 0:
            setup.put_policy(_noop_policy(name, n))
        paths[n] = f"/{account}/{container}/{name}"
    setup.close()
    reports = []
    for n in lengths:
        def once(client: GatewayClient, path: str = paths[n]) -> tuple[float, int]:
            d = client.get_object(path, keep_body=False)
            return d.elapsed * 1000.0, d.size

        with GatewayClient(target, token) as warm:
            for _ in range(warmup):
                once(warm)
        reports.extend(_run_trials(target, token, trials, clients, once, "chain", f"length={n}"))
    return reports


@dataclass
class UsecaseSetup:
    raw_path: str
    view_path: str
    headers: dict[str, str]
    raw_size: int


def prepare_usecase(target: str, token: str, usecase: str, records: int, seed: int = 0, account: str = "bench", container: str = "usecase") -> UsecaseSetup:
    """Generate keys and a dataset, upload it twice (raw copy and policy-protected
    copy) and grant the calling user the label the view needs."""
    from objguard.crypto.hom import hom_keygen, pre_token
    from objguard.crypto.peks import peks_keygen, peks_trapdoor
    from objguard.datasets import DatasetKeys, OCCUPATIONS, default_name, generate

    rng = random.Random(seed)
    client = GatewayClient(target, token)
    owner = hom_keygen(rng)
    me = hom_keygen(rng)
    search = peks_keygen(rng)
    keys = DatasetKeys(owner=owner.pk, searchers=(search.pk,), owner_name="bench-owner")
    data, truth, policy = generate(usecase, records, keys, seed)
    name = default_name(usecase)
    raw_name = "raw-" + name
    client.put_object(f"/{account}/{container}/{name}", data)
    client.put_object(f"/{account}/{container}/{raw_name}", data)
    for key in ("bench-owner/keys/hom", "keys/bench-owner/hom"):
        client.put_meta(key, owner.pk.to_bytes())
    client.put_policy(json.dumps(policy))
    principal = client.whoami()
    headers: dict[str, str] = {}
    if usecase == "covid":
        client.put_meta(f"labels/{principal}", "state coordinator")
        headers["X-ReEnc-Token"] = pre_token(owner, me.pk).to_b64()
    elif usecase == "adult":
        client.put_meta(f"labels/{principal}", "HR manager")
        for key in (f"keys/{principal}/peks", f"{principal}/keys/peks"):
            client.put_meta(key, search.pk.to_bytes())
        headers["X-Search-Trapdoor"] = peks_trapdoor(search, [OCCUPATIONS[3]], rng).to_b64()
    client.close()
    return UsecaseSetup(f"/{account}/{container}/{raw_name}", f"/{account}/{container}/{name}", headers, len(data))


def bench_usecase(
    target: str,
    token: str,
    profile: str = "4g",
    usecase: str = "covid",
    trials: int = 3,
    records: int | None = None,
    seed: int = 0,
    setup: UsecaseSetup | None = None,
    warmup: int = 1,
) -> list[BenchReport]:
    if profile not in PROFILES_MBPS:
        raise ValueError(f"unknown profile {profile!r}; expected one of {sorted(PROFILES_MBPS)}")
    if records is None:
        records = 130 if usecase == "covid" else 2000
    setup = setup or prepare_usecase(target, token, usecase, records, seed)
    rate = PROFILES_MBPS[profile] * 1e6
    reports = []
    with GatewayClient(target, token) as warm:
        # unthrottled reads load the policy and the page cache
        for _ in range(warmup):
            warm.get_object(setup.raw_path, keep_body=False)
            warm.get_object(setup.view_path, headers=setup.headers, keep_body=False)
    for label, path, headers in (("raw", setup.raw_path, {}), ("view", setup.view_path, setup.headers)):
        def once(client: GatewayClient, path: str = path, headers: dict = headers) -> tuple[float, int]:
            limiter = RateLimiter(rate)
            d = client.get_object(path, headers=headers, keep_body=False, throttle=limiter)
            return d.elapsed * 1000.0, d.size

        reports.extend(_run_trials(target, token, trials, 1, once, "usecase", f"{usecase} {profile} {label}"))
    raw, view = reports[0], reports[1]
    ratio = raw.summary["mean"] / view.summary["mean"]
    if ratio >= 1:
        view.notes["speedup"] = round(ratio, 2)
    else:
        view.notes["slowdown"] = round(1 / ratio, 2)
    view.notes["raw_bytes"] = setup.raw_size
    ref = REFERENCE_SPEEDUP.get((usecase, profile))
    if ref is not None:
        view.notes["reference_speedup"] = ref
    if usecase == "adult":
        view.notes["reference_worst_slowdown"] = REFERENCE_SLOWDOWN_ADULT
    return reports


def bench_crypto(trials: int = 200, seed: int = 0) -> list[BenchReport]:
    """Time hom_add (SUM), pre_reencrypt (PRE) and peks_test (SEARCH)."""
    from objguard.crypto.hom import hom_add, hom_encrypt, hom_keygen, pre_reencrypt, pre_token
    from objguard.crypto.peks import peks_encrypt, peks_keygen, peks_test, peks_trapdoor

    rng = random.Random(seed)
    owner = hom_keygen(rng)
    receiver = hom_keygen(rng)
    token = pre_token(owner, receiver.pk)
    cts = [hom_encrypt(owner.pk, rng.randrange(1 << 20), rng=rng) for _ in range(16)]
    skey = peks_keygen(rng)
    sct = peks_encrypt([skey.pk], ["Sales"], rng=rng)
    trap = peks_trapdoor(skey, ["Sales"], rng)

    def timed(fn: Callable[[int], Any]) -> list[float]:
        out = []
        for i in range(trials):
            t = time.perf_counter()
            fn(i)
            out.append((time.perf_counter() - t) * 1000.0)
        return out

    reports = []
    for name, fn in (
        ("SUM", lambda i: hom_add(cts[i % 16], cts[(i + 1) % 16])),
        ("PRE", lambda i: pre_reencrypt(token, cts[i % 16])),
        ("SEARCH", lambda i: peks_test(skey.pk, trap, sct)),
    ):
        rep = BenchReport("crypto", name)
        for lat in timed(fn):
            rep.add(lat, 0)
        mean = rep.summary["mean"]
        rep.notes["ops_per_sec"] = round(1000.0 / mean, 1) if mean > 0 else math.inf
        ref_ops, ref_ms = REFERENCE_CRYPTO[name]
        rep.notes["reference"] = f"{ref_ops:g} ops/s, {ref_ms:g} ms"
        reports.append(rep)
    return reports


__all__ = [
    "BenchReport",
    "DEFAULT_TTFB_SIZES",
    "PROFILES_MBPS",
    "RateLimiter",
    "UsecaseSetup",
    "bench_chain",
    "bench_crypto",
    "bench_object",
    "bench_ttfb",
    "bench_usecase",
    "format_reports",
    "percentile",
    "prepare_usecase",
    "write_reports",
]
