from __future__ import annotations

import csv
import json
import math
import time

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from objguard.backend import FileBackend
from objguard.bench import (
    BenchReport,
    RateLimiter,
    bench_chain,
    bench_crypto,
    bench_object,
    bench_ttfb,
    format_reports,
    percentile,
    write_reports,
)
from objguard.engine import MetadataStore
from objguard.gateway import GatewayConfig, make_server


class FakeClock:
    def __init__(self):
        self.now = 0.0

    def __call__(self):
        return self.now

    def sleep(self, dt):
        self.now += dt


def delivery_times(rate_bps, sizes, capacity=None):
    clock = FakeClock()
    limiter = RateLimiter(rate_bps, capacity=capacity, clock=clock, sleep=clock.sleep)
    out = []
    for n in sizes:
        limiter.consume(n)
        out.append((clock.now, n))
    return out


def test_rate_limiter_examples():
    # 8 kbit/s is 1000 bytes per second; the bucket starts empty
    times = delivery_times(8000, [500, 500, 1000], capacity=1000)
    assert [round(t, 6) for t, _ in times] == [0.5, 1.0, 2.0]


@given(
    st.sampled_from([28.9e6, 55.98e6, 887e6, 1e5]),
    st.lists(st.integers(1, 200_000), min_size=1, max_size=200),
)
def test_rate_limiter_window_bound(rate, sizes):
    times = delivery_times(rate, sizes)
    bytes_per_sec = rate / 8
    cap = min(64 * 1024, 0.05 * bytes_per_sec)
    # bytes released in [t0, t1] never exceed rate * (t1 - t0) + capacity
    cumulative = np.cumsum([n for _, n in times])
    stamps = np.array([t for t, _ in times])
    for i in range(len(times)):
        for j in range(i, len(times)):
            released = cumulative[j] - (cumulative[i - 1] if i else 0)
            assert released <= bytes_per_sec * (stamps[j] - (stamps[i - 1] if i else 0)) + cap + 1e-3
    total_time = stamps[-1]
    if total_time >= 1.0:
        assert cumulative[-1] / total_time <= bytes_per_sec * 1.05


def test_rate_limiter_wall_clock():
    rate = 28.9e6
    limiter = RateLimiter(rate)
    start = time.monotonic()
    sent = 0
    while time.monotonic() - start < 1.5:
        limiter.consume(64 * 1024)
        sent += 64 * 1024
    elapsed = time.monotonic() - start
    measured = sent * 8 / elapsed
    assert measured <= rate * 1.05
    assert measured >= rate * 0.9


def test_rate_limiter_rejects_nonpositive_rate():
    with pytest.raises(ValueError):
        RateLimiter(0)


@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=50), st.floats(0, 100))
def test_percentile_matches_numpy(xs, q):
    xs = sorted(xs)
    assert math.isclose(percentile(xs, q), float(np.percentile(xs, q)), rel_tol=1e-9, abs_tol=1e-6)


def test_report_summary_and_csv(tmp_path):
    rep = BenchReport("ttfb", "noop 10B")
    for i in range(100):
        rep.add(float(i), 10)
    assert rep.summary["n"] == 100
    assert rep.summary["mean"] == 49.5
    assert rep.summary["p50"] == 49.5
    path = tmp_path / "r.csv"
    write_reports([rep], str(path))
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["scenario", "label", "trial", "latency_ms", "bytes"]
    assert len(rows) == 101 and rows[1][:3] == ["ttfb", "noop 10B", "0"]
    summary = json.loads((tmp_path / "r.summary.json").read_text())
    assert summary[0]["summary"]["n"] == 100
    assert "noop 10B" in format_reports([rep])


def test_empty_report_summary():
    assert BenchReport("x", "y").summary["n"] == 0


@pytest.mark.parametrize("size", [10 * 1024, 100 * 1024, 1024 * 1024])
def test_bench_object_size_and_determinism(size):
    data = bench_object(size, seed=1)
    assert size <= len(data) < size + 200
    assert data == bench_object(size, seed=1)
    assert json.loads(data)["records"][0]["id"] == 0


def test_bench_crypto_reports():
    reps = bench_crypto(trials=5)
    assert [r.label for r in reps] == ["SUM", "PRE", "SEARCH"]
    assert all(r.summary["n"] == 5 and r.notes["ops_per_sec"] > 0 and "reference" in r.notes for r in reps)


@pytest.fixture
def live_gateway(tmp_path):
    config = GatewayConfig(listen="127.0.0.1:0", tokens={"t": {"user": "bench", "admin": True}})
    server = make_server(config, store=MetadataStore(), backend=FileBackend(str(tmp_path))).start_background()
    yield server
    server.stop()


def test_bench_ttfb_sample_counts(live_gateway):
    reps = bench_ttfb(live_gateway.url, "t", sizes=[10 * 1024], trials=7, warmup=1)
    assert [r.label for r in reps] == ["none 10240B", "noop 10240B"]
    assert all(r.summary["n"] == 7 for r in reps)
    assert "overhead_ms" in reps[1].notes


def test_bench_chain_rows(live_gateway):
    reps = bench_chain(live_gateway.url, "t", max_len=3, size=20_000, trials=3, warmup=0)
    assert [r.label for r in reps] == ["length=0", "length=1", "length=2", "length=3"]
    assert all(len(r.bytes_transferred) == 3 for r in reps)
    assert len(set(b for r in reps for b in r.bytes_transferred)) == 1


def test_bench_concurrent_clients(live_gateway):
    reps = bench_ttfb(live_gateway.url, "t", sizes=[10 * 1024], trials=6, clients=3, policies=("none",), warmup=0)
    assert [r.summary["n"] for r in reps] == [2, 2, 2, 6]
    assert reps[-1].label.endswith("overall")
