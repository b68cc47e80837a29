"""Built-in oracle suites behind the `verify` subcommand.

Each check recomputes an expected result through an independent route
(brute force, closed form, exhaustive enumeration) and compares.  These are
quick smoke versions of the full pytest suite, runnable from an installed
package with no test dependencies.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

from ..fixedpoint import Lfsr, QFormat, derive_lfsr_state, round_stochastic_raw
from ..mem import MemoryConfig, MemoryModel, MemRequest
from ..perf import AcceleratorConfig, simulate_network
from ..sparse import align, compress, compression_ratio, sparse_dot
from .fixtures import fixture
from .runconfig import RunConfig

Q416 = QFormat(4, 16)


def check_compression_ratio():
    raw = np.zeros(16, dtype=np.int64)
    raw[[0, 2, 5, 9, 11, 14]] = 3
    ratio = compression_ratio(compress(raw, Q416), 16)
    ok = abs(ratio - 256 / 112) < 1e-12
    return ok, f"16-element/6-nonzero ratio = {ratio:.4f} (want {256/112:.4f})"


def check_sparse_dense_equivalence():
    rng = np.random.default_rng(0xA11CE)
    failures = 0
    trials = 400
    for t in range(trials):
        n = int(rng.integers(1, 24))
        density = rng.choice([0.0, 0.25, 0.5, 0.75, 1.0])
        a = rng.integers(Q416.raw_min, Q416.raw_max, size=n, dtype=np.int64)
        w = rng.integers(Q416.raw_min, Q416.raw_max, size=n, dtype=np.int64)
        a[rng.random(n) >= density] = 0
        w[rng.random(n) >= density] = 0
        pair = align(compress(a, Q416), compress(w, Q416))
        lf = Lfsr(derive_lfsr_state(0xFEED, t))
        got, _ = sparse_dot(pair, "stochastic", lf)
        total = sum(int(x) * int(y) for x, y in zip(a, w))
        total = max(Q416.wide_raw_min, min(Q416.wide_raw_max, total))
        u, _ = Lfsr(derive_lfsr_state(0xFEED, t)).next_bits(16)
        floor = total >> 16
        want = floor + (1 if u < (total & 0xFFFF) else 0)
        want = max(Q416.raw_min, min(Q416.raw_max, want))
        failures += got.raw != want
    return failures == 0, f"{trials - failures}/{trials} pairs bit-exact"


def check_alignment_exhaustive():
    failures = 0
    cases = 0
    for length in range(1, 7):
        for a_bits, w_bits in itertools.product(range(1 << length), repeat=2):
            a = np.array([(3 + i) if (a_bits >> i) & 1 else 0 for i in range(length)],
                         dtype=np.int64)
            w = np.array([-(5 + i) if (w_bits >> i) & 1 else 0 for i in range(length)],
                         dtype=np.int64)
            pair = align(compress(a, Q416), compress(w, Q416))
            keep = (a != 0) & (w != 0)
            ok = (np.array_equal(pair.activations, a[keep])
                  and np.array_equal(pair.weights, w[keep]))
            failures += not ok
            cases += 1
    return failures == 0, f"{cases} mask pairs, {failures} mismatches"


def check_stochastic_rounding():
    n = 20000
    worst = 0.0
    for residue in (0x4000, 0x8000, 0xC000):
        raw = (1 << 32) + residue
        out, _ = round_stochastic_raw(np.full(n, raw, dtype=np.int64), Q416, seed=9)
        p = float((out == (1 << 16) + 1).mean())
        want = residue / 65536
        bound = 4 * math.sqrt(want * (1 - want) / n)
        worst = max(worst, abs(p - want) - bound)
    return worst <= 0, f"max excess over 4-sigma bound: {worst:.2e}"


def check_memory_decoupling():
    rng = np.random.default_rng(0xD0)
    cfg = MemoryConfig(capacity_bytes=1 << 22)
    for _ in range(10):
        trace = []
        t = 0.0
        for _ in range(80):
            t += float(rng.exponential(40.0))
            trace.append(MemRequest("read" if rng.random() < 0.5 else "write",
                                    int(rng.integers(0, 64)) * 1024, 1024, t))
        m_all = MemoryModel(cfg)
        want = {}
        for i, r in enumerate(trace):
            done = m_all.access(r)
            if r.kind == "read":
                want[i] = done
        m_ro = MemoryModel(cfg)
        for i, r in enumerate(trace):
            if r.kind == "read" and m_ro.access(r) != want[i]:
                return False, "a read completion moved after deleting writes"
        if m_all.refreshes or m_ro.refreshes:
            return False, "refresh events occurred"
    return True, "10 traces, all read completions unchanged; zero refreshes"


def check_report_identities():
    cfg = RunConfig()
    nd = fixture("lenet")
    report = simulate_network(nd.graph, cfg.accelerator, cfg.memory,
                              mode="infer", assumed_density=0.5)
    closure = abs(report.total_energy_pj - sum(report.energy_pj.values()))
    lat = abs(report.latency_s - report.total_cycles / report.clock_hz)
    pwr = abs(report.average_power_w - report.total_energy_pj * 1e-12 / report.latency_s)
    ok = closure < 1e-9 and lat < 1e-15 and pwr < 1e-9
    return ok, f"energy closure {closure:.2e}, latency {lat:.2e}, power {pwr:.2e}"


CHECKS = [
    ("compression-ratio", check_compression_ratio),
    ("sparse-dense-equivalence", check_sparse_dense_equivalence),
    ("alignment-exhaustive", check_alignment_exhaustive),
    ("stochastic-rounding", check_stochastic_rounding),
    ("memory-decoupling", check_memory_decoupling),
    ("report-identities", check_report_identities),
]


def run_verify(out=print) -> int:
    failed = 0
    for name, fn in CHECKS:
        ok, detail = fn()
        out(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
        failed += not ok
    return 0 if failed == 0 else 3
