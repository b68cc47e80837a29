"""Report emission: versioned JSON plus one-row-per-layer CSV."""

from __future__ import annotations

import csv
import io
import json

from ..perf import SimReport

REPORT_SCHEMA_VERSION = 1

CSV_FIELDS = [
    "layer", "bottleneck", "compute_cycles", "fill_cycles", "memory_cycles",
    "total_cycles", "dense_macs", "aligned_macs", "dma_bytes", "energy_pj",
]


def report_to_dict(report: SimReport) -> dict:
    return {
        "schema_version": REPORT_SCHEMA_VERSION,
        "network": report.network,
        "mode": report.mode,
        "density_source": report.density_source,
        "clock_hz": report.clock_hz,
        "peak_macs_per_cycle": report.peak_macs_per_cycle,
        "total_cycles": report.total_cycles,
        "latency_s": report.latency_s,
        "average_power_w": report.average_power_w,
        "utilization": report.utilization,
        "saturations": report.saturations,
        "energy_pj": dict(report.energy_pj),
        "total_energy_pj": report.total_energy_pj,
        "layers": [
            {
                "layer": c.name,
                "bottleneck": c.bottleneck,
                "compute_cycles": c.compute_cycles,
                "fill_cycles": c.fill_cycles,
                "memory_cycles": c.memory_cycles,
                "total_cycles": c.total_cycles,
                "dense_macs": c.dense_macs,
                "aligned_macs": c.aligned_macs,
                "dma_bytes": c.dma_bytes,
                "energy_pj": sum(c.energy_pj.values()),
                "energy_breakdown_pj": dict(c.energy_pj),
            }
            for c in report.layers
        ],
    }


def report_json(report: SimReport) -> str:
    return json.dumps(report_to_dict(report), indent=2)


def report_csv(report: SimReport) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_FIELDS)
    writer.writeheader()
    for entry in report_to_dict(report)["layers"]:
        writer.writerow({k: entry[k] for k in CSV_FIELDS})
    return buf.getvalue()


def density_csv(layer_names, stats) -> str:
    """Per-layer measured density table for the sparsity subcommand."""
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["layer", "in_density", "out_density", "wt_density",
                     "dense_macs", "aligned_macs"])
    for name, st in zip(layer_names, stats):
        writer.writerow([name, f"{st.in_density:.6f}", f"{st.out_density:.6f}",
                         f"{st.wt_density:.6f}", st.dense_macs, st.aligned_macs])
    return buf.getvalue()
