"""Run summaries and the two-protocol comparison table."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .logs import ClientLogRecord, SchemaMismatch, ServerLogRecord, read_csv, write_rows
from .stats import (
    OUTLIER_THRESHOLD_MS,
    filter_outliers,
    latency_stats,
    payload_overhead_pct,
    reliability,
    significance,
    throughput_bins,
)


@dataclass(frozen=True)
class RunSummary:
    variant: str
    received: int
    outliers_excluded: int
    mean_latency_ms: float
    median_latency_ms: float
    std_latency_ms: float
    ci95_low_ms: float
    ci95_high_ms: float
    p95_ms: float
    p99_ms: float
    mean_payload_bytes: float
    mean_pps: float
    mean_bps: float
    sent: int | None = None
    reliability_pct: float | None = None
    duplicates: int = 0
    losses: int | None = None
    interval_rate_pps: float | None = None

    def as_dict(self) -> dict:
        return asdict(self)


def _packet_key(rec) -> tuple:
    return (rec.dev_id, rec.sessctr_id, rec.seq)


def latencies_of(records: Sequence[ServerLogRecord]) -> np.ndarray:
    return np.fromiter((r.latency_ms for r in records), dtype=np.float64, count=len(records))


def summarize(
    variant: str,
    server: Sequence[ServerLogRecord],
    client: Sequence[ClientLogRecord] | None = None,
    interval_ms: int | None = None,
) -> RunSummary:
    lat, excluded = filter_outliers(latencies_of(server), OUTLIER_THRESHOLD_MS)
    ls = latency_stats(lat)
    tb = throughput_bins([r.recvts_ms for r in server], [r.payload_size for r in server])
    unique = {_packet_key(r) for r in server}
    duplicates = len(server) - len(unique)
    sent = rel_pct = losses = None
    if client is not None:
        rel = reliability(len(client), len(unique & {_packet_key(r) for r in client}), duplicates)
        sent, rel_pct, losses = rel.sent, rel.percent, rel.losses
    return RunSummary(
        variant=variant,
        received=len(server),
        outliers_excluded=excluded,
        mean_latency_ms=ls.mean,
        median_latency_ms=ls.median,
        std_latency_ms=ls.std,
        ci95_low_ms=ls.ci95_low,
        ci95_high_ms=ls.ci95_high,
        p95_ms=ls.p95,
        p99_ms=ls.p99,
        mean_payload_bytes=float(np.mean([r.payload_size for r in server])),
        mean_pps=tb.mean_pps,
        mean_bps=tb.mean_bps,
        sent=sent,
        reliability_pct=rel_pct,
        duplicates=duplicates,
        losses=losses,
        interval_rate_pps=None if interval_ms is None else 1000.0 / interval_ms,
    )


@dataclass(frozen=True)
class Comparison:
    psk: RunSummary
    dsekp: RunSummary
    overhead_pct: float
    t_p: float
    ranksum_p: float
    cohens_d: float
    cliffs_delta: float
    mean_latency_delta_ms: float

    def as_dict(self) -> dict:
        return {
            "psk": self.psk.as_dict(),
            "dsekp": self.dsekp.as_dict(),
            "deltas": {
                "mean_latency_ms": self.mean_latency_delta_ms,
                "payload_overhead_pct": self.overhead_pct,
            },
            "significance": {
                "t_p": self.t_p,
                "ranksum_p": self.ranksum_p,
                "cohens_d": self.cohens_d,
                "cliffs_delta": self.cliffs_delta,
            },
        }

    def table_rows(self) -> list[tuple[str, str, str]]:
        p, d = self.psk, self.dsekp
        return [
            ("Mean latency (ms)", f"{p.mean_latency_ms:.2f}", f"{d.mean_latency_ms:.2f}"),
            ("Median latency (ms)", f"{p.median_latency_ms:.2f}", f"{d.median_latency_ms:.2f}"),
            ("Latency p95 / p99 (ms)", f"{p.p95_ms:.2f} / {p.p99_ms:.2f}", f"{d.p95_ms:.2f} / {d.p99_ms:.2f}"),
            ("Mean payload (bytes)", f"{p.mean_payload_bytes:.1f}", f"{d.mean_payload_bytes:.1f}"),
            ("Mean packet rate (pps)", f"{p.mean_pps:.2f}", f"{d.mean_pps:.2f}"),
            ("Payload overhead (%)", "--", f"{self.overhead_pct:.2f}"),
            ("t-test p / rank-sum p", f"{self.t_p:.3g} / {self.ranksum_p:.3g}", ""),
            ("Cohen's d / Cliff's delta", f"{self.cohens_d:.3f} / {self.cliffs_delta:.3f}", ""),
        ]

    def format_table(self) -> str:
        rows = [("Metric", "PSK", "DSEKP")] + self.table_rows()
        widths = [max(len(r[i]) for r in rows) for i in range(3)]
        lines = []
        for i, row in enumerate(rows):
            lines.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())
            if i == 0:
                lines.append("  ".join("-" * w for w in widths))
        return "\n".join(lines)


def compare(psk_server: Sequence[ServerLogRecord], dsekp_server: Sequence[ServerLogRecord],
            psk_client=None, dsekp_client=None) -> Comparison:
    ps = summarize("psk", psk_server, psk_client)
    ds = summarize("dsekp", dsekp_server, dsekp_client)
    a, _ = filter_outliers(latencies_of(psk_server))
    b, _ = filter_outliers(latencies_of(dsekp_server))
    sig = significance(a, b)
    return Comparison(
        psk=ps,
        dsekp=ds,
        overhead_pct=payload_overhead_pct(ps.mean_payload_bytes, ds.mean_payload_bytes),
        t_p=sig.t_p,
        ranksum_p=sig.ranksum_p,
        cohens_d=sig.cohens_d,
        cliffs_delta=sig.cliffs_delta,
        mean_latency_delta_ms=ds.mean_latency_ms - ps.mean_latency_ms,
    )


def load_run(path: str | Path) -> tuple[list[ServerLogRecord], list[ClientLogRecord] | None]:
    """Accept a run directory or a server CSV; pick up a sibling client log."""
    path = Path(path)
    server_path = path / "server_logs.csv" if path.is_dir() else path
    _, side, server = read_csv(server_path)
    if side != "server":
        raise SchemaMismatch(f"{server_path}: expected a server log")
    client_path = server_path.with_name("client_logs.csv")
    client = None
    if client_path.exists() and client_path != server_path:
        _, cside, client = read_csv(client_path)
        if cside != "client":
            raise SchemaMismatch(f"{client_path}: expected a client log")
    return server, client


def write_plot_series(out_dir: str | Path, label: str, server: Sequence[ServerLogRecord]) -> None:
    """CDF, quartiles, per-bin throughput and payload histogram as CSV."""
    out = Path(out_dir)
    lat, _ = filter_outliers(latencies_of(server))
    xs = np.sort(lat)
    n = xs.size
    write_rows(out / f"{label}_latency_cdf.csv", ["latency_ms", "cdf"],
               ((f"{x:.3f}", f"{(i + 1) / n:.6f}") for i, x in enumerate(xs)))
    if n:
        q = np.percentile(xs, [0, 25, 50, 75, 100])
        write_rows(out / f"{label}_latency_box.csv", ["min", "q1", "median", "q3", "max"],
                   [[f"{v:.3f}" for v in q]])
    tb = throughput_bins([r.recvts_ms for r in server], [r.payload_size for r in server])
    write_rows(out / f"{label}_throughput.csv", ["bin_1s", "pps", "bps"],
               ((int(k), int(p), int(b)) for k, p, b in zip(tb.bins, tb.pps, tb.bps)))
    sizes, counts = np.unique([r.payload_size for r in server], return_counts=True)
    write_rows(out / f"{label}_payload_hist.csv", ["payload_size", "count"], zip(sizes.tolist(), counts.tolist()))


def dump_json(obj, path: str | Path) -> None:
    def _clean(v):
        if isinstance(v, float) and not math.isfinite(v):
            return str(v)
        if isinstance(v, dict):
            return {k: _clean(x) for k, x in v.items()}
        if isinstance(v, (list, tuple)):
            return [_clean(x) for x in v]
        return v

    Path(path).write_text(json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n", encoding="utf-8")
