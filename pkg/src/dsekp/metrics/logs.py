"""Client/server CSV log records with fixed column layouts per protocol."""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import _kernels

CLIENT_COLUMNS = {
    "psk": ["seq", "timestamp", "dev_id", "plaintext", "iv", "tag", "ciphertext", "sendts_ms", "payload_size"],
    "dsekp": ["seq", "sessctr_id", "timestamp", "dev_id", "plaintext", "iv", "tag", "ciphertext", "sendts_ms", "payload_size"],
}
SERVER_COLUMNS = {
    "psk": ["seq", "timestamp", "dev_id", "ciphertext", "iv", "tag", "plaintext",
            "recvts_ms", "latency_ms", "payload_size", "bin_1s", "throughput"],
    "dsekp": ["seq", "timestamp", "dev_id", "sessctr_id", "ciphertext", "iv", "tag", "plaintext",
              "recvts_ms", "latency_ms", "payload_size", "bin_1s", "throughput"],
}
_INT_COLUMNS = {"seq", "sessctr_id", "sendts_ms", "recvts_ms", "payload_size", "bin_1s"}


class SchemaMismatch(ValueError):
    pass


def iso_ms(epoch_ms: int) -> str:
    dt = datetime.fromtimestamp(epoch_ms / 1000.0, tz=timezone.utc)
    return dt.isoformat(timespec="milliseconds").replace("+00:00", "Z")


@dataclass(frozen=True)
class ClientLogRecord:
    seq: int
    timestamp: str
    dev_id: str
    sessctr_id: int | None
    plaintext: str
    iv: str
    tag: str
    ciphertext: str
    sendts_ms: int
    payload_size: int


@dataclass(frozen=True)
class ServerLogRecord:
    seq: int
    timestamp: str
    dev_id: str
    sessctr_id: int | None
    ciphertext: str
    iv: str
    tag: str
    plaintext: str
    recvts_ms: int
    latency_ms: float
    payload_size: int
    bin_1s: int
    throughput: float = 0.0


def _fmt(name: str, value) -> str:
    if name == "latency_ms":
        return f"{float(value):.3f}"
    if name == "throughput":
        return f"{float(value):.1f}"
    return str(value)


def _variant_of(records: Sequence) -> str:
    return "dsekp" if records and records[0].sessctr_id is not None else "psk"


def write_csv(records: Sequence[ClientLogRecord | ServerLogRecord], path, variant: str | None = None,
              side: str | None = None) -> None:
    if side is None:
        side = "client" if records and isinstance(records[0], ClientLogRecord) else "server"
    variant = variant or _variant_of(records)
    columns = (CLIENT_COLUMNS if side == "client" else SERVER_COLUMNS)[variant]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for rec in records:
            writer.writerow([_fmt(c, getattr(rec, c)) for c in columns])


def _parse(name: str, raw: str):
    if name in _INT_COLUMNS:
        return int(raw)
    if name in ("latency_ms", "throughput"):
        return float(raw)
    return raw


def read_csv(path) -> tuple[str, str, list]:
    """Return ``(variant, side, records)`` inferred from the header row."""
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaMismatch(f"{path}: empty file") from None
        layouts = [("client", v, cols, ClientLogRecord) for v, cols in CLIENT_COLUMNS.items()]
        layouts += [("server", v, cols, ServerLogRecord) for v, cols in SERVER_COLUMNS.items()]
        match = next((lay for lay in layouts if lay[2] == header), None)
        if match is None:
            raise SchemaMismatch(f"{path}: unrecognised header {header}")
        side, variant, _, cls = match
        records = []
        for row in reader:
            if len(row) != len(header):
                raise SchemaMismatch(f"{path}: row has {len(row)} fields, expected {len(header)}")
            values = {c: _parse(c, v) for c, v in zip(header, row)}
            values.setdefault("sessctr_id", None)
            records.append(cls(**values))
    return variant, side, records


def annotate_throughput(records: Iterable[ServerLogRecord]) -> list[ServerLogRecord]:
    """Fill ``throughput`` with the bits-per-second of each record's 1 s bin."""
    records = list(records)
    if not records:
        return records
    bins = np.fromiter((r.bin_1s for r in records), dtype=np.int64, count=len(records))
    sizes = np.fromiter((r.payload_size for r in records), dtype=np.int64, count=len(records))
    keys, _, sums = _kernels.bin_sums(bins, sizes)
    bps = dict(zip(keys.tolist(), (8 * sums).tolist()))
    return [replace(r, throughput=float(bps[r.bin_1s])) for r in records]


def write_rows(path: Path | str, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    """Plain CSV series (CDF points, histograms) for external plotting."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
