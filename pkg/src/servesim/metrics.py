"""Per-request records, latency summaries, and capacity sweeps.

Latency definitions, all in seconds:
    time to first token   first_token_time - arrival_time
    normalized TTFT       TTFT / prompt_len (seconds per prompt token)
    generation time       finish_time - arrival_time

Percentiles use the nearest-rank method on the sorted sample.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Sequence


@dataclass(frozen=True)
class MetricsRecord:
    """Completion record for one request."""

    request_id: int
    server: int
    arrival_time: float
    first_token_time: float
    finish_time: float
    prompt_len: int
    output_len: int
    preempt_count: int

    @property
    def ttft(self) -> float:
        return self.first_token_time - self.arrival_time

    @property
    def norm_ttft(self) -> float:
        return self.ttft / self.prompt_len

    @property
    def generation_time(self) -> float:
        return self.finish_time - self.arrival_time


def percentile(values: Sequence[float], p: float) -> float:
    """Nearest-rank percentile: the ceil(p/100 * n)-th smallest value."""
    if not values:
        raise ValueError("percentile of an empty sample")
    if not 0 < p <= 100:
        raise ValueError(f"p must be in (0, 100], got {p}")
    ordered = sorted(values)
    rank = math.ceil(p / 100 * len(ordered))
    return ordered[rank - 1]


@dataclass(frozen=True)
class Summary:
    """Distribution summary over a set of completed requests."""

    n_requests: int
    ttft_p50: float
    ttft_p95: float
    ttft_p99: float
    norm_ttft_p50: float
    norm_ttft_p95: float
    gen_time_p50: float
    gen_time_p95: float
    preemption_rate: float
    throughput_rps: float

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def field_names() -> list[str]:
        return [f.name for f in fields(Summary)]


def summarize(records: Sequence[MetricsRecord]) -> Summary:
    if not records:
        raise ValueError("no records to summarize")
    ttfts = [r.ttft for r in records]
    norm = [r.norm_ttft for r in records]
    gen = [r.generation_time for r in records]
    span = max(r.finish_time for r in records) - min(r.arrival_time for r in records)
    preempted = sum(1 for r in records if r.preempt_count > 0)
    return Summary(
        n_requests=len(records),
        ttft_p50=percentile(ttfts, 50),
        ttft_p95=percentile(ttfts, 95),
        ttft_p99=percentile(ttfts, 99),
        norm_ttft_p50=percentile(norm, 50),
        norm_ttft_p95=percentile(norm, 95),
        gen_time_p50=percentile(gen, 50),
        gen_time_p95=percentile(gen, 95),
        preemption_rate=preempted / len(records),
        throughput_rps=len(records) / span if span > 0 else float("inf"),
    )


def capacity_sweep(cluster_settings, trace, factors) -> list[tuple[float, Summary]]:
    """Re-run the same configuration with arrival times divided by each
    factor; returns (factor, summary) pairs in the given order."""
    from .cluster import run_cluster
    from .workload import scale_qps

    out = []
    for factor in factors:
        records = run_cluster(cluster_settings, scale_qps(trace, factor))
        out.append((float(factor), summarize(records)))
    return out


_RECORD_COLUMNS = [
    "request_id",
    "server",
    "arrival_s",
    "first_token_s",
    "finish_s",
    "prompt_tokens",
    "output_tokens",
    "preempt_count",
]


def write_records_csv(path, records: Sequence[MetricsRecord]) -> None:
    """One line per request, floats in repr form so reruns are byte-stable."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [",".join(_RECORD_COLUMNS)]
    for r in records:
        lines.append(
            f"{r.request_id},{r.server},{r.arrival_time!r},{r.first_token_time!r},"
            f"{r.finish_time!r},{r.prompt_len},{r.output_len},{r.preempt_count}"
        )
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_summary_csv(path, rows: Sequence[dict]) -> None:
    """Rows are dicts sharing identical keys; column order follows the first
    row's key order."""
    if not rows:
        raise ValueError("no summary rows to write")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    columns = list(rows[0].keys())
    lines = [",".join(columns)]
    for row in rows:
        if list(row.keys()) != columns:
            raise ValueError("summary rows have inconsistent columns")
        lines.append(",".join(_csv_cell(row[c]) for c in columns))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _csv_cell(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_summary_json(path, rows: Sequence[dict]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(list(rows), indent=2, sort_keys=False) + "\n", encoding="utf-8")
