"""Request traces: file formats, synthesis, and rate scaling.

Traces are plain CSV files (UTF-8). Lines starting with `#` and blank lines
are ignored; the first remaining line must be the header. Three layouts:

    combined   arrival_s,prompt_tokens,output_tokens
    arrivals   arrival_s
    sizes      prompt_tokens,output_tokens

Arrival timestamps are seconds from the start of the experiment and must be
non-decreasing; token counts are positive integers. An `arrivals` file can be
paired with a `sizes` file by random sampling to build a full trace.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

TRACE_FORMATS = ("combined", "arrivals", "sizes")

_HEADERS = {
    "combined": "arrival_s,prompt_tokens,output_tokens",
    "arrivals": "arrival_s",
    "sizes": "prompt_tokens,output_tokens",
}


class TraceFormatError(ValueError):
    """A trace file that does not follow the declared layout."""

    def __init__(self, path, line_no: int, message: str):
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = str(path)
        self.line_no = line_no


@dataclass(frozen=True)
class TraceEntry:
    """One request: arrival time plus ground-truth prompt/output lengths."""

    arrival_time: float
    prompt_len: int
    output_len: int

    def __post_init__(self):
        if self.arrival_time < 0:
            raise ValueError(f"arrival_time must be >= 0, got {self.arrival_time}")
        if self.prompt_len < 1:
            raise ValueError(f"prompt_len must be >= 1, got {self.prompt_len}")
        if self.output_len < 1:
            raise ValueError(f"output_len must be >= 1, got {self.output_len}")


def _content_lines(path) -> Iterable[tuple[int, str]]:
    with open(path, encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            yield line_no, line


def _parse_float(path, line_no: int, field: str, name: str) -> float:
    try:
        value = float(field)
    except ValueError:
        raise TraceFormatError(path, line_no, f"{name}: not a number: {field!r}") from None
    if not math.isfinite(value):
        raise TraceFormatError(path, line_no, f"{name}: not finite: {field!r}")
    return value


def _parse_len(path, line_no: int, field: str, name: str) -> int:
    try:
        value = int(field)
    except ValueError:
        raise TraceFormatError(path, line_no, f"{name}: not an integer: {field!r}") from None
    if value < 1:
        raise TraceFormatError(path, line_no, f"{name}: must be >= 1, got {value}")
    return value


def load_trace(path, fmt: str = "combined"):
    """Parse a trace file.

    Returns a list of TraceEntry for `combined`, a list of arrival times for
    `arrivals`, or a list of (prompt_tokens, output_tokens) pairs for
    `sizes`. Raises TraceFormatError (with the offending line number) on any
    malformed row, unsorted arrivals, or non-positive token counts.
    """
    if fmt not in TRACE_FORMATS:
        raise ValueError(f"unknown trace format {fmt!r}; expected one of {TRACE_FORMATS}")
    expected_header = _HEADERS[fmt]
    n_cols = expected_header.count(",") + 1

    rows = []
    header_seen = False
    last_arrival = None
    for line_no, line in _content_lines(path):
        if not header_seen:
            got = ",".join(part.strip() for part in line.split(","))
            if got != expected_header:
                raise TraceFormatError(
                    path, line_no, f"expected header {expected_header!r}, got {line!r}"
                )
            header_seen = True
            continue
        fields = [part.strip() for part in line.split(",")]
        if len(fields) != n_cols:
            raise TraceFormatError(
                path, line_no, f"expected {n_cols} columns, got {len(fields)}"
            )
        if fmt == "sizes":
            rows.append(
                (
                    _parse_len(path, line_no, fields[0], "prompt_tokens"),
                    _parse_len(path, line_no, fields[1], "output_tokens"),
                )
            )
            continue
        arrival = _parse_float(path, line_no, fields[0], "arrival_s")
        if arrival < 0:
            raise TraceFormatError(path, line_no, f"arrival_s: must be >= 0, got {arrival}")
        if last_arrival is not None and arrival < last_arrival:
            raise TraceFormatError(
                path, line_no, f"unsorted arrivals: {arrival} after {last_arrival}"
            )
        last_arrival = arrival
        if fmt == "arrivals":
            rows.append(arrival)
        else:
            rows.append(
                TraceEntry(
                    arrival_time=arrival,
                    prompt_len=_parse_len(path, line_no, fields[1], "prompt_tokens"),
                    output_len=_parse_len(path, line_no, fields[2], "output_tokens"),
                )
            )
    if not header_seen:
        raise TraceFormatError(path, 1, "empty trace file (no header)")
    return rows


def write_trace(path, rows, fmt: str = "combined") -> None:
    """Write rows in the given layout; inverse of load_trace."""
    if fmt not in TRACE_FORMATS:
        raise ValueError(f"unknown trace format {fmt!r}; expected one of {TRACE_FORMATS}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [_HEADERS[fmt]]
    if fmt == "combined":
        for e in rows:
            lines.append(f"{e.arrival_time!r},{e.prompt_len},{e.output_len}")
    elif fmt == "arrivals":
        for t in rows:
            lines.append(repr(float(t)))
    else:
        for prompt_len, output_len in rows:
            lines.append(f"{prompt_len},{output_len}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def pair_arrivals_with_sizes(
    arrivals: Sequence[float], sizes: Sequence[tuple[int, int]], seed: int
) -> list[TraceEntry]:
    """Attach a (prompt, output) pair to each arrival, sampled uniformly
    with replacement from `sizes`."""
    if len(arrivals) == 0:
        raise ValueError("no arrivals to pair")
    if len(sizes) == 0:
        raise ValueError("no size pairs to sample from")
    if any(b < a for a, b in zip(arrivals, arrivals[1:])):
        raise ValueError("arrivals must be sorted")
    rng = np.random.default_rng(seed)
    picks = rng.integers(0, len(sizes), size=len(arrivals))
    return [
        TraceEntry(arrival_time=float(t), prompt_len=sizes[i][0], output_len=sizes[i][1])
        for t, i in zip(arrivals, picks)
    ]


def scale_qps(trace: Sequence[TraceEntry], factor: float) -> list[TraceEntry]:
    """Compress (factor > 1) or stretch (factor < 1) arrival times by
    dividing them by `factor`; lengths are untouched."""
    if factor <= 0:
        raise ValueError(f"factor must be > 0, got {factor}")
    return [
        TraceEntry(e.arrival_time / factor, e.prompt_len, e.output_len) for e in trace
    ]


@dataclass(frozen=True)
class LengthDist:
    """Log-normal token-length distribution; location/scale in log space."""

    location: float
    scale: float

    def __post_init__(self):
        if self.scale < 0:
            raise ValueError(f"scale must be >= 0, got {self.scale}")


@dataclass(frozen=True)
class SynthSpec:
    """Parameters for a synthetic trace.

    burstiness sets the coefficient of variation of inter-arrival gaps:
    0 gives a fixed gap, 1 gives Poisson arrivals, larger values give
    heavier bursts (gamma-distributed gaps).
    """

    duration_s: float
    mean_qps: float
    burstiness: float = 1.0
    prompt_dist: LengthDist = LengthDist(location=6.2, scale=1.1)
    output_dist: LengthDist = LengthDist(location=4.9, scale=0.9)
    max_context: int = 8192
    seed: int = 0

    def __post_init__(self):
        if self.duration_s <= 0:
            raise ValueError(f"duration_s must be > 0, got {self.duration_s}")
        if self.mean_qps <= 0:
            raise ValueError(f"mean_qps must be > 0, got {self.mean_qps}")
        if self.burstiness < 0:
            raise ValueError(f"burstiness must be >= 0, got {self.burstiness}")
        if self.max_context < 2:
            raise ValueError(f"max_context must be >= 2, got {self.max_context}")


def synthesize(spec: SynthSpec) -> list[TraceEntry]:
    """Generate a sorted trace from a SynthSpec, deterministically per seed.

    Inter-arrival gaps are gamma with mean 1/mean_qps and CV = burstiness
    (constant gaps when burstiness == 0). Lengths are log-normal, rounded,
    clamped to [1, max_context - 1] for prompts, and outputs are additionally
    capped at max_context - prompt so each request fits a context window.
    """
    rng = np.random.default_rng(spec.seed)
    mean_gap = 1.0 / spec.mean_qps

    arrivals: list[float] = []
    t = 0.0
    if spec.burstiness == 0:
        n = int(spec.duration_s / mean_gap)
        arrivals = [(i + 1) * mean_gap for i in range(n) if (i + 1) * mean_gap <= spec.duration_s]
    else:
        shape = 1.0 / (spec.burstiness**2)
        scale = mean_gap * spec.burstiness**2
        while True:
            t += float(rng.gamma(shape, scale))
            if t > spec.duration_s:
                break
            arrivals.append(t)

    n = len(arrivals)
    prompt_cap = spec.max_context - 1
    prompts = np.clip(
        np.rint(rng.lognormal(spec.prompt_dist.location, spec.prompt_dist.scale, n)),
        1,
        prompt_cap,
    ).astype(int)
    outputs = np.clip(
        np.rint(rng.lognormal(spec.output_dist.location, spec.output_dist.scale, n)),
        1,
        prompt_cap,
    ).astype(int)
    outputs = np.minimum(outputs, spec.max_context - prompts)

    return [
        TraceEntry(arrival_time=a, prompt_len=int(p), output_len=int(o))
        for a, p, o in zip(arrivals, prompts, outputs)
    ]
