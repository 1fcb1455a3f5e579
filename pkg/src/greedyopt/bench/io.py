"""Trace serialization: fixed-format CSV plus summary JSON helpers.

CSV floats use 17 significant digits so values round-trip exactly and files
diff cleanly. The wall_ms column is serialized as a deterministic 0 so that
reruns with the same config and seeds are byte-identical; real timings stay
on the in-memory trace and in the summary's runtime fields.
"""

from __future__ import annotations

import json
from pathlib import Path


from ..core import ConvergenceTrace

TRACE_COLUMNS = "iter,wall_ms,objective,gap,feasibility,step_kind"


def _fmt(x: float | None) -> str:
    return "" if x is None else format(float(x), ".17g")


def write_trace_csv(trace: ConvergenceTrace, path) -> None:
    path = Path(path)
    lines = [TRACE_COLUMNS]
    for i in range(len(trace)):
        lines.append(",".join([
            str(trace.iters[i]),
            _fmt(0.0),
            _fmt(trace.objectives[i]),
            _fmt(trace.gaps[i]),
            _fmt(trace.feasibilities[i]),
            trace.step_kinds[i],
        ]))
    path.write_text("\n".join(lines) + "\n")


def read_trace_csv(path) -> ConvergenceTrace:
    trace = ConvergenceTrace()
    with open(path) as fh:
        header = fh.readline().strip()
        if header != TRACE_COLUMNS:
            raise ValueError(f"unexpected trace header {header!r}")
        for line in fh:
            it, _, obj, gap, feas, kind = line.rstrip("\n").split(",")
            trace.append(int(it), float(obj),
                         gap=float(gap) if gap else None,
                         feasibility=float(feas) if feas else None,
                         step_kind=kind)
    return trace


def write_summary(summary: dict, path) -> None:
    Path(path).write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
