"""
CSV and JSON writers for plan, sensitivity and simulation results.
Floats are written with a fixed number of significant digits so reruns
produce identical files.
"""
import csv
import json
import logging
from pathlib import Path
from typing import Any, Callable, Iterable, List, Optional, Sequence

import numpy as np

from .models import StepSequence, StepSide
from .sensitivity import SolutionSurface
from .simulator import TraceRow

logger = logging.getLogger(__name__)

STEP_COLUMNS = ["k", "side", "foot", "p_x", "p_y", "T", "gamma", "b_x", "b_y"]
DCM_CHAIN_COLUMNS = ["k", "T", "zeta_x", "zeta_y"]
SURFACE_COLUMNS = [
    "index", "theta_x", "theta_y", "p_x", "p_y", "gamma", "b_x", "b_y",
    "active_set", "active_set_changed", "infeasible",
]
TRACE_COLUMNS = [
    "t_abs", "c_x", "c_y", "c_dot_x", "c_dot_y", "zeta_x", "zeta_y",
    "zeta_hat_x", "zeta_hat_y", "p0_x", "p0_y", "support_side", "swing_z",
    "next_p_x", "next_p_y", "next_T", "next_b_x", "next_b_y", "com_ref_x", "com_ref_y",
]


def format_float(value: float, precision: int = 17) -> str:
    return f"{float(value):.{precision}g}"


def to_jsonable(value: Any) -> Any:
    """Convert numpy values, enums and tuples into plain JSON types."""
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [to_jsonable(v) for v in value.tolist()]
    if isinstance(value, StepSide):
        return value.value
    if isinstance(value, (np.floating, float)):
        return float(value)
    if isinstance(value, (np.integer, int)) and not isinstance(value, bool):
        return int(value)
    return value


def _write_rows(path: Path, header: Sequence[str], rows: Iterable[List[str]]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8', newline='') as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
    logger.info(f"Wrote {path}")
    return path


def write_steps_csv(path: Path, sequence: StepSequence, precision: int = 17,
                    foot_name: Optional[Callable[[StepSide], str]] = None) -> Path:
    fmt = lambda v: format_float(v, precision)
    rows = []
    for row in sequence.to_rows():
        side = row["side"]
        rows.append([
            str(row["k"]), side.value, foot_name(side) if foot_name else "",
            fmt(row["p_x"]), fmt(row["p_y"]), fmt(row["T"]), fmt(row["gamma"]),
            fmt(row["b_x"]), fmt(row["b_y"]),
        ])
    return _write_rows(path, STEP_COLUMNS, rows)


def write_dcm_chain_csv(path: Path, sequence: StepSequence, precision: int = 17) -> Path:
    rows = [
        [str(k), format_float(step.T, precision),
         format_float(zeta[0], precision), format_float(zeta[1], precision)]
        for k, (step, zeta) in enumerate(zip(sequence.steps, sequence.zeta_chain))
    ]
    return _write_rows(path, DCM_CHAIN_COLUMNS, rows)


def write_surface_csv(path: Path, surface: SolutionSurface, precision: int = 17) -> Path:
    rows = []
    for row in surface.rows:
        values = [""] * 5 if row.x is None else [format_float(v, precision) for v in row.x]
        rows.append(
            [str(row.index), format_float(row.theta[0], precision), format_float(row.theta[1], precision)]
            + values
            + [" ".join(str(i) for i in row.active_set),
               str(int(row.active_set_changed)), str(int(row.infeasible))]
        )
    return _write_rows(path, SURFACE_COLUMNS, rows)


def write_trace_csv(path: Path, trace: Sequence[TraceRow], precision: int = 17) -> Path:
    fmt = lambda v: format_float(v, precision)
    rows = []
    for row in trace:
        reference = ["", ""] if row.com_reference is None else [fmt(v) for v in row.com_reference]
        rows.append(
            [fmt(row.t_abs)]
            + [fmt(v) for v in (*row.c, *row.c_dot, *row.zeta, *row.zeta_hat, *row.p0)]
            + [row.support_side.value, fmt(row.swing_z)]
            + [fmt(v) for v in (*row.planned.p_T, row.planned.T, *row.planned.b_T)]
            + reference
        )
    return _write_rows(path, TRACE_COLUMNS, rows)


def write_json(path: Path, data: Any) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(to_jsonable(data), f, indent=2, sort_keys=True)
        f.write("\n")
    logger.info(f"Wrote {path}")
    return path
