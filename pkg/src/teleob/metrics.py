"""Trace files and the metrics computed from them.

A trace is a CSV with a version comment line and a fixed column layout
(see teleop.trace_columns).  Metrics are segment-pure: free-motion
statistics only use samples inside free segments, contact statistics only
the steady tail of their own segment.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError
from .scenario import ScenarioConfig
from .teleop import TRACE_VERSION, TeleopSimulation, format_row, trace_columns

_ISS_TOL = 1e-9


def write_trace(path, sim: TeleopSimulation, ticks: int) -> None:
    """Run `ticks + 1` loop iterations, streaming one row per tick."""
    n = sim.master.plant.dof
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"# {TRACE_VERSION}\n")
        fh.write(",".join(trace_columns(n)) + "\n")
        for _ in range(ticks + 1):
            fh.write(format_row(sim.step()) + "\n")


def load_trace(path) -> dict:
    """Parse a trace back into a column-name -> array dict."""
    with open(path, "r", encoding="utf-8") as fh:
        version = fh.readline().strip()
        if version != f"# {TRACE_VERSION}":
            raise ConfigurationError(f"unsupported trace version line {version!r}")
        header = fh.readline().strip().split(",")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    if data.shape[1] != len(header):
        raise ConfigurationError("trace width does not match its header")
    return {name: data[:, i] for i, name in enumerate(header)}


def vector_column(trace: dict, name: str, n: int) -> np.ndarray:
    return np.column_stack([trace[f"{name}_{j}"] for j in range(n)])


@dataclass
class MetricsReport:
    """Scenario-level metrics; all entries are segment-pure.

    contact maps a segment kind to its worst-case steady-state tracking
    error and the steady estimated/true torque magnitudes.  runtime_s is
    provenance only and deliberately excluded from the serialized report
    so report files stay byte-reproducible.
    """

    free_force_mean: float
    free_force_max: float
    contact: dict
    position_rmse: float
    velocity_rmse_ratio: float
    cost_mean: float
    cost_max: float
    iss_pass_rate: float
    saturation_total: int
    clamp_total: int
    rows: int
    runtime_s: float = 0.0

    def to_dict(self) -> dict:
        return {
            "free_force_mean": self.free_force_mean,
            "free_force_max": self.free_force_max,
            "contact": self.contact,
            "position_rmse": self.position_rmse,
            "velocity_rmse_ratio": self.velocity_rmse_ratio,
            "cost_mean": self.cost_mean,
            "cost_max": self.cost_max,
            "iss_pass_rate": self.iss_pass_rate,
            "saturation_total": self.saturation_total,
            "clamp_total": self.clamp_total,
            "rows": self.rows,
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n",
                              encoding="utf-8")


def compute_metrics(trace: dict, config: ScenarioConfig,
                    runtime_s: float = 0.0) -> MetricsReport:
    n = config.dof
    t = trace["t"]
    active = (trace["warm_m"] == 0) & (trace["warm_s"] == 0)

    est_force = vector_column(trace, "tau_e1", n)
    true_force = vector_column(trace, "tau_e", n)
    force_norm = np.linalg.norm(est_force, axis=1)

    free = config.segment_mask(t, {"free"}) & active
    free_force_mean = float(force_norm[free].mean()) if free.any() else float("nan")
    free_force_max = float(force_norm[free].max()) if free.any() else float("nan")

    contact: dict = {}
    for seg in config.schedule:
        if seg.kind == "free":
            continue
        seg_mask = (t >= seg.start - 1e-12) & (t < seg.end - 1e-12) & active
        idx = np.flatnonzero(seg_mask)
        if idx.size == 0:
            continue
        steady = idx[int(round((1.0 - config.steady_fraction) * idx.size)):]
        est_mean = est_force[steady].mean(axis=0)
        true_mean = true_force[steady].mean(axis=0)
        true_norm = float(np.linalg.norm(true_mean))
        rel = (float(np.linalg.norm(est_mean - true_mean)) / true_norm
               if true_norm > 1e-12 else float("nan"))
        entry = contact.setdefault(seg.kind, {
            "rel_error": 0.0, "steady_est_norm": 0.0, "steady_true_norm": 0.0})
        entry["rel_error"] = max(entry["rel_error"], rel)
        entry["steady_est_norm"] = float(np.linalg.norm(est_mean))
        entry["steady_true_norm"] = true_norm

    q_m = vector_column(trace, "q_m", n)
    q_s = vector_column(trace, "q_s", n)
    track = np.linalg.norm(q_m - q_s, axis=1)
    position_rmse = float(np.sqrt(np.mean(track[active] ** 2)))

    qd_m = vector_column(trace, "qd_m", n)
    qd_s = vector_column(trace, "qd_s", n)
    vhat = np.hstack([vector_column(trace, "vhat_m", n),
                      vector_column(trace, "vhat_s", n)])
    vmeas = np.hstack([vector_column(trace, "vmeas_m", n),
                       vector_column(trace, "vmeas_s", n)])
    vtrue = np.hstack([qd_m, qd_s])
    est_err = np.sqrt(np.mean((vhat[active] - vtrue[active]) ** 2))
    raw_err = np.sqrt(np.mean((vmeas[active] - vtrue[active]) ** 2))
    ratio = float(est_err / raw_err) if raw_err > 1e-15 else float("nan")

    costs = np.concatenate([trace["cost_m"][active], trace["cost_s"][active]])
    margins = np.concatenate([trace["iss_margin_m"], trace["iss_margin_s"]])
    margins = margins[np.isfinite(margins)]
    iss_rate = (float(np.mean(margins >= -_ISS_TOL))
                if margins.size else float("nan"))

    return MetricsReport(
        free_force_mean=free_force_mean,
        free_force_max=free_force_max,
        contact=contact,
        position_rmse=position_rmse,
        velocity_rmse_ratio=ratio,
        cost_mean=float(costs.mean()) if costs.size else 0.0,
        cost_max=float(costs.max()) if costs.size else 0.0,
        iss_pass_rate=iss_rate,
        saturation_total=int(trace["sat_m"].sum() + trace["sat_s"].sum()),
        clamp_total=int(trace["clamp_fwd"].sum() + trace["clamp_bwd"].sum()),
        rows=int(t.shape[0]),
        runtime_s=runtime_s)
