"""
Export Tool for the stability toolkit.
Writes plot-ready CSV files (τ surface, KL envelope, reach cloud and
trajectories) from a JSON analysis report.
"""

import json
import logging
import os
from typing import Any, Dict, List, Optional

import pandas as pd
from pydantic import BaseModel, Field

from core.errors import InputError
from .base_tool import BaseTool

logger = logging.getLogger("stability.export")

LINE_TERMINATOR = "\r\n"
TAU_FILE = "tau_surface.csv"
ENVELOPE_FILE = "kl_envelope.csv"
REACH_FILE = "reach_cloud.csv"
TRAJECTORY_FILE = "trajectories.csv"


class ExportSummary(BaseModel):
    """Files written and files skipped, with the reason for each skip."""
    written: List[str] = Field(default_factory=list)
    skipped: Dict[str, str] = Field(default_factory=dict)


# Measured τ tables come before derived bounds.
PREFERENCE = ("UniformWeakAttractive", "UGATT", "pUGAS", "UGAS")


def _certificates(report: Dict[str, Any]):
    entries = report.get("reports", {})
    order = [n for n in PREFERENCE if n in entries] + sorted(n for n in entries if n not in PREFERENCE)
    for name in order:
        yield name, entries[name].get("certificates") or {}


def _first_certificate(report: Dict[str, Any], key: str):
    for name, certs in _certificates(report):
        if certs.get(key):
            return name, certs[key]
    return None, None


def tau_frame(report: Dict[str, Any]) -> Optional[pd.DataFrame]:
    """Long table (property, ε, r, τ) of the first τ certificate, smoothed when available."""
    name, tau = _first_certificate(report, "tau")
    if tau is None:
        return None
    grid = tau.get("smoothed") or tau["raw"]
    rows = [
        {"property": name, "eps": eps, "r": r, "tau": grid["values"][i][j], "kind": tau.get("kind", "")}
        for i, eps in enumerate(grid["rows"])
        for j, r in enumerate(grid["cols"])
    ]
    return pd.DataFrame(rows, columns=["property", "eps", "r", "tau", "kind"])


def envelope_frame(report: Dict[str, Any]) -> Optional[pd.DataFrame]:
    """Long table (r, t, β, c) of the first KL envelope."""
    _, env = _first_certificate(report, "envelope")
    if env is None:
        return None
    rows = [
        {"r": r, "t": t, "beta": env["beta"][i][j], "c": env["offset_c"]}
        for i, r in enumerate(env["r_grid"])
        for j, t in enumerate(env["t_grid"])
    ]
    return pd.DataFrame(rows, columns=["r", "t", "beta", "c"])


def reach_frame(report: Dict[str, Any]) -> Optional[pd.DataFrame]:
    """Cloud points as (t, x1..xn)."""
    cloud = report.get("reach_cloud")
    if not cloud or not cloud.get("points"):
        return None
    n = len(cloud["points"][0])
    frame = pd.DataFrame(cloud["points"], columns=[f"x{i + 1}" for i in range(n)])
    frame.insert(0, "t", cloud.get("times") or [0.0] * len(frame))
    return frame


def trajectory_frame(report: Dict[str, Any]) -> Optional[pd.DataFrame]:
    """Stacked trajectories as (trajectory, t, x1..xn)."""
    paths = report.get("trajectories") or []
    if not paths:
        return None
    frames = []
    for path in paths:
        n = len(path["states"][0])
        frame = pd.DataFrame(path["states"], columns=[f"x{i + 1}" for i in range(n)])
        frame.insert(0, "t", path["times"])
        frame.insert(0, "trajectory", path["id"])
        frames.append(frame)
    return pd.concat(frames, ignore_index=True)


def load_report(report_path: str) -> Dict[str, Any]:
    try:
        with open(report_path, "r") as f:
            return json.load(f)
    except FileNotFoundError as e:
        raise InputError(f"report file not found: {report_path}") from e
    except json.JSONDecodeError as e:
        raise InputError(f"report is not valid JSON: line {e.lineno} column {e.colno}: {e.msg}") from e


def export_plots(report: Dict[str, Any], out_dir: str) -> ExportSummary:
    """
    Write every CSV the report has data for; a missing certificate skips
    its file with a notice.
    """
    os.makedirs(out_dir, exist_ok=True)
    summary = ExportSummary()
    builders = [
        (TAU_FILE, tau_frame, "no τ certificate in the report"),
        (ENVELOPE_FILE, envelope_frame, "no KL envelope certificate in the report"),
        (REACH_FILE, reach_frame, "no reach cloud in the report"),
        (TRAJECTORY_FILE, trajectory_frame, "no trajectories in the report"),
    ]
    for filename, build, reason in builders:
        frame = build(report)
        if frame is None:
            logger.warning(f"Skipping {filename}: {reason}")
            summary.skipped[filename] = reason
            continue
        path = os.path.join(out_dir, filename)
        frame.to_csv(path, index=False, lineterminator=LINE_TERMINATOR)
        summary.written.append(path)
    return summary


class ExportTool(BaseTool):
    """
    Tool for exporting report data as CSV files.
    """

    def __init__(self, verbose: bool = False):
        super().__init__(
            name="Export Tool",
            description="Writes τ, KL envelope, reach cloud and trajectory CSV files from a report",
            verbose=verbose
        )

    async def run(self, report_path: str, out_dir: str) -> Dict[str, Any]:
        """
        Export one report.

        Args:
            report_path: JSON report written by the run command
            out_dir: Directory for the CSV files

        Returns:
            Dictionary with status, written files and skipped files
        """
        self.log(f"Exporting {report_path} to {out_dir}")
        try:
            report = load_report(report_path)
            summary = await self.call(export_plots, report, out_dir)
        except InputError as e:
            return self.failure("Export", "invalid input", e)
        except OSError as e:
            return self.failure("Export", "a write error", e)
        return {"status": "success", "written": summary.written, "skipped": summary.skipped}
