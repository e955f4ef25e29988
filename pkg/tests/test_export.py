"""CSV plot data from saved reports."""

import asyncio
import json

import pandas as pd
import pytest

from core.errors import InputError
from tools.export_tool import (
    ENVELOPE_FILE,
    REACH_FILE,
    TAU_FILE,
    TRAJECTORY_FILE,
    ExportTool,
    export_plots,
    load_report,
    tau_frame,
)


def _tau(values, kind="first_entry"):
    return {"eps_grid": [0.1, 0.2], "r_grid": [1.0], "kind": kind, "smoothed": None,
            "raw": {"rows": [0.1, 0.2], "cols": [1.0], "values": values}}


@pytest.fixture
def report():
    return {
        "summary": {"pUGAS": "SupportedUpTo"},
        "reports": {
            "pUGAS": {"status": "SupportedUpTo", "certificates": {
                "tau": _tau([[9.0], [8.0]], "last_exit"),
                "envelope": {"r_grid": [0.0, 1.0], "t_grid": [0.0, 1.0], "beta": [[0.0, 0.0], [1.0, 0.5]],
                             "offset_c": 0.0}}},
            "UniformWeakAttractive": {"status": "SupportedUpTo", "certificates": {"tau": _tau([[2.3], [1.6]])}},
            "RFC": {"status": "Inconclusive", "certificates": None},
        },
        "trajectories": [
            {"id": 0, "times": [0.0, 1.0], "states": [[1.0], [0.37]]},
            {"id": 1, "times": [0.0, 1.0], "states": [[-1.0], [-0.37]]},
        ],
    }


# -----------------------------------------------------------------------------
# Frames
# -----------------------------------------------------------------------------

def test_measured_tau_is_preferred_over_envelope_tau(report):
    frame = tau_frame(report)
    assert set(frame["property"]) == {"UniformWeakAttractive"}
    assert frame["tau"].tolist() == [2.3, 1.6]
    assert list(frame.columns) == ["property", "eps", "r", "tau", "kind"]


def test_smoothed_tau_wins_when_present(report):
    tau = report["reports"]["UniformWeakAttractive"]["certificates"]["tau"]
    tau["smoothed"] = {"rows": [0.1, 0.2], "cols": [1.0], "values": [[3.0], [2.0]]}
    assert tau_frame(report)["tau"].tolist() == [3.0, 2.0]


# -----------------------------------------------------------------------------
# Files
# -----------------------------------------------------------------------------

def test_export_writes_available_files_and_skips_the_rest(report, tmp_path):
    summary = export_plots(report, str(tmp_path))
    written = sorted(p.split("/")[-1] for p in summary.written)
    assert written == sorted([TAU_FILE, ENVELOPE_FILE, TRAJECTORY_FILE])
    assert list(summary.skipped) == [REACH_FILE]
    paths = pd.read_csv(tmp_path / TRAJECTORY_FILE)
    assert list(paths.columns) == ["trajectory", "t", "x1"]
    assert len(paths) == 4
    envelope = pd.read_csv(tmp_path / ENVELOPE_FILE)
    assert envelope["beta"].tolist() == [0.0, 0.0, 1.0, 0.5]


def test_csv_lines_end_with_crlf(report, tmp_path):
    export_plots(report, str(tmp_path))
    raw = (tmp_path / TAU_FILE).read_bytes()
    assert raw.count(b"\r\n") == 3
    assert raw.startswith(b"property,eps,r,tau,kind\r\n")


def test_reach_cloud_without_times_defaults_to_zero(tmp_path):
    summary = export_plots({"reach_cloud": {"points": [[0.1, 0.2], [0.3, 0.4]]}}, str(tmp_path))
    assert len(summary.written) == 1
    cloud = pd.read_csv(tmp_path / REACH_FILE)
    assert list(cloud.columns) == ["t", "x1", "x2"]
    assert cloud["t"].tolist() == [0.0, 0.0]


def test_load_report_errors(tmp_path):
    with pytest.raises(InputError, match="not found"):
        load_report(str(tmp_path / "missing.json"))
    broken = tmp_path / "broken.json"
    broken.write_text("{\n  \"summary\": \n")
    with pytest.raises(InputError, match="line"):
        load_report(str(broken))


def test_export_tool_statuses(report, tmp_path):
    path = tmp_path / "report.json"
    path.write_text(json.dumps(report))
    out = asyncio.run(ExportTool().run(str(path), str(tmp_path / "plots")))
    assert out["status"] == "success"
    assert len(out["written"]) == 3
    missing = asyncio.run(ExportTool().run(str(tmp_path / "nope.json"), str(tmp_path / "plots")))
    assert missing["status"] == "error"
