"""Config validation, the full analysis workflow and the command line."""

import asyncio
import json

import pytest

import app
from core.errors import InputError
from orchestration.base_orchestrator import OrchestratorConfig
from orchestration.stability_orchestrator import (
    EXIT_FALSIFIED,
    EXIT_INCONCLUSIVE,
    EXIT_SUPPORTED,
    EXIT_USAGE,
    AnalysisConfig,
    AnalysisKind,
    StabilityOrchestrator,
    exit_code_for,
    load_config,
)


def _config(tmp_path, builtin="scalar_stable", properties=("ExponentialStability", "Lagrange", "ULS"), **extra):
    data = {
        "system": {"builtin": builtin},
        "properties": list(properties),
        "budgets": {"samples": 8, "signals": 2, "horizon": 4.0, "seed": 3},
        "grids": {"eps": [0.1, 0.2], "r": [0.5, 1.0]},
        "output": {"dir": str(tmp_path / "out"), "trajectories": 2},
    }
    data.update(extra)
    return data


def _write(tmp_path, data, name="config.json"):
    path = tmp_path / name
    path.write_text(data if isinstance(data, str) else json.dumps(data))
    return str(path)


# -----------------------------------------------------------------------------
# Config validation
# -----------------------------------------------------------------------------

def test_malformed_json_reports_line_and_column(tmp_path):
    path = _write(tmp_path, "{\n  \"system\": }\n")
    with pytest.raises(InputError, match="line 2 column"):
        load_config(path)


def test_missing_config_file(tmp_path):
    with pytest.raises(InputError, match="cannot read config"):
        load_config(str(tmp_path / "absent.json"))


@pytest.mark.parametrize("patch,path", [
    ({"properties": ["Nope"]}, "properties.0"),
    ({"budgets": {"samples": 8}}, "budgets.seed"),
    ({"grids": {"eps": [0.2, 0.1]}}, "grids.eps"),
    ({"reach": {"schedule": [0.4, 0.2]}}, "reach.schedule"),
    ({"system": {"builtin": "scalar_stable", "expressions": ["-x1"]}}, "system"),
    ({"surprise": 1}, "surprise"),
])
def test_schema_violations_name_the_field(tmp_path, patch, path):
    with pytest.raises(InputError) as err:
        load_config(_write(tmp_path, _config(tmp_path, **patch)))
    assert path in str(err.value)


def test_cross_field_checks(tmp_path):
    with pytest.raises(InputError, match="does not match"):
        load_config(_write(tmp_path, _config(tmp_path, set={"kind": "ball", "center": [0.0, 0.0], "radius": 1.0})))
    with pytest.raises(InputError, match="lyapunov"):
        load_config(_write(tmp_path, _config(tmp_path, properties=["Lyapunov"])))
    with pytest.raises(InputError, match="builtin system"):
        load_config(_write(tmp_path, _config(tmp_path, system={"expressions": ["-x1"]},
                                             disturbance_sweep={"M": [1.0, 2.0]})))


def test_expression_systems_and_sets_are_accepted(tmp_path):
    config = load_config(_write(tmp_path, _config(
        tmp_path, system={"expressions": ["-x1 + d1"], "disturbance_lower": [-0.1], "disturbance_upper": [0.1]},
        set={"kind": "box", "lower": [-0.5], "upper": [0.5]})))
    system = config.system.build()
    assert system.dimension == 1
    assert config.target_set(system).kind.value == "box"


def test_requested_analyses_run_once_in_dependency_order(tmp_path):
    config = AnalysisConfig.model_validate(_config(tmp_path, properties=["ULS", "RFC", "Lagrange", "ULS"]))
    assert config.requested() == [AnalysisKind.RFC, AnalysisKind.LAGRANGE, AnalysisKind.ULS]


def test_overrides_are_validated_and_echoed(tmp_path):
    config = AnalysisConfig.model_validate(_config(tmp_path))
    changed = config.with_overrides(seed=11, horizon=2.0, jobs=2, out=str(tmp_path / "elsewhere"))
    assert changed.budgets.seed == 11
    assert changed.budgets.horizon == 2.0
    assert changed.budgets.jobs == 2
    assert changed.output.dir.endswith("elsewhere")
    assert AnalysisConfig.model_validate(changed.echo()).echo() == changed.echo()
    with pytest.raises(ValueError):
        config.with_overrides(tol=1.0)


@pytest.mark.parametrize("statuses,code", [
    ({}, EXIT_SUPPORTED),
    ({"a": "SupportedUpTo"}, EXIT_SUPPORTED),
    ({"a": "SupportedUpTo", "b": "Inconclusive"}, EXIT_INCONCLUSIVE),
    ({"a": "Inconclusive", "b": "Falsified"}, EXIT_FALSIFIED),
])
def test_exit_codes(statuses, code):
    assert exit_code_for(statuses) == code


# -----------------------------------------------------------------------------
# Workflows
# -----------------------------------------------------------------------------

def _orchestrator(tmp_path) -> StabilityOrchestrator:
    return StabilityOrchestrator(config=OrchestratorConfig(output_dir=str(tmp_path / "default")))


def test_full_analysis_writes_one_report(tmp_path):
    config = AnalysisConfig.model_validate(_config(tmp_path))
    result = asyncio.run(_orchestrator(tmp_path).execute_workflow("full_analysis", {"config": config}))
    assert result["exit_code"] == EXIT_SUPPORTED
    with open(result["report_path"]) as f:
        report = json.load(f)
    assert report["summary"] == {"ExponentialStability": "SupportedUpTo", "Lagrange": "SupportedUpTo",
                                 "ULS": "SupportedUpTo"}
    assert report["config"]["budgets"]["seed"] == 3
    assert report["system"]["name"] == "scalar_stable"
    assert len(report["trajectories"]) == 2
    assert "total" in report["timing"]["seconds"]


def test_falsified_analysis_sets_the_exit_code(tmp_path):
    config = AnalysisConfig.model_validate(_config(tmp_path, builtin="scalar_unstable", properties=["Lagrange"]))
    result = asyncio.run(_orchestrator(tmp_path).execute_workflow("full_analysis", {"config": config}))
    assert result["exit_code"] == EXIT_FALSIFIED
    assert result["report"]["reports"]["Lagrange"]["witness"] is not None


def test_export_workflow_skips_missing_certificates(tmp_path):
    orchestrator = _orchestrator(tmp_path)
    config = AnalysisConfig.model_validate(_config(tmp_path))
    result = asyncio.run(orchestrator.execute_workflow("full_analysis", {"config": config}))
    out = asyncio.run(orchestrator.execute_workflow("export_plots", {"report_path": result["report_path"],
                                                                     "out_dir": str(tmp_path / "plots")}))
    assert out["status"] == "success"
    assert [p.split("/")[-1] for p in out["written"]] == ["trajectories.csv"]
    assert set(out["skipped"]) == {"tau_surface.csv", "kl_envelope.csv", "reach_cloud.csv"}


# -----------------------------------------------------------------------------
# Command line
# -----------------------------------------------------------------------------

def test_list_systems(capsys):
    assert app.main(["list-systems"]) == 0
    out = capsys.readouterr().out
    assert "linear_diag(N)" in out
    assert len(out.strip().splitlines()) == 8


def test_bad_config_exits_with_usage_error(tmp_path, capsys):
    path = _write(tmp_path, "{\n  \"system\": }\n")
    assert app.main(["run", path]) == EXIT_USAGE
    assert "line 2 column" in capsys.readouterr().err


def test_unknown_command_is_a_usage_error():
    assert app.main(["frobnicate"]) == EXIT_USAGE


def test_run_and_export_from_the_command_line(tmp_path, capsys):
    path = _write(tmp_path, _config(tmp_path))
    assert app.main(["run", path, "--seed", "5", "--out", str(tmp_path / "cli")]) == EXIT_SUPPORTED
    report = tmp_path / "cli" / "report.json"
    assert json.loads(report.read_text())["config"]["budgets"]["seed"] == 5
    assert app.main(["export-plots", str(report), "--out", str(tmp_path / "plots")]) == 0
    out = capsys.readouterr().out
    assert "Report saved to" in out
    assert "Skipped tau_surface.csv" in out


# -----------------------------------------------------------------------------
# Analyzer calls
# -----------------------------------------------------------------------------

class _Flaky:
    def __init__(self):
        self.calls = 0

    async def process(self, input_data):
        self.calls += 1
        raise RuntimeError("integrator exploded")


def test_failed_analyzer_calls_become_error_outputs(tmp_path):
    orchestrator = StabilityOrchestrator(config=OrchestratorConfig(output_dir=str(tmp_path), max_retries=2))
    flaky = _Flaky()
    orchestrator.register_analyzer("flaky", flaky)
    output = asyncio.run(orchestrator.run_analyzer("flaky", {"operation": "check_lagrange"}))
    assert not output.success
    assert flaky.calls == 2
    assert output.content == {"operation": "check_lagrange", "error": "RuntimeError: integrator exploded"}
    with pytest.raises(ValueError):
        asyncio.run(orchestrator.run_analyzer("missing", {}))


def test_stage_dumps_are_numbered_per_workflow(tmp_path):
    stages = tmp_path / "stages"
    orchestrator = StabilityOrchestrator(config=OrchestratorConfig(output_dir=str(tmp_path), stage_dir=str(stages)))
    config = AnalysisConfig.model_validate(_config(tmp_path, properties=["Lagrange", "ULS"]))
    asyncio.run(orchestrator.execute_workflow("full_analysis", {"config": config}))
    names = sorted(p.name for p in stages.iterdir())
    assert names == ["full_analysis-001-properties-check_lagrange.json", "full_analysis-002-properties-check_uls.json"]
    dumped = json.loads((stages / names[0]).read_text())
    assert dumped["operation"] == "check_lagrange"


# -----------------------------------------------------------------------------
# Tool routing, stress passes and reproducibility
# -----------------------------------------------------------------------------

SEARCH_BUDGET = {"samples": 8, "signals": 2, "horizon": 10.0, "seed": 3, "search_evaluations": 32}


class _Recording:
    """Delegates to a tool and keeps the operations it ran."""

    def __init__(self, tool):
        self.tool = tool
        self.operations = []

    async def run(self, operation, **kwargs):
        self.operations.append(operation)
        return await self.tool.run(operation=operation, **kwargs)


class _BrokenSearch:
    async def run(self, operation, **kwargs):
        return {"status": "error", "message": "Search failed due to invalid input", "error": "no region"}


def test_stress_and_constructions_run_through_the_tools(tmp_path):
    orchestrator = _orchestrator(tmp_path)
    assert set(orchestrator.tools) == {"construction", "search", "export"}
    search = _Recording(orchestrator.tools["search"])
    construction = _Recording(orchestrator.tools["construction"])
    orchestrator.register_tool("search", search)
    orchestrator.register_tool("construction", construction)
    config = AnalysisConfig.model_validate(_config(tmp_path, properties=["UniformWeakAttractive", "pUGAS", "UGAS"],
                                                   budgets=SEARCH_BUDGET))
    assert config.budgets.stress is False
    result = asyncio.run(orchestrator.execute_workflow("full_analysis", {"config": config}))
    assert search.operations == ["stress", "stress"]
    assert construction.operations == ["smooth_tau", "lagrange_sigma", "kl_envelope"]
    summary = result["report"]["summary"]
    assert summary["UniformWeakAttractive"] == "SupportedUpTo"
    assert summary["pUGAS"] == "SupportedUpTo"
    assert result["report"]["reports"]["pUGAS"]["certificates"]["envelope"] is not None


def test_failed_stress_pass_leaves_uniform_weak_attractivity_inconclusive(tmp_path):
    orchestrator = _orchestrator(tmp_path)
    orchestrator.register_tool("search", _BrokenSearch())
    config = AnalysisConfig.model_validate(_config(tmp_path, properties=["UniformWeakAttractive"]))
    result = asyncio.run(orchestrator.execute_workflow("full_analysis", {"config": config}))
    entry = result["report"]["reports"]["UniformWeakAttractive"]
    assert entry["status"] == "Inconclusive"
    assert "stress pass did not finish: no region" in entry["note"]
    assert result["exit_code"] == EXIT_INCONCLUSIVE


def test_repeated_runs_give_identical_reports(tmp_path):
    config = AnalysisConfig.model_validate(_config(tmp_path, properties=["Lagrange", "ULS", "UniformWeakAttractive"],
                                                   budgets=SEARCH_BUDGET))
    texts = []
    for _ in range(2):
        result = asyncio.run(_orchestrator(tmp_path).execute_workflow("full_analysis", {"config": config}))
        with open(result["report_path"]) as f:
            report = json.load(f)
        report.pop("timing")
        texts.append(json.dumps(report, sort_keys=True))
    assert texts[0] == texts[1]


@pytest.mark.slow
def test_planar_counterexample_run_is_falsified_by_the_sweep(tmp_path):
    config = AnalysisConfig.model_validate(_config(
        tmp_path, builtin="planar_counterexample(4)", properties=["pUGAS", "RobustInvariant"],
        budgets={"samples": 16, "signals": 8, "horizon": 4.0, "seed": 1, "search_evaluations": 32},
        disturbance_sweep={"M": [1.0, 1000.0], "eps": 0.5, "h": 2.0}))
    result = asyncio.run(_orchestrator(tmp_path).execute_workflow("full_analysis", {"config": config}))
    assert result["exit_code"] == EXIT_FALSIFIED
    assert set(result["report"]["reports"]) == {"pUGAS", "RobustInvariant"}
    assert result["report"]["summary"]["RobustInvariant"] == "Falsified"
