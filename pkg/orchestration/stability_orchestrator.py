"""
Stability Orchestrator for the stability toolkit.
Reads an analysis config, runs the requested analyses in dependency order
and writes a single JSON report.
"""

import os
import json
import time
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from analyzers.lyapunov_analyzer import LyapunovAnalyzer, LyapunovCandidate
from analyzers.property_analyzer import (
    DEFAULT_EPS_GRID,
    DEFAULT_H_GRID,
    DEFAULT_R_GRID,
    SWEEP_FACTOR,
    PropertyAnalyzer,
    envelope_grids,
    rfc_report,
    rfc_time_grid,
)
from analyzers.reach_analyzer import ReachAnalyzer
from core.errors import InputError
from core.reports import SEMANTICS_NOTE, PropertyKind, PropertyReport, ReachCloud, RfcEnvelope, build_report
from core.sets import SetDescriptor, origin
from core.verdict import DEFAULT_TOL, HORIZON_CAP, Budget, Verdict, VerdictStatus, combine
from dynamics.axioms import check_axioms
from dynamics.measures import simulate_from
from dynamics.systems import DynamicalSystem, OdeSystem, builtin, builtin_family, exponential_stability
from tools.construction_tool import ConstructionTool
from tools.export_tool import ExportTool
from tools.search_tool import AdversarialSearchTool
from .base_orchestrator import BaseOrchestrator, OrchestratorConfig, json_default

AXIOM_LIMIT = 1e-6
TRAJECTORY_OFFSET = 4099
TRAJECTORY_POINTS = 257

EXIT_SUPPORTED = 0
EXIT_USAGE = 1
EXIT_FALSIFIED = 2
EXIT_INCONCLUSIVE = 3


class AnalysisKind(str, Enum):
    """Analyses a config may request; property names match PropertyKind."""
    AXIOMS = "Axioms"
    EXPONENTIAL_STABILITY = "ExponentialStability"
    RFC = "RFC"
    LAGRANGE = "Lagrange"
    ULS = "ULS"
    UGS = "UGS"
    WEAK_ATTRACTIVE = "WeakAttractive"
    UNIFORM_WEAK_ATTRACTIVE = "UniformWeakAttractive"
    UGATT = "UGATT"
    UNIFORM_ULTIMATE_BOUNDED = "UniformUltimateBounded"
    ROBUST_INVARIANT = "RobustInvariant"
    GLOBALLY_RECURRENT = "GloballyRecurrent"
    UNIFORMLY_GLOBALLY_RECURRENT = "UniformlyGloballyRecurrent"
    A_EPS = "AEps"
    P_PLUS = "PPlus"
    PUGAS = "pUGAS"
    UGAS = "UGAS"
    LYAPUNOV = "Lyapunov"
    CROSS_CHECK_PUGAS = "CrossCheckPUGAS"
    CROSS_CHECK_UGAS = "CrossCheckUGAS"


# Execution order: RFC before the constructions, robust invariance before the Lyapunov conclusion.
ANALYSIS_ORDER = list(AnalysisKind)


class SystemSpec(BaseModel):
    """A builtin name, or one expression per state component plus the disturbance box."""
    model_config = ConfigDict(extra="forbid")

    builtin: Optional[str] = Field(default=None, description="Registry name, e.g. 'linear_diag(4)'")
    expressions: Optional[List[str]] = Field(default=None, description="Right-hand side per component")
    disturbance_lower: List[float] = Field(default_factory=lambda: [0.0])
    disturbance_upper: List[float] = Field(default_factory=lambda: [0.0])
    name: str = "custom"

    @model_validator(mode="after")
    def _one_source(self) -> "SystemSpec":
        if (self.builtin is None) == (self.expressions is None):
            raise ValueError("give exactly one of 'builtin' or 'expressions'")
        self.build()
        return self

    def build(self) -> DynamicalSystem:
        if self.builtin is not None:
            return builtin(self.builtin)
        return OdeSystem.from_expressions(self.expressions, self.disturbance_lower, self.disturbance_upper,
                                          name=self.name)


class SetSpec(SetDescriptor):
    """The target set A: points, ball or box."""
    model_config = ConfigDict(frozen=True, extra="forbid")


class BudgetSpec(BaseModel):
    """Sampling budget; the seed is mandatory."""
    model_config = ConfigDict(extra="forbid")

    samples: int = Field(default=64, ge=1)
    signals: int = Field(default=8, ge=1)
    horizon: float = Field(default=HORIZON_CAP, gt=0)
    tol: float = Field(default=DEFAULT_TOL, ge=1e-12, le=1e-3)
    delta: Optional[float] = Field(default=None, gt=0, description="Disturbance grid step Δ")
    seed: int
    jobs: int = Field(default=1, ge=1)
    search_evaluations: int = Field(default=512, ge=32)
    stress: bool = Field(
        default=False,
        description="Stress the Lagrange, ULS, UGS, UGATT and robust invariance tables; "
                    "uniform weak attractivity and the pUGAS τ are always stressed",
    )

    def to_budget(self) -> Budget:
        return Budget(samples=self.samples, signals=self.signals, horizon=self.horizon, tol=self.tol,
                      grid_step=self.delta, seed=self.seed, jobs=self.jobs,
                      search_evaluations=self.search_evaluations)


def _increasing(values: List[float], allow_zero: bool = False) -> List[float]:
    if not values:
        raise ValueError("grid must be nonempty")
    if any(v < 0 or (v == 0 and not allow_zero) for v in values):
        raise ValueError("grid entries must be positive")
    if any(b <= a for a, b in zip(values, values[1:])):
        raise ValueError("grid must be strictly increasing")
    return values


class GridSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    eps: List[float] = Field(default_factory=lambda: list(DEFAULT_EPS_GRID))
    r: List[float] = Field(default_factory=lambda: list(DEFAULT_R_GRID))
    t: Optional[List[float]] = Field(default=None, description="RFC time columns; 33 points over the horizon if unset")
    h: List[float] = Field(default_factory=lambda: list(DEFAULT_H_GRID))

    @field_validator("eps", "r", "h")
    @classmethod
    def _positive(cls, values: List[float]) -> List[float]:
        return _increasing(values)

    @field_validator("t")
    @classmethod
    def _times(cls, values: Optional[List[float]]) -> Optional[List[float]]:
        return None if values is None else _increasing(values, allow_zero=True)


class ReachSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    eps: float = Field(default=0.25, gt=0, description="ε of the A_ε analysis")
    schedule: List[float] = Field(default_factory=lambda: [0.4, 0.2, 0.1], description="Decreasing ε for P₊(A)")

    @field_validator("schedule")
    @classmethod
    def _decreasing(cls, values: List[float]) -> List[float]:
        if len(values) < 3:
            raise ValueError("the schedule needs at least three entries")
        _increasing(list(reversed(values)))
        return values


class LyapunovSpec(BaseModel):
    """V in x1..xn; ψ₂ and α in r, fitted from samples when omitted."""
    model_config = ConfigDict(extra="forbid")

    V: str
    psi2: Optional[str] = None
    alpha: Optional[str] = None


class SweepSpec(BaseModel):
    """Disturbance bounds M for the robust invariance sweep."""
    model_config = ConfigDict(extra="forbid")

    M: List[float] = Field(min_length=2)
    eps: float = Field(default=0.5, gt=0)
    h: float = Field(default=5.0, gt=0)
    factor: float = Field(default=SWEEP_FACTOR, gt=1)


class OutputSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    dir: Optional[str] = Field(default=None, description="Report directory; the orchestrator output_dir if unset")
    report: str = "report.json"
    trajectories: int = Field(default=4, ge=0, description="Sample trajectories embedded in the report")


class AnalysisConfig(BaseModel):
    """One analysis run: system, target set, requested analyses, budgets and grids."""
    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    system: SystemSpec
    target: Optional[SetSpec] = Field(default=None, alias="set", description="The origin if unset")
    properties: List[AnalysisKind] = Field(min_length=1)
    budgets: BudgetSpec
    grids: GridSpec = Field(default_factory=GridSpec)
    reach: ReachSpec = Field(default_factory=ReachSpec)
    lyapunov: Optional[LyapunovSpec] = None
    disturbance_sweep: Optional[SweepSpec] = None
    output: OutputSpec = Field(default_factory=OutputSpec)

    @model_validator(mode="after")
    def _consistent(self) -> "AnalysisConfig":
        system = self.system.build()
        A = self.target_set(system)
        if A.dimension != system.dimension:
            raise ValueError(f"set dimension {A.dimension} does not match system dimension {system.dimension}")
        if AnalysisKind.LYAPUNOV in self.properties:
            if self.lyapunov is None:
                raise ValueError("the Lyapunov analysis needs a 'lyapunov' section")
            LyapunovCandidate.from_expressions(self.lyapunov.V, A, self.lyapunov.psi2, self.lyapunov.alpha)
        if self.disturbance_sweep is not None:
            if self.system.builtin is None:
                raise ValueError("a disturbance sweep needs a builtin system with a bound M")
            builtin_family(self.system.builtin)
        return self

    def target_set(self, system: DynamicalSystem) -> SetDescriptor:
        return origin(system.dimension) if self.target is None else self.target

    def requested(self) -> List[AnalysisKind]:
        """Requested analyses without repeats, in execution order."""
        return sorted(set(self.properties), key=ANALYSIS_ORDER.index)

    def echo(self) -> Dict[str, Any]:
        """Effective config; feeding it back reproduces the run."""
        return self.model_dump(mode="json", by_alias=True, exclude_none=True)

    def with_overrides(self, seed: Optional[int] = None, tol: Optional[float] = None,
                       horizon: Optional[float] = None, jobs: Optional[int] = None,
                       out: Optional[str] = None) -> "AnalysisConfig":
        """Apply command-line overrides and validate the result again."""
        data = self.echo()
        for key, value in (("seed", seed), ("tol", tol), ("horizon", horizon), ("jobs", jobs)):
            if value is not None:
                data["budgets"][key] = value
        if out is not None:
            data["output"]["dir"] = out
        return AnalysisConfig.model_validate(data)


def format_validation_error(error: ValidationError) -> str:
    """One ``field.path: message`` entry per problem."""
    parts = []
    for err in error.errors():
        path = ".".join(str(p) for p in err["loc"]) or "(root)"
        parts.append(f"{path}: {err['msg']}")
    return "; ".join(parts)


def load_config(path: str) -> AnalysisConfig:
    """
    Read and validate a JSON analysis config.

    Raises:
        InputError: unreadable file, malformed JSON (with line and column) or
            schema violation (with the field path)
    """
    try:
        with open(path, "r") as f:
            text = f.read()
    except OSError as e:
        raise InputError(f"cannot read config {path}: {e.strerror}") from e
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise InputError(f"{path}: line {e.lineno} column {e.colno}: {e.msg}") from e
    try:
        return AnalysisConfig.model_validate(data)
    except ValidationError as e:
        raise InputError(f"{path}: {format_validation_error(e)}") from e


def exit_code_for(statuses: Dict[str, str]) -> int:
    """0 when all supported, 2 when any falsified, else 3."""
    values = set(statuses.values())
    if VerdictStatus.FALSIFIED.value in values:
        return EXIT_FALSIFIED
    if VerdictStatus.INCONCLUSIVE.value in values:
        return EXIT_INCONCLUSIVE
    return EXIT_SUPPORTED


class AnalysisRun:
    """State shared by the analyses of one workflow execution."""

    def __init__(self, config: AnalysisConfig):
        self.config = config
        self.system = config.system.build()
        self.A = config.target_set(self.system)
        self.budget = config.budgets.to_budget()
        self.reports: Dict[str, Dict[str, Any]] = {}
        self.verdicts: Dict[str, Verdict] = {}
        self.property_reports: Dict[str, PropertyReport] = {}
        self.clouds: Dict[str, ReachCloud] = {}
        self.rfc: Optional[RfcEnvelope] = None
        self.envelope: Optional[PropertyReport] = None
        self.timing: Dict[str, float] = {}

    @property
    def eps(self) -> List[float]:
        return self.config.grids.eps

    @property
    def radii(self) -> List[float]:
        return self.config.grids.r

    def record(self, name: str, report: PropertyReport) -> None:
        self.property_reports[name] = report
        self.verdicts[name] = report.verdict
        self.reports[name] = report.to_json()

    def statuses(self) -> Dict[str, str]:
        return {name: entry["status"] for name, entry in self.reports.items()}


class StabilityOrchestrator(BaseOrchestrator):
    """
    Orchestrator for stability analyses.
    Coordinates the Reach, Property and Lyapunov analyzers with the
    Construction, Search and Export tools.
    """

    def __init__(self, config: Optional[OrchestratorConfig] = None, verbose: bool = False):
        """
        Initialize the stability orchestrator.

        Args:
            config: Configuration for the orchestrator
            verbose: Enable analyzer and tool logging
        """
        super().__init__(config)
        verbose = verbose or self.config.debug

        self.register_analyzer("reach", ReachAnalyzer(verbose=verbose))
        self.register_analyzer("properties", PropertyAnalyzer(verbose=verbose))
        self.register_analyzer("lyapunov", LyapunovAnalyzer(verbose=verbose))
        self.register_tool("construction", ConstructionTool(verbose=verbose))
        self.register_tool("search", AdversarialSearchTool(verbose=verbose))
        self.register_tool("export", ExportTool(verbose=verbose))

        self.register_workflow("full_analysis", self.workflow_full_analysis)
        self.register_workflow("export_plots", self.workflow_export_plots)

        self._handlers = {
            AnalysisKind.AXIOMS: self._axioms,
            AnalysisKind.EXPONENTIAL_STABILITY: self._exponential,
            AnalysisKind.RFC: self._rfc_entry,
            AnalysisKind.LAGRANGE: self._lagrange,
            AnalysisKind.ULS: self._uls,
            AnalysisKind.UGS: self._ugs,
            AnalysisKind.WEAK_ATTRACTIVE: self._weak,
            AnalysisKind.UNIFORM_WEAK_ATTRACTIVE: self._uniform_weak,
            AnalysisKind.UGATT: self._ugatt,
            AnalysisKind.UNIFORM_ULTIMATE_BOUNDED: self._ultimate_bound,
            AnalysisKind.ROBUST_INVARIANT: self._robust,
            AnalysisKind.GLOBALLY_RECURRENT: self._recurrence,
            AnalysisKind.UNIFORMLY_GLOBALLY_RECURRENT: self._recurrence,
            AnalysisKind.A_EPS: self._a_eps,
            AnalysisKind.P_PLUS: self._p_plus,
            AnalysisKind.PUGAS: self._pugas,
            AnalysisKind.UGAS: self._ugas,
            AnalysisKind.LYAPUNOV: self._lyapunov,
            AnalysisKind.CROSS_CHECK_PUGAS: self._cross_check,
            AnalysisKind.CROSS_CHECK_UGAS: self._cross_check,
        }

    async def workflow_full_analysis(self, input_data: Dict[str, Any]) -> Dict[str, Any]:
        """
        Run every requested analysis and write the report.

        Args:
            input_data: Dictionary with the validated ``config``

        Returns:
            Dictionary with the report, its path and the exit code
        """
        config: AnalysisConfig = input_data["config"]
        run = AnalysisRun(config)
        self.logger.info(f"Analyzing {run.system.name} (n={run.system.dimension}) with seed {run.budget.seed}")
        started = time.perf_counter()

        for kind in config.requested():
            self.logger.info(f"Stage: {kind.value}")
            t0 = time.perf_counter()
            await self._handlers[kind](run, kind)
            run.timing[kind.value] = time.perf_counter() - t0
            self.logger.info(f"{kind.value}: {run.reports[kind.value]['status']}")

        trajectories = await self._trajectories(run)
        run.timing["total"] = time.perf_counter() - started

        statuses = run.statuses()
        code = exit_code_for(statuses)
        report = {
            "config": config.echo(),
            "system": {"name": run.system.name, "dimension": run.system.dimension, "note": run.system.note()},
            "semantics": SEMANTICS_NOTE,
            "reports": run.reports,
            "summary": statuses,
            "exit_code": code,
            "trajectories": trajectories,
            "timing": {"seconds": run.timing},
        }
        cloud = run.clouds.get("AEps") or run.clouds.get("PPlus")
        if cloud is not None:
            report["reach_cloud"] = dict(cloud.summary(), points=cloud.points.tolist(),
                                         times=cloud.point_times.tolist())

        path = self._write_report(config, report)
        self.logger.info(f"Report saved to: {path}")
        return {"report": report, "report_path": path, "exit_code": code}

    async def workflow_export_plots(self, input_data: Dict[str, Any]) -> Dict[str, Any]:
        """
        Export the CSV files of a saved report.

        Args:
            input_data: Dictionary with ``report_path`` and ``out_dir``

        Returns:
            The export tool's output
        """
        return await self.run_tool("export", report_path=input_data["report_path"], out_dir=input_data["out_dir"])

    def _write_report(self, config: AnalysisConfig, report: Dict[str, Any]) -> str:
        out_dir = config.output.dir or self.config.output_dir
        os.makedirs(out_dir, exist_ok=True)
        path = os.path.join(out_dir, config.output.report)
        with open(path, "w") as f:
            json.dump(report, f, indent=2, sort_keys=True, default=json_default)
            f.write("\n")
        return path

    async def _call(self, run: AnalysisRun, analyzer: str, kind: PropertyKind, operation: str,
                    **kwargs) -> Any:
        """Result of one analyzer operation, or an Inconclusive report when it failed."""
        output = await self.run_analyzer(analyzer, {"operation": operation, **kwargs})
        if output.success:
            return output.content["result"]
        verdict = Verdict.inconclusive(f"{operation} did not finish: {output.content['error']}", run.budget)
        return build_report(kind, verdict, run.A)

    async def _property(self, run: AnalysisRun, kind: AnalysisKind, operation: str, stress_pass: bool = False,
                        **kwargs) -> PropertyReport:
        report = await self._call(run, "properties", PropertyKind(kind.value), operation,
                                  system=run.system, budget=run.budget, **kwargs)
        if stress_pass:
            report = await self._stress(run, report)
        run.record(kind.value, report)
        return report

    async def _stress(self, run: AnalysisRun, report: PropertyReport) -> PropertyReport:
        """Supported report after the search tool's stress pass."""
        if not report.verdict.is_supported:
            return report
        result = await self.run_tool("search", operation="stress", report=report, system=run.system,
                                     budget=run.budget)
        if result["status"] == "success":
            return result["report"]
        message = result.get("error") or result.get("message", "")
        self.logger.warning(f"Stress pass on {report.property.value} failed: {message}")
        return report.with_verdict(Verdict.inconclusive(f"stress pass did not finish: {message}", run.budget))

    async def _construct(self, operation: str, **kwargs) -> Tuple[Any, Optional[str]]:
        """Result of one construction tool call, or None and the reason it stopped."""
        result = await self.run_tool("construction", operation=operation, **kwargs)
        if result["status"] == "success":
            return result["result"], None
        return None, f"{operation}: {result.get('error') or result.get('message', '')}"

    async def _envelope(self, run: AnalysisRun) -> PropertyReport:
        """
        pUGAS report, built once per run: stressed UGATT τ, shared μ, the
        constructions through the construction tool, then held-out validation.
        """
        if run.envelope is not None:
            return run.envelope
        kind = PropertyKind.PUGAS
        eps_grid, r_grid = envelope_grids(run.radii)
        tau = await self._call(run, "properties", PropertyKind.UGATT, "estimate_tau_ugatt", system=run.system,
                               A=run.A, eps_grid=eps_grid, r_grid=r_grid, budget=run.budget)
        tau = await self._stress(run, tau)
        rfc = await self._shared_rfc(run) if tau.verdict.is_supported else None
        if not tau.verdict.is_supported:
            report = build_report(kind, tau.verdict, run.A, diagnostics={"stage": "tau"}, notes=tau.notes)
        elif rfc is None or not rfc.verdict.is_supported:
            verdict = rfc.verdict if rfc is not None else Verdict.inconclusive("RFC estimate did not finish",
                                                                               run.budget)
            report = build_report(kind, verdict, run.A, diagnostics={"stage": "rfc"})
        else:
            report = await self._constructed_envelope(run, tau, rfc)
        run.envelope = report
        return report

    async def _constructed_envelope(self, run: AnalysisRun, tau: PropertyReport, rfc: RfcEnvelope) -> PropertyReport:
        kind = PropertyKind.PUGAS
        smoothed, error = await self._construct("smooth_tau", raw=tau.certificates.tau)
        lag = env = None
        if error is None:
            lag, error = await self._construct("lagrange_sigma", mu=rfc, tau=smoothed)
        if error is None:
            env, error = await self._construct("kl_envelope", sigma=lag.sigma, c=lag.offset_c, tau=smoothed,
                                               delta_grid=run.radii, tau_verdict=tau.verdict)
        if error is not None:
            return build_report(kind, Verdict.inconclusive(error, run.budget), run.A,
                                diagnostics={"stage": "construction"})
        return await self._call(run, "properties", kind, "validate_pugas_envelope", system=run.system, A=run.A,
                                budget=run.budget, r_grid=run.radii, env=env, smoothed=smoothed, lag=lag)

    async def _shared_rfc(self, run: AnalysisRun) -> Optional[RfcEnvelope]:
        """μ on [0] + r grid, computed once per run."""
        if run.rfc is None:
            t_grid = run.config.grids.t or rfc_time_grid(run.budget)
            env = await self._call(run, "reach", PropertyKind.RFC, "estimate_rfc", system=run.system,
                                   r_grid=[0.0] + run.radii, t_grid=t_grid, budget=run.budget, A=run.A)
            if isinstance(env, PropertyReport):
                run.record(AnalysisKind.RFC.value, env)
                return None
            run.rfc = env
        return run.rfc

    async def _axioms(self, run: AnalysisRun, kind: AnalysisKind) -> None:
        try:
            audit = await self.run_blocking(check_axioms, run.system, tol=run.budget.tol, seed=run.budget.seed)
        except Exception as e:
            run.reports[kind.value] = {"status": VerdictStatus.INCONCLUSIVE.value, "note": f"axiom audit failed: {e}"}
            return
        ok = audit.within(AXIOM_LIMIT)
        note = "" if ok else f"violations above {AXIOM_LIMIT:g}: the integrator tolerance may be too loose"
        status = VerdictStatus.SUPPORTED if ok else VerdictStatus.INCONCLUSIVE
        run.reports[kind.value] = dict(audit.model_dump(), status=status.value, note=note)

    async def _exponential(self, run: AnalysisRun, kind: AnalysisKind) -> None:
        if not run.system.is_linear:
            run.reports[kind.value] = {"status": VerdictStatus.INCONCLUSIVE.value,
                                       "note": "exponential stability is computed for linear systems only"}
            return
        result = await self.run_blocking(exponential_stability, run.system)
        status = VerdictStatus.SUPPORTED if result.exponentially_stable else VerdictStatus.FALSIFIED
        note = f"spectral abscissa {result.spectral_abscissa:.6g}"
        run.reports[kind.value] = dict(result.model_dump(), status=status.value, note=note)

    async def _rfc_entry(self, run: AnalysisRun, kind: AnalysisKind) -> None:
        env = await self._shared_rfc(run)
        if env is not None:
            run.record(kind.value, rfc_report(env))

    async def _lagrange(self, run: AnalysisRun, kind: AnalysisKind) -> None:
        await self._property(run, kind, "check_lagrange", A=run.A, r_grid=run.radii,
                             stress_pass=run.config.budgets.stress)

    async def _uls(self, run: AnalysisRun, kind: AnalysisKind) -> None:
        await self._property(run, kind, "check_uls", A=run.A, eps_grid=run.eps,
                             stress_pass=run.config.budgets.stress)

    async def _ugs(self, run: AnalysisRun, kind: AnalysisKind) -> None:
        # stressed per conjunct inside the analyzer
        await self._property(run, kind, "check_ugs", A=run.A, eps_grid=run.eps, r_grid=run.radii,
                             stress=run.config.budgets.stress)

    async def _weak(self, run: AnalysisRun, kind: AnalysisKind) -> None:
        await self._property(run, kind, "check_weak_attractivity", A=run.A, eps=run.eps[0], radius=run.radii[-1])

    async def _uniform_weak(self, run: AnalysisRun, kind: AnalysisKind) -> None:
        # the sampled max is always stressed before it is reported
        await self._property(run, kind, "estimate_tau_uniform_weak", A=run.A, eps_grid=run.eps,
                             r_grid=run.radii, stress=False, stress_pass=True)

    async def _ugatt(self, run: AnalysisRun, kind: AnalysisKind) -> None:
        await self._property(run, kind, "estimate_tau_ugatt", A=run.A, eps_grid=run.eps, r_grid=run.radii,
                             stress_pass=run.config.budgets.stress)

    async def _ultimate_bound(self, run: AnalysisRun, kind: AnalysisKind) -> None:
        await self._property(run, kind, "check_uniform_ultimate_boundedness", r_grid=run.radii)

    async def _robust(self, run: AnalysisRun, kind: AnalysisKind) -> None:
        sweep = run.config.disturbance_sweep
        if sweep is None:
            await self._property(run, kind, "check_robust_invariance", A=run.A, eps_grid=run.eps,
                                 h_grid=run.config.grids.h, stress_pass=run.config.budgets.stress)
            return
        report = await self._call(run, "properties", PropertyKind.ROBUST_INVARIANT, "sweep_robust_invariance",
                                  family=builtin_family(run.config.system.builtin), Ms=sweep.M, A=run.A,
                                  eps=sweep.eps, h=sweep.h, budget=run.budget, factor=sweep.factor)
        run.record(kind.value, report)

    async def _recurrence(self, run: AnalysisRun, kind: AnalysisKind) -> None:
        uniform = kind == AnalysisKind.UNIFORMLY_GLOBALLY_RECURRENT
        await self._property(run, kind, "check_recurrence", A=run.A, uniform=uniform, radius_grid=run.radii)

    async def _cloud(self, run: AnalysisRun, kind: AnalysisKind, operation: str, **kwargs) -> Optional[ReachCloud]:
        output = await self.run_analyzer("reach", {"operation": operation, "system": run.system, "A": run.A,
                                                   "budget": run.budget, **kwargs})
        if not output.success:
            run.reports[kind.value] = {"status": VerdictStatus.INCONCLUSIVE.value,
                                       "note": f"{operation} did not finish: {output.content['error']}"}
            return None
        cloud: ReachCloud = output.content["result"]
        run.clouds[kind.value] = cloud
        entry = cloud.summary()
        if cloud.verdict.witness is not None:
            entry["witness"] = cloud.verdict.witness.model_dump()
        run.reports[kind.value] = entry
        return cloud

    async def _a_eps(self, run: AnalysisRun, kind: AnalysisKind) -> None:
        cloud = await self._cloud(run, kind, "a_eps", eps=run.config.reach.eps)
        if cloud is None or cloud.verdict.is_falsified:
            return
        probe = await self.run_analyzer("reach", {"operation": "probe_invariance", "cloud": cloud,
                                                  "system": run.system, "budget": run.budget})
        if probe.success:
            run.reports[kind.value]["invariance_probe"] = probe.content["result"].model_dump()

    async def _p_plus(self, run: AnalysisRun, kind: AnalysisKind) -> None:
        await self._cloud(run, kind, "p_plus", schedule=run.config.reach.schedule)

    async def _pugas(self, run: AnalysisRun, kind: AnalysisKind) -> None:
        run.record(kind.value, await self._envelope(run))

    async def _ugas(self, run: AnalysisRun, kind: AnalysisKind) -> None:
        pugas = await self._envelope(run)
        await self._property(run, kind, "fit_ugas_envelope", A=run.A, r_grid=run.radii,
                             uls=run.property_reports.get(AnalysisKind.ULS.value), pugas=pugas)

    async def _lyapunov(self, run: AnalysisRun, kind: AnalysisKind) -> None:
        spec = run.config.lyapunov
        uwa = PropertyKind.UNIFORM_WEAK_ATTRACTIVE
        cand = LyapunovCandidate.from_expressions(spec.V, run.A, spec.psi2, spec.alpha)
        for operation, missing in (("fit_psi2", cand.psi2 is None), ("fit_alpha", cand.alpha is None)):
            if missing:
                fitted = await self._call(run, "lyapunov", uwa, operation, cand=cand, system=run.system,
                                          budget=run.budget)
                if isinstance(fitted, PropertyReport):
                    run.reports[kind.value] = fitted.to_json()
                    return
                cand = fitted
        verify = await self._call(run, "lyapunov", uwa, "verify_noncoercive", cand=cand, system=run.system,
                                  budget=run.budget)
        if isinstance(verify, PropertyReport):
            verify = verify.verdict
        attraction = None
        if not verify.is_falsified:
            attraction = await self._call(run, "lyapunov", uwa, "check_lyapunov_attraction", cand=cand,
                                          system=run.system, eps_grid=run.eps, r_grid=run.radii, budget=run.budget)
        verdicts = [verify] + ([attraction.verdict] if attraction is not None else [])
        lyap = combine(verdicts, run.budget, verify.note if verify.is_falsified else "")

        env = await self._shared_rfc(run)
        rfc_verdict = env.verdict if env is not None else Verdict.inconclusive("RFC estimate did not finish")
        robust = run.verdicts.get(AnalysisKind.ROBUST_INVARIANT.value,
                                  Verdict.inconclusive("robust equilibrium not checked"))
        tau = attraction.certificates.tau if attraction is not None and attraction.certificates else None
        conclusion = await self._call(run, "lyapunov", uwa, "conclude", lyapunov=lyap, rfc=rfc_verdict,
                                      robust_equilibrium=robust, tau=tau)

        base = attraction if attraction is not None else build_report(uwa, lyap, run.A)
        entry = base.to_json()
        entry["status"] = lyap.status.value
        if not lyap.is_supported:
            entry.pop("certificates", None)
        entry["verification"] = verify.model_dump(mode="json")
        if isinstance(conclusion, PropertyReport):
            entry["conclusion"] = {"claim": None, "notes": [conclusion.verdict.note]}
        else:
            entry["conclusion"] = conclusion.model_dump(mode="json", exclude_none=True)
        entry["psi2_fitted"], entry["alpha_fitted"] = cand.psi2_fitted, cand.alpha_fitted
        run.verdicts[kind.value] = lyap
        run.reports[kind.value] = entry

    async def _cross_check(self, run: AnalysisRun, kind: AnalysisKind) -> None:
        pugas = kind == AnalysisKind.CROSS_CHECK_PUGAS
        operation = "cross_check_pugas" if pugas else "cross_check_ugas"
        kwargs = {} if pugas else {"h_grid": run.config.grids.h}
        output = await self.run_analyzer("properties", {"operation": operation, "system": run.system, "A": run.A,
                                                        "budget": run.budget, "r_grid": run.radii,
                                                        "eps_grid": run.eps, **kwargs})
        if not output.success:
            run.reports[kind.value] = {"status": VerdictStatus.INCONCLUSIVE.value,
                                       "note": f"{operation} did not finish: {output.content['error']}"}
            return
        consistency = output.content["result"]
        entry = consistency.to_json()
        entry["status"] = (consistency.status_of("i").value if consistency.consistent
                           else VerdictStatus.INCONCLUSIVE.value)
        run.reports[kind.value] = entry

    async def _trajectories(self, run: AnalysisRun) -> List[Dict[str, Any]]:
        """A few sampled flows from the largest ball, thinned for plotting."""
        count = run.config.output.trajectories
        if count == 0:
            return []
        budget = run.budget.model_copy(update={"samples": count, "signals": 1})
        try:
            batch = await self.run_blocking(simulate_from, run.system, run.A, run.radii[-1], budget,
                                            offset=TRAJECTORY_OFFSET)
        except Exception as e:
            self.logger.warning(f"Sample trajectories skipped: {e}")
            return []
        keep = np.unique(np.linspace(0, len(batch.times) - 1, TRAJECTORY_POINTS).round().astype(int))
        return [
            {"id": i, "times": batch.times[keep].tolist(), "states": batch.states[i, 0, keep].tolist()}
            for i in range(batch.states.shape[0])
        ]
