"""
Base Orchestrator for the stability toolkit.
Registries of analyzers, tools and workflows, with retries, timeouts and
optional per-stage JSON dumps.
"""

import os
import json
import asyncio
import logging
from pathlib import Path
from typing import Any, Callable, Dict, Optional

import numpy as np
from pydantic import BaseModel, Field


class AnalyzerOutput(BaseModel):
    """Outcome of one analyzer operation."""
    analyzer_name: str
    message_type: str
    content: Dict[str, Any]
    success: bool
    metadata: Optional[Dict[str, Any]] = None


class OrchestratorConfig(BaseModel):
    """Runtime settings shared by every workflow."""
    debug: bool = False
    log_level: str = "INFO"
    output_dir: str = "./outputs"
    stage_dir: Optional[str] = Field(default=None, description="Dump every analyzer result here as JSON")
    max_retries: int = Field(default=1, ge=1, description="Attempts per analyzer or tool call")
    timeout_seconds: float = Field(default=600.0, gt=0, description="Wall-clock limit per analysis")


def json_default(value: Any) -> Any:
    """Fallback encoder for numpy values and pydantic models."""
    if hasattr(value, "to_json"):
        return value.to_json()
    if isinstance(value, BaseModel):
        return value.model_dump()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    if hasattr(value, "__dict__"):
        return value.__dict__
    return str(value)


class BaseOrchestrator:
    """
    Base class for analysis workflows.

    Analyzer and tool calls go through ``run_analyzer`` / ``run_tool``,
    which retry up to ``max_retries`` times under ``timeout_seconds`` and
    turn failures into error results instead of raising.
    """

    def __init__(self, config: Optional[OrchestratorConfig] = None):
        self.config = config or OrchestratorConfig()
        self.analyzers: Dict[str, Any] = {}
        self.tools: Dict[str, Any] = {}
        self.workflows: Dict[str, Callable] = {}
        self.current_workflow: Optional[str] = None
        self._stage_count = 0

        self._setup_logging()

        if self.config.stage_dir:
            Path(self.config.stage_dir).mkdir(parents=True, exist_ok=True)

    def _setup_logging(self):
        log_level = getattr(logging, self.config.log_level.upper(), logging.INFO)
        logging.basicConfig(
            level=log_level,
            format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
            datefmt='%Y-%m-%d %H:%M:%S'
        )
        self.logger = logging.getLogger("stability.orchestrator")
        if self.config.debug:
            self.logger.setLevel(logging.DEBUG)

    def register_analyzer(self, analyzer_name: str, analyzer_instance: Any) -> None:
        self.analyzers[analyzer_name] = analyzer_instance
        self.logger.debug(f"Registered analyzer: {analyzer_name}")

    def register_tool(self, tool_name: str, tool_instance: Any) -> None:
        self.tools[tool_name] = tool_instance
        self.logger.debug(f"Registered tool: {tool_name}")

    def register_workflow(self, workflow_name: str, workflow_function: Callable) -> None:
        self.workflows[workflow_name] = workflow_function
        self.logger.debug(f"Registered workflow: {workflow_name}")

    async def execute_workflow(self, workflow_name: str, input_data: Dict[str, Any]) -> Dict[str, Any]:
        """
        Run a registered workflow coroutine.

        Raises:
            ValueError: no workflow of that name
        """
        if workflow_name not in self.workflows:
            raise ValueError(f"Workflow '{workflow_name}' not found")

        self.current_workflow = workflow_name
        self._stage_count = 0
        self.logger.info(f"Executing workflow: {workflow_name}")
        try:
            return await self.workflows[workflow_name](input_data)
        except Exception as e:
            self.logger.error(f"Workflow '{workflow_name}' failed: {e}")
            raise
        finally:
            self.current_workflow = None

    async def run_analyzer(self, analyzer_name: str, input_data: Dict[str, Any]) -> AnalyzerOutput:
        """
        Run an analyzer operation under the configured timeout.

        Args:
            analyzer_name: Name of the analyzer to run
            input_data: ``operation`` plus its keyword arguments

        Returns:
            AnalyzerOutput; ``success`` is False after a timeout or an error
        """
        if analyzer_name not in self.analyzers:
            raise ValueError(f"Analyzer '{analyzer_name}' not found")

        analyzer = self.analyzers[analyzer_name]
        operation = input_data.get("operation")
        self.logger.debug(f"Running analyzer: {analyzer_name}.{operation}")

        error = ""
        for attempt in range(self.config.max_retries):
            try:
                result = await asyncio.wait_for(
                    analyzer.process(input_data),
                    timeout=self.config.timeout_seconds
                )
                self._dump_stage(f"{analyzer_name}-{operation}", result)
                return AnalyzerOutput(
                    analyzer_name=analyzer_name,
                    message_type="result",
                    content=result,
                    success=True
                )
            except asyncio.TimeoutError:
                error = f"timed out after {self.config.timeout_seconds:g} s"
                self.logger.warning(f"Timeout in analyzer '{analyzer_name}', attempt {attempt + 1}/{self.config.max_retries}")
            except Exception as e:
                error = f"{type(e).__name__}: {e}"
                self.logger.warning(f"Error in analyzer '{analyzer_name}', attempt {attempt + 1}/{self.config.max_retries}: {e}")

        self.logger.error(f"Analyzer '{analyzer_name}' failed after {self.config.max_retries} attempts: {error}")
        return AnalyzerOutput(
            analyzer_name=analyzer_name,
            message_type="error",
            content={"operation": operation, "error": error},
            success=False
        )

    async def run_tool(self, tool_name: str, **kwargs) -> Dict[str, Any]:
        """
        Run a tool under the configured timeout.

        Returns:
            The tool's status dictionary, or a status "error" dictionary
            when every attempt failed
        """
        if tool_name not in self.tools:
            raise ValueError(f"Tool '{tool_name}' not found")

        tool = self.tools[tool_name]
        self.logger.debug(f"Running tool: {tool_name}")

        error = ""
        for attempt in range(self.config.max_retries):
            try:
                return await asyncio.wait_for(
                    tool.run(**kwargs),
                    timeout=self.config.timeout_seconds
                )
            except asyncio.TimeoutError:
                error = f"timed out after {self.config.timeout_seconds:g} s"
                self.logger.warning(f"Timeout in tool '{tool_name}', attempt {attempt + 1}/{self.config.max_retries}")
            except Exception as e:
                error = f"{type(e).__name__}: {e}"
                self.logger.warning(f"Error in tool '{tool_name}', attempt {attempt + 1}/{self.config.max_retries}: {e}")

        self.logger.error(f"Tool '{tool_name}' failed after {self.config.max_retries} attempts: {error}")
        return {
            "status": "error",
            "message": f"Tool execution failed: {error}"
        }

    async def run_blocking(self, fn: Callable[..., Any], *args, **kwargs) -> Any:
        """Run a blocking routine on a worker thread under the configured timeout."""
        return await asyncio.wait_for(asyncio.to_thread(fn, *args, **kwargs), timeout=self.config.timeout_seconds)

    def _dump_stage(self, label: str, result: Any) -> None:
        """Write one analyzer result to ``stage_dir``, numbered in call order."""
        if not self.config.stage_dir:
            return
        self._stage_count += 1
        name = f"{self.current_workflow or 'adhoc'}-{self._stage_count:03d}-{label}".replace("/", "_")
        path = os.path.join(self.config.stage_dir, f"{name}.json")
        try:
            text = json.dumps(result, indent=2, sort_keys=True, default=json_default)
            with open(path, 'w') as f:
                f.write(text)
        except (OSError, TypeError, ValueError) as e:
            self.logger.warning(f"Could not write stage dump {path}: {e}")
