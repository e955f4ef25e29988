"""
Base Analyzer class for the stability toolkit.
All specialized analyzers will inherit from this class.
"""

import asyncio
import logging
from abc import ABC
from typing import Any, Callable, Dict, List

from core.errors import InputError


class BaseAnalyzer(ABC):
    """
    Base analyzer class that all specialized analyzers will inherit from.

    Subclasses register their synchronous analyses in ``operations``;
    ``process`` dispatches ``input_data["operation"]`` to one of them on a
    worker thread so the orchestrator's event loop stays responsive.
    """

    def __init__(self, name: str, description: str, verbose: bool = False):
        self.name = name
        self.description = description
        self.verbose = verbose
        self.operations: Dict[str, Callable[..., Any]] = {}
        self.history: List[Dict[str, Any]] = []
        self.logger = logging.getLogger(f"stability.{name.lower().replace(' ', '_')}")

    async def process(self, input_data: Dict[str, Any]) -> Dict[str, Any]:
        """
        Run one registered analysis.

        Args:
            input_data: ``operation`` plus the keyword arguments of that analysis

        Returns:
            Dictionary with ``operation`` and ``result``
        """
        args = dict(input_data)
        operation = args.pop("operation", None)
        fn = self.operations.get(operation)
        if fn is None:
            raise InputError(f"{self.name} has no operation '{operation}'; known: {', '.join(sorted(self.operations))}")
        self.log(f"Running {operation}")
        result = await asyncio.to_thread(fn, **args)
        self.history.append({"operation": operation})
        return {"operation": operation, "result": result}

    def log(self, message: str) -> None:
        """Log a message if verbose mode is enabled."""
        if self.verbose:
            self.logger.info(f"[{self.name}] {message}")
