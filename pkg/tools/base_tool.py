"""
Base Tool class for the stability toolkit.

Tools wrap constructions and searches that run after the property checks.
They never raise on bad input: ``run`` returns a status dictionary.
"""

import asyncio
import logging
from abc import ABC, abstractmethod
from typing import Any, Callable, Dict


class BaseTool(ABC):
    """Async wrapper around blocking numerical routines."""

    def __init__(self, name: str, description: str, verbose: bool = False):
        self.name = name
        self.description = description
        self.verbose = verbose
        self.logger = logging.getLogger(f"stability.{name.lower().replace(' ', '_')}")

    @abstractmethod
    async def run(self, **kwargs) -> Dict[str, Any]:
        """
        Returns:
            Dictionary with ``status`` ("success", "refused" or "error")
            and the tool's payload
        """

    async def call(self, fn: Callable[..., Any], *args, **kwargs) -> Any:
        """Run a blocking numerical routine off the event loop."""
        return await asyncio.to_thread(fn, *args, **kwargs)

    def failure(self, action: str, reason: str, error: Exception) -> Dict[str, Any]:
        """Error status for a failed ``action``, logged at debug level."""
        self.logger.debug(f"{action} failed ({reason}): {error}")
        return {"status": "error", "message": f"{action} failed due to {reason}", "error": str(error)}

    def log(self, message: str) -> None:
        if self.verbose:
            self.logger.info(f"[{self.name}] {message}")
