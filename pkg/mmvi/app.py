from __future__ import annotations

import logging
import os
from typing import Any, Dict, List, Optional

from fastmcp import FastMCP
from starlette.responses import JSONResponse

from .base import MmviError
from .config import load_config
from .modules.harness import convergence_study as _convergence_study
from .modules.harness import energy_study as _energy_study
from .modules.harness import run_experiment as _run_experiment
from .modules.tableaus import TABLEAUS


logging.basicConfig(level=getattr(logging, os.environ.get("MMVI_LOG_LEVEL", "INFO").upper(), logging.INFO))
logger = logging.getLogger("mmvi")

mcp_port = int(os.environ.get("PORT", 8084))
mcp = FastMCP("Moving-mesh integrators")


def _execute(handler, **kwargs):
    try:
        return handler(**kwargs)
    except MmviError as exc:
        logger.error("mmvi %s: %s", exc.termination_reason, exc)
        step = f" at step {exc.step_index}" if exc.step_index is not None else ""
        raise RuntimeError(f"run stopped ({exc.termination_reason}){step}: {exc}") from exc


def mmvi_tool(*, tags: set[str], read_only: bool, destructive: bool, open_world: bool = False):
    """Register an MCP tool with its safety hints."""
    return mcp.tool(
        tags=tags,
        annotations={
            "readOnlyHint": read_only,
            "destructiveHint": destructive,
            "openWorldHint": open_world,
        },
    )


def _run(config: Optional[Dict[str, Any]]):
    trajectory = _run_experiment(load_config(overrides=config))
    return {**trajectory.metadata, "records": len(trajectory)}


def _converge(config: Optional[Dict[str, Any]], Ns: List[int]):
    return _convergence_study(load_config(overrides=config), Ns).to_dict()


def _energy(config: Optional[Dict[str, Any]]):
    return _energy_study(load_config(overrides=config)).to_dict()


@mmvi_tool(read_only=False, destructive=False, tags={"experiments"})
def run_experiment(config: Optional[Dict[str, Any]] = None):
    """Integrate one configuration; writes state.csv, diagnostics.csv and meta.json and returns the run metadata."""
    return _execute(_run, config=config)


@mmvi_tool(read_only=False, destructive=False, tags={"experiments"})
def convergence_study(Ns: List[int], config: Optional[Dict[str, Any]] = None):
    """L-infinity convergence table of the single-soliton bounce over the given N."""
    return _execute(_converge, config=config, Ns=Ns)


@mmvi_tool(read_only=False, destructive=False, tags={"experiments"})
def energy_study(config: Optional[Dict[str, Any]] = None):
    """Discrete energy summary of a two-soliton run."""
    return _execute(_energy, config=config)


@mmvi_tool(read_only=True, destructive=False, tags={"schemes"})
def describe_schemes():
    """Coefficients, order and symplecticity of the shipped Runge-Kutta tableaus."""
    return [tab.describe() for tab in TABLEAUS.values()]


@mcp.custom_route("/health", methods=["GET"])
async def health_check(request):
    return JSONResponse({"status": "healthy", "service": "mmvi"})


if __name__ == "__main__":
    mcp.run(transport="streamable-http", port=mcp_port)
else:
    app = mcp.http_app()
