from __future__ import annotations

import pytest

pytest.importorskip("fastmcp")

from mmvi import app  # noqa: E402
from mmvi.base import MeshCrossing  # noqa: E402


def test_execute_turns_numerical_failures_into_tool_errors():
    def collapse():
        raise MeshCrossing("cell 2 collapsed", step_index=12)

    with pytest.raises(RuntimeError, match="mesh_crossing") as info:
        app._execute(collapse)
    assert "step 12" in str(info.value)
    assert isinstance(info.value.__cause__, MeshCrossing)


def test_execute_passes_results_through():
    assert app._execute(lambda value: value * 2, value=21) == 42


def test_run_tool_returns_metadata(tmp_path):
    result = app._run(
        {
            "problem": "Vacuum",
            "strategy": "UniformMesh",
            "scheme": "Gauss1",
            "N": 3,
            "dt": 0.1,
            "t_max": 0.2,
            "output_dir": str(tmp_path),
        }
    )
    assert result["termination_reason"] == "completed"
    assert result["records"] == 3
    assert result["config"]["problem"] == "Vacuum"
