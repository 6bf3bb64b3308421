import runpy
from pathlib import Path

import pytest

DEMOS = sorted((Path(__file__).parents[1] / "demos").glob("*.py"))


@pytest.mark.parametrize("path", DEMOS, ids=[p.stem for p in DEMOS])
def test_demo_runs(path, monkeypatch, capsys):
    for var in ("SOP_AGENT_API_KEY", "SOP_AGENT_ENDPOINT", "SOP_AGENT_MODEL"):
        monkeypatch.delenv(var, raising=False)
    runpy.run_path(str(path), run_name="__main__")
    assert capsys.readouterr().out
