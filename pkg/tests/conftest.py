from __future__ import annotations

from pathlib import Path

import pytest

from toolshed import DEFAULT_TOOL_CONFIG, Registry, build_toolbox, specs_from_config
from toolshed.datasets import make_desk_dataset
from toolshed.fixtures import load_dataset

DATASET_DIR = Path(__file__).resolve().parent.parent / "datasets" / "desk"


@pytest.fixture(scope="session")
def desk_fixtures():
    if DATASET_DIR.is_dir():
        return load_dataset(DATASET_DIR)
    return make_desk_dataset()


@pytest.fixture(scope="session")
def desk_dir(tmp_path_factory):
    if DATASET_DIR.is_dir():
        return DATASET_DIR
    out = tmp_path_factory.mktemp("desk")
    from toolshed.fixtures import save_dataset

    save_dataset(make_desk_dataset(), out)
    return out


def build_registry() -> Registry:
    registry = Registry()
    toolbox = build_toolbox()
    for spec in specs_from_config(DEFAULT_TOOL_CONFIG):
        registry.register_tool(spec, toolbox[spec.name])
    return registry


@pytest.fixture
def registry():
    reg = build_registry()
    yield reg
    reg.close()


def pytest_terminal_summary(terminalreporter):
    """Echo the acceptance checklist past stdout capture."""
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "CHECKLIST", None)
    if not lines:
        return
    terminalreporter.section("acceptance checklist")
    for line in lines:
        terminalreporter.write_line(line)
