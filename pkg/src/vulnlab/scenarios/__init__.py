"""Shipped attack scenarios: contract fixtures, manifests and the replay runner."""
from __future__ import annotations

from vulnlab.scenarios.runner import (
    FIXTURE_DIR,
    MANIFEST_DIR,
    Expectation,
    Manifest,
    OverrideError,
    ScenarioError,
    ScenarioReport,
    SetupError,
    load_manifest,
    parse_amount,
    registry,
    run_manifest,
    run_scenario,
    scenario_names,
)

__all__ = [
    "FIXTURE_DIR", "MANIFEST_DIR", "Expectation", "Manifest", "OverrideError", "ScenarioError", "ScenarioReport",
    "SetupError", "load_manifest", "parse_amount", "registry", "run_manifest", "run_scenario",
    "scenario_names",
]
