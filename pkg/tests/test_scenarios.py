"""Scenario registry shape checks; full runs live in the acceptance gate
and the CLI tests."""
from __future__ import annotations

import pytest

from fedsim.scenarios import SCENARIO_NAMES, run_scenario, scenario_arms

EXPECTED = {
    "safa_wastage",
    "priority_vs_random_noniid",
    "scaling_rules",
    "apt_tradeoff",
    "hw_advance",
}


def test_registry_names():
    assert set(SCENARIO_NAMES) == EXPECTED
    assert len(SCENARIO_NAMES) == len(set(SCENARIO_NAMES))


def test_unknown_scenario_rejected():
    with pytest.raises(ValueError, match="safa_wastage"):
        scenario_arms("nope")
    with pytest.raises(ValueError, match="unknown scenario"):
        run_scenario("nope")


def test_empty_seed_tuple_rejected():
    with pytest.raises(ValueError, match="seeds"):
        run_scenario("scaling_rules", ())


@pytest.mark.parametrize("name", sorted(EXPECTED))
def test_arms_are_valid_and_share_data(name):
    arms = scenario_arms(name)
    assert len(arms) >= 2
    data_keys = set()
    for cfg in arms.values():
        cfg.validate()
        data_keys.add(
            (cfg.classes, cfg.dim, cfg.per_class, cfg.spread, cfg.data_seed)
        )
    # arms within a scenario must train on the same dataset
    assert len(data_keys) == 1


def test_arm_builders_return_fresh_configs():
    first = scenario_arms("scaling_rules")
    second = scenario_arms("scaling_rules")
    assert first == second
    assert first is not second
