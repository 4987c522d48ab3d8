"""The gradient-check battery must cover every loss and stay honest."""

import pytest

from routecast.diagnostics import _INSTANCE_BUILDERS, run_gradient_checks


def test_battery_covers_all_losses_and_passes():
    report = run_gradient_checks(seed=0, instances=2)
    assert set(report.losses) == set(_INSTANCE_BUILDERS)
    assert set(report.losses) == {
        "representation", "direction", "prediction", "rank", "refine",
    }
    for name, entry in report.losses.items():
        assert entry["instances"] == 2, name
        assert entry["ok"], (name, entry)
        assert entry["max_rel_err"] < report.tolerance
    assert report.ok
    assert report.seconds < 60


def test_report_serializes():
    report = run_gradient_checks(seed=1, instances=1)
    doc = report.to_json_dict()
    assert doc["ok"] is True
    assert doc["tolerance"] == pytest.approx(1e-4)
    assert set(doc["losses"]) == set(_INSTANCE_BUILDERS)
