"""The bundled cross-check suite at its quick level."""

import pytest

from iqpforge.verify import LEVELS, run_suite


def test_quick_suite_passes():
    report = run_suite("quick", seed=2024)
    assert report["passed"] is True
    names = [c["name"] for c in report["checks"]]
    assert len(names) == len(set(names))
    assert len(names) >= 5
    for check in report["checks"]:
        assert check["passed"], f"{check['name']}: {check['detail']}"
        assert check["detail"]
    assert report["level"] == "quick"
    assert report["elapsed_s"] > 0


def test_levels_are_ordered():
    assert set(LEVELS) == {"quick", "standard", "extended"}
    assert (LEVELS["quick"]["n"] <= LEVELS["standard"]["n"]
            <= LEVELS["extended"]["n"])
    assert (LEVELS["quick"]["m"] <= LEVELS["standard"]["m"]
            <= LEVELS["extended"]["m"])


def test_unknown_level_rejected():
    with pytest.raises(ValueError):
        run_suite("paranoid")
