import pytest

from gpsh.repro import SCENARIOS, run


@pytest.mark.parametrize("name", sorted(SCENARIOS))
def test_scenario_passes(name):
    r = run(name)
    assert r.passed, r.details
    assert r.to_json()["name"] == name


def test_unknown_scenario():
    with pytest.raises(KeyError):
        run("nope")
