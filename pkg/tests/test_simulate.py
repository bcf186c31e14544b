"""Scripted-agent scenarios: determinism, per-policy failure
signatures, containment of bad actors, and the lesion runner."""

import pytest

from epochd import sandbox, simulate
from epochd.simulate import (
    Abandoner, Compliant, Fabricator, GateSkipper, lesion_run, run_scenario,
)


@pytest.fixture(scope="module")
def fabricator_20():
    return run_scenario([Fabricator()], seed=7, steps=20)


@pytest.fixture(scope="module")
def compliant_50():
    return run_scenario([Compliant()], seed=3, steps=50)


# ------------------------------------------------------- determinism


def test_equal_seeds_equal_reports():
    a = run_scenario([Fabricator(), Compliant()], seed=11, steps=15)
    b = run_scenario([Fabricator(), Compliant()], seed=11, steps=15)
    assert a.report() == b.report()
    assert a.history.head.entry_digest == b.history.head.entry_digest


def test_different_seeds_may_differ_but_stay_valid():
    a = run_scenario([Fabricator()], seed=1, steps=10)
    b = run_scenario([Fabricator()], seed=2, steps=10)
    a.history.validate()
    b.history.validate()


# --------------------------------------------------- policy behavior


def test_compliant_never_rejected(compliant_50):
    r = compliant_50
    agent = "compliant-0"
    assert sum(r.rejection_kinds(agent).values()) == 0
    assert all(t == "unrestricted" for t in r.tier_track[agent])


def test_compliant_delivers_everything(compliant_50):
    head = compliant_50.history.artifact_at(compliant_50.history.head.index)
    statuses = {f.id: f.status for f in head.features}
    assert len(statuses) == 6
    assert set(statuses.values()) == {"delivered"}


def test_fabricator_gets_restricted(fabricator_20):
    r = fabricator_20
    agent = "fabricator-0"
    assert r.final_tier(agent) == "restricted"
    # containment kicks in early, well before the action budget runs out
    restricted_at = r.tier_track[agent].index("restricted")
    assert restricted_at < 15


def test_fabricator_rejections_are_provenance(fabricator_20):
    kinds = fabricator_20.rejection_kinds("fabricator-0")
    assert kinds["evidence-provenance"] > 0


def test_fabricator_claims_refused_after_restriction(fabricator_20):
    assert fabricator_20.refused_claims["fabricator-0"] > 0


def test_no_fabricated_evidence_survives(fabricator_20):
    assert fabricator_20.fabrications["fabricator-0"] > 0
    assert fabricator_20.fabrications_in_wal() == 0


def test_gate_skipper_and_abandoner_signatures_differ():
    skipper = run_scenario([GateSkipper()], seed=5, steps=20)
    quitter = run_scenario([Abandoner()], seed=5, steps=20)
    skipper_kinds = set(skipper.rejection_kinds("gate-skipper-0"))
    quitter_kinds = set(quitter.rejection_kinds("abandoner-0"))
    assert "gate-sequence" in skipper_kinds
    assert "gate-sequence" not in quitter_kinds
    abandonments = [e for e in quitter.ledger.events if e.kind == "abandonment"]
    assert abandonments
    assert not [e for e in skipper.ledger.events if e.kind == "abandonment"]


def test_mixed_roster_round_robin_tracks_every_agent():
    r = run_scenario([Compliant(), Fabricator(), Abandoner()], seed=9, steps=12)
    assert set(r.agents) == {"compliant-0", "fabricator-1", "abandoner-2"}
    for agent in r.agents:
        assert len(r.tier_track[agent]) == 12


def test_clock_advances_per_action():
    clock = simulate.SimClock()
    first = clock.now
    clock.tick()
    assert (clock.now - first).total_seconds() == 60
    assert clock.stamp.endswith("Z")


# ------------------------------------------------------------ lesion


@pytest.fixture(scope="module")
def lesion_report():
    return lesion_run()


def test_lesion_every_type_fully_guarded(lesion_report):
    per = lesion_report.per_type()
    assert per, "lesion run enumerated nothing"
    for element_type, (guarded, total, _) in per.items():
        assert guarded == total, f"{element_type} has unguarded removals"
        assert lesion_report.guarded_rate(element_type) == 1.0


def test_lesion_guardian_kinds(lesion_report):
    per = {t: kinds for t, (_, _, kinds) in lesion_report.per_type().items()}
    assert per["connector"] == {"connector-existence"}
    assert per["component"] == {"connector-integrity", "traceability-complete"}
    assert per["design-element"] == {"traceability-complete"}
    assert per["trace"] == {"traceability-complete"}
    assert per["requirement"] == {"ratchet"}
    assert per["proof-obligation"] == {"immutable-obligations", "ratchet"}


def test_lesion_enumerates_the_whole_artifact(lesion_report):
    a = sandbox.lesion_artifact()
    per = lesion_report.per_type()
    assert per["component"][1] == len(a.components)
    assert per["connector"][1] == len(a.connectors)
    assert per["requirement"][1] == len(a.requirements)
    assert per["trace"][1] == len(a.traces)


def test_lesion_report_renders_rates(lesion_report):
    text = lesion_report.render()
    assert "component" in text and "guarded" in text


# -------------------------------------------------- scenario fixture


def test_scenario_artifact_gate_ladder():
    a = simulate.scenario_artifact(4)
    gates = [po for po in a.obligations if po.kind == "gate-sequence"]
    assert len(gates) == 1 and gates[0].immutable
    assert len(a.features) == 4
