"""Artifact decode/encode round trips and pure change application."""

import pytest
from hypothesis import given, settings, strategies as st

from epochd import model, sandbox, sexpr
from epochd.model import (
    AddOp,
    ChangeSet,
    DuplicateId,
    RemoveOp,
    SchemaError,
    UnknownId,
    UnknownSection,
    UpdateOp,
    apply_change_set,
    artifact_fingerprint,
    change_set_from_sexpr,
    change_set_to_sexpr,
    decode,
    decode_text,
    encode,
    encode_text,
    sections_touched,
)
from epochd.sexpr import parse


@pytest.fixture
def demo():
    return sandbox.demo_artifact()


def test_decode_demo_counts(demo):
    assert demo.name == "Interceptor"
    assert len(demo.requirements) == 2
    assert len(demo.components) == 2
    assert len(demo.connectors) == 1
    assert len(demo.workflows) == 1
    assert len(demo.features) == 1
    assert len(demo.traces) == 2
    assert len(demo.obligations) == 4
    assert len(demo.claims) == 1
    assert demo.guidebook_imports == ("../epoch.guidebook.epoch",)


def test_decode_demo_details(demo):
    ur = demo.requirement("UR-01")
    assert ur.kind == "sovereignty" and ur.source == "RAD"
    assert ur.constraint is not None
    feat = demo.feature("FEAT-01")
    assert feat.status == "claimed"
    assert feat.scope.requirements == ("UR-01", "FR-01")
    assert feat.scope.code_paths == ("src/brain.py",)
    assert feat.scope.test_paths == ()
    wf = demo.workflows[0]
    assert wf.initial == "idle"
    assert len(wf.transitions) == 2
    assert wf.transitions[0].guard is not None
    claim = demo.claims[0]
    assert claim.agent == "opus-a1b2"
    assert not claim.expired(model.parse_rfc3339(sandbox.DEMO_NOW))


def test_minimal_artifact():
    a = decode_text('(nidus-system "X")')
    assert a.name == "X"
    assert a.requirements == ()
    assert encode_text(a) == '(nidus-system "X")'


def test_wrong_head_symbol():
    with pytest.raises(SchemaError):
        decode_text('(other-system "X")')


def test_duplicate_requirement_id():
    with pytest.raises(DuplicateId):
        decode_text('(nidus-system "X" (requirements (req A-1) (req A-1)))')


def test_encode_decode_round_trip(demo):
    assert decode(encode(demo)) == demo


def test_fingerprint_stable_under_round_trip(demo):
    once = artifact_fingerprint(demo)
    again = artifact_fingerprint(decode_text(encode_text(demo)))
    assert once == again


def test_unknown_section_preserved():
    text = '(nidus-system "X" (requirements (req A-1)) (future-notes (note n1 "keep me")))'
    a = decode_text(text)
    assert a.extra_sections[0][0] == "future-notes"
    again = decode_text(encode_text(a))
    assert again == a
    assert "future-notes" in encode_text(a)


def test_lease_timestamp_validated():
    bad = '(nidus-system "X" (coordination (claim (agent a) (feature F) (lease-expires "gibberish"))))'
    with pytest.raises(SchemaError):
        decode_text(bad)


def test_evidence_decoding():
    text = """(nidus-system "X"
      (coordination
        (evidence (feature F-1) (witness "kernel-test-gate") (status passed)
          (hash "abc123") (server-computed t) (timestamp "2026-03-10T00:00:00Z"))))"""
    a = decode_text(text)
    rec = a.evidence[0]
    assert rec.witness == "kernel-test-gate"
    assert rec.server_computed is True
    assert decode(encode(a)) == a


def test_lesson_round_trip():
    text = """(nidus-system "X"
      (lessons
        (lesson LSN-1 (failure "OOM") (root-cause "per-feature solver calls")
          (fix "hoist the call") (obligation "solver runs once per commit")
          (affected-scope "src/verify.py") (cost "6h") (commits "ab12" "cd34")
          (severity 3))))"""
    a = decode_text(text)
    lesson = a.lessons[0]
    assert lesson.severity == 3
    assert lesson.commits == ("ab12", "cd34")
    assert decode(encode(a)) == a


def test_lesson_severity_defaults_to_one():
    a = decode_text('(nidus-system "X" (lessons (lesson L-1 (failure "x"))))')
    assert a.lessons[0].severity == 1


# ------------------------------------------------------- application


NEW_REQ = parse('(req FR-02 (kind functional) (shall "Respond within 100ms"))')


def test_apply_add(demo):
    cs = ChangeSet([AddOp("requirements", NEW_REQ)], actor="a1", intent="add FR-02")
    out = apply_change_set(demo, cs)
    assert len(out.requirements) == 3
    assert len(demo.requirements) == 2  # input untouched
    assert out.requirement("FR-02").shall == "Respond within 100ms"


def test_apply_empty_identity(demo):
    out = apply_change_set(demo, ChangeSet([], actor="a1"))
    assert out == demo


def test_apply_update_status(demo):
    form = parse("""(feature FEAT-01 (name "Local classification engine")
        (status delivered)
        (scope (requirements UR-01 FR-01) (code-paths "src/brain.py")))""")
    cs = ChangeSet([UpdateOp("features", "FEAT-01", form)], actor="opus-a1b2")
    out = apply_change_set(demo, cs)
    assert out.feature("FEAT-01").status == "delivered"
    assert demo.feature("FEAT-01").status == "claimed"


def test_apply_remove_connector_by_pair_key(demo):
    cs = ChangeSet([RemoveOp("architecture", "Interceptor->Brain")], actor="a1")
    out = apply_change_set(demo, cs)
    assert out.connectors == ()
    assert len(out.components) == 2


def test_apply_remove_unknown_id(demo):
    with pytest.raises(UnknownId):
        apply_change_set(demo, ChangeSet([RemoveOp("requirements", "NOPE-9")], actor="a1"))


def test_apply_unknown_section(demo):
    with pytest.raises(UnknownSection):
        apply_change_set(demo, ChangeSet([AddOp("mysteries", parse("(x)"))], actor="a1"))


def test_apply_duplicate_add(demo):
    dup = parse("(req UR-01 (kind sovereignty))")
    with pytest.raises(DuplicateId):
        apply_change_set(demo, ChangeSet([AddOp("requirements", dup)], actor="a1"))


def test_apply_claim_add_and_remove(demo):
    add = AddOp("coordination", parse(
        '(claim (agent "x-9") (feature FEAT-02) (lease-expires "2026-04-01T00:00:00Z"))'))
    out = apply_change_set(demo, ChangeSet([add], actor="x-9"))
    assert out.claim_on("FEAT-02").agent == "x-9"
    back = apply_change_set(out, ChangeSet([RemoveOp("coordination", "FEAT-02")], actor="x-9"))
    assert back.claim_on("FEAT-02") is None


def test_apply_batch_equals_single_steps(demo):
    ops = [
        AddOp("requirements", NEW_REQ),
        AddOp("traceability", parse("(trace TR-03 FR-02 Brain Verdict)")),
    ]
    batch = apply_change_set(demo, ChangeSet(ops, actor="a1"))
    stepped = demo
    for op in ops:
        stepped = apply_change_set(stepped, ChangeSet([op], actor="a1"))
    assert batch == stepped


def test_sections_touched_order():
    cs = ChangeSet([
        AddOp("traceability", parse("(trace T R C D)")),
        AddOp("requirements", NEW_REQ),
        RemoveOp("traceability", "T"),
    ], actor="a1")
    assert sections_touched(cs) == ["traceability", "requirements"]


def test_change_set_wire_round_trip(demo):
    cs = ChangeSet([
        AddOp("requirements", NEW_REQ),
        RemoveOp("traceability", "TR-02"),
        UpdateOp("features", "FEAT-01", parse('(feature FEAT-01 (status open))')),
    ], actor="agent-7", intent="rework")
    wire = sexpr.print_canonical(change_set_to_sexpr(cs))
    again = change_set_from_sexpr(sexpr.parse(wire))
    assert again.actor == "agent-7"
    assert again.intent == "rework"
    assert [op.verb for op in again.ops] == ["add", "remove", "update"]
    assert apply_change_set(demo, again) == apply_change_set(demo, cs)


def test_change_set_fingerprint_distinguishes(demo):
    a = ChangeSet([AddOp("requirements", NEW_REQ)], actor="x")
    b = ChangeSet([AddOp("requirements", NEW_REQ)], actor="y")
    assert model.change_set_fingerprint(a) != model.change_set_fingerprint(b)
    assert model.change_set_fingerprint(a) == model.change_set_fingerprint(
        ChangeSet([AddOp("requirements", NEW_REQ)], actor="x"))


# ----------------------------------------------------- generated data


IDENT = st.from_regex(r"[A-Z]{1,3}-[0-9]{1,3}", fullmatch=True)


@settings(max_examples=60, deadline=None)
@given(st.lists(IDENT, min_size=1, max_size=8, unique=True))
def test_generated_requirements_round_trip(ids):
    reqs = tuple(model.Requirement(id=i, kind="functional", shall=f"Does {i}") for i in ids)
    a = model.Artifact(name="Gen", requirements=reqs)
    assert decode(encode(a)) == a


def test_sandbox_artifacts_round_trip():
    for a in (sandbox.lesion_artifact(), sandbox.simulation_artifact(), sandbox.gate_artifact()):
        assert decode(encode(a)) == a
