import pytest

from epochd import guidebook as gb
from epochd import obligations, sandbox
from epochd.model import ProofObligation


def reader_for(files: dict):
    def read(path):
        if path not in files:
            raise FileNotFoundError(path)
        return files[path]
    return read


def test_parse_demo_guidebook():
    book = gb.parse_guidebook(sandbox.DEMO_GUIDEBOOK, "epoch.guidebook.epoch")
    assert [c.id for c in book.constraints] == [
        "GC-SCOPE-COMPLETENESS", "GC-MODULE-DAG", "GC-EVIDENCE-PROVENANCE",
    ]
    assert book.constraints[0].po_kind == "feature-code-test-symmetry"
    assert "test-paths" in book.constraints[0].description
    assert book.imports == ()


@pytest.mark.parametrize("text,needle", [
    ("(guidebook-constraint GC-X (po-kind a))", "missing z3_formula"),
    ("(guidebook-constraint GC-X (z3_formula p))", "missing po-kind"),
    ("(something-else)", "unexpected top-level"),
    ("(guidebook-constraint GC-X (z3_formula p) (po-kind a) (bogus 1))", "unexpected field"),
    (
        "(guidebook-constraint GC-X (z3_formula p) (po-kind a))"
        "(guidebook-constraint GC-X (z3_formula q) (po-kind a))",
        "duplicate constraint id",
    ),
])
def test_parse_errors(text, needle):
    with pytest.raises(gb.GuidebookSyntaxError, match=needle):
        gb.parse_guidebook(text, "bad.guidebook.epoch")


CHILD = """\
(imports "parent.guidebook.epoch")
(guidebook-constraint GC-CHILD
  (z3_formula (implies feature_delivered has_test_paths))
  (po-kind feature-code-test-symmetry)
  (description "child rule"))
"""

PARENT = """\
(guidebook-constraint GC-PARENT
  (z3_formula (implies evidence_submitted witness_registered))
  (po-kind evidence-provenance)
  (description "parent rule"))
(modules core util)
"""


def test_transitive_resolution_importer_first():
    books = gb.load_guidebooks(
        ["child.guidebook.epoch"], base_dir=".",
        reader=reader_for({
            "child.guidebook.epoch": CHILD,
            "parent.guidebook.epoch": PARENT,
        }),
    )
    assert [b.path for b in books] == ["child.guidebook.epoch", "parent.guidebook.epoch"]
    assert books[1].module_decls == ("core", "util")


def test_diamond_import_deduplicated():
    files = {
        "a.epoch": '(imports "b.epoch" "c.epoch")',
        "b.epoch": '(imports "d.epoch")',
        "c.epoch": '(imports "d.epoch")',
        "d.epoch": PARENT,
    }
    books = gb.load_guidebooks(["a.epoch"], reader=reader_for(files))
    assert [b.path for b in books] == ["a.epoch", "b.epoch", "d.epoch", "c.epoch"]


def test_import_cycle_detected():
    files = {
        "a.epoch": '(imports "b.epoch")',
        "b.epoch": '(imports "a.epoch")',
    }
    with pytest.raises(gb.ImportCycle):
        gb.load_guidebooks(["a.epoch"], reader=reader_for(files))


def test_missing_guidebook_reported():
    with pytest.raises(gb.MissingGuidebook):
        gb.load_guidebooks(["nope.epoch"], reader=reader_for({}))


def test_relative_paths_resolve_from_importer_directory():
    files = {
        "org/project/local.epoch": '(imports "../shared.epoch")',
        "org/shared.epoch": PARENT,
    }
    books = gb.load_guidebooks(
        ["local.epoch"], base_dir="org/project", reader=reader_for(files),
    )
    assert books[1].path == "org/shared.epoch"


def test_demo_tree_resolves_from_disk(tmp_path):
    artifact_path = sandbox.write_demo_tree(str(tmp_path))
    a = sandbox.demo_artifact()
    base_dir = artifact_path.rsplit("/", 1)[0]
    books = gb.load_guidebooks(a.guidebook_imports, base_dir=base_dir)
    assert len(books) == 1
    assert [c.id for c in books[0].constraints][0] == "GC-SCOPE-COMPLETENESS"


def test_effective_obligations_appends_with_origin():
    a = sandbox.demo_artifact()
    books = gb.load_guidebooks(
        a.guidebook_imports, base_dir="project",
        reader=reader_for({"epoch.guidebook.epoch": sandbox.DEMO_GUIDEBOOK}),
    )
    effective = gb.effective_obligations(a.obligations, books)
    assert len(effective) == 7
    derived = [ob for ob in effective if ob.origin is not None]
    assert all(ob.origin == "epoch.guidebook.epoch" for ob in derived)
    assert all(ob.formula is not None and not ob.immutable for ob in derived)


def test_first_definition_of_an_id_wins():
    local = (ProofObligation("GC-MODULE-DAG", "dag-enforcement"),)
    book = gb.parse_guidebook(sandbox.DEMO_GUIDEBOOK, "g")
    effective = gb.effective_obligations(local, [book])
    by_id = [ob for ob in effective if ob.id == "GC-MODULE-DAG"]
    assert len(by_id) == 1
    assert by_id[0].kind == "dag-enforcement"


def test_parent_obligations_subset_of_child():
    files = {
        "child.epoch": CHILD,
        "parent.guidebook.epoch": PARENT,
    }
    child_books = gb.load_guidebooks(["child.epoch"], reader=reader_for(files))
    parent_books = gb.load_guidebooks(["parent.guidebook.epoch"], reader=reader_for(files))
    child_ids = {ob.id for ob in gb.effective_obligations((), child_books)}
    parent_ids = {ob.id for ob in gb.effective_obligations((), parent_books)}
    assert parent_ids <= child_ids


# ------------------------------------------------------ consistency


def book_with(formulas_by_id, po_kind="feature-code-test-symmetry"):
    text = "".join(
        f"(guidebook-constraint {cid} (z3_formula {f}) (po-kind {po_kind}))"
        for cid, f in formulas_by_id.items()
    )
    return gb.parse_guidebook(text, "mem.epoch")


def test_contradictory_constraint_flagged_with_id():
    book = book_with({"GC-BROKEN": "(and p (not p))"})
    issues = gb.check_guidebook_consistency([book])
    unsat = [i for i in issues if i.kind == "unsat"]
    assert len(unsat) == 1
    assert unsat[0].constraint_id == "GC-BROKEN"


def test_demo_trio_is_clean():
    book = gb.parse_guidebook(sandbox.DEMO_GUIDEBOOK, "epoch.guidebook.epoch")
    issues = gb.check_guidebook_consistency([book], registry=obligations.builtin_registry())
    assert issues == []


def test_jointly_contradictory_pair_reports_core():
    book = book_with({
        "GC-A": "(implies feature_delivered has_code_paths)",
        "GC-B": "(and feature_delivered (not has_code_paths))",
    })
    issues = gb.check_guidebook_consistency([book])
    joint = [i for i in issues if i.kind == "joint-unsat"]
    assert len(joint) == 1
    assert set(joint[0].core) == {"GC-A", "GC-B"}


def test_unknown_predicate_reported():
    book = book_with({"GC-X": "(implies hovercraft_full_of_eels p)"})
    issues = gb.check_guidebook_consistency([book])
    unbound = [i for i in issues if i.kind == "unbound"]
    assert len(unbound) == 1
    assert "hovercraft_full_of_eels" in unbound[0].message


def test_mixed_scope_reported():
    book = book_with({"GC-X": "(and feature_delivered witness_registered)"})
    issues = gb.check_guidebook_consistency([book])
    assert any(i.kind == "mixed-scope" for i in issues)


def test_unregistered_kind_reported():
    book = book_with({"GC-X": "(implies feature_delivered has_code_paths)"},
                     po_kind="clock-domain-crossing")
    issues = gb.check_guidebook_consistency([book], registry=obligations.builtin_registry())
    assert any(i.kind == "unregistered-kind" for i in issues)


def test_duplicate_across_books_reported():
    b1 = book_with({"GC-X": "(implies feature_delivered has_code_paths)"})
    b2 = gb.parse_guidebook(
        "(guidebook-constraint GC-X (z3_formula has_test_paths)"
        " (po-kind feature-code-test-symmetry))",
        "other.epoch",
    )
    issues = gb.check_guidebook_consistency([b1, b2])
    assert any(i.kind == "duplicate" for i in issues)
