"""Reader/printer round trips, canonical text, and fingerprints."""

import re

import pytest
from hypothesis import given, settings, strategies as st

from epochd import sexpr
from epochd.sexpr import (
    Integer,
    SList,
    String,
    Symbol,
    TrailingGarbage,
    UnbalancedParens,
    UnterminatedString,
    fingerprint,
    parse,
    parse_all,
    print_canonical,
)

# Externally computed: sha256 of the three bytes "(a)".
FINGERPRINT_OF_A = "f89bf797c3b1dda4ee48380783e5e979067686a6a9540c5a40e8d75ae5f3d199"


def reference_tokens(text: str):
    """Independent tokenizer used as an oracle: strips comments, then
    splits into parens, strings, and atoms."""
    out = []
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch.isspace():
            i += 1
        elif ch == ";":
            while i < n and text[i] != "\n":
                i += 1
        elif ch in "()":
            out.append(ch)
            i += 1
        elif ch == '"':
            j = i + 1
            buf = []
            while text[j] != '"':
                if text[j] == "\\":
                    buf.append(text[j + 1])
                    j += 2
                else:
                    buf.append(text[j])
                    j += 1
            out.append('"' + "".join(buf))
            i = j + 1
        else:
            m = re.match(r'[^\s()";]+', text[i:])
            out.append(m.group(0))
            i += len(m.group(0))
    return out


def test_parse_atoms():
    assert parse("hello") == Symbol("hello")
    assert parse('"a b"') == String("a b")
    assert parse("-42") == Integer(-42)
    assert parse("()") == SList()


def test_parse_nested():
    node = parse('(req FR-01 (shall "classify"))')
    assert isinstance(node, SList)
    assert node[0] == Symbol("req")
    assert node[2][1] == String("classify")


def test_comments_skipped():
    node = parse(";; top note\n(a ;; inline\n b)\n;; tail\n")
    assert node == SList([Symbol("a"), Symbol("b")])


def test_canonical_print_minimal():
    assert print_canonical(parse("( a   1 )")) == "(a 1)"
    assert print_canonical(parse("(a (b c) -7)")) == "(a (b c) -7)"


def test_string_escapes_minimal():
    node = String('x"y\\z')
    text = print_canonical(node)
    assert text == '"x\\"y\\\\z"'
    assert parse(text) == node


def test_newline_inside_string_survives():
    node = parse('"line one\nline two"')
    assert node == String("line one\nline two")
    assert parse(print_canonical(node)) == node


def test_unbalanced_parens():
    with pytest.raises(UnbalancedParens):
        parse("(a (b)")
    with pytest.raises(UnbalancedParens):
        parse(")")


def test_unterminated_string():
    with pytest.raises(UnterminatedString):
        parse('"abc')


def test_trailing_garbage():
    with pytest.raises(TrailingGarbage):
        parse("(a) (b)")
    assert [print_canonical(n) for n in parse_all("(a) (b)")] == ["(a)", "(b)"]


def test_integer_range_enforced():
    assert parse(str(2**63 - 1)) == Integer(2**63 - 1)
    with pytest.raises(sexpr.SexprError):
        parse(str(2**63))
    with pytest.raises(ValueError):
        Integer(2**63)


def test_symbol_rejects_ambiguous_text():
    with pytest.raises(ValueError):
        Symbol("42")
    with pytest.raises(ValueError):
        Symbol("has space")
    with pytest.raises(ValueError):
        Symbol("semi;colon")


def test_fingerprint_pinned_value():
    assert fingerprint(parse("(a)")) == FINGERPRINT_OF_A


def test_fingerprint_ignores_surface_whitespace():
    assert fingerprint(parse("(a   1)")) == fingerprint(parse("(a\n 1)"))
    assert fingerprint(parse("(a 1)")) != fingerprint(parse("(a 2)"))


SYMBOL_CHARS = st.sampled_from("abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ-_<>=!?*+./:0123456789")


def symbols():
    return st.builds(
        "".join, st.lists(SYMBOL_CHARS, min_size=1, max_size=12)
    ).filter(lambda t: not re.fullmatch(r"[+-]?[0-9]+", t)).map(Symbol)


def strings():
    return st.text(max_size=20).map(String)


def integers():
    return st.integers(min_value=sexpr.INT64_MIN, max_value=sexpr.INT64_MAX).map(Integer)


def trees():
    return st.recursive(
        st.one_of(symbols(), strings(), integers()),
        lambda inner: st.lists(inner, max_size=6).map(SList),
        max_leaves=40,
    )


@settings(max_examples=300, deadline=None)
@given(trees())
def test_round_trip_identity(tree):
    assert parse(print_canonical(tree)) == tree


@settings(max_examples=200, deadline=None)
@given(trees())
def test_canonical_print_stable(tree):
    once = print_canonical(tree)
    assert print_canonical(parse(once)) == once


def test_token_stream_preserved_under_round_trip():
    text = """
    ;; demo artifact fragment
    (nidus-system "Interceptor"
      (requirements
        (req UR-01 (kind sovereignty) (shall "All inference local")))
      (architecture (component Brain (responsibility "Classify"))))
    """
    reprinted = print_canonical(parse(text))
    assert reference_tokens(reprinted) == reference_tokens(text)
