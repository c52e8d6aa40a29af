"""Normalize mode: formatting variants must collide, semantic edits must not.

Every fingerprint here is computed by a separate harness process, so equality
across a pair also demonstrates the hash is stable across invocations.
"""
import re

import pytest

from harness_helpers import reply_of, run_harness, tree_fingerprint

# same program text modulo layout: whitespace, comments, parens, quote style,
# trailing commas, line continuations, implicit concatenation, indent width
FORMATTING_PAIRS = [
    ("assert add(1, 2) == 3", "assert add( 1,2 )==3"),
    ("x = [1, 2, 3]", "x = [1, 2, 3,]"),
    ("y = f(a, b)", "y = f(a, b,)"),
    ("assert g('q') == 1", 'assert g("q") == 1'),
    ("total = 1 + 2", "total = (1 + 2)"),
    ("assert h(5) == 25  # square", "assert h(5) == 25"),
    ("def p():\n    return 1", "def p():\n\n    return 1"),
    ("z = my_func(10)", "z = my_func(\n    10\n)"),
    ("assert q(1) == \\\n    2", "assert q(1) == 2"),
    ("s = 'ab'", "s = 'a' 'b'"),
    ("if cond:\n    run()", "if cond:\n        run()"),
    ("w = {'k': 1}", "w = {  'k' : 1  }"),
    ("assert m(2) in [2, 4]", "assert m(2) in [2, 4]  # membership"),
    ("r = (1, 2)", "r = 1, 2"),
    ("u = not flag", "u = not (flag)"),
    ("for i in range(3):\n    acc(i)", "for i in range(3) :\n    acc(i)"),
    ("assert n() == 7", "# leading comment\nassert n() == 7"),
    ("v = a.b.c", "v = a . b . c"),
    ("t = [x for x in seq]", "t = [x   for x in seq]"),
    ("assert longest(1, 2, 3) == 3", "assert longest(\n    1,\n    2,\n    3,\n) == 3"),
    ("d = dict(a=1)", "d = dict(\n    a=1,\n)"),
    ("while ready():\n    tick()", "while (ready()):\n    tick()"),
    ("e = x if c else y", "e = (x if c else y)"),
    ("assert u2('long string here') == 3", "assert u2(\n    'long string here'\n) == 3"),
    ("def q2(a, b):\n    return a - b", "def q2(a, b,):\n    return a - b"),
    ("lst = []\nlst.append(4)", "lst = []\n\n\nlst.append(4)"),
    ("assert abs2(-3) == 3", "assert abs2(-3)==3"),
    ("m2 = {1: 'a', 2: 'b'}", "m2 = {\n    1: 'a',\n    2: 'b',\n}"),
    ("c2 = call(*args)", "c2 = call( *args )"),
    ("assert chain(f1(g1(2))) == 8", "assert chain(f1(g1( 2 ))) == 8  # nested"),
]

# small but meaning-changing edits: operators, operands, names, structure
SEMANTIC_PAIRS = [
    ("assert add(1, 2) == 3", "assert add(1, 2) == 4"),
    ("x = 1", "x = 2"),
    ("y = a + b", "y = a - b"),
    ("assert f(1)", "assert f(2)"),
    ("assert g() == 1", "assert g() != 1"),
    ("z = [1, 2]", "z = [2, 1]"),
    ("r = f(a, b)", "r = f(b, a)"),
    ("u = x", "u = y"),
    ("if c:\n    run()", "while c:\n    run()"),
    ("assert s.lower() == 'a'", "assert s.upper() == 'a'"),
    ("t = (1,)", "t = (1, 1)"),
    ("assert m(2) in [2, 4]", "assert m(2) in [2, 5]"),
    ("def p():\n    return 1", "def p():\n    return 2"),
    ("def q(a):\n    return a", "def q(a, b):\n    return a"),
    ("w = 'ab'", "w = 'ba'"),
    ("assert n() == 7", "assert n2() == 7"),
    ("v = a.b", "v = a.c"),
    ("acc = 0", "acc = 0.0"),
    ("e = x if c else y", "e = y if c else x"),
    ("assert cnt(s) == 3", "assert cnt(s) >= 3"),
    ("lst.append(4)", "lst.append(5)"),
    ("d = {'k': 1}", "d = {'k': 2}"),
    ("for i in range(3):\n    f(i)", "for i in range(4):\n    f(i)"),
    ("assert not flag", "assert flag"),
    ("h = a * 2", "h = a ** 2"),
    ("assert inv(x) == -x", "assert inv(x) == x"),
    ("print('a')", "print('b')"),
    ("assert len(v) == 0", "assert len(v) == 1"),
    ("s2 = f'{a}'", "s2 = f'{b}'"),
    ("return_val = call()", "return_val = call(1)"),
]


def test_pair_tables_are_full_size():
    assert len(FORMATTING_PAIRS) == 30
    assert len(SEMANTIC_PAIRS) == 30


@pytest.mark.parametrize("left,right", FORMATTING_PAIRS, ids=[f"fmt{i:02d}" for i in range(30)])
def test_formatting_variants_share_a_fingerprint(left, right):
    assert left != right
    assert tree_fingerprint(left) == tree_fingerprint(right)


@pytest.mark.parametrize("left,right", SEMANTIC_PAIRS, ids=[f"sem{i:02d}" for i in range(30)])
def test_semantic_edits_change_the_fingerprint(left, right):
    assert tree_fingerprint(left) != tree_fingerprint(right)


def test_fingerprint_shape_and_stability():
    first = tree_fingerprint("assert stable() == 1")
    second = tree_fingerprint("assert stable() == 1")
    assert first == second
    assert re.fullmatch(r"ast:[0-9a-f]{32}", first)


def test_unparseable_source_reports_syntax_error():
    proc = run_harness({"v": 1, "mode": "normalize", "test_source": "assert ("})
    assert proc.returncode == 0
    reply = reply_of(proc)
    assert reply["status"] == "error"
    assert reply["error_class"] == "SyntaxError"
    assert "tree_fingerprint" not in reply
