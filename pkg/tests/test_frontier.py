import random

from declassiflow.cfg import ENTRY
from declassiflow.frontier import (compute_frontier, frontier_covers,
                                   full_declassification)
from declassiflow.ir import parse_program
from declassiflow.pipeline import RunConfig, analyze_program

from conftest import dfa, dfa_blocks, fixture_program


def test_block_knowledge_is_out_edge_intersection():
    f = fixture_program("diamond_linked").functions[0]
    _, km, kb, _ = dfa_blocks(f)
    assert kb.at("B1") == {"b1", "b2", "b3"}
    assert kb.at("B2") == {"b1", "b2", "b3", "x1", "x2"}
    assert kb.at("B3") == {"b1", "b2", "b3"}
    assert kb.at(ENTRY) == set()


def test_block_knowledge_opaque_variant():
    f = fixture_program("diamond_opaque").functions[0]
    _, km, kb, _ = dfa_blocks(f)
    assert kb.at("B2") == {"x1", "x2", "a2"}
    assert kb.at("B1") == set()


def test_block_knowledge_empty_edge_sets():
    f = parse_program("fn f(a) {\nB1:\n  ret\n}").functions[0]
    _, km, kb, _ = dfa_blocks(f)
    assert kb.at("B1") == set()


def test_frontiers_linked_diamond():
    f = fixture_program("diamond_linked").functions[0]
    _, _, _, fr = dfa_blocks(f)
    assert fr["b1"] == fr["b2"] == fr["b3"] == {"B1"}
    assert fr["x1"] == fr["x2"] == {"B2"}


def test_frontiers_opaque_diamond():
    f = fixture_program("diamond_opaque").functions[0]
    _, _, _, fr = dfa_blocks(f)
    assert fr["a1"] == set()
    assert fr["x1"] == fr["x2"] == fr["a2"] == {"B2"}
    assert fr["a3"] == {"B3"}


def test_frontier_loop_and_exit_transmitter():
    f = fixture_program("hoistable_loop").functions[0]
    _, _, _, fr = dfa_blocks(f)
    assert fr["x"] == {"B1"}


def test_frontier_covering_and_minimality_on_fixtures():
    for name in ("diamond_linked", "diamond_opaque", "anticorrelated",
                 "hoistable_loop", "djbsort_analog"):
        f = fixture_program(name).functions[0]
        _, km, kb, fr = dfa_blocks(f)
        for var, frontier in fr.items():
            assert frontier_covers(kb, var, frontier, km.cfg), (name, var)
            for dropped in frontier:
                smaller = frontier - {dropped}
                assert not frontier_covers(kb, var, smaller, km.cfg), (name, var, dropped)


def test_frontier_unique_under_block_shuffles():
    f = fixture_program("diamond_linked").functions[0]
    _, km, kb, fr = dfa_blocks(f)
    rng = random.Random(3)
    for _ in range(5):
        shuffled = dict(kb.known)
        keys = list(shuffled)
        rng.shuffle(keys)
        kb2 = kb.copy()
        kb2.known = {k: set(shuffled[k]) for k in keys}
        for var in fr:
            assert compute_frontier(kb2, var, km.cfg) == fr[var]


def test_no_hoist_past_definition():
    # knowledge of the fresh value must not move above the block defining it
    f = fixture_program("diamond_opaque").functions[0]
    ef, km, kb, fr = dfa_blocks(f)
    from declassiflow.cfg import build_cfg, dominators
    cfg = km.cfg
    dom = dominators(cfg)
    def_block = {"a3": "B3", "x2": "B2"}
    for var, db in def_block.items():
        for b in fr[var]:
            assert not (dom.dom(b, db) and b != db), (var, b)


def test_full_declassification():
    f = fixture_program("diamond_opaque").functions[0]
    _, _, kb, fr = dfa_blocks(f)
    declassified = full_declassification(f, fr, kb.at(ENTRY))
    assert "a3" not in declassified

    p = fixture_program("aes_analog")
    analyses, _, _, _ = analyze_program(p, RunConfig(protect=False))
    enc = analyses["encrypt"]
    decl = full_declassification(enc.simplified, enc.frontiers, enc.kb.at(ENTRY))
    assert {"x", "y1", "y2", "y3"} <= decl

    quiet = parse_program("fn q(a) {\nB1:\n  ret\n}").functions[0]
    _, _, kbq, frq = dfa_blocks(quiet)
    assert full_declassification(quiet, frq, kbq.at(ENTRY)) == set()  # no vars at all
