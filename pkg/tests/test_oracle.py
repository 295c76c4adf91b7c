import random

import pytest

from declassiflow.cfg import ENTRY, EXIT
from declassiflow.ir import Program, parse_program
from declassiflow.oracle import (OracleError, check_frontier_property, exact_knowledge,
                                 input_grid, input_slots, interpret, load_value,
                                 speculative_explore)
from declassiflow.pipeline import RunConfig, analyze_program, property_map, run_pipeline

from conftest import dfa, fixture_program
from generators import random_acyclic_program, random_tight_program


def edge_seq(trace, fn):
    return [(s, d) for f, s, d in trace.edges if f == fn]


def test_interpret_diamond_trace():
    f = fixture_program("diamond_linked").functions[0]
    tr = interpret(Program([f]), [5, 6])
    assert edge_seq(tr, "main") == [(ENTRY, "B1"), ("B1", "B3"), ("B3", EXIT)]
    transmits = [o for o in tr.observations if o.kind == "transmit"]
    assert [o.value for o in transmits] == [5]  # b3 = b1 on the direct arm


def test_interpret_straightline_single_path():
    f = parse_program("""
fn f(a, b) {
B1:
  c = add a, b
  transmit c
  ret c
}
""").functions[0]
    paths = {tuple(edge_seq(interpret(Program([f]), [x, y]), "f"))
             for x in range(3) for y in range(3)}
    assert len(paths) == 1
    assert interpret(Program([f]), [2, 3]).returned == 5


def test_interpret_anticorrelated_trace_and_single_transmit():
    f = fixture_program("anticorrelated").functions[0]
    cfgless = Program([f])
    tr = interpret(cfgless, [1, 9])
    assert edge_seq(tr, "main") == [
        (ENTRY, "B1"), ("B1", "B2"), ("B2", "B3"), ("B3", "B5"), ("B5", EXIT)]
    assert sum(1 for o in tr.observations if o.kind == "transmit") == 1
    tr0 = interpret(cfgless, [0, 9])
    assert edge_seq(tr0, "main") == [
        (ENTRY, "B1"), ("B1", "B3"), ("B3", "B4"), ("B4", "B5"), ("B5", EXIT)]
    assert sum(1 for o in tr0.observations if o.kind == "transmit") == 1


def test_interpret_arithmetic_wraps():
    f = parse_program("""
fn f(a) {
B1:
  big = const 2147483647
  s = add big, a
  ret s
}
""").functions[0]
    assert interpret(Program([f]), [1]).returned == -2147483648


def test_interpret_fuel_guard():
    f = parse_program("""
fn f() {
B1:
  jmp B2
B2:
  jmp B2
}
""").functions[0]
    with pytest.raises(OracleError, match="fuel"):
        interpret(Program([f]), [], fuel=500)


def test_interpret_load_is_deterministic():
    f = parse_program("fn f(a) {\nB1:\n  v = load a\n  ret v\n}").functions[0]
    r1 = interpret(Program([f]), [7]).returned
    r2 = interpret(Program([f]), [7]).returned
    assert r1 == r2 == load_value(7)


def test_exact_knowledge_anticorrelated():
    f = fixture_program("anticorrelated").functions[0]
    km = exact_knowledge(f, range(0, 2))
    assert "x" in km.at("B1", "B3")  # exact beats the edge fixpoint here
    assert "x" in km.at("B1", "B2")


def test_exact_knowledge_transmitter_free():
    f = parse_program("fn f(a) {\nB1:\n  b = add a, 1\n  ret\n}").functions[0]
    km = exact_knowledge(f, range(0, 2))
    assert all(not s for s in km.known.values())


def test_exact_knowledge_rejects_loops_and_budget():
    loopy = fixture_program("self_loop_linked").functions[0]
    with pytest.raises(OracleError, match="acyclic"):
        exact_knowledge(loopy, range(0, 2))
    wide = parse_program("fn f() {\nB1:\n" +
                         "\n".join(f"  v{i} = input" for i in range(25)) +
                         "\n  ret\n}").functions[0]
    with pytest.raises(OracleError, match="budget"):
        exact_knowledge(wide, range(0, 4))


def test_soundness_on_random_sample():
    rng = random.Random(2024)
    for _ in range(25):
        f = parse_program(random_acyclic_program(rng)).functions[0]
        _, km = dfa(f)
        ke = exact_knowledge(f, range(0, 4))
        for e in km.cfg.edges:
            assert km.known[e.index] <= ke.known[e.index]


def test_tightness_on_curated_sample():
    rng = random.Random(55)
    for _ in range(25):
        f = parse_program(random_tight_program(rng)).functions[0]
        _, km = dfa(f)
        ke = exact_knowledge(f, range(0, 4))
        for e in km.cfg.edges:
            assert km.known[e.index] == ke.known[e.index]


def test_explorer_loop_exit_misprediction_observes():
    # mispredicting the loop branch exposes the not-yet-due transmit
    f = parse_program("""
fn f(s, n) {
B1:
  jmp B2
B2:
  i1 = phi [0, B1], [i2, B2]
  i2 = add i1, 1
  c = lt i2, n
  br c, B2, B3
B3:
  transmit s
  ret
}
""").functions[0]
    tr, specs = speculative_explore(Program([f]), [9, 3], window=16, depth=1)
    spec_transmits = [o for sp in specs for o in sp.observations
                      if o.kind == "transmit" and o.speculative]
    assert any(o.value == 9 for o in spec_transmits)
    assert any(("f", "s") in o.taint for o in spec_transmits)


def test_explorer_barrier_stops_speculation():
    f = parse_program("""
fn f(s) {
B1:
  c = eq s, 0
  br c, B2, B3
B2:
  specbarr
  transmit s
  jmp B3
B3:
  ret
}
""").functions[0]
    _, specs = speculative_explore(Program([f]), [3], window=32, depth=1)
    assert all(not sp.observations for sp in specs)
    assert any(sp.stopped_by == "barrier" for sp in specs)


def test_explorer_rollback_leaves_trace_identical():
    f = fixture_program("djbsort_analog").functions[0]
    for inputs in ([0, 0], [1, 3], [2, 2]):
        plain = interpret(Program([f]), inputs)
        explored, _ = speculative_explore(Program([f]), inputs, window=16, depth=1)
        assert plain.edges == explored.edges
        assert plain.final_env == explored.final_env
        assert [o.value for o in plain.observations] == \
               [o.value for o in explored.observations]


def test_explorer_monotone_in_window_and_depth():
    f = fixture_program("djbsort_analog").functions[0]

    def obs_set(window, depth):
        _, specs = speculative_explore(Program([f]), [1, 3], window=window, depth=depth)
        return {(o.function, o.block, o.kind, o.value)
                for sp in specs for o in sp.observations}

    assert obs_set(4, 1) <= obs_set(16, 1) <= obs_set(32, 1)
    assert obs_set(16, 1) <= obs_set(16, 2)


def test_frontier_property_differential():
    program = fixture_program("aes_analog")
    report = run_pipeline(program, RunConfig())
    protected = parse_program(report["protected_program"])
    analyses, _, _, _ = analyze_program(program, RunConfig())
    fmap = property_map(program, analyses)
    grid = input_grid(input_slots(protected), range(0, 4))

    verdict = check_frontier_property(protected, fmap, grid, window=8, depth=1,
                                      pad_inputs=True)
    assert verdict.passed

    for f in protected.functions:
        for b in f.blocks:
            b.instructions = [i for i in b.instructions if i.opcode != "specbarr"]
    broken = check_frontier_property(protected, fmap, grid, window=8, depth=1,
                                     pad_inputs=True)
    assert not broken.passed
    v = broken.violations[0]
    assert v.variable[0] == "encrypt"


def test_frontier_property_vacuous_pass():
    f = parse_program("""
fn f(a) {
B1:
  c = eq a, 0
  br c, B2, B3
B2:
  store a, c
  jmp B3
B3:
  ret
}
""").functions[0]
    program = Program([f])
    analyses, _, _, _ = analyze_program(program, RunConfig(protect=False))
    fmap = property_map(program, analyses)
    verdict = check_frontier_property(program, fmap, input_grid(1, range(0, 4)),
                                      window=16, depth=1)
    assert verdict.passed  # no speculative transmitters at all


def test_phi_batch_is_parallel():
    # the classic swap: both phis must read the pre-block values
    p = parse_program("""
fn f(n) {
B1:
  a0 = const 1
  b0 = const 2
  jmp B2
B2:
  a = phi [a0, B1], [b, B2]
  b = phi [b0, B1], [a, B2]
  i = phi [0, B1], [j, B2]
  j = add i, 1
  c = lt j, n
  br c, B2, B3
B3:
  ret a
}
""")
    assert interpret(p, [1]).returned == 1   # one iteration: a=1
    assert interpret(p, [2]).returned == 2   # two iterations: swapped once
    assert interpret(p, [3]).returned == 1   # swapped twice


def test_store_and_nonspec_transmit_silent_under_speculation():
    f = parse_program("""
fn f(s) {
B1:
  c = eq s, 0
  br c, B2, B3
B2:
  store s, s
  transmit s
  jmp B3
B3:
  ret
}
""").functions[0]
    _, specs = speculative_explore(Program([f]), [3], window=32, depth=1,
                                   transmit_speculative=False)
    spec_obs = [o for sp in specs for o in sp.observations]
    assert spec_obs == []  # stores and non-speculative transmits stay quiet
    _, specs2 = speculative_explore(Program([f]), [3], window=32, depth=1,
                                    transmit_speculative=True)
    kinds = {o.kind for sp in specs2 for o in sp.observations}
    assert kinds == {"transmit"}


def test_interpret_across_calls():
    p = parse_program("""
fn main(s) {
B1:
  d = call double(s)
  transmit d
  ret d
}
fn double(a) {
B1:
  r = add a, a
  ret r
}
""")
    tr = interpret(p, [21])
    assert tr.returned == 42
    assert [(f, s, d) for f, s, d in tr.edges] == [
        ("main", ENTRY, "B1"), ("double", ENTRY, "B1"),
        ("double", "B1", EXIT), ("main", "B1", EXIT)]
    obs = [o for o in tr.observations if o.kind == "transmit"]
    assert obs[0].value == 42
    assert ("main", "s") in obs[0].taint and ("double", "r") in obs[0].taint
