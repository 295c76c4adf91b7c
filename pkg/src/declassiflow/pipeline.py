"""End-to-end driver: data-flow analysis, path-sensitive refinement, barrier
placement and execution-based verification, in that order, processing callees
before callers so summaries flow up the call graph.

Refinement runs only for functions the data-flow phase left not fully
declassified, and skips queries whose variable is already known throughout the
candidate region (both behaviours can be disabled).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

from .cfg import (ENTRY, Cfg, build_cfg, dominators, expand_loops,
                  prune_dead_blocks, to_dot)
from .frontier import BlockKnowledge, all_frontiers, block_knowledge
from .ir import Function, Program, parse_program, pretty_print, validate_ssa
from .knowledge import (AnalysisError, FunctionSummary, KnowledgeMap, analyze_edges,
                        project_to_original, summarize)
from .oracle import check_frontier_property, input_grid, input_slots
from .protect import ProtectionPlan, emit_protected, plan_protection
from .refine import (INEVITABLE, Constraint, Limits, RefinementResult,
                     apply_refinement, candidate_regions, candidate_vars,
                     check_inevitable, instrument_flags)


@dataclass
class RunConfig:
    refine: bool = True
    protect: bool = True
    verify: bool = False
    emit_knowledge: bool = False
    emit_frontiers: bool = False
    limits: Limits = field(default_factory=Limits)
    constraints: dict[str, list[Constraint]] = field(default_factory=dict)
    window: int = 16
    depth: int = 1
    verify_domain: range = range(0, 4)
    transmit_speculative: bool = True
    phase2_skip: bool = True
    order_seed: int | None = None


@dataclass
class FunctionAnalysis:
    name: str
    simplified: Function
    cfg: Cfg
    expanded: object
    km: KnowledgeMap  # projected onto the simplified CFG
    kb: BlockKnowledge
    frontiers: dict[str, set[str]]
    summary: FunctionSummary
    refinements: list[RefinementResult] = field(default_factory=list)
    phase2: str = "skipped"
    notes: list[str] = field(default_factory=list)


def call_order(program: Program) -> list[str]:
    """Reverse-topological order over the call DAG: callees before callers."""
    callees: dict[str, list[str]] = {}
    for f in program.functions:
        outs = []
        for _, ins in f.instructions():
            if ins.opcode == "call" and ins.callee not in outs:
                outs.append(ins.callee)
        callees[f.name] = outs

    order: list[str] = []
    state: dict[str, int] = {}

    def visit(name: str):
        if state.get(name) == 2:
            return
        if state.get(name) == 1:
            raise AnalysisError("call graph has a cycle")
        state[name] = 1
        for c in callees.get(name, ()):
            visit(c)
        state[name] = 2
        order.append(name)

    for f in program.functions:
        visit(f.name)
    return order


def analyze_function(f: Function, summaries: dict[str, FunctionSummary],
                     config: RunConfig) -> FunctionAnalysis:
    """Phase 1 for one function: expand, solve the edge fixpoint, project,
    derive block knowledge, frontiers and the summary."""
    ef = expand_loops(prune_dead_blocks(f))
    km_expanded = analyze_edges(ef, summaries, config.transmit_speculative,
                                config.order_seed)
    km = project_to_original(km_expanded, ef)
    kb = block_knowledge(km)
    frontiers = all_frontiers(kb, km.cfg)
    summary = summarize(ef.original, ef, kb.known, frontiers, summaries,
                        config.transmit_speculative)
    notes = []
    if any(km.vacuous.values()):
        flagged = sorted({v for vs in km.vacuous.values() for v in vs})
        notes.append(f"vacuous knowledge recorded for: {', '.join(flagged)}")
    return FunctionAnalysis(f.name, ef.original, km.cfg, ef, km, kb, frontiers,
                            summary, notes=notes)


def refine_function(fa: FunctionAnalysis, summaries: dict[str, FunctionSummary],
                    bodies: dict[str, Function], config: RunConfig):
    """Phase 2: region-by-variable inevitability queries, outermost first;
    Inevitable verdicts upgrade block knowledge immediately."""
    dom = dominators(fa.cfg)
    regions = candidate_regions(fa.simplified, dom, summaries,
                                config.transmit_speculative)
    cands = sorted(candidate_vars(fa.simplified, fa.kb, summaries,
                                  config.transmit_speculative))
    constraints = config.constraints.get(fa.name, [])
    for region in regions:
        for var in cands:
            if config.phase2_skip and all(var in fa.kb.at(b) for b in region.blocks):
                continue
            instr = instrument_flags(fa.simplified, region, var, fa.kb, summaries,
                                     config.transmit_speculative)
            try:
                result = check_inevitable(instr, config.limits, constraints, bodies)
            except AnalysisError as exc:
                result = RefinementResult("unknown", region, var, note=str(exc))
            fa.refinements.append(result)
            if result.verdict == INEVITABLE:
                apply_refinement(fa.kb, result)
    fa.frontiers = all_frontiers(fa.kb, fa.cfg)
    fa.phase2 = "ran"


def analyze_program(program: Program, config: RunConfig | None = None):
    """Phases 1 and 2 for every function, callees first. Returns the analyses,
    the summaries and timing for the two phases."""
    config = config or RunConfig()
    t0 = time.perf_counter()
    issues = validate_ssa(program).issues
    if issues:
        raise AnalysisError("; ".join(i.message for i in issues[:5]))

    summaries: dict[str, FunctionSummary] = {}
    analyses: dict[str, FunctionAnalysis] = {}
    bodies: dict[str, Function] = {}
    order = call_order(program)
    for name in order:
        f = program.function(name)
        for _, ins in f.instructions():
            assert ins.opcode != "call" or ins.callee in summaries, \
                f"callee '{ins.callee}' summarized after its caller '{name}'"
        fa = analyze_function(f, summaries, config)
        analyses[name] = fa
        bodies[name] = fa.simplified
        summaries[name] = fa.summary
    dfa_s = time.perf_counter() - t0

    t1 = time.perf_counter()
    if config.refine:
        for name in order:
            fa = analyses[name]
            if fa.summary.is_fully_declassified:
                continue  # data-flow results already optimal for this function
            refine_function(fa, summaries, bodies, config)
            fa.summary = summarize(fa.simplified, fa.expanded, fa.kb.known,
                                   fa.frontiers, summaries,
                                   config.transmit_speculative)
            summaries[name] = fa.summary
    else:
        for fa in analyses.values():
            fa.phase2 = "disabled"
    refine_s = time.perf_counter() - t1
    return analyses, summaries, order, (dfa_s, refine_s)


def property_map(program: Program,
                 analyses: dict[str, FunctionAnalysis]) -> dict[tuple[str, str], set[str]]:
    """Frontiers to enforce during verification: everything except variables
    public from the program text alone and parameters of called functions
    (those are covered per call site by the argument's own taint)."""
    called = {ins.callee for f in program.functions
              for _, ins in f.instructions() if ins.opcode == "call"}
    out: dict[tuple[str, str], set[str]] = {}
    for name, fa in analyses.items():
        public = fa.kb.at(ENTRY)
        params = set(fa.simplified.params) if name in called else set()
        for var, fr in fa.frontiers.items():
            if var in public or var in params:
                continue
            out[(name, var)] = fr
    return out


def run_pipeline(program: Program, config: RunConfig | None = None) -> dict:
    """All phases over the whole program; returns the JSON-ready report."""
    config = config or RunConfig()
    report: dict = {"entry": program.entry_function, "functions": [],
                    "barriers": {}, "plans": [], "timing": {}}
    analyses, summaries, order, (dfa_s, refine_s) = analyze_program(program, config)
    report["timing"]["dfa_s"] = round(dfa_s, 6)
    report["timing"]["refine_s"] = round(refine_s, 6)
    bodies = {name: fa.simplified for name, fa in analyses.items()}

    t2 = time.perf_counter()
    protected: Program | None = None
    if config.protect and program.functions:
        callers: set[str] = set()
        for f in program.functions:
            for _, ins in f.instructions():
                if ins.opcode == "call":
                    callers.add(ins.callee)
        plans: dict[str, ProtectionPlan] = {}
        for name in order:
            fa = analyses[name]
            top = name == program.entry_function or name not in callers
            plans[name] = plan_protection(fa.simplified, fa.frontiers, summaries,
                                          fa.summary, top,
                                          config.transmit_speculative)
        protected = emit_protected(program, plans, bodies)
        report["plans"] = [plans[name].as_dict() for name in program.function_names()]
        report["barriers"] = {name: sorted(plans[name].barrier_blocks)
                              for name in program.function_names()
                              if plans[name].barrier_blocks}
        report["protected_entry"] = protected.entry_function
    report["timing"]["protect_s"] = round(time.perf_counter() - t2, 6)

    t3 = time.perf_counter()
    if config.verify and protected is not None:
        frontier_map = property_map(program, analyses)
        slots = input_slots(protected)
        verdict = check_frontier_property(
            protected, frontier_map, input_grid(slots, config.verify_domain),
            window=config.window, depth=config.depth,
            transmit_speculative=config.transmit_speculative, pad_inputs=True)
        report["verification"] = {
            "passed": verdict.passed,
            "window": config.window,
            "depth": config.depth,
            "domain": [config.verify_domain.start, config.verify_domain.stop - 1],
            "inputs_checked": verdict.inputs_checked,
            "executions": verdict.executions,
            "violations": [
                {"variable": list(v.variable), "inputs": v.inputs,
                 "mispredictions": [list(m) for m in v.misprediction],
                 "observation": {"function": v.observation.function,
                                 "block": v.observation.block,
                                 "kind": v.observation.kind,
                                 "value": v.observation.value},
                 "frontier": v.frontier}
                for v in verdict.violations[:20]],
        }
    report["timing"]["verify_s"] = round(time.perf_counter() - t3, 6)

    for name in program.function_names():
        fa = analyses[name]
        entry_fn: dict = {
            "name": name,
            "params": list(fa.simplified.params),
            "fully_declassified": fa.summary.is_fully_declassified,
            "pseudo_transmitter": fa.summary.is_pseudo_transmitter,
            "leaked_args": sorted(fa.summary.leaked_args),
            "internal_leaks": sorted(fa.summary.internal_leaks),
            "phase2": fa.phase2,
            "notes": fa.notes,
        }
        if config.emit_knowledge:
            entry_fn["edges"] = [
                {"from": e.src, "to": e.dst,
                 "known": sorted(fa.km.known[e.index])}
                for e in fa.km.cfg.edges]
            entry_fn["block_knowledge"] = {
                label: sorted(vs) for label, vs in sorted(fa.kb.known.items())}
        if config.emit_frontiers:
            entry_fn["frontiers"] = {v: sorted(fr)
                                     for v, fr in sorted(fa.frontiers.items())}
        entry_fn["refinements"] = [
            {"region": r.region.header, "variable": r.variable,
             "verdict": r.verdict,
             "witness": (None if r.witness_inputs is None else r.witness_inputs),
             "note": r.note}
            for r in fa.refinements]
        report["functions"].append(entry_fn)

    if protected is not None:
        report["protected_program"] = pretty_print(protected)
    return report


def analyze_path(path: str, config: RunConfig | None = None) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        program = parse_program(fh.read())
    return run_pipeline(program, config)


def dump_cfgs(program: Program) -> str:
    chunks = []
    for f in program.functions:
        chunks.append(f"// {f.name}")
        chunks.append(to_dot(build_cfg(prune_dead_blocks(f))))
    return "\n".join(chunks)


def dump_expanded(program: Program) -> str:
    chunks = []
    for f in program.functions:
        ef = expand_loops(prune_dead_blocks(f))
        chunks.append(pretty_print(Program([ef.function])))
    return "\n".join(chunks)
