"""Edge-knowledge data-flow analysis.

Computes, for every control-flow edge, the set of variables an observer of the
non-speculative execution is guaranteed to learn (directly revealed by a
transmitter, or inferable from revealed values through instruction equations).
Runs on the acyclic expanded function and is projected back onto the
pre-expansion CFG.

Propagation rules, applied to a fixpoint:
  R1 (init)  transmitted operands join every out-edge of their block; constants
             join every edge; arguments at call sites join the call block's
             out-edges when the callee is known to reveal that parameter.
  R2         equations are global: on any single edge, all inputs known implies
             the output is known (phi counts as forward solvable here).
  R3         backward-solvable positions: output plus the other inputs known on
             an edge implies the remaining input is known there.
  R4         known on every in-edge of a block -> known on every out-edge.
  R5         known on every out-edge and not defined in the block -> known on
             every in-edge. Never applied onto the virtual entry dummy edge,
             whose knowledge stays at its initial value (program text only).
  R6         phi: each arm known on its own in-edge -> output on all out-edges.
  R7         phi: output known on all out-edges -> each arm on its in-edge.

All paths are treated as realizable; that approximation loses precision but
never soundness.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from .cfg import ENTRY, EXIT, Cfg, ExpandedFunction, build_cfg
from .ir import Function, solvability, transmissions


class AnalysisError(Exception):
    pass


@dataclass
class KnowledgeMap:
    cfg: Cfg
    known: dict[int, set[str]]
    vacuous: dict[int, set[str]] = field(default_factory=dict)

    def at(self, src: str, dst: str) -> set[str]:
        return self.known[self.cfg.edge(src, dst).index]

    def as_dict(self) -> dict[tuple[str, str], list[str]]:
        return {e.key: sorted(self.known[e.index]) for e in self.cfg.edges}


@dataclass
class FunctionSummary:
    """What a callee reveals, for use while analyzing its callers."""

    name: str
    params: list[str]
    leaked_args: frozenset[int]
    internal_leaks: frozenset[str]
    fully_declassified_vars: frozenset[str]
    is_fully_declassified: bool
    is_pseudo_transmitter: bool

    @property
    def declassified_args(self) -> frozenset[int]:
        return frozenset(i for i, p in enumerate(self.params)
                         if p in self.fully_declassified_vars)


def _const_outputs(f: Function) -> set[str]:
    return {ins.output for _, ins in f.instructions() if ins.opcode == "const"}


def init_knowledge(ef: ExpandedFunction, summaries: dict[str, FunctionSummary],
                   transmit_speculative: bool = True) -> KnowledgeMap:
    """Seed the edge sets: transmitter operands, constants, callee leaks."""
    f = ef.function
    cfg = build_cfg(f)
    known: dict[int, set[str]] = {e.index: set() for e in cfg.edges}

    consts = _const_outputs(f)
    for e in cfg.edges:
        known[e.index] |= consts

    for t in transmissions(f, transmit_speculative):
        if isinstance(t.operand, str):
            for e in cfg.out_edges[t.block]:
                known[e.index].add(t.operand)

    for b in f.blocks:
        for ins in b.instructions:
            if ins.opcode != "call":
                continue
            summary = summaries.get(ins.callee)
            if summary is None:
                raise AnalysisError(
                    f"missing summary for callee '{ins.callee}' of '{f.name}'")
            for pos in summary.declassified_args:
                if pos < len(ins.operands) and isinstance(ins.operands[pos], str):
                    for e in cfg.out_edges[b.label]:
                        known[e.index].add(ins.operands[pos])
    return KnowledgeMap(cfg, known)


@dataclass
class _Equation:
    output: str
    var_inputs: tuple[str, ...]
    is_phi: bool
    backward: tuple[tuple[str, tuple[str, ...]], ...]  # (recoverable input, other var inputs)


def _equations(f: Function) -> list[_Equation]:
    eqs: list[_Equation] = []
    for _, ins in f.instructions():
        if ins.opcode == "phi":
            eqs.append(_Equation(ins.output, tuple(ins.var_operands()), True, ()))
            continue
        try:
            sc = solvability(ins.opcode)
        except Exception:
            continue
        var_inputs = tuple(ins.var_operands())
        backward = []
        for pos in sorted(sc.backward_operands):
            if pos < len(ins.operands) and isinstance(ins.operands[pos], str):
                others = tuple(o for i, o in enumerate(ins.operands)
                               if i != pos and isinstance(o, str))
                backward.append((ins.operands[pos], others))
        eqs.append(_Equation(ins.output, var_inputs, False, tuple(backward)))
    return eqs


def propagate(km: KnowledgeMap, ef: ExpandedFunction,
              order_seed: int | None = None) -> KnowledgeMap:
    """Least fixpoint of R2-R7 over the initialized map.

    The rules only grow the per-edge sets, so the fixpoint is unique; the
    optional order_seed shuffles sweep order to exercise that.
    """
    f = ef.function
    cfg = km.cfg
    known = km.known
    eqs = _equations(f)

    phi_arms: dict[str, list[tuple[str, list[tuple[str | int, int]]]]] = {}
    for b in f.blocks:
        arms = []
        for phi in b.phis():
            pairs = []
            for op, lab in zip(phi.operands, phi.phi_labels):
                pairs.append((op, cfg.edge(lab, b.label).index))
            arms.append((phi.output, pairs))
        if arms:
            phi_arms[b.label] = arms

    edge_order = list(cfg.edges)
    block_order = list(f.blocks)
    if order_seed is not None:
        rng = random.Random(order_seed)
        rng.shuffle(edge_order)
        rng.shuffle(block_order)
        eqs = list(eqs)
        rng.shuffle(eqs)

    def close_edge(idx: int) -> bool:
        s = known[idx]
        grew = False
        changed = True
        while changed:
            changed = False
            for eq in eqs:
                if eq.output not in s and all(v in s for v in eq.var_inputs):
                    s.add(eq.output)
                    changed = grew = True
                if not eq.is_phi and eq.output in s:
                    for target, others in eq.backward:
                        if target not in s and all(v in s for v in others):
                            s.add(target)
                            changed = grew = True
        return grew

    changed = True
    while changed:
        changed = False
        for e in edge_order:
            if close_edge(e.index):
                changed = True
        for b in block_order:
            ins_e = cfg.in_edges[b.label]
            outs_e = cfg.out_edges[b.label]
            if not ins_e or not outs_e:
                continue
            in_common = set.intersection(*(known[e.index] for e in ins_e))
            for e in outs_e:
                missing = in_common - known[e.index]
                if missing:
                    known[e.index] |= missing
                    changed = True
            out_common = set.intersection(*(known[e.index] for e in outs_e))
            defs = b.defined_vars()
            hoistable = {v for v in out_common if v not in defs}
            for e in ins_e:
                if e.src == ENTRY:
                    continue  # the entry dummy keeps only its initial knowledge
                missing = hoistable - known[e.index]
                if missing:
                    known[e.index] |= missing
                    changed = True
            for out, pairs in phi_arms.get(b.label, ()):  # R6 / R7
                if out not in out_common and all(
                        (not isinstance(op, str)) or op in known[eidx]
                        for op, eidx in pairs):
                    for e in outs_e:
                        if out not in known[e.index]:
                            known[e.index].add(out)
                            changed = True
                    out_common = set.intersection(*(known[e.index] for e in outs_e))
                if out in out_common:
                    for op, eidx in pairs:
                        if isinstance(op, str) and op not in known[eidx]:
                            known[eidx].add(op)
                            changed = True
    return km


def analyze_edges(ef: ExpandedFunction, summaries: dict[str, FunctionSummary],
                  transmit_speculative: bool = True,
                  order_seed: int | None = None) -> KnowledgeMap:
    km = init_knowledge(ef, summaries, transmit_speculative)
    return propagate(km, ef, order_seed)


def project_to_original(km: KnowledgeMap, ef: ExpandedFunction) -> KnowledgeMap:
    """Map expanded-edge knowledge onto the pre-expansion CFG.

    A variable is known on an original edge when every expanded edge standing
    for it knows the copy of the variable that is current there. Knowledge of
    a variable on an edge no run through that edge could ever define is kept
    but flagged vacuous.
    """
    ocfg = build_cfg(ef.original)
    by_key = {e.key: e.index for e in km.cfg.edges}
    counterparts: dict[tuple[str, str], list[tuple[str, str]]] = {e.key: [] for e in ocfg.edges}
    for ekey, origins in ef.edge_origin.items():
        for ok in origins:
            if ok in counterparts:
                counterparts[ok].append(ekey)

    out: dict[int, set[str]] = {}
    ovars = sorted(ef.original.defined_vars())
    for oe in ocfg.edges:
        cps = counterparts[oe.key]
        s: set[str] = set()
        if cps:
            for v in ovars:
                if all(ef.representative(v, ck) in km.known[by_key[ck]] for ck in cps):
                    s.add(v)
        out[oe.index] = s

    vac = _vacuous_flags(ocfg, ef.original, out)
    return KnowledgeMap(ocfg, out, vac)


def _vacuous_flags(cfg: Cfg, f: Function, known: dict[int, set[str]]) -> dict[int, set[str]]:
    def_block: dict[str, str | None] = {p: None for p in f.params}
    for b in f.blocks:
        for ins in b.instructions:
            if ins.output is not None:
                def_block[ins.output] = b.label

    reach: dict[str, set[str]] = {}
    for b in f.blocks:
        seen = {b.label}
        work = [b.label]
        while work:
            cur = work.pop()
            for s in cfg.succs(cur):
                if s not in seen:
                    seen.add(s)
                    work.append(s)
        reach[b.label] = seen

    vac: dict[int, set[str]] = {}
    for e in cfg.edges:
        flagged = set()
        for v in known[e.index]:
            db = def_block.get(v)
            if db is None:
                continue  # parameters are defined on every path
            defined_before = e.src != ENTRY and e.src in reach[db]
            defined_after = e.dst != EXIT and db in reach.get(e.dst, set())
            if not (defined_before or defined_after):
                flagged.add(v)
        if flagged:
            vac[e.index] = flagged
    return vac


# ---------------------------------------------------------------------------
# Function summaries
# ---------------------------------------------------------------------------

def leak_model(f: Function, summaries: dict[str, FunctionSummary],
               transmit_speculative: bool = True, speculative_only: bool = False):
    """Per-function leak structure: directly revealed variables, the blocks
    that reveal them, and the set of transmitter-bearing blocks.

    A call to a pseudo transmitter counts as a transmitter of its leaked
    arguments; other calls reveal nothing at their site. With speculative_only,
    branch and store sites are excluded: those leak only non-speculatively and
    never need protection themselves.
    """
    revealed: dict[str, set[str]] = {}
    tblocks: set[str] = set()
    for t in transmissions(f, transmit_speculative):
        if speculative_only and not t.speculative:
            continue
        tblocks.add(t.block)
        if isinstance(t.operand, str):
            revealed.setdefault(t.operand, set()).add(t.block)
    for b in f.blocks:
        for ins in b.instructions:
            if ins.opcode != "call":
                continue
            summary = summaries.get(ins.callee)
            if summary is None:
                raise AnalysisError(
                    f"missing summary for callee '{ins.callee}' of '{f.name}'")
            if summary.is_pseudo_transmitter and summary.leaked_args:
                tblocks.add(b.label)
                for pos in summary.leaked_args:
                    if pos < len(ins.operands) and isinstance(ins.operands[pos], str):
                        revealed.setdefault(ins.operands[pos], set()).add(b.label)
    return revealed, tblocks


def summarize(f: Function, ef: ExpandedFunction, kb: "dict[str, set[str]]",
              frontiers: dict[str, set[str]], summaries: dict[str, FunctionSummary],
              transmit_speculative: bool = True) -> FunctionSummary:
    """Build the caller-facing summary of f.

    A variable counts as fully declassified when its frontier is the entry
    block, or when it is derivable from the program text alone (known before
    the body runs). f is a pseudo transmitter when every value it reveals is
    fully declassified, its internal leaks are all inferable from the leaked
    arguments alone, and every callee is itself a pseudo transmitter.
    """
    from .cfg import ENTRY

    revealed, tblocks = leak_model(f, summaries, transmit_speculative)
    entry = f.entry_block
    public = kb.get(ENTRY, set())
    fdv = frozenset(v for v, fr in frontiers.items()
                    if fr == {entry} or v in public)

    candidate_leaks: set[str] = set()
    for b in tblocks:
        candidate_leaks |= kb.get(b, set())
    leaked_args = frozenset(i for i, p in enumerate(f.params) if p in candidate_leaks)
    internal_leaks = frozenset(v for v in revealed if v not in f.params)
    transmitted = set(revealed)
    is_fd = all(v in fdv for v in transmitted)

    callees_pseudo = True
    for _, ins in f.instructions():
        if ins.opcode == "call":
            s = summaries.get(ins.callee)
            if s is None:
                raise AnalysisError(f"missing summary for callee '{ins.callee}'")
            if not s.is_pseudo_transmitter:
                callees_pseudo = False

    leaked_values_declassified = all(
        f.params[i] in fdv for i in leaked_args) and all(
        v in fdv for v in internal_leaks)

    pseudo = callees_pseudo and leaked_values_declassified
    if pseudo and internal_leaks:
        pseudo = _internal_leaks_rederivable(
            f, ef, {f.params[i] for i in leaked_args}, revealed, internal_leaks,
            transmit_speculative)

    return FunctionSummary(
        name=f.name,
        params=list(f.params),
        leaked_args=leaked_args,
        internal_leaks=internal_leaks,
        fully_declassified_vars=fdv,
        is_fully_declassified=is_fd,
        is_pseudo_transmitter=pseudo,
    )


def _internal_leaks_rederivable(f: Function, ef: ExpandedFunction, seed: set[str],
                                revealed: dict[str, set[str]],
                                internal_leaks: frozenset[str],
                                transmit_speculative: bool) -> bool:
    """Check that knowledge of the leaked arguments alone re-derives every
    internally leaked value at the blocks where it escapes."""
    cfg = build_cfg(ef.function)
    known = {e.index: set(seed) | _const_outputs(ef.function) for e in cfg.edges}
    km = propagate(KnowledgeMap(cfg, known), ef)
    proj = project_to_original(km, ef)
    for v in internal_leaks:
        for b in revealed[v]:
            for e in proj.cfg.out_edges[b]:
                if v not in proj.known[e.index]:
                    return False
    return True
