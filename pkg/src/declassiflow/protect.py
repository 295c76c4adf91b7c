"""Speculation-barrier placement along knowledge frontiers.

Every function gets a protected clone (suffix ".p"). A clone carries a
speculation barrier at the entry of each block on the joint frontier of its
locally transmitted variables and of the arguments leaked by the pseudo
transmitters it calls, and its calls are redirected to protected clones.
Pseudo transmitters are caller-enforced: their own entry-block barrier is the
call site's responsibility, so their clones stay barrier-free (unless they are
the program's top level).
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .ir import Function, Instruction, Program, transmissions
from .knowledge import AnalysisError, FunctionSummary

PROTECTED_SUFFIX = ".p"


@dataclass
class ProtectionPlan:
    function: str
    barrier_blocks: set[str]
    mode: str  # "caller" or "callee"
    call_redirections: dict[tuple[str, int], str] = field(default_factory=dict)
    fallback_blocks: set[str] = field(default_factory=set)

    def as_dict(self) -> dict:
        return {
            "function": self.function,
            "barriers": sorted(self.barrier_blocks),
            "mode": self.mode,
            "redirections": {f"{b}:{i}": tgt
                             for (b, i), tgt in sorted(self.call_redirections.items())},
        }


def plan_protection(f: Function, frontiers: dict[str, set[str]],
                    summaries: dict[str, FunctionSummary],
                    own_summary: FunctionSummary, is_top_level: bool,
                    transmit_speculative: bool = True) -> ProtectionPlan:
    """Barrier blocks = joint frontier of locally (speculatively) transmitted
    variables and of arguments leaked by called pseudo transmitters.

    Variables with an empty frontier fall back to a barrier at each of their
    speculative transmitter sites. A pseudo transmitter skips its entry-block
    barrier unless it is top level.
    """
    f_local: set[str] = set()
    fallback: set[str] = set()
    for t in transmissions(f, transmit_speculative):
        if not t.speculative or not isinstance(t.operand, str):
            continue
        fr = frontiers.get(t.operand, set())
        if fr:
            f_local |= fr
        else:
            fallback.add(t.block)

    f_func: set[str] = set()
    for b in f.blocks:
        for idx, ins in enumerate(b.instructions):
            if ins.opcode != "call":
                continue
            summary = summaries.get(ins.callee)
            if summary is None:
                raise AnalysisError(f"missing summary for callee '{ins.callee}'")
            if not summary.is_pseudo_transmitter:
                continue  # callee enforced: protected internally
            for pos in summary.leaked_args:
                if pos >= len(ins.operands) or not isinstance(ins.operands[pos], str):
                    continue
                fr = frontiers.get(ins.operands[pos], set())
                if fr:
                    f_func |= fr
                else:
                    fallback.add(b.label)

    barriers = f_local | f_func | fallback
    if own_summary.is_pseudo_transmitter and not is_top_level:
        barriers.discard(f.entry_block)

    redirections: dict[tuple[str, int], str] = {}
    for b in f.blocks:
        for idx, ins in enumerate(b.instructions):
            if ins.opcode == "call":
                redirections[(b.label, idx)] = ins.callee + PROTECTED_SUFFIX

    mode = "caller" if own_summary.is_pseudo_transmitter else "callee"
    return ProtectionPlan(f.name, barriers, mode, redirections, fallback)


def emit_protected(program: Program, plans: dict[str, ProtectionPlan],
                   analyzed: dict[str, Function] | None = None) -> Program:
    """Protected clones first (entry clone leading), originals retained.

    Clones are built from the analyzed (loop-simplified) bodies, so frontier
    blocks introduced by simplification exist in the output; simplification
    preserves semantics.
    """
    analyzed = analyzed or {}
    entry = program.entry_function
    clones: list[Function] = []
    for f in program.functions:
        body = analyzed.get(f.name, f)
        clone = body.copy()
        clone.name = f.name + PROTECTED_SUFFIX
        plan = plans.get(f.name)
        for b in clone.blocks:
            for ins in b.instructions:
                if ins.opcode == "call":
                    ins.callee = ins.callee + PROTECTED_SUFFIX
            if plan and b.label in plan.barrier_blocks:
                b.instructions.insert(0, Instruction("specbarr"))
        clones.append(clone)
    clones.sort(key=lambda c: 0 if c.name == (entry or "") + PROTECTED_SUFFIX else 1)
    return Program(clones + [f.copy() for f in program.functions])


def barrier_count(program: Program) -> dict[str, list[str]]:
    """Blocks holding a speculation barrier, per function (non-empty only)."""
    out: dict[str, list[str]] = {}
    for f in program.functions:
        blocks = [b.label for b in f.blocks
                  if any(i.opcode == "specbarr" for i in b.instructions)]
        if blocks:
            out[f.name] = blocks
    return out
