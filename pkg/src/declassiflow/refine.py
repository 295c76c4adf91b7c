"""Path-sensitive refinement: decide whether a candidate variable is
transmitted on every realizable path through a region, and upgrade block
knowledge where transmission is inevitable.

The query is posed with flag instrumentation: a flag starts at 0, is set to -1
in the region header and to 1 in every transmitter block where the candidate
is known; the assertion "flag != -1" must hold at the unique exit. A bounded
symbolic executor explores paths, pruning those whose branch constraints are
unsatisfiable. Constraint solving is exact within the configured input domain:
a cheap interval pass first, exhaustive enumeration as the fallback. Any
exploration cap hit degrades the verdict to Unknown, which is treated like
Escapable downstream (no knowledge upgrade).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

from .cfg import DomInfo, build_cfg, dominators
from .frontier import BlockKnowledge
from .ir import Block, Function, Instruction
from .knowledge import AnalysisError, FunctionSummary, leak_model
from .oracle import eval_op, load_value

INEVITABLE = "inevitable"
ESCAPABLE = "escapable"
UNKNOWN = "unknown"


@dataclass(frozen=True)
class Region:
    """Header plus every block it dominates (closed under header-avoiding
    paths by construction)."""

    header: str
    blocks: frozenset


@dataclass
class Limits:
    loop_cap: int = 32
    path_cap: int = 4096
    domain_min: int = 0
    domain_max: int = 15
    max_symbols: int = 20
    enum_budget: int = 1 << 20


@dataclass
class Constraint:
    """Entry constraint `var op literal` on a parameter of the function."""

    var: str
    op: str  # == != < <= > >=
    value: int


def parse_constraint(text: str) -> Constraint:
    parts = text.split()
    if len(parts) != 3 or parts[1] not in ("==", "!=", "<", "<=", ">", ">="):
        raise AnalysisError(f"bad constraint '{text}' (expected 'var op literal')")
    return Constraint(parts[0], parts[1], int(parts[2]))


@dataclass
class RefinementResult:
    verdict: str
    region: Region
    variable: str
    witness: dict[str, int] | None = None
    witness_inputs: list[int] | None = None
    witness_path: list[tuple[str, str]] | None = None
    note: str = ""


def candidate_regions(f: Function, dom: DomInfo | None = None,
                      summaries: dict[str, FunctionSummary] | None = None,
                      transmit_speculative: bool = True) -> list[Region]:
    """Regions headed at each block dominating every transmitter block,
    ordered from the entry inward."""
    cfg = build_cfg(f)
    dom = dom or dominators(cfg)
    _, tblocks = leak_model(f, summaries or {}, transmit_speculative,
                            speculative_only=True)
    if not tblocks:
        return []
    headers = [b.label for b in f.blocks
               if all(dom.dom(b.label, t) for t in tblocks)]
    headers.sort(key=dom.depth)
    return [Region(h, frozenset(dom.dominated_by(h))) for h in headers]


def candidate_vars(f: Function, kb: BlockKnowledge,
                   summaries: dict[str, FunctionSummary] | None = None,
                   transmit_speculative: bool = True) -> set[str]:
    """Union of block knowledge over the speculative transmitter blocks."""
    _, tblocks = leak_model(f, summaries or {}, transmit_speculative,
                            speculative_only=True)
    out: set[str] = set()
    for b in tblocks:
        out |= kb.at(b)
    return out


# ---------------------------------------------------------------------------
# Flag instrumentation
# ---------------------------------------------------------------------------

@dataclass
class InstrumentedFunction:
    """Function with a unique exit plus flag metadata; the flag is analysis
    state, not an SSA variable, so the IR itself is untouched."""

    function: Function
    flag_sets: dict[str, list[int]]
    exit_block: str
    region: Region
    variable: str


def unique_exit(f: Function) -> tuple[Function, str]:
    g = f.copy()
    rets = [b for b in g.blocks if b.terminator.opcode == "ret"]
    if not rets:
        raise AnalysisError(f"'{f.name}' has no terminating block")
    if len(rets) == 1:
        return g, rets[0].label
    taken = {b.label for b in g.blocks}
    label = "Xu"
    k = 1
    while label in taken:
        k += 1
        label = f"Xu{k}"
    exit_block = Block(label)
    exit_block.terminator = Instruction("ret")
    for b in rets:
        b.terminator = Instruction("jmp", operands=[label])
    g.blocks.append(exit_block)
    return g, label


def instrument_flags(f: Function, region: Region, var: str,
                     kb: BlockKnowledge,
                     summaries: dict[str, FunctionSummary] | None = None,
                     transmit_speculative: bool = True) -> InstrumentedFunction:
    """Flag plan: 0 at entry, -1 in the region header, 1 in each transmitter
    block that knows the candidate variable; assert flag != -1 at the exit."""
    g, exit_label = unique_exit(f)
    _, tblocks = leak_model(f, summaries or {}, transmit_speculative,
                            speculative_only=True)
    flag_sets: dict[str, list[int]] = {}
    flag_sets.setdefault(g.entry_block, []).append(0)
    flag_sets.setdefault(region.header, []).append(-1)
    for b in sorted(tblocks):
        if var in kb.at(b):
            flag_sets.setdefault(b, []).append(1)
    return InstrumentedFunction(g, flag_sets, exit_label, region, var)


# ---------------------------------------------------------------------------
# Terms and satisfiability
# ---------------------------------------------------------------------------
#
# A term is an int (concrete), ("sym", name), or (opcode, operand terms...).
# Loads become ("load", address term) and are evaluated with the same
# deterministic pseudo-value as the concrete interpreter.

def _is_concrete(t) -> bool:
    return isinstance(t, int)


def make_term(opcode: str, args: list):
    if all(isinstance(a, int) for a in args):
        return eval_op(opcode, args)
    return (opcode,) + tuple(args)


def eval_term(t, assignment: dict[str, int]) -> int:
    if isinstance(t, int):
        return t
    if t[0] == "sym":
        return assignment[t[1]]
    if t[0] == "load":
        return load_value(eval_term(t[1], assignment))
    return eval_op(t[0], [eval_term(a, assignment) for a in t[1:]])


_FULL = (-(1 << 31), (1 << 31) - 1)
_SAFE = 1 << 30  # stay far from the wrap boundary in the interval layer


def _interval(t, ranges: dict[str, tuple[int, int]]):
    """Best-effort interval; None means unknown/possibly wrapping."""
    if isinstance(t, int):
        return (t, t)
    if t[0] == "sym":
        return ranges.get(t[1], _FULL)
    if t[0] in ("add", "sub"):
        a = _interval(t[1], ranges)
        b = _interval(t[2], ranges)
        if a is None or b is None:
            return None
        if max(abs(a[0]), abs(a[1]), abs(b[0]), abs(b[1])) > _SAFE:
            return None
        return (a[0] + b[0], a[1] + b[1]) if t[0] == "add" else (a[0] - b[1], a[1] - b[0])
    if t[0] in ("eq", "lt"):
        a = _interval(t[1], ranges)
        b = _interval(t[2], ranges)
        if a is None or b is None:
            return (0, 1)
        if t[0] == "lt":
            if a[1] < b[0]:
                return (1, 1)
            if a[0] >= b[1]:
                return (0, 0)
            return (0, 1)
        if a[0] == a[1] == b[0] == b[1]:
            return (1, 1)
        if a[1] < b[0] or b[1] < a[0]:
            return (0, 0)
        return (0, 1)
    return None


def _refine_ranges(constraints, ranges: dict[str, tuple[int, int]]) -> bool:
    """Narrow symbol ranges from sym-vs-const comparisons; False on conflict."""
    changed = True
    while changed:
        changed = False
        for term, truthy in constraints:
            if isinstance(term, tuple) and term[0] in ("lt", "eq"):
                a, b = term[1], term[2]
                sym, const, flipped = None, None, False
                if isinstance(a, tuple) and a[0] == "sym" and isinstance(b, int):
                    sym, const = a[1], b
                elif isinstance(b, tuple) and b[0] == "sym" and isinstance(a, int):
                    sym, const, flipped = b[1], a, True
                if sym is None:
                    continue
                lo, hi = ranges.get(sym, _FULL)
                if term[0] == "lt":
                    if truthy:  # sym < const, or const < sym when flipped
                        lo, hi = (lo, min(hi, const - 1)) if not flipped else (max(lo, const + 1), hi)
                    else:
                        lo, hi = (max(lo, const), hi) if not flipped else (lo, min(hi, const))
                else:  # eq
                    if truthy:
                        lo, hi = max(lo, const), min(hi, const)
                    elif lo == hi == const:
                        return False
                    elif lo == const:
                        lo += 1
                    elif hi == const:
                        hi -= 1
                if (lo, hi) != ranges.get(sym, _FULL):
                    ranges[sym] = (lo, hi)
                    changed = True
                if lo > hi:
                    return False
            elif isinstance(term, tuple) and term[0] == "sym":
                lo, hi = ranges.get(sym := term[1], _FULL)
                if not truthy:
                    if lo > 0 or hi < 0:
                        return False
                    ranges[sym] = (0, 0)
                elif lo == hi == 0:
                    return False
    return True


class _Solver:
    """Exact within the input domain: intervals to prune, enumeration to
    decide and to produce witnesses."""

    def __init__(self, limits: Limits):
        self.limits = limits

    def quick_unsat(self, constraints, syms: list[str]) -> bool:
        d = (self.limits.domain_min, self.limits.domain_max)
        ranges = {s: d for s in syms}
        if not _refine_ranges(constraints, ranges):
            return True
        for term, truthy in constraints:
            iv = _interval(term, ranges)
            if iv is None:
                continue
            if truthy and iv == (0, 0):
                return True
            if not truthy and iv[0] > 0:
                return True
            if not truthy and iv[1] < 0:
                return True
        return False

    def solve(self, constraints, syms: list[str]):
        """Returns ("unsat", None), ("sat", witness) or ("unknown", None)."""
        if self.quick_unsat(constraints, syms):
            return "unsat", None
        if len(syms) > self.limits.max_symbols:
            raise AnalysisError(f"too many symbolic inputs ({len(syms)})")
        span = self.limits.domain_max - self.limits.domain_min + 1
        if span ** len(syms) > self.limits.enum_budget:
            return "unknown", None
        values = range(self.limits.domain_min, self.limits.domain_max + 1)
        for combo in itertools.product(values, repeat=len(syms)):
            assignment = dict(zip(syms, combo))
            ok = True
            for term, truthy in constraints:
                v = eval_term(term, assignment)
                if truthy != (v != 0):
                    ok = False
                    break
            if ok:
                return "sat", assignment
        return "unsat", None


# ---------------------------------------------------------------------------
# Bounded symbolic execution
# ---------------------------------------------------------------------------

@dataclass
class _SymFrame:
    function: Function
    block: str
    prev_block: str | None
    idx: int
    phis_done: bool
    env: dict
    pending_out: str | None


@dataclass
class _SymState:
    frames: list[_SymFrame]
    pc: list  # [(term, truthy)]
    syms: list[str]
    flag: int
    visits: dict[tuple[str, str], int] = field(default_factory=dict)
    path: list[tuple[str, str]] = field(default_factory=list)
    input_count: int = 0

    def fork(self) -> "_SymState":
        return _SymState(
            [_SymFrame(fr.function, fr.block, fr.prev_block, fr.idx, fr.phis_done,
                       dict(fr.env), fr.pending_out) for fr in self.frames],
            list(self.pc), list(self.syms), self.flag, dict(self.visits),
            list(self.path), self.input_count)


def check_inevitable(instr: InstrumentedFunction, limits: Limits | None = None,
                     constraints: list[Constraint] | None = None,
                     functions: dict[str, Function] | None = None) -> RefinementResult:
    """Explore all bounded paths of the instrumented function.

    Escapable: some satisfiable path reaches the exit with flag -1 (with a
    concrete witness). Inevitable: the whole bounded exploration finished with
    no such path and no cap hits. Unknown otherwise.
    """
    limits = limits or Limits()
    constraints = constraints or []
    functions = functions or {}
    solver = _Solver(limits)
    f = instr.function

    entry_pc = []
    param_syms = [p for p in f.params]
    for c in constraints:
        if c.var not in f.params:
            raise AnalysisError(f"constraint on unknown parameter '{c.var}'")
        sym = ("sym", c.var)
        if c.op == "==":
            entry_pc.append((make_term("eq", [sym, c.value]), True))
        elif c.op == "!=":
            entry_pc.append((make_term("eq", [sym, c.value]), False))
        elif c.op == "<":
            entry_pc.append((make_term("lt", [sym, c.value]), True))
        elif c.op == ">=":
            entry_pc.append((make_term("lt", [sym, c.value]), False))
        elif c.op == ">":
            entry_pc.append((make_term("lt", [c.value, sym]), True))
        elif c.op == "<=":
            entry_pc.append((make_term("lt", [c.value, sym]), False))
    status, _ = solver.solve(entry_pc, param_syms)
    if status == "unsat":
        raise AnalysisError("unsatisfiable entry constraints")

    init = _SymState(
        frames=[_SymFrame(f, f.entry_block, None, 0, False,
                          {p: ("sym", p) for p in f.params}, None)],
        pc=list(entry_pc), syms=list(param_syms), flag=0)
    stack = [init]
    paths = 0
    cap_hit = False
    unknown_seen = False

    while stack:
        st = stack.pop()
        outcome = _sym_run(st, instr, functions, limits)
        if outcome == "cap":
            cap_hit = True
            continue
        if outcome == "forked":
            forks = st.forks  # type: ignore[attr-defined]
            live = []
            for child in forks:
                verdictq = solver.quick_unsat(child.pc, child.syms)
                if not verdictq:
                    live.append(child)
            stack.extend(reversed(live))
            continue
        paths += 1
        if paths > limits.path_cap:
            cap_hit = True
            break
        if outcome == "exit":
            if st.flag == -1:
                status, witness = solver.solve(st.pc, st.syms)
                if status == "sat":
                    inputs = [witness[s] for s in st.syms]
                    return RefinementResult(
                        ESCAPABLE, instr.region, instr.variable,
                        witness=witness, witness_inputs=inputs,
                        witness_path=list(st.path))
                if status == "unknown":
                    unknown_seen = True

    if cap_hit or unknown_seen:
        return RefinementResult(UNKNOWN, instr.region, instr.variable,
                                note="exploration or solver budget exceeded")
    return RefinementResult(INEVITABLE, instr.region, instr.variable)


def _sym_run(st: _SymState, instr: InstrumentedFunction,
             functions: dict[str, Function], limits: Limits) -> str:
    """Run a state forward until it exits, forks at a branch, or hits a cap."""
    flag_fn = instr.function.name
    while True:
        frame = st.frames[-1]
        f = frame.function
        block = f.block(frame.block)

        if not frame.phis_done:
            frame.phis_done = True
            key = (f.name, block.label)
            st.visits[key] = st.visits.get(key, 0) + 1
            if st.visits[key] > limits.loop_cap:
                return "cap"
            st.path.append(key)
            if f.name == flag_fn:
                for v in instr.flag_sets.get(block.label, ()):
                    st.flag = v
            phis = block.phis()
            if phis:
                new_vals = {}
                for phi in phis:
                    k = phi.phi_labels.index(frame.prev_block)
                    new_vals[phi.output] = _sym_operand(frame, phi.operands[k])
                frame.env.update(new_vals)
                frame.idx = len(phis)

        if frame.idx < len(block.instructions):
            ins = block.instructions[frame.idx]
            frame.idx += 1
            if ins.opcode == "phi":
                continue
            if ins.opcode in ("specbarr", "store", "transmit"):
                continue
            if ins.opcode == "input":
                name = f"in{st.input_count}"
                st.input_count += 1
                if len(st.syms) >= limits.max_symbols:
                    raise AnalysisError(
                        f"too many symbolic inputs (> {limits.max_symbols})")
                st.syms.append(name)
                frame.env[ins.output] = ("sym", name)
                continue
            if ins.opcode == "load":
                addr = _sym_operand(frame, ins.operands[0])
                frame.env[ins.output] = (load_value(addr) if isinstance(addr, int)
                                         else ("load", addr))
                continue
            if ins.opcode == "call":
                callee = functions.get(ins.callee)
                if callee is None:
                    raise AnalysisError(
                        f"symbolic execution needs the body of '{ins.callee}'")
                env = {p: _sym_operand(frame, a)
                       for p, a in zip(callee.params, ins.operands)}
                frame.pending_out = ins.output
                st.frames.append(_SymFrame(callee, callee.entry_block, None, 0,
                                           False, env, None))
                continue
            args = [_sym_operand(frame, o) for o in ins.operands]
            frame.env[ins.output] = make_term(ins.opcode, args)
            continue

        t = block.terminator
        if t.opcode == "ret":
            val = _sym_operand(frame, t.operands[0]) if t.operands else 0
            st.frames.pop()
            if not st.frames:
                return "exit"
            caller = st.frames[-1]
            if caller.pending_out is not None:
                caller.env[caller.pending_out] = val
                caller.pending_out = None
            continue
        if t.opcode == "jmp":
            frame.prev_block, frame.block = frame.block, t.operands[0]
            frame.idx, frame.phis_done = 0, False
            continue
        if t.opcode == "br":
            cond = _sym_operand(frame, t.operands[0])
            then_l, else_l = t.operands[1], t.operands[2]
            if then_l == else_l:
                frame.prev_block, frame.block = frame.block, then_l
                frame.idx, frame.phis_done = 0, False
                continue
            if isinstance(cond, int):
                nxt = then_l if cond != 0 else else_l
                frame.prev_block, frame.block = frame.block, nxt
                frame.idx, frame.phis_done = 0, False
                continue
            forks = []
            for target, truthy in ((then_l, True), (else_l, False)):
                child = st.fork()
                child.pc.append((cond, truthy))
                cf = child.frames[-1]
                cf.prev_block, cf.block = cf.block, target
                cf.idx, cf.phis_done = 0, False
                forks.append(child)
            st.forks = forks  # type: ignore[attr-defined]
            return "forked"
        raise AnalysisError(f"bad terminator '{t.opcode}'")


def _sym_operand(frame: _SymFrame, op):
    if isinstance(op, int):
        return op
    return frame.env[op]


# ---------------------------------------------------------------------------
# Applying results
# ---------------------------------------------------------------------------

def apply_refinement(kb: BlockKnowledge, result: RefinementResult) -> BlockKnowledge:
    """Add the variable to every region block's knowledge. If the region is
    never entered the added knowledge is vacuous, which is inactionable and
    needs no separate check."""
    if result.verdict != INEVITABLE:
        raise AnalysisError(f"cannot apply a result with verdict '{result.verdict}'")
    for b in result.region.blocks:
        kb.known.setdefault(b, set()).add(result.variable)
    return kb
