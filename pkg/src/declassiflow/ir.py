"""Textual SSA mini-IR: types, parser, validator, solvability table, printer.

The language is line-oriented: one instruction per line, `#` starts a comment.

    fn name(a, b) {
    B1:
      v = const 7
      w = add a, v
      transmit w
      br w, B2, B3
    ...
    }

Operands are either variable names or integer literals. Integers are 32-bit
two's-complement. Transmitting instructions: `load` (address, may run
speculatively), `store` (address only, non-speculative), `br` (condition,
non-speculative) and the explicit `transmit`.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

MASK32 = 0xFFFFFFFF
INT32_MIN = -(1 << 31)
INT32_MAX = (1 << 31) - 1

# opcode -> (has_output, operand_count); -1 means variable arity
OPCODES = {
    "const": (True, 1),
    "input": (True, 0),
    "add": (True, 2),
    "sub": (True, 2),
    "neg": (True, 1),
    "xor": (True, 2),
    "not": (True, 1),
    "mul": (True, 2),
    "and": (True, 2),
    "or": (True, 2),
    "shl": (True, 2),
    "eq": (True, 2),
    "lt": (True, 2),
    "gep": (True, 3),
    "load": (True, 1),
    "store": (False, 2),
    "transmit": (False, 1),
    "phi": (True, -1),
    "call": (True, -1),
    "specbarr": (False, 0),
}
TERMINATORS = {"br", "jmp", "ret"}

# Deterministic opcodes have a defining equation y = f(x1..xN).
DETERMINISTIC = {
    "const", "add", "sub", "neg", "xor", "not",
    "mul", "and", "or", "shl", "eq", "lt", "gep",
}

Operand = "str | int"  # variable name or 32-bit literal


class IRError(Exception):
    """Problem with the textual IR (syntax or structure)."""

    def __init__(self, message: str, line: int | None = None, col: int | None = None):
        self.line = line
        self.col = col
        if line is not None:
            message = f"line {line}: {message}" if col is None else f"line {line}, col {col}: {message}"
        super().__init__(message)


@dataclass
class Instruction:
    """One non-terminator or terminator instruction.

    operands holds variable names (str) or literals (int). For phi, operands
    pairs up with phi_labels (incoming predecessor label per operand). For
    call, callee names the target and operands are the arguments.
    """

    opcode: str
    output: str | None = None
    operands: list = field(default_factory=list)
    phi_labels: list = field(default_factory=list)
    callee: str | None = None
    line: int = 0

    def var_operands(self) -> list[str]:
        return [o for o in self.operands if isinstance(o, str)]

    def is_terminator(self) -> bool:
        return self.opcode in TERMINATORS

    def copy(self) -> "Instruction":
        return Instruction(self.opcode, self.output, list(self.operands),
                           list(self.phi_labels), self.callee, self.line)


@dataclass
class Block:
    label: str
    instructions: list[Instruction] = field(default_factory=list)
    terminator: Instruction | None = None
    line: int = 0

    def phis(self) -> list[Instruction]:
        return [i for i in self.instructions if i.opcode == "phi"]

    def successor_labels(self) -> list[str]:
        t = self.terminator
        if t is None:
            return []
        if t.opcode == "br":
            return [t.operands[1], t.operands[2]]
        if t.opcode == "jmp":
            return [t.operands[0]]
        return []

    def defined_vars(self) -> set[str]:
        return {i.output for i in self.instructions if i.output is not None}

    def copy(self) -> "Block":
        b = Block(self.label, [i.copy() for i in self.instructions], None, self.line)
        if self.terminator is not None:
            b.terminator = self.terminator.copy()
        return b


@dataclass
class Function:
    name: str
    params: list[str]
    blocks: list[Block]
    line: int = 0

    @property
    def entry_block(self) -> str:
        return self.blocks[0].label

    @property
    def exit_blocks(self) -> list[str]:
        return [b.label for b in self.blocks if b.terminator is not None and b.terminator.opcode == "ret"]

    def block(self, label: str) -> Block:
        for b in self.blocks:
            if b.label == label:
                return b
        raise KeyError(label)

    def block_map(self) -> dict[str, Block]:
        return {b.label: b for b in self.blocks}

    def defined_vars(self) -> set[str]:
        out = set(self.params)
        for b in self.blocks:
            out |= b.defined_vars()
        return out

    def instructions(self):
        for b in self.blocks:
            for i in b.instructions:
                yield b, i

    def copy(self) -> "Function":
        return Function(self.name, list(self.params), [b.copy() for b in self.blocks], self.line)


@dataclass
class Program:
    functions: list[Function]

    @property
    def entry_function(self) -> str | None:
        return self.functions[0].name if self.functions else None

    def function(self, name: str) -> Function:
        for f in self.functions:
            if f.name == name:
                return f
        raise KeyError(name)

    def function_names(self) -> list[str]:
        return [f.name for f in self.functions]

    def copy(self) -> "Program":
        return Program([f.copy() for f in self.functions])


@dataclass(frozen=True)
class SolvClass:
    """Solvability of a deterministic instruction's defining equation."""

    forward: bool
    backward_operands: frozenset

    def __post_init__(self):
        if self.backward_operands and not self.forward:
            raise ValueError("backward solvability requires forward solvability")


_SOLVABILITY = {
    "const": SolvClass(True, frozenset()),
    "add": SolvClass(True, frozenset({0, 1})),
    "sub": SolvClass(True, frozenset({0, 1})),
    "xor": SolvClass(True, frozenset({0, 1})),
    "neg": SolvClass(True, frozenset({0})),
    "not": SolvClass(True, frozenset({0})),
    "mul": SolvClass(True, frozenset()),
    "and": SolvClass(True, frozenset()),
    "or": SolvClass(True, frozenset()),
    "shl": SolvClass(True, frozenset()),
    "eq": SolvClass(True, frozenset()),
    "lt": SolvClass(True, frozenset()),
    # Recovering the index would need exact division; only the base is safe.
    "gep": SolvClass(True, frozenset({0})),
}


def solvability(opcode: str, operand_count: int | None = None) -> SolvClass:
    """Solvability class of a deterministic opcode.

    phi is excluded: its value depends on the incoming edge, so it is handled
    by dedicated per-edge rules in the knowledge analysis.
    """
    if opcode == "phi":
        raise IRError("phi has no fixed equation; handled by dedicated rules")
    if opcode not in DETERMINISTIC:
        raise IRError(f"no equation for non-deterministic opcode '{opcode}'")
    sc = _SOLVABILITY[opcode]
    if operand_count is not None:
        expected = OPCODES[opcode][1]
        if expected >= 0 and operand_count != expected:
            raise IRError(f"{opcode} takes {expected} operands, got {operand_count}")
    return sc


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

_IDENT = re.compile(r"[A-Za-z_][A-Za-z0-9_.]*")
_INT = re.compile(r"-?[0-9]+")


class _Lexer:
    """Tokenizes one line into identifiers, integers and punctuation."""

    def __init__(self, text: str, line: int):
        self.text = text
        self.line = line
        self.pos = 0

    def error(self, msg: str) -> IRError:
        return IRError(msg, self.line, self.pos + 1)

    def _skip_ws(self):
        while self.pos < len(self.text) and self.text[self.pos] in " \t":
            self.pos += 1

    def peek(self) -> str | None:
        self._skip_ws()
        if self.pos >= len(self.text):
            return None
        return self.text[self.pos]

    def take_ident(self) -> str:
        self._skip_ws()
        m = _IDENT.match(self.text, self.pos)
        if not m:
            raise self.error("expected identifier")
        self.pos = m.end()
        return m.group()

    def take_int(self) -> int:
        self._skip_ws()
        m = _INT.match(self.text, self.pos)
        if not m:
            raise self.error("expected integer")
        self.pos = m.end()
        return to_i32(int(m.group()))

    def take_operand(self):
        c = self.peek()
        if c is None:
            raise self.error("expected operand")
        if c == "-" or c.isdigit():
            return self.take_int()
        return self.take_ident()

    def expect(self, ch: str):
        self._skip_ws()
        if self.pos >= len(self.text) or self.text[self.pos] != ch:
            raise self.error(f"expected '{ch}'")
        self.pos += 1

    def accept(self, ch: str) -> bool:
        if self.peek() == ch:
            self.pos += 1
            return True
        return False

    def at_end(self) -> bool:
        return self.peek() is None


def to_i32(v: int) -> int:
    """Canonical signed 32-bit value."""
    v &= MASK32
    return v - (1 << 32) if v > INT32_MAX else v


def _strip_comment(line: str) -> str:
    idx = line.find("#")
    return line if idx < 0 else line[:idx]


def parse_program(text: str) -> Program:
    """Parse mini-IR source. Raises IRError with line/column on bad syntax."""
    functions: list[Function] = []
    lines = text.splitlines()
    i = 0
    n = len(lines)

    def next_content(j: int) -> int:
        while j < n and not _strip_comment(lines[j]).strip():
            j += 1
        return j

    while True:
        i = next_content(i)
        if i >= n:
            break
        lex = _Lexer(_strip_comment(lines[i]), i + 1)
        kw = lex.take_ident()
        if kw != "fn":
            raise lex.error("expected 'fn'")
        name = lex.take_ident()
        lex.expect("(")
        params: list[str] = []
        if not lex.accept(")"):
            while True:
                params.append(lex.take_ident())
                if lex.accept(")"):
                    break
                lex.expect(",")
        lex.expect("{")
        fn_line = i + 1
        body_lines: list[tuple[int, str]] = []
        inline = lex.text[lex.pos:].strip()
        i += 1
        closed = False
        if inline:
            if inline.endswith("}"):
                closed = True
                inline = inline[:-1].strip()
            if inline:
                body_lines.append((fn_line, inline))
        while not closed and i < n:
            raw = _strip_comment(lines[i]).strip()
            if raw == "}":
                closed = True
            elif raw.endswith("}"):
                body_lines.append((i + 1, raw[:-1].strip()))
                closed = True
            elif raw:
                body_lines.append((i + 1, raw))
            i += 1

        blocks: list[Block] = []
        current: Block | None = None
        for lineno, raw in body_lines:
            lex = _Lexer(raw, lineno)
            # A new block starts at `LABEL:`.
            save = lex.pos
            try:
                label = lex.take_ident()
                is_label = lex.accept(":")
            except IRError:
                is_label = False
            if is_label:
                if current is not None and current.terminator is None:
                    raise IRError(f"block '{current.label}' has no terminator", current.line)
                current = Block(label, line=lineno)
                blocks.append(current)
                if lex.at_end():
                    continue
                # allow an instruction on the label line
            else:
                lex.pos = save
            if current is None:
                raise lex.error("instruction outside a block (missing label?)")
            if current.terminator is not None:
                raise lex.error(f"instruction after terminator in block '{current.label}'")
            instr = _parse_instruction(lex)
            if instr.is_terminator():
                current.terminator = instr
            else:
                current.instructions.append(instr)
        if not closed:
            raise IRError(f"unclosed function '{name}'", fn_line)
        if not blocks:
            raise IRError(f"function '{name}' has no blocks", fn_line)
        if blocks[-1].terminator is None:
            raise IRError(f"block '{blocks[-1].label}' has no terminator", blocks[-1].line)
        functions.append(Function(name, params, blocks, fn_line))

    program = Program(functions)
    report = validate_ssa(program)
    errors = [iss for iss in report.issues if iss.fatal]
    if errors:
        first = errors[0]
        raise IRError(first.message, first.line)
    return program


def _parse_instruction(lex: _Lexer) -> Instruction:
    line = lex.line
    first = lex.take_ident()

    if first in ("store", "transmit", "specbarr", "br", "jmp", "ret"):
        ins = Instruction(first, line=line)
        if first == "store":
            ins.operands = [lex.take_operand()]
            lex.expect(",")
            ins.operands.append(lex.take_operand())
        elif first == "transmit":
            ins.operands = [lex.take_operand()]
        elif first == "br":
            ins.operands = [lex.take_operand()]
            lex.expect(",")
            ins.operands.append(lex.take_ident())
            lex.expect(",")
            ins.operands.append(lex.take_ident())
        elif first == "jmp":
            ins.operands = [lex.take_ident()]
        elif first == "ret":
            if not lex.at_end():
                ins.operands = [lex.take_operand()]
        if not lex.at_end():
            raise lex.error("unexpected trailing text")
        return ins

    # output form: v = opcode ...
    output = first
    lex.expect("=")
    opcode = lex.take_ident()
    if opcode not in OPCODES or opcode in ("store", "transmit", "specbarr"):
        raise lex.error(f"unknown opcode '{opcode}'")
    has_output, arity = OPCODES[opcode]
    if not has_output:
        raise lex.error(f"'{opcode}' produces no output")
    ins = Instruction(opcode, output=output, line=line)

    if opcode == "phi":
        while True:
            lex.expect("[")
            ins.operands.append(lex.take_operand())
            lex.expect(",")
            ins.phi_labels.append(lex.take_ident())
            lex.expect("]")
            if not lex.accept(","):
                break
    elif opcode == "call":
        ins.callee = lex.take_ident()
        lex.expect("(")
        if not lex.accept(")"):
            while True:
                ins.operands.append(lex.take_operand())
                if lex.accept(")"):
                    break
                lex.expect(",")
    elif opcode == "const":
        ins.operands = [lex.take_int()]
    elif opcode == "input":
        pass
    else:
        for k in range(arity):
            if k:
                lex.expect(",")
            ins.operands.append(lex.take_operand())
        if opcode == "gep" and not isinstance(ins.operands[2], int):
            raise lex.error("gep scale must be a literal")
    if not lex.at_end():
        raise lex.error("unexpected trailing text")
    return ins


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

@dataclass
class ValidationIssue:
    kind: str
    message: str
    function: str | None = None
    block: str | None = None
    line: int | None = None
    fatal: bool = True


@dataclass
class ValidationReport:
    issues: list[ValidationIssue] = field(default_factory=list)

    def ok(self) -> bool:
        return not self.issues

    def add(self, kind: str, message: str, function=None, block=None, line=None):
        self.issues.append(ValidationIssue(kind, message, function, block, line))


def _local_dominators(succs: dict[str, list[str]], entry: str) -> dict[str, set[str]]:
    """Dominator sets by iteration; unreachable blocks get empty sets."""
    labels = list(succs)
    preds: dict[str, list[str]] = {l: [] for l in labels}
    for l, ss in succs.items():
        for s in ss:
            if s in preds:
                preds[s].append(l)
    reachable = {entry}
    work = [entry]
    while work:
        b = work.pop()
        for s in succs.get(b, []):
            if s not in reachable:
                reachable.add(s)
                work.append(s)
    dom = {l: (set(labels) if l in reachable else set()) for l in labels}
    dom[entry] = {entry}
    changed = True
    while changed:
        changed = False
        for l in labels:
            if l == entry or l not in reachable:
                continue
            ps = [p for p in preds[l] if p in reachable]
            new = set.intersection(*(dom[p] for p in ps)) if ps else set()
            new &= set(labels)
            new.add(l)
            if new != dom[l]:
                dom[l] = new
                changed = True
    return dom


def validate_ssa(program: Program) -> ValidationReport:
    """Check program- and function-level invariants; returns found violations."""
    report = ValidationReport()

    seen_fn: set[str] = set()
    for f in program.functions:
        if f.name in seen_fn:
            report.add("duplicate-function", f"duplicate function '{f.name}'", f.name, line=f.line)
        seen_fn.add(f.name)

    names = {f.name for f in program.functions}
    call_edges: set[tuple[str, str]] = set()
    for f in program.functions:
        for _, ins in f.instructions():
            if ins.opcode == "call":
                if ins.callee not in names:
                    report.add("unknown-callee", f"unknown callee '{ins.callee}'", f.name, line=ins.line)
                else:
                    call_edges.add((f.name, ins.callee))
                    callee = program.function(ins.callee)
                    if len(ins.operands) != len(callee.params):
                        report.add("call-arity",
                                   f"call to '{ins.callee}' passes {len(ins.operands)} args, "
                                   f"expected {len(callee.params)}", f.name, line=ins.line)

    # call graph must be acyclic (no recursion)
    adj: dict[str, set[str]] = {}
    for a, b in call_edges:
        adj.setdefault(a, set()).add(b)
    state: dict[str, int] = {}

    def dfs(node: str) -> bool:
        state[node] = 1
        for m in adj.get(node, ()):
            if state.get(m) == 1:
                return True
            if state.get(m, 0) == 0 and dfs(m):
                return True
        state[node] = 2
        return False

    for f in program.functions:
        if state.get(f.name, 0) == 0 and dfs(f.name):
            report.add("recursion",
                       "call graph has a cycle (recursion is rejected)", f.name)
            break

    for f in program.functions:
        _validate_function(f, report)
    return report


def _validate_function(f: Function, report: ValidationReport):
    labels = [b.label for b in f.blocks]
    label_set = set(labels)
    if len(labels) != len(label_set):
        dupes = {l for l in labels if labels.count(l) > 1}
        for d in sorted(dupes):
            report.add("duplicate-label", f"duplicate block label '{d}'", f.name, d)
        return

    block_of_def: dict[str, str | None] = {p: None for p in f.params}
    def_index: dict[str, int] = {}
    for p in f.params:
        if f.params.count(p) > 1:
            report.add("duplicate-definition", f"duplicate parameter '{p}'", f.name)
    for b in f.blocks:
        for idx, ins in enumerate(b.instructions):
            if ins.output is None:
                continue
            if ins.output in block_of_def:
                report.add("duplicate-definition", f"duplicate definition of '{ins.output}'",
                           f.name, b.label, ins.line)
            block_of_def[ins.output] = b.label
            def_index[ins.output] = idx

    succs = {b.label: [] for b in f.blocks}
    for b in f.blocks:
        for s in b.successor_labels():
            if s not in label_set:
                report.add("unknown-label", f"unknown label '{s}'", f.name, b.label, b.terminator.line)
            else:
                succs[b.label].append(s)

    preds: dict[str, list[str]] = {l: [] for l in labels}
    for l, ss in succs.items():
        for s in ss:
            preds[s].append(l)

    entry = f.entry_block
    if preds[entry]:
        report.add("entry-has-preds", f"entry block '{entry}' has predecessors {sorted(set(preds[entry]))}",
                   f.name, entry)

    dom = _local_dominators(succs, entry)

    # phi placement: only as a prefix of the block
    for b in f.blocks:
        seen_non_phi = False
        for ins in b.instructions:
            if ins.opcode == "phi":
                if seen_non_phi:
                    report.add("phi-not-prefix", "phi after non-phi instruction", f.name, b.label, ins.line)
            else:
                seen_non_phi = True

    for b in f.blocks:
        bpreds = sorted(set(preds[b.label]))
        for ins in b.instructions:
            if ins.opcode == "phi":
                if sorted(ins.phi_labels) != bpreds:
                    report.add("phi-arity",
                               f"phi incoming labels {sorted(ins.phi_labels)} do not match "
                               f"predecessors {bpreds}", f.name, b.label, ins.line)
                for op, lab in zip(ins.operands, ins.phi_labels):
                    if not isinstance(op, str):
                        continue
                    if op not in block_of_def:
                        report.add("undefined-use", f"use of undefined '{op}'", f.name, b.label, ins.line)
                        continue
                    db = block_of_def[op]
                    if db is not None and lab in dom and db not in dom.get(lab, set()):
                        report.add("phi-input-not-prior",
                                   f"phi input '{op}' not defined prior to block '{b.label}' "
                                   f"(via predecessor '{lab}')", f.name, b.label, ins.line)
                continue
            uses = list(ins.var_operands())
            pos = b.instructions.index(ins)
            for op in uses:
                if op not in block_of_def:
                    report.add("undefined-use", f"use of undefined '{op}'", f.name, b.label, ins.line)
                    continue
                db = block_of_def[op]
                if db is None:
                    continue  # parameter: defined at entry
                if db == b.label:
                    if def_index[op] >= pos:
                        report.add("use-not-dominated",
                                   f"use of '{op}' before its definition", f.name, b.label, ins.line)
                elif db not in dom.get(b.label, set()):
                    report.add("use-not-dominated",
                               f"use of '{op}' not dominated by its definition", f.name, b.label, ins.line)
        t = b.terminator
        if t is not None and t.opcode in ("br", "ret") and t.operands:
            op = t.operands[0]  # the condition / return value; the rest are labels
            if isinstance(op, str):
                if op not in block_of_def:
                    report.add("undefined-use", f"use of undefined '{op}'", f.name, b.label, t.line)
                else:
                    db = block_of_def[op]
                    if db is not None and db != b.label and db not in dom.get(b.label, set()):
                        report.add("use-not-dominated",
                                   f"use of '{op}' not dominated by its definition",
                                   f.name, b.label, t.line)


# ---------------------------------------------------------------------------
# Printing
# ---------------------------------------------------------------------------

def _fmt_operand(op) -> str:
    return str(op)


def _fmt_instruction(ins: Instruction) -> str:
    if ins.opcode == "phi":
        arms = ", ".join(f"[{_fmt_operand(o)}, {l}]" for o, l in zip(ins.operands, ins.phi_labels))
        return f"{ins.output} = phi {arms}"
    if ins.opcode == "call":
        args = ", ".join(_fmt_operand(o) for o in ins.operands)
        return f"{ins.output} = call {ins.callee}({args})"
    if ins.opcode == "specbarr":
        return "specbarr"
    ops = ", ".join(_fmt_operand(o) for o in ins.operands)
    if ins.output is not None:
        return f"{ins.output} = {ins.opcode} {ops}".rstrip()
    return f"{ins.opcode} {ops}".rstrip()


def pretty_print(program: Program) -> str:
    """Canonical text form; parse(pretty_print(p)) is structurally equal to p."""
    out: list[str] = []
    for f in program.functions:
        out.append(f"fn {f.name}({', '.join(f.params)}) {{")
        for b in f.blocks:
            out.append(f"{b.label}:")
            for ins in b.instructions:
                out.append(f"  {_fmt_instruction(ins)}")
            out.append(f"  {_fmt_instruction(b.terminator)}")
        out.append("}")
    return "\n".join(out) + ("\n" if out else "")


def structurally_equal(a: Program, b: Program) -> bool:
    return pretty_print(a) == pretty_print(b)


# ---------------------------------------------------------------------------
# Transmitter model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Transmission:
    """One transmitter occurrence: which operand value escapes, and whether the
    instruction can execute under speculation."""

    block: str
    opcode: str
    operand: "str | int"
    speculative: bool


def transmissions(f: Function, transmit_speculative: bool = True) -> list[Transmission]:
    """All transmitter occurrences in f.

    load leaks its address and may run speculatively; store leaks only the
    address, non-speculatively; br leaks its condition, non-speculatively;
    transmit leaks its operand (speculative unless configured otherwise).
    """
    out: list[Transmission] = []
    for b in f.blocks:
        for ins in b.instructions:
            if ins.opcode == "load":
                out.append(Transmission(b.label, "load", ins.operands[0], True))
            elif ins.opcode == "store":
                out.append(Transmission(b.label, "store", ins.operands[1], False))
            elif ins.opcode == "transmit":
                out.append(Transmission(b.label, "transmit", ins.operands[0], transmit_speculative))
        t = b.terminator
        if t is not None and t.opcode == "br":
            out.append(Transmission(b.label, "br", t.operands[0], False))
    return out
