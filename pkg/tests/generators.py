"""Seeded random program generators for the property suites."""

from __future__ import annotations

import random

from declassiflow.ir import parse_program

BIN_OPS = ["add", "sub", "xor", "mul", "and", "or", "shl", "eq", "lt"]
UN_OPS = ["neg", "not"]


def random_acyclic_program(rng: random.Random, max_blocks: int = 8,
                           max_inputs: int = 3, defs_in_entry_only: bool = False,
                           allow_phis: bool = True, allow_loads: bool = True) -> str:
    """One random acyclic function in textual form.

    Control flow only goes to higher-numbered blocks, so the result is a DAG
    with every block reachable. With defs_in_entry_only the body blocks hold
    only transmitters and branches (the shape where the edge fixpoint is tight
    against the execution oracle).
    """
    n_blocks = rng.randint(2, max_blocks)
    counter = 0

    def fresh() -> str:
        nonlocal counter
        counter += 1
        return f"v{counter}"

    n_inputs = rng.randint(1, max_inputs)
    entry_lines = []
    variables = []
    for _ in range(n_inputs):
        v = fresh()
        entry_lines.append(f"  {v} = input")
        variables.append(v)
    for _ in range(rng.randint(0, 2)):
        v = fresh()
        entry_lines.append(f"  {v} = const {rng.randint(0, 3)}")
        variables.append(v)

    def emit_ops(lines, vars_here, count):
        for _ in range(count):
            v = fresh()
            if rng.random() < 0.25:
                lines.append(f"  {v} = {rng.choice(UN_OPS)} {rng.choice(vars_here)}")
            else:
                a = rng.choice(vars_here)
                b = rng.choice(vars_here + [str(rng.randint(0, 3))])
                lines.append(f"  {v} = {rng.choice(BIN_OPS)} {a}, {b}")
            vars_here.append(v)

    emit_ops(entry_lines, variables, rng.randint(1, 4))
    entry_vars = list(variables)

    # forward-only CFG: block i targets blocks > i, last block returns
    succs: dict[int, list[int]] = {}
    preds: dict[int, set[int]] = {i: set() for i in range(1, n_blocks + 1)}
    for i in range(1, n_blocks):
        a = rng.randint(i + 1, n_blocks)
        b = rng.randint(i + 1, n_blocks)
        targets = [a] if (a == b or rng.random() < 0.4) else [a, b]
        succs[i] = targets
        for t in targets:
            preds[t].add(i)
    # keep only blocks reachable from block 1
    reach = {1}
    work = [1]
    while work:
        cur = work.pop()
        for t in succs.get(cur, []):
            if t not in reach:
                reach.add(t)
                work.append(t)

    blocks: list[str] = []
    for i in sorted(reach):
        lines = [f"B{i}:"]
        body_vars = list(entry_vars)
        if i == 1:
            lines += entry_lines
            body_vars = list(variables)
        else:
            ps = sorted(p for p in preds[i] if p in reach)
            if allow_phis and len(ps) >= 2 and rng.random() < 0.6 and not defs_in_entry_only:
                v = fresh()
                arms = ", ".join(f"[{rng.choice(entry_vars)}, B{p}]" for p in ps)
                lines.append(f"  {v} = phi {arms}")
                body_vars.append(v)
            if not defs_in_entry_only:
                emit_ops(lines, body_vars, rng.randint(0, 2))

        for _ in range(rng.randint(0, 2)):
            kind = rng.random()
            target = rng.choice(body_vars)
            if kind < 0.5:
                lines.append(f"  transmit {target}")
            elif kind < 0.75 and allow_loads and not defs_in_entry_only:
                v = fresh()
                lines.append(f"  {v} = load {target}")
                body_vars.append(v)
            else:
                lines.append(f"  store {rng.choice(body_vars)}, {target}")

        targets = [t for t in succs.get(i, []) if t in reach]
        if not targets:
            lines.append("  ret")
        elif len(targets) == 1:
            lines.append(f"  jmp B{targets[0]}")
        else:
            cond = rng.choice(body_vars + [str(rng.randint(0, 1))])
            lines.append(f"  br {cond}, B{targets[0]}, B{targets[1]}")
        blocks.append("\n".join(lines))

    text = "fn main() {\n" + "\n".join(blocks) + "\n}\n"
    parse_program(text)  # must always be valid
    return text


def random_tight_program(rng: random.Random, max_blocks: int = 5) -> str:
    """Random acyclic program on which the edge fixpoint should equal the
    execution oracle exactly: every definition sits in the entry block and
    every branch tests its own dedicated input, so all paths are realizable.
    """
    n_blocks = rng.randint(2, max_blocks)
    counter = 0

    def fresh() -> str:
        nonlocal counter
        counter += 1
        return f"v{counter}"

    succs: dict[int, list[int]] = {}
    preds: dict[int, set[int]] = {i: set() for i in range(1, n_blocks + 1)}
    for i in range(1, n_blocks):
        a = rng.randint(i + 1, n_blocks)
        b = rng.randint(i + 1, n_blocks)
        targets = [a] if (a == b or rng.random() < 0.4) else [a, b]
        succs[i] = targets
        for t in targets:
            preds[t].add(i)
    reach = {1}
    work = [1]
    while work:
        cur = work.pop()
        for t in succs.get(cur, []):
            if t not in reach:
                reach.add(t)
                work.append(t)

    conds = {i: None for i in sorted(reach) if len(set(succs.get(i, []))) == 2}
    entry_lines = []
    variables = []
    for _ in range(rng.randint(1, 2)):
        v = fresh()
        entry_lines.append(f"  {v} = input")
        variables.append(v)
    for i in conds:
        v = fresh()
        entry_lines.append(f"  {v} = input")
        conds[i] = v
    for _ in range(rng.randint(0, 2)):
        v = fresh()
        entry_lines.append(f"  {v} = const {rng.randint(0, 3)}")
        variables.append(v)
    for _ in range(rng.randint(1, 3)):
        v = fresh()
        a = rng.choice(variables)
        b = rng.choice(variables + [str(rng.randint(0, 3))])
        entry_lines.append(f"  {v} = {rng.choice(BIN_OPS)} {a}, {b}")
        variables.append(v)

    blocks = []
    for i in sorted(reach):
        lines = [f"B{i}:"]
        if i == 1:
            lines += entry_lines
        for _ in range(rng.randint(0, 2)):
            target = rng.choice(variables)
            if rng.random() < 0.7:
                lines.append(f"  transmit {target}")
            else:
                lines.append(f"  store {rng.choice(variables)}, {target}")
        targets = [t for t in succs.get(i, []) if t in reach]
        uniq = sorted(set(targets))
        if not targets:
            lines.append("  ret")
        elif len(uniq) == 1:
            lines.append(f"  jmp B{uniq[0]}")
        else:
            lines.append(f"  br {conds[i]}, B{targets[0]}, B{targets[1]}")
        blocks.append("\n".join(lines))

    text = "fn main() {\n" + "\n".join(blocks) + "\n}\n"
    parse_program(text)
    return text
