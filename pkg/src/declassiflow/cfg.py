"""Control-flow graph, dominators, natural loops, loop simplification and
partial loop expansion.

Every function's CFG gets a virtual entry node feeding the entry block and a
virtual exit node absorbing all ret blocks, so every real block has at least
one in-edge and one out-edge. Edge indices are stable: the entry dummy comes
first, then each block's out-edges in block/terminator order.

Partial loop expansion duplicates a simple loop body into an initial copy and
an inductive copy, removes the back edge, and consolidates loop definitions in
a merge block. The result is an analysis artifact: it preserves data-flow
relationships between variables, not computed values.
"""

from __future__ import annotations

from dataclasses import dataclass

from .ir import Block, Function, Instruction

ENTRY = "@entry"
EXIT = "@exit"

MAX_LOOP_DEPTH = 4


class CfgError(Exception):
    pass


@dataclass(frozen=True)
class Edge:
    index: int
    src: str
    dst: str

    @property
    def key(self) -> tuple[str, str]:
        return (self.src, self.dst)


@dataclass
class Cfg:
    function: Function
    edges: list[Edge]
    out_edges: dict[str, list[Edge]]
    in_edges: dict[str, list[Edge]]
    dead_blocks: set[str]

    @property
    def entry(self) -> str:
        return self.function.entry_block

    @property
    def labels(self) -> list[str]:
        return [b.label for b in self.function.blocks]

    def edge(self, src: str, dst: str) -> Edge:
        for e in self.out_edges.get(src, ()):
            if e.dst == dst:
                return e
        raise KeyError((src, dst))

    def preds(self, label: str) -> list[str]:
        return [e.src for e in self.in_edges.get(label, ()) if e.src != ENTRY]

    def succs(self, label: str) -> list[str]:
        return [e.dst for e in self.out_edges.get(label, ()) if e.dst != EXIT]

    def entry_dummy(self) -> Edge:
        return self.in_edges[self.entry][0]


def build_cfg(f: Function) -> Cfg:
    """One edge per (terminator, successor) pair plus the dummy edges.

    Duplicate successors of a br collapse into a single edge. Blocks not
    reachable from the entry block are flagged dead.
    """
    edges: list[Edge] = []
    out_edges: dict[str, list[Edge]] = {b.label: [] for b in f.blocks}
    in_edges: dict[str, list[Edge]] = {b.label: [] for b in f.blocks}
    out_edges[ENTRY] = []
    in_edges[EXIT] = []

    def add(src: str, dst: str):
        for e in out_edges[src]:
            if e.dst == dst:
                return
        e = Edge(len(edges), src, dst)
        edges.append(e)
        out_edges[src].append(e)
        in_edges.setdefault(dst, []).append(e)

    add(ENTRY, f.entry_block)
    for b in f.blocks:
        t = b.terminator
        if t.opcode == "ret":
            add(b.label, EXIT)
        else:
            for s in b.successor_labels():
                add(b.label, s)

    reachable = {f.entry_block}
    work = [f.entry_block]
    bm = f.block_map()
    while work:
        cur = work.pop()
        for s in bm[cur].successor_labels():
            if s in bm and s not in reachable:
                reachable.add(s)
                work.append(s)
    dead = {b.label for b in f.blocks} - reachable
    return Cfg(f, edges, out_edges, in_edges, dead)


def prune_dead_blocks(f: Function) -> Function:
    """Drop unreachable blocks and fix up phi arms that referenced them."""
    cfg = build_cfg(f)
    if not cfg.dead_blocks:
        return f
    g = f.copy()
    g.blocks = [b for b in g.blocks if b.label not in cfg.dead_blocks]
    alive = {b.label for b in g.blocks}
    for b in g.blocks:
        for ins in b.instructions:
            if ins.opcode == "phi":
                keep = [(o, l) for o, l in zip(ins.operands, ins.phi_labels) if l in alive]
                ins.operands = [o for o, _ in keep]
                ins.phi_labels = [l for _, l in keep]
    return g


# ---------------------------------------------------------------------------
# Dominators
# ---------------------------------------------------------------------------

@dataclass
class DomInfo:
    dom_sets: dict[str, set[str]]
    pdom_sets: dict[str, set[str]]
    idom: dict[str, str | None]

    def dom(self, a: str, b: str) -> bool:
        return a in self.dom_sets[b]

    def pdom(self, a: str, b: str) -> bool:
        return a in self.pdom_sets[b]

    def dominated_by(self, a: str) -> set[str]:
        return {b for b, ds in self.dom_sets.items() if a in ds}

    def depth(self, b: str) -> int:
        d = 0
        cur = self.idom.get(b)
        while cur is not None:
            d += 1
            cur = self.idom.get(cur)
        return d


def dominators(cfg: Cfg) -> DomInfo:
    """Dominator and post-dominator sets by iteration to a fixpoint."""
    if cfg.dead_blocks:
        raise CfgError(f"unreachable blocks: {sorted(cfg.dead_blocks)}")
    labels = cfg.labels
    entry = cfg.entry
    universe = set(labels)

    dom: dict[str, set[str]] = {l: set(universe) for l in labels}
    dom[entry] = {entry}
    changed = True
    while changed:
        changed = False
        for l in labels:
            if l == entry:
                continue
            ps = cfg.preds(l)
            new = set.intersection(*(dom[p] for p in ps)) if ps else set()
            new.add(l)
            if new != dom[l]:
                dom[l] = new
                changed = True

    exits = {e.src for e in cfg.in_edges.get(EXIT, ())}
    pdom: dict[str, set[str]] = {l: set(universe) for l in labels}
    for x in exits:
        pdom[x] = {x}
    changed = True
    while changed:
        changed = False
        for l in labels:
            if l in exits:
                continue
            ss = cfg.succs(l)
            new = set.intersection(*(pdom[s] for s in ss)) if ss else set()
            new.add(l)
            if new != pdom[l]:
                pdom[l] = new
                changed = True

    idom: dict[str, str | None] = {entry: None}
    for l in labels:
        if l == entry:
            continue
        strict = dom[l] - {l}
        best = None
        for c in strict:
            if best is None or len(dom[c]) > len(dom[best]):
                best = c
        idom[l] = best
    return DomInfo(dom, pdom, idom)


def brute_force_dominates(cfg: Cfg, a: str, b: str) -> bool:
    """Path-enumeration oracle: every entry-to-b path contains a."""
    if a == b:
        return True
    seen = set()
    work = [cfg.entry]
    while work:
        cur = work.pop()
        if cur == a or cur in seen:
            continue
        if cur == b:
            return False
        seen.add(cur)
        work.extend(cfg.succs(cur))
    return True


# ---------------------------------------------------------------------------
# Natural loops
# ---------------------------------------------------------------------------

@dataclass
class NaturalLoop:
    header: str
    latches: list[str]
    body: set[str]
    exiting: list[str]
    exits: list[str]
    preheader: str | None


def natural_loops(cfg: Cfg, dom: DomInfo) -> list[NaturalLoop]:
    """One loop per header; back edges sharing a header merge into one loop."""
    back: dict[str, list[str]] = {}
    back_edge_set = set()
    for e in cfg.edges:
        if e.src == ENTRY or e.dst == EXIT:
            continue
        if dom.dom(e.dst, e.src):
            back.setdefault(e.dst, []).append(e.src)
            back_edge_set.add((e.src, e.dst))

    # Removing natural back edges must leave the graph acyclic.
    succs = {l: [s for s in cfg.succs(l) if (l, s) not in back_edge_set] for l in cfg.labels}
    indeg = {l: 0 for l in cfg.labels}
    for l, ss in succs.items():
        for s in ss:
            indeg[s] += 1
    queue = [l for l in cfg.labels if indeg[l] == 0]
    seen = 0
    while queue:
        cur = queue.pop()
        seen += 1
        for s in succs[cur]:
            indeg[s] -= 1
            if indeg[s] == 0:
                queue.append(s)
    if seen != len(cfg.labels):
        raise CfgError("irreducible control flow")

    loops: list[NaturalLoop] = []
    order = {l: i for i, l in enumerate(cfg.labels)}
    for header in sorted(back, key=order.get):
        body = {header}
        work = list(back[header])
        while work:
            cur = work.pop()
            if cur in body:
                continue
            body.add(cur)
            work.extend(cfg.preds(cur))
        exiting = sorted({b for b in body if any(s not in body for s in cfg.succs(b))},
                         key=order.get)
        exits = sorted({s for b in exiting for s in cfg.succs(b) if s not in body},
                       key=order.get)
        non_latch_preds = [p for p in cfg.preds(header) if p not in body]
        preheader = None
        if len(non_latch_preds) == 1 and len(cfg.succs(non_latch_preds[0])) == 1:
            preheader = non_latch_preds[0]
        loops.append(NaturalLoop(header, sorted(back[header], key=order.get), body,
                                 exiting, exits, preheader))

    for a in loops:
        for b in loops:
            if a is b:
                continue
            inter = a.body & b.body
            if inter and not (a.body <= b.body or b.body <= a.body):
                raise CfgError(f"loops at '{a.header}' and '{b.header}' overlap without nesting")
    return loops


def loop_depth(cfg: Cfg, dom: DomInfo) -> int:
    loops = natural_loops(cfg, dom)
    depth = 0
    for lp in loops:
        d = 1 + sum(1 for other in loops if other is not lp and lp.body < other.body)
        depth = max(depth, d)
    return depth


# ---------------------------------------------------------------------------
# Loop simplification
# ---------------------------------------------------------------------------

def _fresh(taken: set[str], base: str) -> str:
    name = base
    k = 1
    while name in taken:
        k += 1
        name = f"{base}{k}"
    taken.add(name)
    return name


def _retarget(block: Block, old: str, new: str):
    t = block.terminator
    if t.opcode == "br":
        if t.operands[1] == old:
            t.operands[1] = new
        if t.operands[2] == old:
            t.operands[2] = new
    elif t.opcode == "jmp":
        if t.operands[0] == old:
            t.operands[0] = new


def simplify_loops(f: Function) -> Function:
    """Give every natural loop a unique preheader and a single latch.

    Multi-latch headers get a fresh latch whose consolidation phis merge the
    per-latch values, turning header phis two-way. Semantics are preserved.
    """
    g = prune_dead_blocks(f).copy()
    changed = True
    while changed:
        changed = False
        cfg = build_cfg(g)
        dom = dominators(cfg)
        loops = natural_loops(cfg, dom)
        labels = {b.label for b in g.blocks}
        varnames = set(g.defined_vars())
        for lp in loops:
            header_blk = g.block(lp.header)
            non_latch_preds = [p for p in cfg.preds(lp.header) if p not in lp.body]
            need_preheader = not (len(non_latch_preds) == 1
                                  and len(cfg.succs(non_latch_preds[0])) == 1)
            if need_preheader:
                ph = _fresh(labels, f"{lp.header}.ph")
                ph_block = Block(ph)
                ph_block.terminator = Instruction("jmp", operands=[lp.header])
                for phi in header_blk.phis():
                    init_arms = [(o, l) for o, l in zip(phi.operands, phi.phi_labels)
                                 if l in non_latch_preds]
                    rest = [(o, l) for o, l in zip(phi.operands, phi.phi_labels)
                            if l not in non_latch_preds]
                    if len(init_arms) == 1:
                        init_val = init_arms[0][0]
                    else:
                        v = _fresh(varnames, f"{phi.output}.ph")
                        ph_block.instructions.append(Instruction(
                            "phi", output=v,
                            operands=[o for o, _ in init_arms],
                            phi_labels=[l for _, l in init_arms]))
                        init_val = v
                    phi.operands = [init_val] + [o for o, _ in rest]
                    phi.phi_labels = [ph] + [l for _, l in rest]
                for p in non_latch_preds:
                    _retarget(g.block(p), lp.header, ph)
                g.blocks.insert(g.blocks.index(header_blk), ph_block)
                changed = True
                break
            if len(lp.latches) > 1:
                lt = _fresh(labels, f"{lp.header}.lt")
                lt_block = Block(lt)
                lt_block.terminator = Instruction("jmp", operands=[lp.header])
                for phi in header_blk.phis():
                    latch_arms = [(o, l) for o, l in zip(phi.operands, phi.phi_labels)
                                  if l in lp.latches]
                    rest = [(o, l) for o, l in zip(phi.operands, phi.phi_labels)
                            if l not in lp.latches]
                    v = _fresh(varnames, f"{phi.output}.lt")
                    lt_block.instructions.append(Instruction(
                        "phi", output=v,
                        operands=[o for o, _ in latch_arms],
                        phi_labels=[l for _, l in latch_arms]))
                    phi.operands = [o for o, _ in rest] + [v]
                    phi.phi_labels = [l for _, l in rest] + [lt]
                for latch in lp.latches:
                    _retarget(g.block(latch), lp.header, lt)
                last = max(g.blocks.index(g.block(l)) for l in lp.latches)
                g.blocks.insert(last + 1, lt_block)
                changed = True
                break
    return g


# ---------------------------------------------------------------------------
# Partial loop expansion
# ---------------------------------------------------------------------------

@dataclass
class ExpandedFunction:
    """Acyclic analysis copy of a function.

    var_origin maps expanded names back to the pre-expansion name plus the
    chain of copy indices (empty for untouched names). edge_origin maps an
    expanded edge key to the set of pre-expansion edge keys it stands for
    (empty for synthetic merge plumbing). edge_subst gives, per expanded edge,
    the rename of each duplicated variable that is current there; names absent
    from the map are represented by themselves (the merge phis reuse original
    names, so post-loop edges need no entries).
    """

    function: Function
    original: Function
    var_origin: dict[str, tuple[str, tuple[int, ...]]]
    edge_origin: dict[tuple[str, str], set[tuple[str, str]]]
    edge_subst: dict[tuple[str, str], dict[str, str]]

    def representative(self, var: str, edge_key: tuple[str, str]) -> str:
        return self.edge_subst.get(edge_key, {}).get(var, var)

    @property
    def copy_index(self) -> dict[str, tuple[str, int | None]]:
        return {v: (o, path[0] if path else None) for v, (o, path) in self.var_origin.items()}


def _identity_expansion(work: Function, original: Function) -> ExpandedFunction:
    cfg = build_cfg(work)
    origin = {e.key: {e.key} for e in cfg.edges}
    return ExpandedFunction(work, original,
                            {v: (v, ()) for v in work.defined_vars()}, origin, {})


def expand_loops(f: Function) -> ExpandedFunction:
    """Innermost-first two-copy expansion until the CFG is acyclic.

    Each step rewrites one innermost simple loop: copy 1 replaces inductive
    phis with initial-value assignments, copy 2 with the copy-1 inductive
    values; a merge block per exit target consolidates every loop definition.
    Nesting deeper than MAX_LOOP_DEPTH is rejected.
    """
    g = simplify_loops(f)
    cfg = build_cfg(g)
    dom = dominators(cfg)
    if loop_depth(cfg, dom) > MAX_LOOP_DEPTH:
        raise CfgError(f"loop nesting exceeds the supported depth of {MAX_LOOP_DEPTH}")

    result = _identity_expansion(g.copy(), g)
    while True:
        cfg = build_cfg(result.function)
        dom = dominators(cfg)
        loops = natural_loops(cfg, dom)
        if not loops:
            return result
        inner = next(lp for lp in loops
                     if not any(other.body < lp.body for other in loops if other is not lp))
        step = _expand_one(result.function, cfg, inner)
        result = _compose(result, step)


def _compose(base: ExpandedFunction, step: ExpandedFunction) -> ExpandedFunction:
    var_origin: dict[str, tuple[str, tuple[int, ...]]] = {}
    for v, (mid, path) in step.var_origin.items():
        if mid in base.var_origin:
            orig, prior = base.var_origin[mid]
            var_origin[v] = (orig, prior + path)
        else:
            var_origin[v] = (mid, path)

    edge_origin: dict[tuple[str, str], set[tuple[str, str]]] = {}
    edge_subst: dict[tuple[str, str], dict[str, str]] = {}
    for ek, mids in step.edge_origin.items():
        acc: set[tuple[str, str]] = set()
        prior: dict[str, str] = {}
        for mk in mids:
            acc |= base.edge_origin.get(mk, set())
            prior.update(base.edge_subst.get(mk, {}))
        edge_origin[ek] = acc
        s2 = step.edge_subst.get(ek, {})
        chain: dict[str, str] = {}
        for orig, mid_name in prior.items():
            chain[orig] = s2.get(mid_name, mid_name)
        for mid_name, new in s2.items():
            chain.setdefault(mid_name, new)
        if chain:
            edge_subst[ek] = chain
    return ExpandedFunction(step.function, base.original, var_origin, edge_origin, edge_subst)


def _expand_one(f: Function, cfg: Cfg, lp: NaturalLoop) -> ExpandedFunction:
    """Expand one simple innermost loop of f, mutating non-loop blocks of f in
    place (phi arms, post-loop uses) and returning the rebuilt function."""
    if len(lp.latches) != 1:
        raise CfgError(f"loop at '{lp.header}' is not simple (latches: {lp.latches})")
    latch = lp.latches[0]
    order = {b.label: i for i, b in enumerate(f.blocks)}
    body = sorted(lp.body, key=order.get)
    loop_defs: set[str] = set()
    for lab in body:
        loop_defs |= f.block(lab).defined_vars()

    taken_labels = {b.label for b in f.blocks}
    taken_vars = set(f.defined_vars())
    rename: dict[int, dict[str, str]] = {1: {}, 2: {}}
    for v in sorted(loop_defs):
        rename[1][v] = _fresh(taken_vars, f"{v}.1")
        rename[2][v] = _fresh(taken_vars, f"{v}.2")
    block_rename: dict[int, dict[str, str]] = {1: {}, 2: {}}
    for lab in body:
        block_rename[1][lab] = _fresh(taken_labels, f"{lab}.1")
        block_rename[2][lab] = _fresh(taken_labels, f"{lab}.2")
    inv_block = {v: k for c in (1, 2) for k, v in block_rename[c].items()}
    copy_of_block = {v: c for c in (1, 2) for v in block_rename[c].values()}

    exit_targets = list(lp.exits)
    single_merge = len(exit_targets) <= 1
    merge_of: dict[str, str] = {}
    for k, x in enumerate(exit_targets):
        merge_of[x] = _fresh(taken_labels,
                             f"{lp.header}.m" if single_merge else f"{lp.header}.m{k + 1}")
    if not exit_targets:
        merge_of["@none"] = _fresh(taken_labels, f"{lp.header}.m")
    fallback_merge = merge_of[exit_targets[0]] if exit_targets else merge_of["@none"]
    merge_labels = set(merge_of.values())

    def sub(c: int, op):
        if isinstance(op, str) and op in loop_defs:
            return rename[c][op]
        return op

    copies: dict[tuple[str, int], Block] = {}
    for c in (1, 2):
        for lab in body:
            src = f.block(lab)
            nb = Block(block_rename[c][lab])
            for ins in src.instructions:
                if ins.opcode == "phi" and lab == lp.header:
                    arms = dict(zip(ins.phi_labels, ins.operands))
                    latch_val = arms[latch]
                    init_val = next(v for l, v in arms.items() if l != latch)
                    val = init_val if c == 1 else sub(1, latch_val)
                    nb.instructions.append(Instruction(
                        "add", output=rename[c][ins.output], operands=[val, 0]))
                    continue
                ni = ins.copy()
                if ni.output is not None:
                    ni.output = rename[c][ni.output]
                ni.operands = [sub(c, o) for o in ni.operands]
                if ni.opcode == "phi":
                    ni.phi_labels = [block_rename[c].get(l, l) for l in ni.phi_labels]
                nb.instructions.append(ni)
            t = src.terminator.copy()
            if t.opcode in ("br", "ret") and t.operands:
                t.operands[0] = sub(c, t.operands[0])
            if t.opcode in ("br", "jmp"):
                idxs = (1, 2) if t.opcode == "br" else (0,)
                for i in idxs:
                    tgt = t.operands[i]
                    if tgt == lp.header:
                        t.operands[i] = block_rename[2][lp.header] if c == 1 else fallback_merge
                    elif tgt in lp.body:
                        t.operands[i] = block_rename[c][tgt]
                    else:
                        t.operands[i] = merge_of[tgt]
            nb.terminator = t
            copies[(lab, c)] = nb

    merge_preds: dict[str, list[tuple[str, int]]] = {m: [] for m in merge_labels}
    for c in (1, 2):
        for lab in body:
            nb = copies[(lab, c)]
            for s in nb.successor_labels():
                if s in merge_preds and (nb.label, c) not in merge_preds[s]:
                    merge_preds[s].append((nb.label, c))

    # Consolidate a definition only when its phi would be well formed (every
    # arm's definition dominates that arm's predecessor) or when code after
    # the loop actually uses it; in the latter case SSA of the input already
    # guarantees the real exit arms are dominated.
    dom = dominators(cfg)
    def_block: dict[str, str] = {}
    for lab in body:
        for v in f.block(lab).defined_vars():
            def_block[v] = lab
    used_after: set[str] = set()
    for b in f.blocks:
        if b.label in lp.body:
            continue
        for ins in b.instructions + ([b.terminator] if b.terminator else []):
            for o in ins.operands:
                if isinstance(o, str) and o in loop_defs:
                    used_after.add(o)

    merge_blocks: list[Block] = []
    merged_name: dict[str, dict[str, str]] = {}
    for x, m in merge_of.items():
        mb = Block(m)
        outs: dict[str, str] = {}
        for v in sorted(loop_defs):
            arms_ok = all(dom.dom(def_block[v], inv_block[lab])
                          for (lab, _) in merge_preds[m])
            if v not in used_after and not arms_ok:
                continue
            out_name = v if single_merge else _fresh(taken_vars, f"{v}.m")
            outs[v] = out_name
            mb.instructions.append(Instruction(
                "phi", output=out_name,
                operands=[rename[c][v] for (_, c) in merge_preds[m]],
                phi_labels=[lab for (lab, _) in merge_preds[m]]))
        mb.terminator = Instruction("ret") if x == "@none" else Instruction("jmp", operands=[x])
        merged_name[m] = outs
        merge_blocks.append(mb)

    # outside predecessors enter the loop through copy 1 of the header
    for b in f.blocks:
        if b.label not in lp.body:
            _retarget(b, lp.header, block_rename[1][lp.header])

    if not single_merge and exit_targets:
        _rewrite_multi_merge_uses(f, cfg, lp, loop_defs, merge_of, merged_name)

    # exit-target phis: arms from exiting blocks collapse into one merge arm
    for b in f.blocks:
        if b.label in lp.body or b.label not in merge_of:
            continue
        m = merge_of[b.label]
        for ins in b.instructions:
            if ins.opcode != "phi":
                continue
            loop_arms = [(o, l) for o, l in zip(ins.operands, ins.phi_labels) if l in lp.body]
            other = [(o, l) for o, l in zip(ins.operands, ins.phi_labels) if l not in lp.body]
            if not loop_arms:
                continue
            if len(loop_arms) == 1 and len(merge_preds[m]) <= 2 and all(
                    inv_block[pl] == loop_arms[0][1] or (inv_block[pl] == latch)
                    for pl, _ in merge_preds[m]):
                o = loop_arms[0][0]
                val = merged_name[m][o] if isinstance(o, str) and o in loop_defs else o
            else:
                arm_of = {l: o for o, l in loop_arms}
                aux = _fresh(taken_vars, f"{ins.output}.x")
                mb = next(blk for blk in merge_blocks if blk.label == m)
                ops, labs = [], []
                for pl, c in merge_preds[m]:
                    o = arm_of.get(inv_block[pl], next(iter(arm_of.values())))
                    ops.append(rename[c][o] if isinstance(o, str) and o in loop_defs else o)
                    labs.append(pl)
                mb.instructions.append(Instruction("phi", output=aux, operands=ops,
                                                   phi_labels=labs))
                val = aux
            ins.operands = [val] + [o for o, _ in other]
            ins.phi_labels = [m] + [l for _, l in other]

    final_blocks: list[Block] = []
    placed = False
    for b in f.blocks:
        if b.label in lp.body:
            if not placed:
                for lab in body:
                    final_blocks.append(copies[(lab, 1)])
                for lab in body:
                    final_blocks.append(copies[(lab, 2)])
                final_blocks.extend(merge_blocks)
                placed = True
            continue
        final_blocks.append(b)
    nf = Function(f.name, list(f.params), final_blocks, f.line)

    var_origin: dict[str, tuple[str, tuple[int, ...]]] = {
        v: (v, ()) for v in f.defined_vars()}
    for c in (1, 2):
        for v in sorted(loop_defs):
            var_origin[rename[c][v]] = (v, (c,))
    for m, outs in merged_name.items():
        for v, out_name in outs.items():
            var_origin[out_name] = (v, ())

    old_edges = {e.key for e in cfg.edges}
    merge_exit = {m: x for x, m in merge_of.items()}
    edge_origin: dict[tuple[str, str], set[tuple[str, str]]] = {}
    edge_subst: dict[tuple[str, str], dict[str, str]] = {}
    ncfg = build_cfg(nf)
    for e in ncfg.edges:
        src, dst = e.key
        sc = copy_of_block.get(src)
        dc = copy_of_block.get(dst)
        if sc and dc:
            if sc == 1 and dc == 2 and inv_block[src] == latch and inv_block[dst] == lp.header:
                edge_origin[e.key] = {(latch, lp.header)}
            else:
                edge_origin[e.key] = {(inv_block[src], inv_block[dst])}
            edge_subst[e.key] = dict(rename[sc])
        elif sc and dst in merge_labels:
            x = merge_exit[dst]
            origins: set[tuple[str, str]] = set()
            if x != "@none" and (inv_block[src], x) in old_edges:
                origins.add((inv_block[src], x))
            if sc == 2 and inv_block[src] == latch:
                origins.add((latch, lp.header))
            edge_origin[e.key] = origins
            edge_subst[e.key] = dict(rename[sc])
        elif src in merge_labels:
            edge_origin[e.key] = set()
            if not single_merge:
                edge_subst[e.key] = dict(merged_name[src])
        elif dc:
            edge_origin[e.key] = {(src, inv_block[dst])}
        else:
            edge_origin[e.key] = {e.key}
            if not single_merge and exit_targets:
                doms = _post_merge_subst(ncfg, src, merge_labels, merged_name)
                if doms:
                    edge_subst[e.key] = doms
    return ExpandedFunction(nf, f, var_origin, edge_origin, edge_subst)


def _post_merge_subst(ncfg: Cfg, src: str,
                      merge_labels: set[str], merged_name) -> dict[str, str]:
    """Subst for an edge below exactly one merge block, if any dominates it."""
    if src == ENTRY:
        return {}
    dom = dominators(ncfg)
    which = [m for m in merge_labels if dom.dom(m, src)]
    if len(which) == 1:
        return dict(merged_name[which[0]])
    return {}


def _rewrite_multi_merge_uses(f: Function, cfg: Cfg, lp: NaturalLoop, loop_defs,
                              merge_of, merged_name):
    """With several exit targets, loop definitions get per-merge names; uses
    after the loop must name the merge output that dominates them."""
    dom = dominators(cfg)

    def pick(use_block: str, var: str) -> str:
        candidates = [x for x in merge_of if x != "@none" and dom.dom(x, use_block)]
        if len(candidates) != 1:
            raise CfgError(f"variable '{var}' used past multiple loop exits; unsupported")
        return merged_name[merge_of[candidates[0]]][var]

    for b in f.blocks:
        if b.label in lp.body:
            continue
        for ins in b.instructions + ([b.terminator] if b.terminator else []):
            if ins.opcode == "phi":
                for i, (o, l) in enumerate(zip(ins.operands, ins.phi_labels)):
                    if isinstance(o, str) and o in loop_defs and l not in lp.body:
                        ins.operands[i] = pick(l, o)
            else:
                for i, o in enumerate(ins.operands):
                    if isinstance(o, str) and o in loop_defs:
                        if ins.opcode in ("br", "jmp") and i > (0 if ins.opcode == "br" else -1):
                            continue
                        ins.operands[i] = pick(b.label, o)


# ---------------------------------------------------------------------------
# DOT output
# ---------------------------------------------------------------------------

def to_dot(cfg: Cfg) -> str:
    lines = ["digraph cfg {"]
    lines.append(f'  "{ENTRY}" [shape=point];')
    lines.append(f'  "{EXIT}" [shape=point];')
    for b in cfg.function.blocks:
        lines.append(f'  "{b.label}" [shape=box];')
    for e in cfg.edges:
        lines.append(f'  "{e.src}" -> "{e.dst}" [label="e{e.index + 1}"];')
    lines.append("}")
    return "\n".join(lines) + "\n"
