"""CFG analyses over the minimal IR.

Dominators and post-dominators use the iterative idom intersection scheme
(Cooper/Harvey/Kennedy). Post-dominance runs on the reversed graph rooted at
a virtual exit node; regions that cannot reach any return get a synthetic
edge to the virtual exit so the relation stays total.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

from .ir import CondBranch, IrFunction

Edge = tuple[int, int]


@dataclass
class DomTree:
    """Immediate-(post)dominator map. The root maps to itself."""

    idom: dict[int, int]
    root: int

    def dominates(self, a: int, b: int) -> bool:
        """True when a (post)dominates b (reflexively)."""
        while True:
            if a == b:
                return True
            parent = self.idom[b]
            if parent == b:
                return False
            b = parent

    def chain(self, b: int) -> list[int]:
        """b and all its (post)dominators, walking up to the root."""
        out = [b]
        while b != self.idom[b]:
            b = self.idom[b]
            out.append(b)
        return out


def _rpo_from(entry: int, succ: dict[int, tuple[int, ...]]) -> list[int]:
    post: list[int] = []
    visited = {entry}
    stack: list[list] = [[entry, 0]]
    while stack:
        top = stack[-1]
        node, idx = top
        succs = succ[node]
        if idx < len(succs):
            top[1] += 1
            nxt = succs[idx]
            if nxt not in visited:
                visited.add(nxt)
                stack.append([nxt, 0])
        else:
            post.append(node)
            stack.pop()
    post.reverse()
    return post


def _immediate_dominators(entry: int, succ: dict[int, tuple[int, ...]],
                          pred: dict[int, tuple[int, ...]]) -> dict[int, int]:
    order = _rpo_from(entry, succ)
    index = {n: i for i, n in enumerate(order)}
    idom: dict[int, int] = {entry: entry}

    def intersect(a: int, b: int) -> int:
        while a != b:
            while index[a] > index[b]:
                a = idom[a]
            while index[b] > index[a]:
                b = idom[b]
        return a

    changed = True
    while changed:
        changed = False
        for node in order[1:]:
            new = None
            for p in pred[node]:
                if p in idom:
                    new = p if new is None else intersect(new, p)
            if new is not None and idom.get(node) != new:
                idom[node] = new
                changed = True
    return idom


def compute_dominators(f: IrFunction) -> DomTree:
    succ = {b.id: b.successors() for b in f.blocks}
    pred = {b.id: f.predecessors(b.id) for b in f.blocks}
    return DomTree(_immediate_dominators(f.entry, succ, pred), f.entry)


def virtual_exit(f: IrFunction) -> int:
    """Id of the virtual exit node used for post-dominance."""
    return len(f.blocks)


def compute_postdominators(f: IrFunction) -> DomTree:
    """Post-dominators over blocks plus the virtual exit node.

    Every return block feeds the virtual exit. If some blocks cannot reach
    it (e.g. an infinite loop), the lowest-numbered loop header among them
    (else the lowest-numbered block) gets a synthetic edge to the exit,
    repeating until the whole function drains.
    """
    exit_id = virtual_exit(f)
    fwd: dict[int, list[int]] = {b.id: list(b.successors()) for b in f.blocks}
    fwd[exit_id] = []
    for b in f.blocks:
        if not b.successors():
            fwd[b.id].append(exit_id)

    def reaches_exit() -> set[int]:
        seen = {exit_id}
        stack = [exit_id]
        rev: dict[int, list[int]] = {n: [] for n in fwd}
        for n, ss in fwd.items():
            for s in ss:
                rev[s].append(n)
        while stack:
            n = stack.pop()
            for p in rev[n]:
                if p not in seen:
                    seen.add(p)
                    stack.append(p)
        return seen

    trapped = set(fwd) - reaches_exit()
    if trapped:
        dom = compute_dominators(f)
        headers = {v for (u, v) in f.edges() if dom.dominates(v, u)}
        while trapped:
            candidates = trapped & headers
            source = min(candidates) if candidates else min(trapped)
            fwd[source].append(exit_id)
            trapped = set(fwd) - reaches_exit()

    # Post-dominance is dominance on the reversed graph rooted at the exit.
    rev_succ: dict[int, tuple[int, ...]] = {n: () for n in fwd}
    rev_pred: dict[int, tuple[int, ...]] = {n: () for n in fwd}
    for n, ss in fwd.items():
        for s in ss:
            rev_succ[s] = rev_succ[s] + (n,)
            rev_pred[n] = rev_pred[n] + (s,)
    return DomTree(_immediate_dominators(exit_id, rev_succ, rev_pred), exit_id)


@dataclass
class Loop:
    header: int
    body: frozenset[int]
    depth: int
    back_edges: tuple[Edge, ...]
    exit_blocks: frozenset[int]
    exit_edges: tuple[Edge, ...]
    parent: int | None


@dataclass
class LoopForest:
    loops: list[Loop]

    def __post_init__(self):
        self._innermost: dict[int, int] = {}
        by_size = sorted(range(len(self.loops)), key=lambda i: -len(self.loops[i].body))
        for i in by_size:
            for b in self.loops[i].body:
                self._innermost[b] = i
        self._back_edges = {e for lp in self.loops for e in lp.back_edges}
        self._exit_edges = {e for lp in self.loops for e in lp.exit_edges}
        self._header_to_loop = {lp.header: i for i, lp in enumerate(self.loops)}

    def innermost(self, block: int) -> int | None:
        """Index of the innermost loop containing block, if any."""
        return self._innermost.get(block)

    def loop_with_header(self, block: int) -> int | None:
        return self._header_to_loop.get(block)

    def is_back_edge(self, edge: Edge) -> bool:
        return edge in self._back_edges

    def is_exit_edge(self, edge: Edge) -> bool:
        return edge in self._exit_edges


def find_natural_loops(f: IrFunction, dom: DomTree) -> LoopForest:
    """One natural loop per header; nested loops are linked via parent.

    A back edge is u->h with h dominating u; the loop body is the union of
    the natural-loop sets of all back edges targeting h. Irreducible cycles
    produce no loop.
    """
    back_by_header: dict[int, list[Edge]] = {}
    for u, v in f.edges():
        if dom.dominates(v, u):
            back_by_header.setdefault(v, []).append((u, v))

    headers = sorted(back_by_header)
    bodies: dict[int, set[int]] = {}
    for h in headers:
        body = {h}
        stack = [u for (u, _) in back_by_header[h]]
        while stack:
            m = stack.pop()
            if m not in body:
                body.add(m)
                stack.extend(f.predecessors(m))
        bodies[h] = body

    # Parent = smallest strictly containing loop.
    parent: dict[int, int | None] = {}
    for h in headers:
        best = None
        for other in headers:
            if other == h or not bodies[h] <= bodies[other]:
                continue
            if len(bodies[other]) == len(bodies[h]):
                continue
            if best is None or len(bodies[other]) < len(bodies[best]):
                best = other
        parent[h] = best

    def depth_of(h: int) -> int:
        d = 1
        p = parent[h]
        while p is not None:
            d += 1
            p = parent[p]
        return d

    index = {h: i for i, h in enumerate(headers)}
    loops: list[Loop] = []
    for h in headers:
        body = bodies[h]
        exit_edges = tuple(
            (u, v) for u in sorted(body) for v in f.successors(u) if v not in body
        )
        loops.append(
            Loop(
                header=h,
                body=frozenset(body),
                depth=depth_of(h),
                back_edges=tuple(sorted(back_by_header[h])),
                exit_blocks=frozenset(v for (_, v) in exit_edges),
                exit_edges=exit_edges,
                parent=index[parent[h]] if parent[h] is not None else None,
            )
        )
    return LoopForest(loops)


def control_dependent_blocks(f: IrFunction, pdom: DomTree, edge: Edge) -> set[int]:
    """Blocks that execute only when `edge` is taken.

    A block B qualifies when B post-dominates the edge destination but does
    not post-dominate the edge source.
    """
    src, dst = edge
    exit_id = virtual_exit(f)
    out: set[int] = set()
    b = dst
    while b != exit_id and not pdom.dominates(b, src):
        out.add(b)
        b = pdom.idom[b]
    return out


class EdgeLoopRelation(enum.Enum):
    EXIT_EDGE = "exit"
    BACK_EDGE = "back"
    ENTERS_INNER_LOOP = "enter"
    SAME_LOOP = "same"


def classify_edge(f: IrFunction, loops: LoopForest, edge: Edge) -> EdgeLoopRelation:
    """Relate a branch edge to the loop structure.

    Priority: exit edge, then back edge, then entry into a nested (or any,
    when the source is loop-free) loop header; everything else, including
    branches with no enclosing loop, is SAME_LOOP.
    """
    if loops.is_exit_edge(edge):
        return EdgeLoopRelation.EXIT_EDGE
    if loops.is_back_edge(edge):
        return EdgeLoopRelation.BACK_EDGE
    src, dst = edge
    target_loop = loops.loop_with_header(dst)
    if target_loop is not None:
        src_loop = loops.innermost(src)
        if src_loop is None:
            return EdgeLoopRelation.ENTERS_INNER_LOOP
        p = loops.loops[target_loop].parent
        while p is not None:
            if p == src_loop:
                return EdgeLoopRelation.ENTERS_INNER_LOOP
            p = loops.loops[p].parent
    return EdgeLoopRelation.SAME_LOOP


@dataclass
class CfgAnalyses:
    """Per-function analysis bundle shared by heuristics and features."""

    function: IrFunction
    dom: DomTree
    pdom: DomTree
    loops: LoopForest

    def edge_relation(self, edge: Edge) -> EdgeLoopRelation:
        return classify_edge(self.function, self.loops, edge)

    def control_dependent(self, edge: Edge) -> set[int]:
        return control_dependent_blocks(self.function, self.pdom, edge)


def analyze_function(f: IrFunction) -> CfgAnalyses:
    dom = compute_dominators(f)
    return CfgAnalyses(f, dom, compute_postdominators(f), find_natural_loops(f, dom))


def branch_edges(f: IrFunction, block: int) -> tuple[Edge, Edge]:
    """(taken, nottaken) edges of the conditional branch ending `block`."""
    t = f.block(block).terminator
    if not isinstance(t, CondBranch):
        raise ValueError(f"block {block} does not end in a conditional branch")
    return (block, t.taken), (block, t.nottaken)
