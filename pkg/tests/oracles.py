"""Brute-force reference implementations for the CFG analyses.

Dominance is decided straight from its path definition: v dominates u
exactly when deleting v cuts every entry->u path, i.e. u becomes
unreachable. The same idea on the reversed graph (rooted at a virtual exit)
gives post-dominance. These never share code with the package's iterative
algorithms.
"""

from __future__ import annotations

import random

from bplab.ir import BasicBlock, CondBranch, IrFunction, Jump, Return, build_function


def _reachable(succ: dict[int, list[int]], start: int, removed: int | None) -> set[int]:
    if start == removed:
        return set()
    seen = {start}
    stack = [start]
    while stack:
        n = stack.pop()
        for s in succ[n]:
            if s != removed and s not in seen:
                seen.add(s)
                stack.append(s)
    return seen


def dominator_sets(succ: dict[int, list[int]], entry: int) -> dict[int, set[int]]:
    """doms[u] = every v present on all entry->u paths."""
    nodes = set(succ)
    doms = {u: set() for u in nodes}
    for v in nodes:
        alive = _reachable(succ, entry, v)
        for u in nodes:
            if u == v or u not in alive:
                doms[u].add(v)
    return doms


def idom_map(doms: dict[int, set[int]], entry: int) -> dict[int, int]:
    """Immediate dominator: the strict dominator dominated by all others."""
    idom = {entry: entry}
    for u, ds in doms.items():
        if u == entry:
            continue
        strict = ds - {u}
        idom[u] = max(strict, key=lambda d: len(doms[d]))
    return idom


def fn_successors(f: IrFunction) -> dict[int, list[int]]:
    return {b.id: list(b.successors()) for b in f.blocks}


def oracle_dominators(f: IrFunction) -> tuple[dict[int, set[int]], dict[int, int]]:
    doms = dominator_sets(fn_successors(f), f.entry)
    return doms, idom_map(doms, f.entry)


def oracle_postdominators(f: IrFunction) -> tuple[dict[int, set[int]], dict[int, int]]:
    """Post-dominance via dominance on the reversed graph with a virtual exit.

    Only valid for functions where every block reaches a return (the random
    generator below guarantees that).
    """
    exit_id = len(f.blocks)
    rev: dict[int, list[int]] = {b.id: [] for b in f.blocks}
    rev[exit_id] = []
    for b in f.blocks:
        for s in b.successors():
            rev[s].append(b.id)
    for b in f.blocks:
        if not b.successors():
            rev[exit_id].append(b.id)
    doms = dominator_sets(rev, exit_id)
    return doms, idom_map(doms, exit_id)


def oracle_natural_loops(f: IrFunction, doms: dict[int, set[int]]) -> dict[int, set[int]]:
    """header -> body, built per back edge from the reverse-reachability
    definition: everything that reaches the back-edge source without passing
    through the header."""
    preds: dict[int, list[int]] = {b.id: [] for b in f.blocks}
    for b in f.blocks:
        for s in b.successors():
            preds[s].append(b.id)
    bodies: dict[int, set[int]] = {}
    for b in f.blocks:
        for s in b.successors():
            if s in doms[b.id]:  # back edge b -> s
                body = bodies.setdefault(s, {s})
                stack = [b.id]
                while stack:
                    m = stack.pop()
                    if m not in body:
                        body.add(m)
                        stack.extend(preds[m])
    return bodies


def oracle_control_dependence(
    f: IrFunction, pdom_sets: dict[int, set[int]], edge: tuple[int, int]
) -> set[int]:
    src, dst = edge
    out = set()
    for b in f.blocks:
        if b.id in pdom_sets[dst] and b.id not in pdom_sets[src]:
            out.add(b.id)
    return out


def random_reducible_function(seed: int, max_blocks: int = 10) -> IrFunction:
    """Structured random CFG: sequences, triangles, diamonds, while/do-while
    loops with optional conditional latches, and early returns. Reducible by
    construction, every block reaches a return, at most max_blocks blocks."""
    rng = random.Random(seed)
    blocks: list[BasicBlock] = []
    left = [max_blocks - 1]

    def nb() -> BasicBlock:
        b = BasicBlock(len(blocks), [], Return())
        blocks.append(b)
        return b

    def can(n: int) -> bool:
        return left[0] >= n

    def take(n: int) -> None:
        left[0] -= n

    entry = nb()

    def region(cur: BasicBlock, depth: int) -> BasicBlock:
        for _ in range(rng.randint(1, 3)):
            r = rng.random()
            if r < 0.30 and can(2):
                take(2)
                side, merge = nb(), nb()
                end = region(side, depth + 1) if depth < 2 and rng.random() < 0.4 else side
                end.terminator = Jump(merge.id)
                if rng.random() < 0.5:
                    cur.terminator = CondBranch(1, side.id, merge.id)
                else:
                    cur.terminator = CondBranch(1, merge.id, side.id)
                cur = merge
            elif r < 0.45 and can(3):
                take(3)
                a, b, merge = nb(), nb(), nb()
                a.terminator = Jump(merge.id)
                b.terminator = Jump(merge.id)
                cur.terminator = CondBranch(1, a.id, b.id)
                cur = merge
            elif r < 0.60 and can(2):
                take(2)
                loop, after = nb(), nb()
                loop.terminator = CondBranch(1, loop.id, after.id)
                cur.terminator = Jump(loop.id)
                cur = after
            elif r < 0.80 and can(3):
                take(3)
                header, body, after = nb(), nb(), nb()
                cur.terminator = Jump(header.id)
                header.terminator = CondBranch(1, body.id, after.id)
                end = region(body, depth + 1) if depth < 2 and rng.random() < 0.4 else body
                if rng.random() < 0.3:
                    # conditional latch: continue or break
                    end.terminator = CondBranch(1, header.id, after.id)
                else:
                    end.terminator = Jump(header.id)
                cur = after
            elif r < 0.9 and can(2):
                take(2)
                ret_side, merge = nb(), nb()
                ret_side.terminator = Return()
                cur.terminator = CondBranch(1, ret_side.id, merge.id)
                cur = merge
            # else: keep the current block, effectively a no-op statement
        return cur

    final = region(entry, 0)
    final.terminator = Return()
    return build_function(f"r{seed}", f"rand_{seed}.cc", blocks)
