"""Static branch-probability heuristics in the style of a production compiler.

Rules fire in a fixed order; the first match wins:

1. A programmer expectation hint pins the probability toward the hinted side.
2. A taken edge that is a loop back edge is strongly taken; a taken exit edge
   is strongly not taken. The not-taken edge is consulted symmetrically when
   the taken edge is neither.
3. Equality comparisons of a loaded value against zero (the null-check idiom
   in this pointerless IR) and float equality are mildly unlikely to be true;
   their negations are mildly likely.
4. Everything else is unbiased.
"""

from __future__ import annotations

from dataclasses import dataclass

from .cfg import CfgAnalyses, EdgeLoopRelation, branch_edges
from .ir import CondBranch, IrFunction, Opcode, Ref


class NotAConditionalBranch(Exception):
    pass


@dataclass(frozen=True)
class HeuristicConfig:
    p_expect: float = 0.99
    p_backedge: float = 0.875
    p_null_cmp_eq_true: float = 0.375
    p_default: float = 0.5

    def validate(self) -> None:
        for field in ("p_expect", "p_backedge", "p_null_cmp_eq_true", "p_default"):
            v = getattr(self, field)
            if not 0.0 < v < 1.0:
                raise ValueError(f"{field} must be in (0,1), got {v}")
        if self.p_backedge <= 0.5:
            raise ValueError("p_backedge must exceed 0.5")
        if self.p_null_cmp_eq_true >= 0.5:
            raise ValueError("p_null_cmp_eq_true must be below 0.5")


def _unlikely_compare_direction(f: IrFunction, cond) -> bool | None:
    """Classify null-style / float-equality compares.

    Returns True when the true side is the unlikely one (eq against a loaded
    zero, float ==), False for the negated forms (ne / float !=), and None
    when the pattern does not apply.
    """
    if not isinstance(cond, Ref):
        return None
    instr = f.instruction(cond.id)
    if instr.opcode is Opcode.FCMP:
        if instr.predicate == "oeq":
            return True
        if instr.predicate == "one":
            return False
        return None
    if instr.opcode is not Opcode.ICMP or instr.predicate not in ("eq", "ne"):
        return None
    if len(instr.operands) != 2:
        return None

    def is_zero(op) -> bool:
        return isinstance(op, int) and op == 0

    def is_load(op) -> bool:
        return isinstance(op, Ref) and f.instruction(op.id).opcode is Opcode.LOAD

    a, b = instr.operands
    null_check = (is_zero(a) and is_load(b)) or (is_zero(b) and is_load(a))
    if not null_check:
        return None
    return instr.predicate == "eq"


def estimate_heuristic(
    f: IrFunction,
    block: int,
    analyses: CfgAnalyses,
    config: HeuristicConfig = HeuristicConfig(),
) -> float:
    """Taken-probability of the conditional branch ending `block`."""
    term = f.block(block).terminator
    if not isinstance(term, CondBranch):
        raise NotAConditionalBranch(f"block {block} of {f.name} does not end in a branch")
    config.validate()

    if term.expect == "taken":
        return config.p_expect
    if term.expect == "nottaken":
        return 1.0 - config.p_expect

    taken_edge, nottaken_edge = branch_edges(f, block)
    taken_rel = analyses.edge_relation(taken_edge)
    if taken_rel is EdgeLoopRelation.BACK_EDGE:
        return config.p_backedge
    if taken_rel is EdgeLoopRelation.EXIT_EDGE:
        return 1.0 - config.p_backedge
    nottaken_rel = analyses.edge_relation(nottaken_edge)
    if nottaken_rel is EdgeLoopRelation.BACK_EDGE:
        return 1.0 - config.p_backedge
    if nottaken_rel is EdgeLoopRelation.EXIT_EDGE:
        return config.p_backedge

    unlikely_true = _unlikely_compare_direction(f, term.cond)
    if unlikely_true is True:
        return config.p_null_cmp_eq_true
    if unlikely_true is False:
        return 1.0 - config.p_null_cmp_eq_true

    return config.p_default
