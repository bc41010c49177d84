"""Minimal SSA-style IR: opcodes, basic blocks, functions, and validation.

The IR carries just enough structure for branch analysis: integer/float
comparisons, simple arithmetic, loads, calls with attributes, and two-way
conditional branches. Values are never computed; only control flow and the
shape of the instruction DAG matter.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace


class IrError(Exception):
    """Base class for IR construction/validation failures."""


class DanglingTarget(IrError):
    """A terminator references a block id that does not exist."""


class UnreachableBlock(IrError):
    """A block is not reachable from the entry block."""


class UseBeforeDef(IrError):
    """An operand references an instruction that is not defined earlier."""


class InvalidIr(IrError):
    """Structural constraint violation (bad predicate, missing callee, ...)."""


class Opcode(enum.Enum):
    ICMP = "icmp"
    FCMP = "fcmp"
    ADD = "add"
    SUB = "sub"
    MUL = "mul"
    DIV = "div"
    AND = "and"
    OR = "or"
    XOR = "xor"
    SHL = "shl"
    SHR = "shr"
    LOAD = "load"
    PHI = "phi"
    SELECT = "select"
    CALL = "call"
    CONST = "const"
    VAR = "var"


ICMP_PREDICATES = ("eq", "ne", "slt", "sle", "sgt", "sge", "ult", "ule", "ugt", "uge")
FCMP_PREDICATES = ("oeq", "one", "olt", "ogt")

CALLEE_ATTRS = frozenset({"inline", "noinline", "always_inline", "cold"})


@dataclass(frozen=True)
class Ref:
    """Reference to the instruction with this id."""

    id: int


@dataclass(frozen=True)
class Arg:
    """Function argument marker (arg0, arg1, ...)."""

    index: int


# An operand is a Ref, an Arg, or a plain int constant.
Operand = Ref | Arg | int


@dataclass(frozen=True)
class Instruction:
    id: int
    opcode: Opcode
    predicate: str | None = None
    operands: tuple[Operand, ...] = ()
    callee_name: str | None = None
    callee_attrs: frozenset[str] = frozenset()

    def validate(self) -> None:
        if self.opcode is Opcode.ICMP:
            if self.predicate not in ICMP_PREDICATES:
                raise InvalidIr(f"icmp needs a predicate from {ICMP_PREDICATES}, got {self.predicate!r}")
        elif self.opcode is Opcode.FCMP:
            if self.predicate not in FCMP_PREDICATES:
                raise InvalidIr(f"fcmp needs a predicate from {FCMP_PREDICATES}, got {self.predicate!r}")
        elif self.predicate is not None:
            raise InvalidIr(f"{self.opcode.value} cannot carry a predicate")
        if self.opcode is Opcode.CALL:
            if not self.callee_name:
                raise InvalidIr("call instruction requires a callee name")
            if not self.callee_attrs <= CALLEE_ATTRS:
                raise InvalidIr(f"unknown callee attrs: {sorted(self.callee_attrs - CALLEE_ATTRS)}")
        elif self.callee_name is not None or self.callee_attrs:
            raise InvalidIr(f"{self.opcode.value} cannot carry callee information")


@dataclass(frozen=True)
class CondBranch:
    cond: Operand
    taken: int
    nottaken: int
    expect: str | None = None  # "taken" | "nottaken"
    weights: tuple[int, int] | None = None  # (taken, nottaken) annotation


@dataclass(frozen=True)
class Jump:
    target: int


@dataclass(frozen=True)
class Return:
    pass


Terminator = CondBranch | Jump | Return


@dataclass
class BasicBlock:
    id: int
    instructions: list[Instruction] = field(default_factory=list)
    terminator: Terminator = Return()

    def successors(self) -> tuple[int, ...]:
        t = self.terminator
        if isinstance(t, CondBranch):
            return (t.taken, t.nottaken)
        if isinstance(t, Jump):
            return (t.target,)
        return ()


@dataclass
class IrFunction:
    name: str
    file_name: str
    entry: int
    blocks: list[BasicBlock]

    def __post_init__(self):
        self._by_instr = {i.id: i for b in self.blocks for i in b.instructions}
        self._preds: dict[int, tuple[int, ...]] = {b.id: () for b in self.blocks}
        for b in self.blocks:
            for s in b.successors():
                self._preds[s] = self._preds[s] + (b.id,)

    def block(self, bid: int) -> BasicBlock:
        return self.blocks[bid]

    def instruction(self, iid: int) -> Instruction:
        return self._by_instr[iid]

    def successors(self, bid: int) -> tuple[int, ...]:
        return self.blocks[bid].successors()

    def predecessors(self, bid: int) -> tuple[int, ...]:
        return self._preds[bid]

    def edges(self):
        """All CFG edges as (src, dst) pairs, in block/successor order."""
        for b in self.blocks:
            for s in b.successors():
                yield (b.id, s)

    def branch_blocks(self):
        """Blocks terminated by a conditional branch, ascending id."""
        for b in self.blocks:
            if isinstance(b.terminator, CondBranch):
                yield b

    def num_instructions(self) -> int:
        # Terminators count as instructions, like a real IR.
        return sum(len(b.instructions) + 1 for b in self.blocks)

    def num_edges(self) -> int:
        return sum(len(b.successors()) for b in self.blocks)


@dataclass
class IrModule:
    name: str
    functions: list[IrFunction] = field(default_factory=list)


def branch_id(fn: IrFunction, block: int) -> str:
    """Stable identity of a conditional branch: file:function:block."""
    return f"{fn.file_name}:{fn.name}:{block}"


def _reverse_post_order(blocks: dict[int, BasicBlock], entry: int) -> list[int]:
    """Iterative DFS post-order, reversed; successors visited in terminator order."""
    post: list[int] = []
    visited: set[int] = set()
    # stack entries: (block id, iterator state index)
    stack: list[list] = [[entry, 0]]
    visited.add(entry)
    while stack:
        top = stack[-1]
        bid, idx = top
        succs = blocks[bid].successors()
        if idx < len(succs):
            top[1] += 1
            nxt = succs[idx]
            if nxt not in visited:
                visited.add(nxt)
                stack.append([nxt, 0])
        else:
            post.append(bid)
            stack.pop()
    post.reverse()
    return post


def build_function_mapped(
    name: str, file_name: str, blocks: list[BasicBlock]
) -> tuple[IrFunction, dict[int, int]]:
    """Validate and renumber a function; also return the old->new block id map.

    The first block in `blocks` is the entry. Block and instruction ids are
    reassigned densely in entry-first reverse-post-order, so rebuilding an
    already-built function is the identity.
    """
    if not blocks:
        raise InvalidIr("function needs at least one block")
    by_id: dict[int, BasicBlock] = {}
    for b in blocks:
        if b.id in by_id:
            raise InvalidIr(f"duplicate block id {b.id}")
        by_id[b.id] = b

    for b in blocks:
        t = b.terminator
        for s in b.successors():
            if s not in by_id:
                raise DanglingTarget(f"block {b.id} targets missing block {s}")
        if isinstance(t, CondBranch) and t.taken == t.nottaken:
            raise InvalidIr(f"block {b.id}: branch targets must be distinct")
        if isinstance(t, CondBranch) and t.expect not in (None, "taken", "nottaken"):
            raise InvalidIr(f"block {b.id}: bad expect hint {t.expect!r}")
        for instr in b.instructions:
            instr.validate()

    entry = blocks[0].id
    order = _reverse_post_order(by_id, entry)
    if len(order) != len(blocks):
        missing = sorted(set(by_id) - set(order))
        raise UnreachableBlock(f"blocks not reachable from entry: {missing}")

    block_map = {old: new for new, old in enumerate(order)}
    instr_map: dict[int, int] = {}
    next_id = 0
    new_blocks: list[BasicBlock] = []

    def remap_operand(op: Operand, user: str) -> Operand:
        if isinstance(op, Ref):
            if op.id not in instr_map:
                raise UseBeforeDef(f"{user} references %{op.id} before its definition")
            return Ref(instr_map[op.id])
        return op

    for old_id in order:
        src = by_id[old_id]
        new_instrs: list[Instruction] = []
        for instr in src.instructions:
            if instr.id in instr_map:
                raise InvalidIr(f"duplicate instruction id {instr.id}")
            operands = tuple(remap_operand(op, f"%{instr.id}") for op in instr.operands)
            instr_map[instr.id] = next_id
            new_instrs.append(replace(instr, id=next_id, operands=operands))
            next_id += 1
        t = src.terminator
        if isinstance(t, CondBranch):
            cond = remap_operand(t.cond, f"branch in block {old_id}")
            t = CondBranch(cond, block_map[t.taken], block_map[t.nottaken], t.expect, t.weights)
        elif isinstance(t, Jump):
            t = Jump(block_map[t.target])
        new_blocks.append(BasicBlock(block_map[old_id], new_instrs, t))

    fn = IrFunction(name=name, file_name=file_name, entry=0, blocks=new_blocks)
    return fn, block_map


def build_function(name: str, file_name: str, blocks: list[BasicBlock]) -> IrFunction:
    """Validate and renumber a function (see build_function_mapped)."""
    fn, _ = build_function_mapped(name, file_name, blocks)
    return fn
