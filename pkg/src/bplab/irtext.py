"""Line-oriented text format for IR modules.

    func <name> file=<file_name>
    block <id>:
      %<id> = <opcode> [<predicate>] <operands...>
      %<id> = call <callee> <operands...> [attrs=a,b]
      br <cond> %<taken> %<nottaken> [expect=taken|nottaken] [!weights <t> <nt>]
      jmp %<target>
      ret

Operands are instruction refs (%k), argument markers (argk), or decimal
constants. Parsing rebuilds each function through build_function, which
renumbers blocks/instructions into reverse-post-order; the original text
block ids are preserved in ParsedFunction.block_id_map for tools that need
to refer back to source lines.
"""

from __future__ import annotations

from dataclasses import dataclass

from .ir import (
    Arg,
    BasicBlock,
    CondBranch,
    Instruction,
    IrFunction,
    IrModule,
    Jump,
    Opcode,
    Operand,
    Ref,
    Return,
    build_function_mapped,
)

_OPCODES = {op.value: op for op in Opcode}


class ParseError(Exception):
    def __init__(self, message: str, line: int, file: str = "<text>"):
        super().__init__(f"{file}:{line}: {message}")
        self.line = line
        self.file = file


@dataclass
class ParsedFunction:
    function: IrFunction
    block_id_map: dict[int, int]  # text block id -> rebuilt block id


def _operand_text(op: Operand) -> str:
    if isinstance(op, Ref):
        return f"%{op.id}"
    if isinstance(op, Arg):
        return f"arg{op.index}"
    return str(op)


def _parse_operand(tok: str, line: int, file: str) -> Operand:
    if tok.startswith("%"):
        try:
            return Ref(int(tok[1:]))
        except ValueError:
            raise ParseError(f"bad instruction reference {tok!r}", line, file) from None
    if tok.startswith("arg"):
        try:
            return Arg(int(tok[3:]))
        except ValueError:
            raise ParseError(f"bad argument marker {tok!r}", line, file) from None
    try:
        return int(tok)
    except ValueError:
        raise ParseError(f"bad operand {tok!r}", line, file) from None


def instruction_text(instr: Instruction) -> str:
    parts = [f"%{instr.id}", "=", instr.opcode.value]
    if instr.predicate:
        parts.append(instr.predicate)
    if instr.opcode is Opcode.CALL:
        parts.append(instr.callee_name)
    parts.extend(_operand_text(op) for op in instr.operands)
    if instr.callee_attrs:
        parts.append("attrs=" + ",".join(sorted(instr.callee_attrs)))
    return " ".join(parts)


def terminator_text(term) -> str:
    if isinstance(term, CondBranch):
        parts = ["br", _operand_text(term.cond), f"%{term.taken}", f"%{term.nottaken}"]
        if term.expect:
            parts.append(f"expect={term.expect}")
        if term.weights:
            parts.extend(["!weights", str(term.weights[0]), str(term.weights[1])])
        return " ".join(parts)
    if isinstance(term, Jump):
        return f"jmp %{term.target}"
    return "ret"


def function_to_text(fn: IrFunction) -> str:
    lines = [f"func {fn.name} file={fn.file_name}"]
    for b in fn.blocks:
        lines.append(f"block {b.id}:")
        for instr in b.instructions:
            lines.append(f"  {instruction_text(instr)}")
        lines.append(f"  {terminator_text(b.terminator)}")
    return "\n".join(lines) + "\n"


def module_to_text(module: IrModule) -> str:
    return "\n".join(function_to_text(fn) for fn in module.functions)


def _parse_instruction(parts: list[str], line: int, file: str) -> Instruction:
    # parts: ["%3", "=", opcode, ...]
    iid = _parse_operand(parts[0], line, file)
    if not isinstance(iid, Ref) or parts[1] != "=":
        raise ParseError("expected '%<id> = <opcode> ...'", line, file)
    opname = parts[2]
    opcode = _OPCODES.get(opname)
    if opcode is None:
        raise ParseError(f"unknown opcode {opname!r}", line, file)
    rest = parts[3:]
    predicate = None
    callee = None
    attrs: frozenset[str] = frozenset()
    if opcode in (Opcode.ICMP, Opcode.FCMP):
        if not rest:
            raise ParseError(f"{opname} needs a predicate", line, file)
        predicate, rest = rest[0], rest[1:]
    if opcode is Opcode.CALL:
        if not rest:
            raise ParseError("call needs a callee name", line, file)
        callee, rest = rest[0], rest[1:]
    if rest and rest[-1].startswith("attrs="):
        attrs = frozenset(a for a in rest[-1][6:].split(",") if a)
        rest = rest[:-1]
    operands = tuple(_parse_operand(tok, line, file) for tok in rest)
    return Instruction(iid.id, opcode, predicate, operands, callee, attrs)


def _parse_block_id(tok: str, line: int, file: str) -> int:
    if not tok.startswith("%"):
        raise ParseError(f"expected block reference, got {tok!r}", line, file)
    try:
        return int(tok[1:])
    except ValueError:
        raise ParseError(f"bad block reference {tok!r}", line, file) from None


def _parse_terminator(parts: list[str], line: int, file: str):
    kind = parts[0]
    if kind == "ret":
        if len(parts) != 1:
            raise ParseError("ret takes no operands", line, file)
        return Return()
    if kind == "jmp":
        if len(parts) != 2:
            raise ParseError("jmp takes one block target", line, file)
        return Jump(_parse_block_id(parts[1], line, file))
    if kind == "br":
        rest = parts[1:]
        weights = None
        if "!weights" in rest:
            i = rest.index("!weights")
            wparts = rest[i + 1:]
            if len(wparts) != 2:
                raise ParseError("!weights takes two integers", line, file)
            try:
                weights = (int(wparts[0]), int(wparts[1]))
            except ValueError:
                raise ParseError("!weights takes two integers", line, file) from None
            rest = rest[:i]
        expect = None
        if rest and rest[-1].startswith("expect="):
            expect = rest[-1][7:]
            rest = rest[:-1]
        if len(rest) != 3:
            raise ParseError("br takes <cond> <taken> <nottaken>", line, file)
        cond = _parse_operand(rest[0], line, file)
        taken = _parse_block_id(rest[1], line, file)
        nottaken = _parse_block_id(rest[2], line, file)
        return CondBranch(cond, taken, nottaken, expect, weights)
    raise ParseError(f"unknown terminator {kind!r}", line, file)


def parse_module_text(text: str, name: str = "<text>") -> tuple[IrModule, list[ParsedFunction]]:
    """Parse a module; returns the module plus per-function id maps."""
    functions: list[ParsedFunction] = []

    fn_name = None
    fn_file = None
    blocks: list[BasicBlock] = []
    cur: BasicBlock | None = None
    cur_done = False

    def finish_function(line: int):
        nonlocal fn_name, fn_file, blocks, cur, cur_done
        if fn_name is None:
            return
        if cur is not None and not cur_done:
            raise ParseError(f"block {cur.id} has no terminator", line, name)
        if not blocks:
            raise ParseError(f"function {fn_name} has no blocks", line, name)
        fn, bmap = build_function_mapped(fn_name, fn_file, blocks)
        functions.append(ParsedFunction(fn, bmap))
        fn_name, fn_file, blocks, cur, cur_done = None, None, [], None, False

    for lineno, rawline in enumerate(text.splitlines(), start=1):
        stripped = rawline.strip()
        if not stripped or stripped.startswith("#"):
            continue
        parts = stripped.split()
        if parts[0] == "func":
            finish_function(lineno)
            if len(parts) < 2:
                raise ParseError("func needs a name", lineno, name)
            fn_name = parts[1]
            fn_file = ""
            marker = stripped.find("file=")
            if marker >= 0:
                fn_file = stripped[marker + 5:]
            continue
        if fn_name is None:
            raise ParseError("statement outside a function", lineno, name)
        if parts[0] == "block":
            if cur is not None and not cur_done:
                raise ParseError(f"block {cur.id} has no terminator", lineno, name)
            ident = parts[1]
            if not ident.endswith(":"):
                raise ParseError("block header must end with ':'", lineno, name)
            try:
                bid = int(ident[:-1])
            except ValueError:
                raise ParseError(f"bad block id {ident!r}", lineno, name) from None
            cur = BasicBlock(bid, [], Return())
            cur_done = False
            blocks.append(cur)
            continue
        if cur is None:
            raise ParseError("instruction outside a block", lineno, name)
        if cur_done:
            raise ParseError(f"block {cur.id} already has a terminator", lineno, name)
        if parts[0] in ("br", "jmp", "ret"):
            cur.terminator = _parse_terminator(parts, lineno, name)
            cur_done = True
        else:
            cur.instructions.append(_parse_instruction(parts, lineno, name))

    finish_function(len(text.splitlines()) + 1)
    module = IrModule(name, [pf.function for pf in functions])
    return module, functions


def annotate_ir_text(text: str, weights: dict[tuple[str, int], tuple[int, int]],
                     name: str = "<text>") -> str:
    """Rewrite `br` lines with fresh !weights annotations.

    `weights` maps (function name, text block id) to (taken, nottaken).
    Branches without an entry keep their line minus any stale annotation;
    every other line passes through byte-identical. Idempotent.
    """
    out: list[str] = []
    fn = None
    bid = None
    for lineno, rawline in enumerate(text.splitlines(keepends=True), start=1):
        stripped = rawline.strip()
        parts = stripped.split()
        if parts and parts[0] == "func" and len(parts) > 1:
            fn = parts[1]
        elif parts and parts[0] == "block" and parts[1].endswith(":"):
            bid = int(parts[1][:-1])
        elif parts and parts[0] == "br":
            if fn is None or bid is None:
                raise ParseError("br outside a block", lineno, name)
            body = rawline.rstrip("\n")
            newline = "\n" if rawline.endswith("\n") else ""
            if "!weights" in body:
                body = body[: body.index("!weights")].rstrip()
            pair = weights.get((fn, bid))
            if pair is not None:
                body = f"{body} !weights {pair[0]} {pair[1]}"
            out.append(body + newline)
            continue
        out.append(rawline)
    return "".join(out)
