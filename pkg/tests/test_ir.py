"""IR construction, validation, and the text format."""

import pytest

from bplab.ir import (
    Arg,
    BasicBlock,
    CondBranch,
    DanglingTarget,
    Instruction,
    InvalidIr,
    IrModule,
    Jump,
    Opcode,
    Ref,
    Return,
    UnreachableBlock,
    UseBeforeDef,
    build_function,
    build_function_mapped,
)
from bplab.irtext import ParseError, annotate_ir_text, module_to_text, parse_module_text

from oracles import random_reducible_function


def diamond_blocks():
    # A -> {B, C}; B -> D; C -> D; D returns
    a = BasicBlock(0, [Instruction(0, Opcode.VAR)], CondBranch(Ref(0), 1, 2))
    b = BasicBlock(1, [], Jump(3))
    c = BasicBlock(2, [], Jump(3))
    d = BasicBlock(3, [], Return())
    return [a, b, c, d]


class TestBuildFunction:
    def test_minimal_function(self):
        fn = build_function("f", "f.cc", [BasicBlock(0, [], Return())])
        assert len(fn.blocks) == 1
        assert fn.entry == 0

    def test_dangling_target(self):
        blocks = [
            BasicBlock(0, [Instruction(0, Opcode.VAR)], CondBranch(Ref(0), 99, 1)),
            BasicBlock(1, [], Return()),
        ]
        with pytest.raises(DanglingTarget):
            build_function("f", "f.cc", blocks)

    def test_diamond_all_reachable(self):
        fn = build_function("f", "f.cc", diamond_blocks())
        assert len(fn.blocks) == 4
        assert sorted(b.id for b in fn.blocks) == [0, 1, 2, 3]

    def test_unreachable_block_rejected(self):
        blocks = [BasicBlock(0, [], Return()), BasicBlock(1, [], Return())]
        with pytest.raises(UnreachableBlock):
            build_function("f", "f.cc", blocks)

    def test_use_before_def(self):
        blocks = [
            BasicBlock(0, [Instruction(0, Opcode.ADD, operands=(Ref(1), 2))], Return()),
        ]
        with pytest.raises(UseBeforeDef):
            build_function("f", "f.cc", blocks)

    def test_branch_targets_must_differ(self):
        blocks = [
            BasicBlock(0, [Instruction(0, Opcode.VAR)], CondBranch(Ref(0), 1, 1)),
            BasicBlock(1, [], Return()),
        ]
        with pytest.raises(InvalidIr):
            build_function("f", "f.cc", blocks)

    def test_predicate_only_on_compares(self):
        with pytest.raises(InvalidIr):
            Instruction(0, Opcode.ADD, predicate="eq", operands=(1, 2)).validate()
        with pytest.raises(InvalidIr):
            Instruction(0, Opcode.ICMP, predicate="bogus", operands=(1, 2)).validate()

    def test_call_requires_callee(self):
        with pytest.raises(InvalidIr):
            Instruction(0, Opcode.CALL).validate()

    def test_renumbering_is_idempotent(self):
        for seed in range(40):
            fn = random_reducible_function(seed)
            rebuilt = build_function(fn.name, fn.file_name, fn.blocks)
            assert [b.id for b in rebuilt.blocks] == [b.id for b in fn.blocks]
            assert [
                (i.id, i.opcode, i.operands) for b in rebuilt.blocks for i in b.instructions
            ] == [(i.id, i.opcode, i.operands) for b in fn.blocks for i in b.instructions]
            assert [b.terminator for b in rebuilt.blocks] == [b.terminator for b in fn.blocks]

    def test_entry_first_rpo_numbering(self):
        # Input ids scrambled; output must be dense RPO from the first block.
        a = BasicBlock(7, [Instruction(0, Opcode.VAR)], CondBranch(Ref(0), 3, 9))
        b = BasicBlock(3, [], Jump(5))
        c = BasicBlock(9, [], Jump(5))
        d = BasicBlock(5, [], Return())
        fn, bmap = build_function_mapped("f", "f.cc", [a, b, c, d])
        assert bmap[7] == 0
        assert sorted(bmap.values()) == [0, 1, 2, 3]
        assert fn.blocks[0].successors() == (bmap[3], bmap[9])


class TestTextFormat:
    def test_round_trip_random_functions(self):
        module = IrModule("m", [random_reducible_function(s) for s in range(25)])
        text = module_to_text(module)
        module2, _ = parse_module_text(text)
        assert module_to_text(module2) == text

    def test_parse_instruction_forms(self):
        text = (
            "func f file=a.cc\n"
            "block 0:\n"
            "  %0 = load arg0\n"
            "  %1 = icmp eq %0 0\n"
            "  %2 = call log_error %0 attrs=cold,noinline\n"
            "  br %1 %1 %2 expect=taken\n"
            "block 1:\n"
            "  ret\n"
            "block 2:\n"
            "  jmp %1\n"
        )
        module, parsed = parse_module_text(text)
        fn = module.functions[0]
        assert fn.file_name == "a.cc"
        call = fn.blocks[0].instructions[2]
        assert call.callee_name == "log_error"
        assert call.callee_attrs == frozenset({"cold", "noinline"})
        term = fn.blocks[0].terminator
        assert isinstance(term, CondBranch)
        assert term.expect == "taken"

    def test_parse_errors_carry_line_numbers(self):
        with pytest.raises(ParseError) as err:
            parse_module_text("func f file=a.cc\nblock 0:\n  %0 = frobnicate\n  ret\n")
        assert err.value.line == 3

        with pytest.raises(ParseError):
            parse_module_text("block 0:\n  ret\n")  # outside a function

    def test_weights_parse_and_round_trip(self):
        # Canonical numbering puts the not-taken leaf first, hence %2 %1.
        text = (
            "func f file=a.cc\n"
            "block 0:\n"
            "  %0 = var\n"
            "  br %0 %2 %1 !weights 900000 100000\n"
            "block 1:\n  ret\n"
            "block 2:\n  ret\n"
        )
        module, _ = parse_module_text(text)
        term = module.functions[0].blocks[0].terminator
        assert term.weights == (900000, 100000)
        assert module_to_text(module) == text


class TestAnnotate:
    TEXT = (
        "func f file=a.cc\n"
        "block 0:\n"
        "  %0 = var\n"
        "  br %0 %1 %2\n"
        "block 1:\n  ret\n"
        "block 2:\n  ret\n"
    )

    def test_annotation_added_and_replaced(self):
        once = annotate_ir_text(self.TEXT, {("f", 0): (900000, 100000)})
        assert "br %0 %1 %2 !weights 900000 100000" in once
        twice = annotate_ir_text(once, {("f", 0): (250000, 750000)})
        assert "!weights 250000 750000" in twice
        assert "900000" not in twice

    def test_non_branch_lines_untouched(self):
        annotated = annotate_ir_text(self.TEXT, {("f", 0): (1, 999999)})
        original_lines = self.TEXT.splitlines()
        new_lines = annotated.splitlines()
        assert len(original_lines) == len(new_lines)
        for old, new in zip(original_lines, new_lines):
            if not old.strip().startswith("br"):
                assert old == new

    def test_function_without_branches_unchanged(self):
        text = "func g file=b.cc\nblock 0:\n  ret\n"
        assert annotate_ir_text(text, {}) == text
