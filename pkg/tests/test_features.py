"""Feature extraction and encoding."""

import numpy as np
import pytest

from bplab.cfg import EdgeLoopRelation, analyze_function
from bplab.features import (
    ATTR_FLAGS,
    CFG_SHAPES,
    EmbedSpec,
    EmptyDataset,
    Encoder,
    ExprTree,
    MISSING_TOKEN,
    NUMERIC_FEATURES,
    RawFeatures,
    TREE_SLOTS,
    compile_examples,
    encode,
    extract_dataflow_tree,
    extract_features,
    fit_encoder,
    token_universe,
)
from bplab.ir import (
    Arg,
    BasicBlock,
    CondBranch,
    Instruction,
    Jump,
    Opcode,
    Ref,
    Return,
    build_function,
)
from bplab.irtext import function_to_text, parse_module_text

from factories import make_raw, random_raw


def fig_tree_fn(const_a=3, const_b=2):
    """Condition compares (a * const_a) with (b + const_b) for equality."""
    instrs = [
        Instruction(0, Opcode.VAR),
        Instruction(1, Opcode.VAR),
        Instruction(2, Opcode.MUL, operands=(Ref(0), const_a)),
        Instruction(3, Opcode.ADD, operands=(Ref(1), const_b)),
        Instruction(4, Opcode.ICMP, predicate="eq", operands=(Ref(2), Ref(3))),
    ]
    blocks = [
        BasicBlock(0, instrs, CondBranch(Ref(4), 1, 2)),
        BasicBlock(1, [], Return()),
        BasicBlock(2, [], Return()),
    ]
    return build_function("fig", "fig.cc", blocks)


class TestExprTree:
    def test_reference_shape(self):
        fn = fig_tree_fn()
        tree = extract_dataflow_tree(fn, 0)
        assert tree.slots == ("icmp.eq", "mul", "add", "var", "#3", "var", "#2")

    def test_argument_condition_leaves(self):
        instrs = [Instruction(0, Opcode.ICMP, predicate="slt", operands=(Arg(0), 0))]
        blocks = [
            BasicBlock(0, instrs, CondBranch(Ref(0), 1, 2)),
            BasicBlock(1, [], Return()),
            BasicBlock(2, [], Return()),
        ]
        fn = build_function("f", "f.cc", blocks)
        tree = extract_dataflow_tree(fn, 0)
        assert tree.slots == ("icmp.slt", "var", "#0", "-", "-", "-", "-")

    def test_large_constant_becomes_unknown(self):
        fn = fig_tree_fn(const_a=10 ** 9)
        tree = extract_dataflow_tree(fn, 0, const_threshold=64)
        assert tree.slots[4] == "#?"

    def test_negative_constant_within_threshold(self):
        fn = fig_tree_fn(const_a=-64)
        tree = extract_dataflow_tree(fn, 0, const_threshold=64)
        assert tree.slots[4] == "#-64"

    def test_depth_two_instruction_collapses_to_var(self):
        instrs = [
            Instruction(0, Opcode.VAR),
            Instruction(1, Opcode.MUL, operands=(Ref(0), 3)),  # depth-2 operand
            Instruction(2, Opcode.ADD, operands=(Ref(1), 2)),
            Instruction(3, Opcode.ICMP, predicate="eq", operands=(Ref(2), 5)),
        ]
        blocks = [
            BasicBlock(0, instrs, CondBranch(Ref(3), 1, 2)),
            BasicBlock(1, [], Return()),
            BasicBlock(2, [], Return()),
        ]
        fn = build_function("f", "f.cc", blocks)
        tree = extract_dataflow_tree(fn, 0)
        # root icmp.eq; children add / #5; grandchildren of add: var (the mul), #2
        assert tree.slots == ("icmp.eq", "add", "#5", "var", "#2", "-", "-")

    def test_const_instruction_reads_as_constant(self):
        instrs = [
            Instruction(0, Opcode.CONST, operands=(7,)),
            Instruction(1, Opcode.VAR),
            Instruction(2, Opcode.ICMP, predicate="ne", operands=(Ref(1), Ref(0))),
        ]
        blocks = [
            BasicBlock(0, instrs, CondBranch(Ref(2), 1, 2)),
            BasicBlock(1, [], Return()),
            BasicBlock(2, [], Return()),
        ]
        fn = build_function("f", "f.cc", blocks)
        tree = extract_dataflow_tree(fn, 0)
        assert tree.slots == ("icmp.ne", "var", "#7", "-", "-", "-", "-")

    def test_invariants_enforced(self):
        with pytest.raises(ValueError):
            ExprTree(("-", "var", "var", "-", "-", "-", "-"))  # missing root
        with pytest.raises(ValueError):
            ExprTree(("var", "-", "-", "#1", "-", "-", "-"))  # child under missing
        with pytest.raises(ValueError):
            ExprTree(("var", "-", "-"))

    def test_structure_preserved_through_text_round_trip(self):
        fn = fig_tree_fn()
        text = function_to_text(fn)
        module, _ = parse_module_text(text)
        tree1 = extract_dataflow_tree(fn, 0)
        tree2 = extract_dataflow_tree(module.functions[0], 0)
        assert tree1 == tree2


def guarded_call_fn(taken_calls, nottaken_calls=()):
    """Triangle guarding calls: taken side block holds taken_calls."""
    side_instrs = []
    iid = 1
    for name, attrs in taken_calls:
        side_instrs.append(Instruction(iid, Opcode.CALL, callee_name=name,
                                       callee_attrs=frozenset(attrs)))
        iid += 1
    other_instrs = []
    for name, attrs in nottaken_calls:
        other_instrs.append(Instruction(iid, Opcode.CALL, callee_name=name,
                                        callee_attrs=frozenset(attrs)))
        iid += 1
    blocks = [
        BasicBlock(0, [Instruction(0, Opcode.VAR)], CondBranch(Ref(0), 1, 2)),
        BasicBlock(1, side_instrs, Jump(3)),
        BasicBlock(2, other_instrs, Jump(3)),
        BasicBlock(3, [], Return()),
    ]
    return build_function("g", "g.cc", blocks)


class TestExtractFeatures:
    def features(self, fn, block=0):
        return extract_features(fn, block, analyze_function(fn))

    def test_guarded_cold_call(self):
        fn = guarded_call_fn([("log_error", ("cold",))])
        raw = self.features(fn)
        assert raw.taken_callee == "log_error"
        assert raw.taken_callee_attrs == frozenset({"cold"})
        assert raw.nottaken_callee is None

    def test_most_frequent_callee_wins(self):
        fn = guarded_call_fn([("foo", ()), ("bar", ()), ("foo", ())])
        assert self.features(fn).taken_callee == "foo"

    def test_callee_tie_breaks_lexicographically(self):
        fn = guarded_call_fn([("zeta", ()), ("alpha", ())])
        assert self.features(fn).taken_callee == "alpha"

    def test_no_loop_features_zeroed(self):
        fn = guarded_call_fn([])
        raw = self.features(fn)
        assert raw.loop_depth == 0
        assert raw.loop_blocks == 0
        assert raw.loop_exit_blocks == 0
        assert raw.loop_exit_edges == 0
        assert raw.taken_edge_rel is EdgeLoopRelation.SAME_LOOP
        assert raw.nottaken_edge_rel is EdgeLoopRelation.SAME_LOOP

    def test_triangle_taken_shape(self):
        blocks = [
            BasicBlock(0, [Instruction(0, Opcode.VAR)], CondBranch(Ref(0), 1, 2)),
            BasicBlock(1, [], Jump(2)),
            BasicBlock(2, [], Return()),
        ]
        fn = build_function("t", "t.cc", blocks)
        assert self.features(fn).cfg_shape == "triangle_taken"

    def test_triangle_nottaken_shape(self):
        blocks = [
            BasicBlock(0, [Instruction(0, Opcode.VAR)], CondBranch(Ref(0), 2, 1)),
            BasicBlock(1, [], Jump(2)),
            BasicBlock(2, [], Return()),
        ]
        fn = build_function("t", "t.cc", blocks)
        assert self.features(fn).cfg_shape == "triangle_nottaken"

    def test_diamond_shape(self):
        fn = guarded_call_fn([])
        assert self.features(fn).cfg_shape == "diamond"

    def test_function_counts(self):
        fn = guarded_call_fn([("foo", ())])
        raw = self.features(fn)
        assert raw.fn_blocks == 4
        assert raw.fn_edges == 4  # branch 2 + two jumps
        # instructions: var + call + 4 terminators
        assert raw.fn_insts == 2 + 4
        assert raw.file_name == "g.cc"

    def test_loop_features(self):
        blocks = [
            BasicBlock(0, [Instruction(0, Opcode.VAR)], Jump(1)),
            BasicBlock(1, [], CondBranch(Ref(0), 1, 2)),
            BasicBlock(2, [], Return()),
        ]
        fn = build_function("l", "l.cc", blocks)
        raw = extract_features(fn, 1, analyze_function(fn))
        assert raw.loop_depth == 1
        assert raw.loop_blocks == 1
        assert raw.loop_exit_blocks == 1
        assert raw.loop_exit_edges == 1
        assert raw.taken_edge_rel is EdgeLoopRelation.BACK_EDGE
        assert raw.nottaken_edge_rel is EdgeLoopRelation.EXIT_EDGE


class TestEncoder:
    def test_population_stats(self):
        raws = [make_raw(fn_insts=v) for v in (1, 2, 3)]
        enc = fit_encoder(raws)
        i = NUMERIC_FEATURES.index("fn_insts")
        assert enc.numeric_means[i] == pytest.approx(2.0)
        assert enc.numeric_stds[i] == pytest.approx(0.8165, abs=1e-4)

    def test_standardization_value(self):
        raws = [make_raw(fn_insts=v) for v in (1, 2, 3)]
        enc = fit_encoder(raws)
        encoded = encode(enc, raws[2])
        # fn_insts is the only non-constant numeric, so it sits first among
        # the active numerics.
        assert encoded.dense[0] == pytest.approx(1.2247, abs=1e-4)

    def test_zero_variance_features_dropped(self):
        raws = [make_raw(fn_insts=v) for v in (1, 2, 3)]
        enc = fit_encoder(raws)
        assert len(enc.active_numerics) == 1
        assert "loop_depth" in enc.dropped_numerics
        assert "fn_insts" not in enc.dropped_numerics

    def test_training_set_standardized_to_unit_stats(self):
        rng = np.random.default_rng(7)
        raws = [random_raw(rng) for _ in range(400)]
        enc = fit_encoder(raws)
        cols = np.stack([enc.standardized_numerics(r) for r in raws])
        assert np.all(np.abs(cols.mean(axis=0)) <= 1e-9)
        assert np.all(np.abs(cols.std(axis=0) - 1.0) <= 1e-9)

    def test_min_count_vocabulary(self):
        raws = [
            make_raw(taken_callee="common"),
            make_raw(taken_callee="common", fn_insts=11),
            make_raw(taken_callee="rare", fn_insts=12),
            make_raw(file_name="b.cc", fn_insts=13),
        ]
        enc = fit_encoder(raws, EmbedSpec(min_count=2))
        assert enc.callee_vocab["common"] >= 1
        assert "rare" not in enc.callee_vocab
        assert encode(enc, raws[2]).embed_indices[0] == 0  # OOV
        assert enc.file_vocab["a.cc"] >= 1
        assert "b.cc" not in enc.file_vocab  # seen once

    def test_unseen_strings_map_to_oov(self):
        raws = [make_raw(taken_callee="x"), make_raw(taken_callee="x", fn_insts=11)]
        enc = fit_encoder(raws)
        unseen = make_raw(taken_callee="never_seen", file_name="other.cc")
        encoded = encode(enc, unseen)
        assert encoded.embed_indices[0] == 0
        assert encoded.embed_indices[2] == 0

    def test_cfg_shape_one_hot_layout(self):
        raws = [make_raw(fn_insts=v) for v in (1, 2, 3)]
        enc = fit_encoder(raws)
        encoded = encode(enc, make_raw(cfg_shape="diamond", fn_insts=2))
        offset = enc.group_offsets[TREE_SLOTS]  # cfg_shape group follows the slots
        group = encoded.dense[offset: offset + len(CFG_SHAPES)]
        assert group.tolist() == [0.0, 0.0, 1.0, 0.0]

    def test_every_one_hot_group_sums_to_one(self):
        rng = np.random.default_rng(3)
        raws = [random_raw(rng) for _ in range(200)]
        enc = fit_encoder(raws)
        for raw in raws[:50]:
            encoded = encode(enc, raw)
            for offset, size in zip(enc.group_offsets, enc.group_sizes):
                assert encoded.dense[offset: offset + size].sum() == 1.0

    def test_encode_is_deterministic(self):
        rng = np.random.default_rng(5)
        raws = [random_raw(rng) for _ in range(50)]
        enc = fit_encoder(raws)
        a = encode(enc, raws[0])
        b = encode(enc, raws[0])
        assert np.array_equal(a.dense, b.dense)
        assert a.embed_indices == b.embed_indices

    def test_empty_dataset_rejected(self):
        with pytest.raises(EmptyDataset):
            fit_encoder([])

    def test_out_of_threshold_constant_reads_as_unknown(self):
        raws = [make_raw(fn_insts=v) for v in (1, 2, 3)]
        enc = fit_encoder(raws, const_threshold=8)
        raw = make_raw(expr=ExprTree(("icmp.slt", "var", "#63", "-", "-", "-", "-")), fn_insts=2)
        encoded = encode(enc, raw)
        unknown = make_raw(expr=ExprTree(("icmp.slt", "var", "#?", "-", "-", "-", "-")), fn_insts=2)
        assert np.array_equal(encoded.dense, encode(enc, unknown).dense)

    def test_compile_matches_encode(self):
        rng = np.random.default_rng(11)
        raws = [random_raw(rng) for _ in range(64)]
        enc = fit_encoder(raws)
        compiled = compile_examples(enc, raws)
        rows = np.arange(len(raws))
        dense = compiled.dense_batch(rows)
        for i, raw in enumerate(raws):
            single = encode(enc, raw)
            assert np.array_equal(dense[i], single.dense)
            assert tuple(compiled.embed_idx[i]) == single.embed_indices
