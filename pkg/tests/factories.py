"""Shared builders for feature records used across test modules."""

from bplab.cfg import EdgeLoopRelation
from bplab.features import ATTR_FLAGS, CFG_SHAPES, ExprTree, MISSING_TOKEN, RawFeatures, token_universe


def make_raw(**overrides):
    base = dict(
        expr=ExprTree(("icmp.slt", "var", "#3", "-", "-", "-", "-")),
        taken_callee=None,
        nottaken_callee=None,
        taken_callee_attrs=frozenset(),
        nottaken_callee_attrs=frozenset(),
        cfg_shape="other",
        loop_depth=0,
        loop_blocks=0,
        loop_exit_blocks=0,
        loop_exit_edges=0,
        taken_edge_rel=EdgeLoopRelation.SAME_LOOP,
        nottaken_edge_rel=EdgeLoopRelation.SAME_LOOP,
        fn_insts=10,
        fn_blocks=4,
        fn_edges=4,
        file_name="a.cc",
    )
    base.update(overrides)
    return RawFeatures(**base)


def random_raw(rng) -> RawFeatures:
    tokens = token_universe(64)
    root = tokens[rng.integers(3, len(tokens))]  # anything but missing
    children = [tokens[rng.integers(len(tokens))] for _ in range(2)]
    grand = []
    for c in children:
        if c == MISSING_TOKEN:
            grand.extend([MISSING_TOKEN, MISSING_TOKEN])
        else:
            grand.append(tokens[rng.integers(len(tokens))])
            grand.append(tokens[rng.integers(len(tokens))])
    rels = list(EdgeLoopRelation)
    callees = [None, "a", "b", "log_error", "rare_call"]
    return make_raw(
        expr=ExprTree((root, *children, *grand)),
        taken_callee=callees[rng.integers(len(callees))],
        nottaken_callee=callees[rng.integers(len(callees))],
        taken_callee_attrs=frozenset(a for a in ATTR_FLAGS if rng.random() < 0.3),
        nottaken_callee_attrs=frozenset(a for a in ATTR_FLAGS if rng.random() < 0.3),
        cfg_shape=CFG_SHAPES[rng.integers(len(CFG_SHAPES))],
        loop_depth=int(rng.integers(0, 4)),
        loop_blocks=int(rng.integers(0, 12)),
        loop_exit_blocks=int(rng.integers(0, 5)),
        loop_exit_edges=int(rng.integers(0, 6)),
        taken_edge_rel=rels[rng.integers(4)],
        nottaken_edge_rel=rels[rng.integers(4)],
        fn_insts=int(rng.integers(1, 300)),
        fn_blocks=int(rng.integers(1, 60)),
        fn_edges=int(rng.integers(0, 90)),
        file_name=["a.cc", "b.cc", "include/c.h"][rng.integers(3)],
    )
