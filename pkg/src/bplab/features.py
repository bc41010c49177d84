"""Per-branch feature extraction and encoding.

Each conditional branch yields a RawFeatures record covering four families:
the backward dataflow tree of its condition, control-flow context (guarded
callees, callee attributes, local CFG shape), enclosing-loop statistics, and
whole-function statistics, plus the source file name.

Encoding standardizes numeric features with training-set statistics, one-hot
encodes small categoricals (tree slots, CFG shape, edge relations, attribute
flags) and maps high-cardinality strings (callee and file names) to vocabulary
indices destined for embedding lookups. Index 0 is reserved for out-of-vocab
and absent values.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .cfg import CfgAnalyses, EdgeLoopRelation, branch_edges
from .ir import Arg, CondBranch, IrFunction, Opcode, Operand, Ref

# Expression tree token spellings. Constants render as "#v", a constant
# beyond the magnitude threshold as "#?", variables as "var", and absent
# slots as "-". Operators render as their opcode (plus predicate).
MISSING_TOKEN = "-"
VAR_TOKEN = "var"
CONST_UNKNOWN_TOKEN = "#?"

TREE_SLOTS = 7
_CHILD = {0: (1, 2), 1: (3, 4), 2: (5, 6)}

CFG_SHAPES = ("triangle_taken", "triangle_nottaken", "diamond", "other")
EDGE_RELATIONS = tuple(r.value for r in EdgeLoopRelation)
ATTR_FLAGS = ("inline", "noinline", "always_inline", "cold")

NUMERIC_FEATURES = (
    "loop_depth",
    "loop_blocks",
    "loop_exit_blocks",
    "loop_exit_edges",
    "fn_insts",
    "fn_blocks",
    "fn_edges",
)


class EmptyDataset(Exception):
    pass


def opcode_token(opcode: Opcode, predicate: str | None = None) -> str:
    return f"{opcode.value}.{predicate}" if predicate else opcode.value


def const_token(value: int, const_threshold: int) -> str:
    if abs(value) <= const_threshold:
        return f"#{value}"
    return CONST_UNKNOWN_TOKEN


def token_universe(const_threshold: int) -> tuple[str, ...]:
    """Every token an expression-tree slot can hold, in fixed layout order."""
    tokens = [MISSING_TOKEN, VAR_TOKEN, CONST_UNKNOWN_TOKEN]
    tokens.extend(f"#{v}" for v in range(-const_threshold, const_threshold + 1))
    for op in Opcode:
        if op is Opcode.ICMP:
            tokens.extend(f"icmp.{p}" for p in ("eq", "ne", "slt", "sle", "sgt", "sge",
                                                "ult", "ule", "ugt", "uge"))
        elif op is Opcode.FCMP:
            tokens.extend(f"fcmp.{p}" for p in ("oeq", "one", "olt", "ogt"))
        elif op in (Opcode.CONST, Opcode.VAR):
            continue  # these render as constant / var tokens
        else:
            tokens.append(op.value)
    return tuple(tokens)


@dataclass(frozen=True)
class ExprTree:
    """Height-2 backward dataflow tree, laid out as a complete binary tree.

    Slot 0 is the root, slots 1-2 its children, slots 3-6 the grandchildren
    (slot 2k+1 and 2k+2 hold the children of slot k).
    """

    slots: tuple[str, ...]

    def __post_init__(self):
        if len(self.slots) != TREE_SLOTS:
            raise ValueError(f"expression tree needs {TREE_SLOTS} slots")
        if self.slots[0] == MISSING_TOKEN:
            raise ValueError("expression tree root cannot be missing")
        for k, (l, r) in _CHILD.items():
            if self.slots[k] == MISSING_TOKEN:
                if self.slots[l] != MISSING_TOKEN or self.slots[r] != MISSING_TOKEN:
                    raise ValueError("children of a missing slot must be missing")


def extract_dataflow_tree(f: IrFunction, block: int, const_threshold: int = 64) -> ExprTree:
    """Tokenize the height-2 dataflow tree feeding a branch condition.

    Operators at depth 0 or 1 expand into their first two operands; any value
    at depth 2 collapses to a variable or constant token. Variables are not
    distinguished from one another.
    """
    term = f.block(block).terminator
    if not isinstance(term, CondBranch):
        raise ValueError(f"block {block} does not end in a conditional branch")

    slots = [MISSING_TOKEN] * TREE_SLOTS

    def tokenize(op: Operand, depth: int):
        if isinstance(op, int):
            return const_token(op, const_threshold), None
        if isinstance(op, Arg):
            return VAR_TOKEN, None
        instr = f.instruction(op.id)
        if instr.opcode is Opcode.CONST:
            value = instr.operands[0] if instr.operands else 0
            if isinstance(value, int):
                return const_token(value, const_threshold), None
            return CONST_UNKNOWN_TOKEN, None
        if instr.opcode is Opcode.VAR:
            return VAR_TOKEN, None
        if depth >= 2:
            return VAR_TOKEN, None
        return opcode_token(instr.opcode, instr.predicate), instr

    def fill(slot: int, op: Operand, depth: int) -> None:
        token, instr = tokenize(op, depth)
        slots[slot] = token
        if instr is not None and depth < 2:
            left, right = _CHILD[slot]
            for child_slot, operand in zip((left, right), instr.operands[:2]):
                fill(child_slot, operand, depth + 1)

    fill(0, term.cond, 0)
    return ExprTree(tuple(slots))


@dataclass(frozen=True)
class RawFeatures:
    expr: ExprTree
    taken_callee: str | None
    nottaken_callee: str | None
    taken_callee_attrs: frozenset[str]
    nottaken_callee_attrs: frozenset[str]
    cfg_shape: str
    loop_depth: int
    loop_blocks: int
    loop_exit_blocks: int
    loop_exit_edges: int
    taken_edge_rel: EdgeLoopRelation
    nottaken_edge_rel: EdgeLoopRelation
    fn_insts: int
    fn_blocks: int
    fn_edges: int
    file_name: str

    def numeric_values(self) -> tuple[float, ...]:
        return (
            float(self.loop_depth),
            float(self.loop_blocks),
            float(self.loop_exit_blocks),
            float(self.loop_exit_edges),
            float(self.fn_insts),
            float(self.fn_blocks),
            float(self.fn_edges),
        )


def _dominant_callee(f: IrFunction, blocks: set[int]) -> tuple[str | None, frozenset[str]]:
    """Most frequent callee (by static call-site count) in the given blocks.

    Ties break lexicographically; the attribute set is the union over the
    winning callee's call sites.
    """
    counts: Counter[str] = Counter()
    attrs: dict[str, set[str]] = {}
    for bid in blocks:
        for instr in f.block(bid).instructions:
            if instr.opcode is Opcode.CALL:
                counts[instr.callee_name] += 1
                attrs.setdefault(instr.callee_name, set()).update(instr.callee_attrs)
    if not counts:
        return None, frozenset()
    winner = min(counts, key=lambda name: (-counts[name], name))
    return winner, frozenset(attrs[winner])


def _cfg_shape(f: IrFunction, term: CondBranch) -> str:
    succ_t = f.successors(term.taken)
    succ_nt = f.successors(term.nottaken)
    if succ_t == (term.nottaken,):
        return "triangle_taken"
    if succ_nt == (term.taken,):
        return "triangle_nottaken"
    if len(succ_t) == 1 and succ_t == succ_nt:
        return "diamond"
    return "other"


def extract_features(
    f: IrFunction,
    block: int,
    analyses: CfgAnalyses,
    const_threshold: int = 64,
) -> RawFeatures:
    term = f.block(block).terminator
    if not isinstance(term, CondBranch):
        raise ValueError(f"block {block} does not end in a conditional branch")

    taken_edge, nottaken_edge = branch_edges(f, block)
    taken_callee, taken_attrs = _dominant_callee(f, analyses.control_dependent(taken_edge))
    nottaken_callee, nottaken_attrs = _dominant_callee(f, analyses.control_dependent(nottaken_edge))

    loop_idx = analyses.loops.innermost(block)
    if loop_idx is None:
        depth = blocks = exit_blocks = exit_edges = 0
    else:
        loop = analyses.loops.loops[loop_idx]
        depth = loop.depth
        blocks = len(loop.body)
        exit_blocks = len(loop.exit_blocks)
        exit_edges = len(loop.exit_edges)

    return RawFeatures(
        expr=extract_dataflow_tree(f, block, const_threshold),
        taken_callee=taken_callee,
        nottaken_callee=nottaken_callee,
        taken_callee_attrs=taken_attrs,
        nottaken_callee_attrs=nottaken_attrs,
        cfg_shape=_cfg_shape(f, term),
        loop_depth=depth,
        loop_blocks=blocks,
        loop_exit_blocks=exit_blocks,
        loop_exit_edges=exit_edges,
        taken_edge_rel=analyses.edge_relation(taken_edge),
        nottaken_edge_rel=analyses.edge_relation(nottaken_edge),
        fn_insts=f.num_instructions(),
        fn_blocks=len(f.blocks),
        fn_edges=f.num_edges(),
        file_name=f.file_name,
    )


@dataclass(frozen=True)
class EmbedSpec:
    callee_dim: int = 8
    file_dim: int = 8
    min_count: int = 2


@dataclass
class Encoder:
    """Fitted feature encoder: numeric statistics, vocabularies, and the
    fixed one-hot layout. Zero-variance numerics keep their slot in the
    statistics arrays (std 0) but are dropped from the dense layout."""

    const_threshold: int
    embed_spec: EmbedSpec
    numeric_means: np.ndarray  # aligned with NUMERIC_FEATURES
    numeric_stds: np.ndarray  # 0.0 marks a dropped feature
    callee_vocab: dict[str, int]  # name -> index, dense from 1
    file_vocab: dict[str, int]

    def __post_init__(self):
        self.tokens = token_universe(self.const_threshold)
        self._token_index = {t: i for i, t in enumerate(self.tokens)}
        self.active_numerics = tuple(
            i for i in range(len(NUMERIC_FEATURES)) if self.numeric_stds[i] > 0.0
        )
        self.dropped_numerics = tuple(
            NUMERIC_FEATURES[i] for i in range(len(NUMERIC_FEATURES))
            if self.numeric_stds[i] == 0.0
        )
        # One-hot group sizes, in dense-layout order after the numerics.
        ntok = len(self.tokens)
        group_sizes = [ntok] * TREE_SLOTS
        group_sizes.append(len(CFG_SHAPES))
        group_sizes.extend([len(EDGE_RELATIONS)] * 2)
        group_sizes.extend([2] * (2 * len(ATTR_FLAGS)))
        offsets = []
        at = len(self.active_numerics)
        for size in group_sizes:
            offsets.append(at)
            at += size
        self.group_sizes = tuple(group_sizes)
        self.group_offsets = tuple(offsets)
        self.dense_len = at

    def token_index(self, token: str) -> int:
        idx = self._token_index.get(token)
        if idx is None:
            if token.startswith("#"):
                # Constant outside this encoder's threshold: unknown constant.
                return self._token_index[CONST_UNKNOWN_TOKEN]
            raise KeyError(f"unknown expression token {token!r}")
        return idx

    def group_indices(self, raw: RawFeatures) -> tuple[int, ...]:
        """Selected category per one-hot group, in layout order."""
        out = [self.token_index(t) for t in raw.expr.slots]
        out.append(CFG_SHAPES.index(raw.cfg_shape))
        out.append(EDGE_RELATIONS.index(raw.taken_edge_rel.value))
        out.append(EDGE_RELATIONS.index(raw.nottaken_edge_rel.value))
        for attrset in (raw.taken_callee_attrs, raw.nottaken_callee_attrs):
            out.extend(int(flag in attrset) for flag in ATTR_FLAGS)
        return tuple(out)

    def embed_indices(self, raw: RawFeatures) -> tuple[int, int, int]:
        return (
            self.callee_vocab.get(raw.taken_callee, 0) if raw.taken_callee else 0,
            self.callee_vocab.get(raw.nottaken_callee, 0) if raw.nottaken_callee else 0,
            self.file_vocab.get(raw.file_name, 0),
        )

    def standardized_numerics(self, raw: RawFeatures) -> np.ndarray:
        values = np.asarray(raw.numeric_values())
        out = np.empty(len(self.active_numerics))
        for pos, i in enumerate(self.active_numerics):
            out[pos] = (values[i] - self.numeric_means[i]) / self.numeric_stds[i]
        return out


@dataclass(frozen=True)
class EncodedExample:
    dense: np.ndarray
    embed_indices: tuple[int, int, int]  # (taken callee, nottaken callee, file)


def _build_vocab(counts: Counter[str], min_count: int) -> dict[str, int]:
    kept = sorted((n for n, c in counts.items() if c >= min_count),
                  key=lambda n: (-counts[n], n))
    return {name: i for i, name in enumerate(kept, start=1)}


def fit_encoder(
    examples: list[RawFeatures],
    embed_spec: EmbedSpec = EmbedSpec(),
    const_threshold: int = 64,
) -> Encoder:
    """Fit numeric statistics (population std) and string vocabularies.

    Strings seen fewer than embed_spec.min_count times fall back to the
    reserved out-of-vocab index 0.
    """
    if not examples:
        raise EmptyDataset("cannot fit an encoder on an empty example list")
    values = np.asarray([raw.numeric_values() for raw in examples])
    means = values.mean(axis=0)
    stds = values.std(axis=0)  # population std

    callee_counts: Counter[str] = Counter()
    file_counts: Counter[str] = Counter()
    for raw in examples:
        if raw.taken_callee:
            callee_counts[raw.taken_callee] += 1
        if raw.nottaken_callee:
            callee_counts[raw.nottaken_callee] += 1
        file_counts[raw.file_name] += 1

    return Encoder(
        const_threshold=const_threshold,
        embed_spec=embed_spec,
        numeric_means=means,
        numeric_stds=stds,
        callee_vocab=_build_vocab(callee_counts, embed_spec.min_count),
        file_vocab=_build_vocab(file_counts, embed_spec.min_count),
    )


def encode(encoder: Encoder, raw: RawFeatures) -> EncodedExample:
    """Deterministically encode one example with the fitted statistics."""
    dense = np.zeros(encoder.dense_len)
    numerics = encoder.standardized_numerics(raw)
    dense[: len(numerics)] = numerics
    for offset, idx in zip(encoder.group_offsets, encoder.group_indices(raw)):
        dense[offset + idx] = 1.0
    return EncodedExample(dense=dense, embed_indices=encoder.embed_indices(raw))


@dataclass
class CompiledExamples:
    """Vectorized encoding of many examples for fast batched access."""

    numerics: np.ndarray  # (n, active numerics), already standardized
    group_idx: np.ndarray  # (n, groups) selected category per group
    embed_idx: np.ndarray  # (n, 3)
    dense_len: int
    group_offsets: np.ndarray

    def __len__(self) -> int:
        return self.numerics.shape[0]

    def dense_batch(self, rows: np.ndarray) -> np.ndarray:
        dense = np.zeros((len(rows), self.dense_len))
        k = self.numerics.shape[1]
        dense[:, :k] = self.numerics[rows]
        cols = self.group_offsets[None, :] + self.group_idx[rows]
        dense[np.arange(len(rows))[:, None], cols] = 1.0
        return dense


def compile_examples(encoder: Encoder, raws: list[RawFeatures]) -> CompiledExamples:
    n = len(raws)
    numerics = np.zeros((n, len(encoder.active_numerics)))
    group_idx = np.zeros((n, len(encoder.group_sizes)), dtype=np.int64)
    embed_idx = np.zeros((n, 3), dtype=np.int64)
    for i, raw in enumerate(raws):
        numerics[i] = encoder.standardized_numerics(raw)
        group_idx[i] = encoder.group_indices(raw)
        embed_idx[i] = encoder.embed_indices(raw)
    return CompiledExamples(
        numerics=numerics,
        group_idx=group_idx,
        embed_idx=embed_idx,
        dense_len=encoder.dense_len,
        group_offsets=np.asarray(encoder.group_offsets, dtype=np.int64),
    )
