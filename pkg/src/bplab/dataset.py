"""Labeled-example production, deduplication, splitting, and CSV persistence.

Labels come from profile counts as taken/(taken+nottaken). The heuristic
estimate rides along in every example purely for later comparison; it is
never encoded as a model input.
"""

from __future__ import annotations

import csv
import random
from dataclasses import dataclass, replace

from .cfg import CfgAnalyses, EdgeLoopRelation, analyze_function
from .features import ExprTree, RawFeatures
from .heuristics import HeuristicConfig, estimate_heuristic
from .ir import IrModule, branch_id
from . import features as _features

CSV_COLUMNS = (
    "branch_id",
    "file_name",
    "expr_slot_0",
    "expr_slot_1",
    "expr_slot_2",
    "expr_slot_3",
    "expr_slot_4",
    "expr_slot_5",
    "expr_slot_6",
    "taken_callee",
    "nottaken_callee",
    "taken_attrs",
    "nottaken_attrs",
    "cfg_shape",
    "loop_depth",
    "loop_blocks",
    "loop_exit_blocks",
    "loop_exit_edges",
    "taken_edge_rel",
    "nottaken_edge_rel",
    "fn_insts",
    "fn_blocks",
    "fn_edges",
    "label",
    "sample_count",
    "heuristic_prob",
)

SPLIT_COLUMN = "split"

_REL_BY_VALUE = {r.value: r for r in EdgeLoopRelation}


class ZeroSamples(Exception):
    pass


class MalformedRow(Exception):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass(frozen=True)
class LabeledExample:
    raw: RawFeatures
    label: float
    sample_count: int
    heuristic_prob: float
    branch_id: str


def derive_label(taken: int, nottaken: int) -> float:
    if taken < 0 or nottaken < 0:
        raise ValueError("profile counts must be nonnegative")
    total = taken + nottaken
    if total == 0:
        raise ZeroSamples("branch has no profile samples")
    return taken / total


def probability_to_branch_weights(p: float) -> tuple[int, int]:
    """Scale a probability to a positive (taken, nottaken) weight pair."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"probability out of range: {p}")
    t = int(round(p * 1_000_000))
    t = min(max(t, 1), 999_999)
    return t, 1_000_000 - t


def generate_examples(
    module: IrModule,
    profile: dict[str, tuple[int, int]],
    analyses: dict[str, CfgAnalyses] | None = None,
    const_threshold: int = 64,
    heur_config: HeuristicConfig = HeuristicConfig(),
) -> list[LabeledExample]:
    """One example per profiled conditional branch with at least one sample.

    Labels are rounded to six decimals, matching the CSV representation, so
    a persisted dataset round-trips exactly.
    """
    out: list[LabeledExample] = []
    for fn in module.functions:
        fa = analyses.get(fn.name) if analyses else None
        for b in fn.branch_blocks():
            bid = branch_id(fn, b.id)
            counts = profile.get(bid)
            if counts is None or counts[0] + counts[1] == 0:
                continue
            if fa is None:
                fa = analyze_function(fn)
            raw = _features.extract_features(fn, b.id, fa, const_threshold)
            out.append(
                LabeledExample(
                    raw=raw,
                    label=round(derive_label(*counts), 6),
                    sample_count=counts[0] + counts[1],
                    heuristic_prob=round(estimate_heuristic(fn, b.id, fa, heur_config), 6),
                    branch_id=bid,
                )
            )
    return out


def dedup(examples: list[LabeledExample]) -> list[LabeledExample]:
    """Collapse rows with identical features and labels (to six decimals),
    summing their sample counts. First occurrence wins on everything else."""
    merged: dict[tuple, int] = {}
    order: list[LabeledExample] = []
    for ex in examples:
        key = (ex.raw, round(ex.label, 6))
        idx = merged.get(key)
        if idx is None:
            merged[key] = len(order)
            order.append(ex)
        else:
            kept = order[idx]
            order[idx] = replace(kept, sample_count=kept.sample_count + ex.sample_count)
    return order


def split(
    examples: list[LabeledExample], test_fraction: float = 0.10, seed: int = 0
) -> tuple[list[LabeledExample], list[LabeledExample]]:
    """Deterministic random split preserving input order within each side."""
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must be in (0,1)")
    n = len(examples)
    n_test = int(round(test_fraction * n))
    rng = random.Random(seed)
    test_idx = set(rng.sample(range(n), n_test))
    train = [ex for i, ex in enumerate(examples) if i not in test_idx]
    test = [ex for i, ex in enumerate(examples) if i in test_idx]
    return train, test


def _attrs_text(attrs: frozenset[str]) -> str:
    return ";".join(sorted(attrs))


def _row_of(ex: LabeledExample) -> list[str]:
    raw = ex.raw
    return [
        ex.branch_id,
        raw.file_name,
        *raw.expr.slots,
        raw.taken_callee or "",
        raw.nottaken_callee or "",
        _attrs_text(raw.taken_callee_attrs),
        _attrs_text(raw.nottaken_callee_attrs),
        raw.cfg_shape,
        str(raw.loop_depth),
        str(raw.loop_blocks),
        str(raw.loop_exit_blocks),
        str(raw.loop_exit_edges),
        raw.taken_edge_rel.value,
        raw.nottaken_edge_rel.value,
        str(raw.fn_insts),
        str(raw.fn_blocks),
        str(raw.fn_edges),
        f"{ex.label:.6f}",
        str(ex.sample_count),
        f"{ex.heuristic_prob:.6f}",
    ]


def write_csv(
    examples: list[LabeledExample], path, split_marks: list[str] | None = None
) -> None:
    """Write the dataset; optionally append a train/test split column."""
    if split_marks is not None and len(split_marks) != len(examples):
        raise ValueError("split_marks must align with examples")
    header = list(CSV_COLUMNS) + ([SPLIT_COLUMN] if split_marks is not None else [])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i, ex in enumerate(examples):
            row = _row_of(ex)
            if split_marks is not None:
                row.append(split_marks[i])
            writer.writerow(row)


def _example_of_row(row: list[str], line: int) -> LabeledExample:
    try:
        expr = ExprTree(tuple(row[2:9]))
        taken_rel = _REL_BY_VALUE[row[18]]
        nottaken_rel = _REL_BY_VALUE[row[19]]
        raw = RawFeatures(
            expr=expr,
            taken_callee=row[9] or None,
            nottaken_callee=row[10] or None,
            taken_callee_attrs=frozenset(a for a in row[11].split(";") if a),
            nottaken_callee_attrs=frozenset(a for a in row[12].split(";") if a),
            cfg_shape=row[13],
            loop_depth=int(row[14]),
            loop_blocks=int(row[15]),
            loop_exit_blocks=int(row[16]),
            loop_exit_edges=int(row[17]),
            taken_edge_rel=taken_rel,
            nottaken_edge_rel=nottaken_rel,
            fn_insts=int(row[20]),
            fn_blocks=int(row[21]),
            fn_edges=int(row[22]),
            file_name=row[1],
        )
        return LabeledExample(
            raw=raw,
            label=float(row[23]),
            sample_count=int(row[24]),
            heuristic_prob=float(row[25]),
            branch_id=row[0],
        )
    except (KeyError, ValueError, IndexError) as exc:
        raise MalformedRow(str(exc), line) from exc


def read_csv_with_split(path) -> tuple[list[LabeledExample], list[str] | None]:
    """Read a dataset CSV, returning split markers when the column exists."""
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise MalformedRow("missing header row", 1) from None
        has_split = False
        if tuple(header) == CSV_COLUMNS:
            pass
        elif tuple(header) == CSV_COLUMNS + (SPLIT_COLUMN,):
            has_split = True
        else:
            raise MalformedRow("unexpected header columns", 1)
        want = len(CSV_COLUMNS) + (1 if has_split else 0)
        examples: list[LabeledExample] = []
        marks: list[str] = []
        for line, row in enumerate(reader, start=2):
            if len(row) != want:
                raise MalformedRow(f"expected {want} columns, got {len(row)}", line)
            examples.append(_example_of_row(row, line))
            if has_split:
                marks.append(row[-1])
    return examples, (marks if has_split else None)


def read_csv(path) -> list[LabeledExample]:
    examples, _ = read_csv_with_split(path)
    return examples
