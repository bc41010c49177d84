"""Synthetic IR corpus with planted branch behaviors, plus a profiling
executor that random-walks the CFG to produce taken/not-taken counts.

The generator only builds reducible, structured control flow. Branch
behavior is planted so that features carry real signal:

* branches guarding cold-pool calls are almost never taken toward the call;
* loop continuation probability is m/(m+1) for a per-loop trip count m drawn
  geometrically, and m appears as a constant in the loop condition;
* null-style compares (load against zero) are biased toward "not null";
* generic compares draw from a bimodal Beta, and most of them leak their
  bias through a bound constant: `x < #k` runs hot proportionally to k while
  `x > #k` runs cold proportionally to k, an interaction a linear model
  cannot capture from one-hot inputs alone.

A configurable slice of generic branches stays opaque, which sets the noise
floor a predictor cannot cross.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .ir import (
    Arg,
    BasicBlock,
    CondBranch,
    Instruction,
    IrFunction,
    IrModule,
    Jump,
    Opcode,
    Ref,
    Return,
    branch_id,
    build_function_mapped,
)

WALK_STEP_CAP = 10_000

COLD_CALLEES = ("log_error", "report_failure", "abort_now", "dump_state", "raise_oom")
HOT_CALLEES = ("process_item", "update_state", "emit_value", "advance_cursor", "refresh_cache")
UTILITY_CALLEES = ("trace_span", "note_event", "checksum", "swap_buffers", "touch_page", "yield_hint")

_FILE_STEMS = ("parser", "runtime", "codec", "sched", "netio", "alloc", "index",
               "cache", "graph", "filter", "vector", "string")


class InvalidConfig(Exception):
    pass


@dataclass(frozen=True)
class SynthConfig:
    n_functions: int = 100
    seed: int = 0
    loop_prob: float = 0.5
    max_loop_depth: int = 2
    error_path_prob: float = 0.3
    cold_callee_pool: tuple[str, ...] = COLD_CALLEES
    hot_callee_pool: tuple[str, ...] = HOT_CALLEES
    trip_count_mean: float = 6.0
    trials_per_function: int = 10_000
    beta_shape: float = 0.4
    const_hint_prob: float = 0.85
    n_files: int = 24
    functions_per_module: int = 50

    def validate(self) -> None:
        if self.n_functions <= 0:
            raise InvalidConfig("n_functions must be positive")
        for name in ("loop_prob", "error_path_prob", "const_hint_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise InvalidConfig(f"{name} must be in [0,1], got {v}")
        if not 0 <= self.max_loop_depth <= 3:
            raise InvalidConfig("max_loop_depth must be in 0..3")
        if not self.cold_callee_pool or not self.hot_callee_pool:
            raise InvalidConfig("callee pools must be non-empty")
        if self.trip_count_mean < 1.0:
            raise InvalidConfig("trip_count_mean must be at least 1")
        if self.trials_per_function < 0:
            raise InvalidConfig("trials_per_function must be nonnegative")
        if self.beta_shape <= 0.0:
            raise InvalidConfig("beta_shape must be positive")
        if self.n_files <= 0 or self.functions_per_module <= 0:
            raise InvalidConfig("n_files and functions_per_module must be positive")


@dataclass
class GroundTruth:
    """Latent taken-probability per branch, keyed by branch id."""

    probs: dict[str, float] = field(default_factory=dict)

    def validate(self) -> None:
        for key, p in self.probs.items():
            if not 0.0 < p < 1.0:
                raise InvalidConfig(f"latent probability for {key} out of (0,1): {p}")


_CONST_SCALE = 64  # bound constants live in [0, 64]; matches the encoder default


def _file_pool(n_files: int) -> list[str]:
    pool = []
    for i in range(n_files):
        stem = _FILE_STEMS[i % len(_FILE_STEMS)]
        if i % 3 == 2:
            pool.append(f"include/{stem}_{i:02d}.h")
        else:
            pool.append(f"src/{stem}_{i:02d}.cc")
    return pool


class _FnBuilder:
    """Accumulates blocks with temporary ids; values are referenced only from
    dominating scope so the rebuilt function always passes def-before-use."""

    def __init__(self, config: SynthConfig, rng: np.random.Generator, n_args: int):
        self.config = config
        self.rng = rng
        self.blocks: list[BasicBlock] = []
        self.next_instr = 0
        self.latents: dict[int, float] = {}  # temp block id -> taken latent
        self.args = [Arg(i) for i in range(n_args)]

    def new_block(self) -> BasicBlock:
        b = BasicBlock(len(self.blocks), [], Return())
        self.blocks.append(b)
        return b

    def emit(self, block: BasicBlock, opcode: Opcode, predicate=None, operands=(),
             callee=None, attrs=frozenset()) -> Ref:
        instr = Instruction(self.next_instr, opcode, predicate, tuple(operands), callee, attrs)
        block.instructions.append(instr)
        self.next_instr += 1
        return Ref(instr.id)

    def set_branch(self, block: BasicBlock, cond, taken: int, nottaken: int,
                   latent: float, expect=None) -> None:
        block.terminator = CondBranch(cond, taken, nottaken, expect)
        self.latents[block.id] = float(np.clip(latent, 1e-3, 1.0 - 1e-3))

    # -- value/condition helpers ------------------------------------------

    def pick_value(self, block: BasicBlock, scope: list):
        usable = self.args + scope
        if usable and self.rng.random() < 0.8:
            return usable[self.rng.integers(len(usable))]
        return self.emit(block, Opcode.VAR)

    def arith(self, block: BasicBlock, scope: list) -> Ref:
        op = (Opcode.ADD, Opcode.SUB, Opcode.MUL, Opcode.AND, Opcode.OR,
              Opcode.XOR, Opcode.SHL, Opcode.SHR)[self.rng.integers(8)]
        a = self.pick_value(block, scope)
        if self.rng.random() < 0.4:
            b = int(self.rng.integers(0, 16))
        else:
            b = self.pick_value(block, scope)
        return self.emit(block, op, operands=(a, b))

    def plain_statements(self, block: BasicBlock, scope: list) -> None:
        for _ in range(int(self.rng.integers(1, 4))):
            if self.rng.random() < 0.2:
                src = self.pick_value(block, scope)
                scope.append(self.emit(block, Opcode.LOAD, operands=(src,)))
            else:
                scope.append(self.arith(block, scope))

    def revealing_condition(self, block: BasicBlock, scope: list, latent: float) -> Ref:
        """Compare against a constant that encodes the latent probability.

        `x < #k` gets k = round(latent * scale); `x > #k` inverts the
        mapping. The two forms force a predicate/constant interaction.
        """
        x = self.pick_value(block, scope)
        if self.rng.random() < 0.35:
            x = self.emit(block, Opcode.ADD, operands=(x, int(self.rng.integers(0, 4))))
        if self.rng.random() < 0.5:
            k = int(round(latent * _CONST_SCALE))
            pred = "ult" if self.rng.random() < 0.5 else "slt"
        else:
            k = int(round((1.0 - latent) * _CONST_SCALE))
            pred = "ugt" if self.rng.random() < 0.5 else "sgt"
        return self.emit(block, Opcode.ICMP, predicate=pred, operands=(x, k))

    def opaque_condition(self, block: BasicBlock, scope: list) -> Ref:
        kind = self.rng.random()
        a = self.pick_value(block, scope)
        if kind < 0.3:
            b = self.pick_value(block, scope)
            pred = ("slt", "sle", "sge", "ne", "eq")[self.rng.integers(5)]
            return self.emit(block, Opcode.ICMP, predicate=pred, operands=(a, b))
        if kind < 0.5:
            return self.emit(block, Opcode.FCMP, predicate=("olt", "ogt")[self.rng.integers(2)],
                             operands=(a, self.pick_value(block, scope)))
        # Compare against a pool constant unrelated to the latent bias.
        k = int((1, 2, 3, 4, 8, 10, 16, 32)[self.rng.integers(8)])
        pred = ("slt", "sle", "sgt", "sge", "ne")[self.rng.integers(5)]
        return self.emit(block, Opcode.ICMP, predicate=pred, operands=(a, k))

    def null_condition(self, block: BasicBlock, scope: list) -> tuple[Ref, float]:
        """Null-style check: equality of a loaded value against zero."""
        loaded = self.emit(block, Opcode.LOAD, operands=(self.pick_value(block, scope),))
        true_is_null = self.rng.random() < 0.7
        pred = "eq" if true_is_null else "ne"
        if self.rng.random() < 0.5:
            cond = self.emit(block, Opcode.ICMP, predicate=pred, operands=(loaded, 0))
        else:
            cond = self.emit(block, Opcode.ICMP, predicate=pred, operands=(0, loaded))
        p_null = float(self.rng.uniform(0.02, 0.2))
        return cond, (p_null if true_is_null else 1.0 - p_null)

    def side_content(self, block: BasicBlock, scope: list, callee=None, attrs=frozenset()) -> None:
        local = list(scope)
        if self.rng.random() < 0.5:
            local.append(self.arith(block, local))
        if callee is not None:
            n_call_args = int(self.rng.integers(0, 3))
            operands = tuple(self.pick_value(block, local) for _ in range(n_call_args))
            self.emit(block, Opcode.CALL, operands=operands, callee=callee, attrs=attrs)


def _generate_function(config: SynthConfig, index: int, file_name: str) -> tuple[IrFunction, dict[str, float]]:
    rng = np.random.default_rng([config.seed, 11, index])
    fb = _FnBuilder(config, rng, n_args=int(rng.integers(2, 6)))

    entry = fb.new_block()
    scope: list = []
    budget = int(rng.integers(10, 26))  # rough number of constructs
    exit_block = _fill_region(fb, entry, scope, budget, loop_depth=0)
    exit_block.terminator = Return()

    fn, block_map = build_function_mapped(f"fn_{index:05d}", file_name, fb.blocks)
    latents = {branch_id(fn, block_map[b]): p for b, p in fb.latents.items()}
    return fn, latents


def _fill_region(fb: _FnBuilder, block: BasicBlock, scope: list, budget: int,
                 loop_depth: int, loop_break_target: int | None = None) -> BasicBlock:
    """Emit `budget` constructs starting in `block`; returns the block where
    control continues. Only values from dominating blocks enter `scope`."""
    rng = fb.rng
    cfg = fb.config
    cur = block
    for _ in range(budget):
        roll = rng.random()
        if roll < 0.22:
            fb.plain_statements(cur, scope)
        elif roll < 0.22 + cfg.loop_prob * 0.22 and loop_depth < cfg.max_loop_depth:
            cur = _loop(fb, cur, scope, loop_depth)
        elif roll < 0.55:
            cur = _generic_branch(fb, cur, scope, loop_depth, loop_break_target)
        elif roll < 0.55 + cfg.error_path_prob * 0.35:
            cur = _cold_guard(fb, cur, scope)
        elif roll < 0.80:
            cur = _hot_guard(fb, cur, scope)
        elif roll < 0.90:
            cur = _null_guard(fb, cur, scope)
        else:
            cur = _early_return(fb, cur, scope)
    return cur


def _latent_generic(fb: _FnBuilder) -> float:
    p = float(fb.rng.beta(fb.config.beta_shape, fb.config.beta_shape))
    return float(np.clip(p, 1e-3, 1.0 - 1e-3))


def _condition_for(fb: _FnBuilder, block: BasicBlock, scope: list, latent: float) -> Ref:
    if fb.rng.random() < fb.config.const_hint_prob:
        return fb.revealing_condition(block, scope, latent)
    return fb.opaque_condition(block, scope)


def _generic_branch(fb: _FnBuilder, cur: BasicBlock, scope: list, loop_depth: int,
                    loop_break_target: int | None) -> BasicBlock:
    rng = fb.rng
    merge = fb.new_block()

    if loop_break_target is not None and rng.random() < 0.15:
        # Early loop exit: jump out of the loop on a rare condition.
        p_break = float(rng.uniform(0.01, 0.08))
        break_on_taken = rng.random() < 0.5
        latent_taken = p_break if break_on_taken else 1.0 - p_break
        cond = _condition_for(fb, cur, scope, latent_taken)
        if break_on_taken:
            fb.set_branch(cur, cond, loop_break_target, merge.id, latent_taken)
        else:
            fb.set_branch(cur, cond, merge.id, loop_break_target, latent_taken)
        return merge

    latent = _latent_generic(fb)
    cond = _condition_for(fb, cur, scope, latent)
    if rng.random() < 0.45:  # diamond
        left = fb.new_block()
        right = fb.new_block()
        fb.side_content(left, scope, _maybe_utility(fb))
        fb.side_content(right, scope, _maybe_utility(fb))
        left.terminator = Jump(merge.id)
        right.terminator = Jump(merge.id)
        fb.set_branch(cur, cond, left.id, right.id, latent)
    else:  # triangle, short-circuit side chosen by a coin
        side = fb.new_block()
        fb.side_content(side, scope, _maybe_utility(fb))
        side.terminator = Jump(merge.id)
        if rng.random() < 0.5:
            fb.set_branch(cur, cond, side.id, merge.id, latent)
        else:
            fb.set_branch(cur, cond, merge.id, side.id, latent)
    return merge


def _maybe_utility(fb: _FnBuilder):
    if fb.rng.random() < 0.35:
        return UTILITY_CALLEES[fb.rng.integers(len(UTILITY_CALLEES))]
    return None


def _cold_guard(fb: _FnBuilder, cur: BasicBlock, scope: list) -> BasicBlock:
    rng = fb.rng
    cfg = fb.config
    p_cold = float(rng.uniform(0.001, 0.05))
    callee = cfg.cold_callee_pool[rng.integers(len(cfg.cold_callee_pool))]
    attrs = frozenset({"cold"} | ({"noinline"} if rng.random() < 0.5 else set()))

    cold_block = fb.new_block()
    merge = fb.new_block()
    fb.side_content(cold_block, scope, callee, attrs)
    cold_block.terminator = Jump(merge.id)

    cold_on_taken = rng.random() < 0.5
    latent_taken = p_cold if cold_on_taken else 1.0 - p_cold
    cond = _condition_for(fb, cur, scope, latent_taken)
    expect = None
    if rng.random() < 0.05:
        expect = "nottaken" if cold_on_taken else "taken"
    if cold_on_taken:
        fb.set_branch(cur, cond, cold_block.id, merge.id, latent_taken, expect)
    else:
        fb.set_branch(cur, cond, merge.id, cold_block.id, latent_taken, expect)
    return merge


def _hot_guard(fb: _FnBuilder, cur: BasicBlock, scope: list) -> BasicBlock:
    rng = fb.rng
    cfg = fb.config
    p_hot = float(rng.uniform(0.75, 0.99))
    callee = cfg.hot_callee_pool[rng.integers(len(cfg.hot_callee_pool))]
    attrs = frozenset({"inline"} if rng.random() < 0.4 else set())

    hot_block = fb.new_block()
    merge = fb.new_block()
    fb.side_content(hot_block, scope, callee, attrs)
    hot_block.terminator = Jump(merge.id)

    hot_on_taken = rng.random() < 0.7
    latent_taken = p_hot if hot_on_taken else 1.0 - p_hot
    cond = _condition_for(fb, cur, scope, latent_taken)
    if hot_on_taken:
        fb.set_branch(cur, cond, hot_block.id, merge.id, latent_taken)
    else:
        fb.set_branch(cur, cond, merge.id, hot_block.id, latent_taken)
    return merge


def _null_guard(fb: _FnBuilder, cur: BasicBlock, scope: list) -> BasicBlock:
    rng = fb.rng
    cond, latent = fb.null_condition(cur, scope)
    side = fb.new_block()
    merge = fb.new_block()
    if latent < 0.5 and rng.random() < 0.6:
        callee = fb.config.cold_callee_pool[rng.integers(len(fb.config.cold_callee_pool))]
        fb.side_content(side, scope, callee, frozenset({"cold"}))
    else:
        fb.side_content(side, scope, _maybe_utility(fb))
    side.terminator = Jump(merge.id)
    fb.set_branch(cur, cond, side.id, merge.id, latent)
    return merge


def _early_return(fb: _FnBuilder, cur: BasicBlock, scope: list) -> BasicBlock:
    rng = fb.rng
    p_ret = float(rng.uniform(0.01, 0.15))
    ret_block = fb.new_block()
    merge = fb.new_block()
    if rng.random() < 0.5:
        callee = fb.config.cold_callee_pool[rng.integers(len(fb.config.cold_callee_pool))]
        fb.side_content(ret_block, scope, callee, frozenset({"cold"}))
    ret_block.terminator = Return()
    ret_on_taken = rng.random() < 0.5
    latent_taken = p_ret if ret_on_taken else 1.0 - p_ret
    cond = _condition_for(fb, cur, scope, latent_taken)
    if ret_on_taken:
        fb.set_branch(cur, cond, ret_block.id, merge.id, latent_taken)
    else:
        fb.set_branch(cur, cond, merge.id, ret_block.id, latent_taken)
    return merge


def _trip_count(fb: _FnBuilder) -> int:
    m = int(fb.rng.geometric(1.0 / fb.config.trip_count_mean))
    return max(1, min(m, _CONST_SCALE))


def _loop_condition(fb: _FnBuilder, block: BasicBlock, scope: list, m: int) -> Ref:
    """Loop bound check; the trip count m is visible as the bound constant."""
    counter = fb.pick_value(block, scope)
    stepped = fb.emit(block, Opcode.ADD, operands=(counter, 1))
    pred = "slt" if fb.rng.random() < 0.7 else "ult"
    return fb.emit(block, Opcode.ICMP, predicate=pred, operands=(stepped, m))


def _loop(fb: _FnBuilder, cur: BasicBlock, scope: list, loop_depth: int) -> BasicBlock:
    rng = fb.rng
    m = _trip_count(fb)
    p_continue = m / (m + 1.0)
    after = fb.new_block()
    inner_budget = int(rng.integers(1, 4))

    if rng.random() < 0.5:
        # Top-test loop: the header decides between body and exit.
        header = fb.new_block()
        cur.terminator = Jump(header.id)
        header_scope = list(scope)
        phi = fb.emit(header, Opcode.PHI, operands=(fb.pick_value(header, header_scope), 0))
        header_scope.append(phi)
        cond = _loop_condition(fb, header, header_scope, m)
        body = fb.new_block()
        body_end = _fill_region(fb, body, list(header_scope), inner_budget,
                                loop_depth + 1, loop_break_target=after.id)
        body_end.terminator = Jump(header.id)
        fb.set_branch(header, cond, body.id, after.id, p_continue)
    else:
        # Bottom-test loop: the latch jumps back on continue.
        body = fb.new_block()
        cur.terminator = Jump(body.id)
        body_scope = list(scope)
        fb.plain_statements(body, body_scope)
        latch_end = _fill_region(fb, body, body_scope, max(0, inner_budget - 1),
                                 loop_depth + 1, loop_break_target=after.id)
        cond = _loop_condition(fb, latch_end, body_scope, m)
        fb.set_branch(latch_end, cond, body.id, after.id, p_continue)
    return after


def generate_module(config: SynthConfig, start_index: int = 0,
                    name: str = "module_0000") -> tuple[IrModule, GroundTruth]:
    """Deterministic module of config.n_functions functions.

    Function content depends only on (config.seed, start_index + position),
    so chunked corpus generation and single-module generation agree.
    """
    config.validate()
    files = _file_pool(config.n_files)
    functions = []
    gt = GroundTruth()
    for j in range(config.n_functions):
        index = start_index + j
        file_rng = np.random.default_rng([config.seed, 7, index])
        fn, latents = _generate_function(config, index, files[file_rng.integers(len(files))])
        functions.append(fn)
        gt.probs.update(latents)
    gt.validate()
    return IrModule(name, functions), gt


def generate_corpus(config: SynthConfig):
    """Yield (module, ground truth) chunks of functions_per_module functions."""
    config.validate()
    start = 0
    chunk_index = 0
    while start < config.n_functions:
        count = min(config.functions_per_module, config.n_functions - start)
        sub = replace(config, n_functions=count)
        module, gt = generate_module(sub, start_index=start, name=f"module_{chunk_index:04d}")
        yield module, gt
        start += count
        chunk_index += 1


def simulate_function(fn: IrFunction, probs: dict[int, float], trials: int,
                      rng: np.random.Generator):
    """Lockstep random walks from entry; returns per-block (taken, nottaken,
    visits) arrays. Each surviving trial advances one block per step and is
    cut off at the step cap; whatever it tallied still counts."""
    n = len(fn.blocks)
    kind = np.zeros(n, dtype=np.int64)  # 0=return 1=jump 2=branch
    tgt_taken = np.zeros(n, dtype=np.int64)
    tgt_nottaken = np.zeros(n, dtype=np.int64)
    p_taken = np.zeros(n)
    for b in fn.blocks:
        t = b.terminator
        if isinstance(t, CondBranch):
            kind[b.id] = 2
            tgt_taken[b.id] = t.taken
            tgt_nottaken[b.id] = t.nottaken
            p_taken[b.id] = probs[b.id]
        elif isinstance(t, Jump):
            kind[b.id] = 1
            tgt_taken[b.id] = t.target

    taken = np.zeros(n, dtype=np.int64)
    nottaken = np.zeros(n, dtype=np.int64)
    visits = np.zeros(n, dtype=np.int64)
    state = np.full(trials, fn.entry, dtype=np.int64)
    for _ in range(WALK_STEP_CAP):
        if state.size == 0:
            break
        np.add.at(visits, state, 1)
        k = kind[state]
        draws = rng.random(state.size)
        is_branch = k == 2
        go_taken = draws < p_taken[state]
        np.add.at(taken, state[is_branch & go_taken], 1)
        np.add.at(nottaken, state[is_branch & ~go_taken], 1)
        nxt = np.where(go_taken | (k == 1), tgt_taken[state], tgt_nottaken[state])
        state = nxt[k != 0]
    return taken, nottaken, visits


def profile_module(module: IrModule, ground_truth: GroundTruth, trials: int,
                   seed: int) -> dict[str, tuple[int, int]]:
    """Simulated profile counts for every conditional branch in the module."""
    counts: dict[str, tuple[int, int]] = {}
    for fi, fn in enumerate(module.functions):
        probs = {}
        for b in fn.branch_blocks():
            key = branch_id(fn, b.id)
            if key not in ground_truth.probs:
                raise InvalidConfig(f"ground truth missing branch {key}")
            probs[b.id] = ground_truth.probs[key]
        rng = np.random.default_rng([seed, 13, fi])
        taken, nottaken, _ = simulate_function(fn, probs, trials, rng)
        for b in fn.branch_blocks():
            counts[branch_id(fn, b.id)] = (int(taken[b.id]), int(nottaken[b.id]))
    return counts
