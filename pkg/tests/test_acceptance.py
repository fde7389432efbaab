"""Ten end-to-end acceptance criteria; each prints one PASS/FAIL line in the terminal summary."""

import contextlib
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import ACCEPTANCE_RESULTS, grid_from_values, random_grid
from mgtc.baselines import random_mask, tube_mask
from mgtc.demo import DEMO_STEPS, run_direction_demo
from mgtc.errors import FeasibilityError
from mgtc.flops import PRESETS, estimate_flops, savings_report
from mgtc.masking import TokenMask, compute_residuals, masked_count, mgtc_mask
from mgtc.stats_report import kept_motion_energy_fraction, residual_histogram
from mgtc.synthetic import corpus, moving_block_clip, motion_touched
from mgtc.tokenizer import CubeShape, tokenize
from mgtc.toy_transformer import forward, full_batch, grad_check, init_params, make_batch
from oracles import naive_masked_set
from test_toy_transformer import ONE_BLOCK, SMALL, oracle_logits

GOLDEN = Path(__file__).parent / "golden"


@contextlib.contextmanager
def criterion(number, title):
    start = time.perf_counter()
    try:
        yield
    except BaseException:
        ACCEPTANCE_RESULTS.append(f"[FAIL] AC{number} {title}")
        raise
    ACCEPTANCE_RESULTS.append(f"[PASS] AC{number} {title} ({time.perf_counter() - start:.2f}s)")


def test_ac1_flops_anchors():
    anchors = [("vit-b", 1568, 180), ("vit-b", 1176, 127), ("vit-b", 3136, 451), ("vit-b", 2822, 392),
               ("vit-l", 1568, 597), ("vit-l", 784, 269)]
    with criterion(1, "FLOPs anchors within 3%"):
        for preset, tokens, expected in anchors:
            got = estimate_flops(PRESETS[preset], tokens).total_gflops
            assert abs(got - expected) / expected <= 0.03, (preset, tokens, got)


def test_ac2_compute_saving():
    with criterion(2, "ViT-B saving at ratio 0.25 in [0.28, 0.32]"):
        saving = savings_report(PRESETS["vit-b"], 1568, 0.25)["relative_saving"]
        assert 0.28 <= saving <= 0.32, saving


def test_ac3_ratio_exactness():
    rng = np.random.default_rng(3)
    feasible = infeasible = 0
    with criterion(3, "mask-ratio exactness over 200 random (grid, ratio) pairs"):
        for _ in range(200):
            t, rows, cols = rng.integers(1, 7), rng.integers(1, 5), rng.integers(1, 5)
            grid = random_grid(rng, t, rows, cols, levels=int(rng.integers(2, 256)))
            ratio = float(rng.uniform(0, 0.999))
            k = masked_count(ratio, grid.L)
            assert k == int(np.floor(ratio * grid.L + 0.5))
            if k <= grid.L - grid.s_blocks:
                mask = mgtc_mask(grid, ratio, mode=str(rng.choice(["eval", "train"])), seed=int(rng.integers(2**32)))
                assert mask.num_masked == k
                feasible += 1
            else:
                with pytest.raises(FeasibilityError):
                    mgtc_mask(grid, ratio)
                infeasible += 1
        assert feasible > 100 and infeasible > 0


def test_ac4_key_frame_and_monotonicity():
    rng = np.random.default_rng(4)
    with criterion(4, "key frame never masked; masked sets nested in ratio"):
        for _ in range(150):
            grid = random_grid(rng, rng.integers(1, 7), rng.integers(1, 4), rng.integers(1, 4), levels=4)
            mode = str(rng.choice(["eval", "train"]))
            seed = int(rng.integers(2**32))
            r1, r2 = sorted(rng.uniform(0, 0.999, size=2))
            try:
                big = mgtc_mask(grid, r2, mode=mode, seed=seed)
            except FeasibilityError:
                continue
            small = mgtc_mask(grid, r1, mode=mode, seed=seed)
            for mask in (small, big):
                assert mask.keep[mask.key_frame_index].all()
            assert small.key_frame_index == big.key_frame_index
            assert small.masked_set() <= big.masked_set()


def test_ac5_oracle_equivalence():
    rng = np.random.default_rng(5)
    checked = 0
    with criterion(5, "MGTC equals brute-force oracle on 100 clips with L <= 64"):
        while checked < 100:
            t, rows, cols = rng.integers(2, 9), rng.integers(1, 5), rng.integers(1, 5)
            if t * rows * cols > 64:
                continue
            grid = random_grid(rng, t, rows, cols, shape=(2, 2, 2), levels=int(rng.integers(2, 9)))
            ratio = float(rng.uniform(0, (grid.L - grid.s_blocks) / grid.L))
            mask = mgtc_mask(grid, ratio)
            assert mask.masked_set() == naive_masked_set(grid, ratio, mask.key_frame_index)
            checked += 1


def test_ac6_motion_retention():
    shape = CubeShape(2, 16, 16)
    with criterion(6, "motion cubes kept; MGTC kept energy >= random and tube"):
        for seed in range(5):
            clip, path = moving_block_clip(seed=seed, velocity=(1 + seed % 3, 3))
            grid = tokenize(clip, shape)
            d = compute_residuals(grid).values
            occupied = motion_touched(path, 16, (2, 16, 16), grid.t_blocks, grid.rows, grid.cols)
            last = grid.t_blocks - 1
            touched = {(i, j) for i in range(grid.t_blocks) for j in range(grid.s_blocks)
                       if {(i, j), (i + 1, j)} & occupied or (i == last and {(i - 1, j)} & occupied)}
            static = np.ones(grid.lattice, bool)
            for c in touched:
                static[c] = False
            assert d[~static].min() > d[static].max()
            key = grid.t_blocks // 2
            static_fraction = (static.sum() - static[key].sum()) / grid.L
            for ratio in sorted({0.1, 0.25, 0.5, float(static_fraction)}):
                if ratio > static_fraction:
                    continue
                mask = mgtc_mask(grid, ratio)
                assert all(mask.keep[c] for c in touched)
            for ratio in (0.1, 0.25, 0.5):
                m = mgtc_mask(grid, ratio)
                ours = kept_motion_energy_fraction(d, m.keep)
                for other in (random_mask(grid, ratio, seed, key_frame=m.key_frame_index),
                              tube_mask(grid, ratio, seed, key_frame=m.key_frame_index)):
                    assert other.keep[m.key_frame_index].all()
                    assert ours >= kept_motion_energy_fraction(d, other.keep)


def test_ac7_residual_distribution():
    shape = CubeShape(2, 16, 16)
    kw = dict(frames=8, height=64, width=64)
    with criterion(7, "near-zero fraction: static 1.0, noise < 0.01, mixtures k/(k+m) +- 0.02"):
        assert residual_histogram(corpus("static", 4, 0, **kw), shape).near_zero_fraction == 1.0
        assert residual_histogram(corpus("noise", 4, 0, **kw), shape).near_zero_fraction < 0.01
        for k, m in [(1, 1), (3, 1), (1, 3), (2, 5)]:
            clips = corpus("static", k, 10, **kw) + corpus("noise", m, 20, **kw)
            frac = residual_histogram(clips, shape).near_zero_fraction
            assert abs(frac - k / (k + m)) <= 0.02


def test_ac8_toy_numerics():
    rng = np.random.default_rng(8)
    with criterion(8, "grad check < 1e-4; subset oracle 1e-8; permutation 1e-10"):
        grid = random_grid(rng, 4, 2, 2, shape=(2, 2, 2))
        params = init_params(SMALL, grid.lattice, seed=1, token_dim=grid.token_dim)
        params = params.replace({k: v + 0.1 * rng.standard_normal(v.shape) for k, v in params.items()})
        batch = make_batch(grid, mgtc_mask(grid, 0.25))
        for target in range(3):
            assert grad_check(params, batch, target, seed=target) < 1e-4

        small = init_params(ONE_BLOCK, grid.lattice, seed=2, token_dim=grid.token_dim)
        small = small.replace({k: v + 0.2 * rng.standard_normal(v.shape) for k, v in small.items()})
        for ratio in (0.0, 0.25, 0.5):
            mask = mgtc_mask(grid, ratio)
            np.testing.assert_allclose(forward(small, make_batch(grid, mask)),
                                       oracle_logits(small, grid, mask.keep), atol=1e-8, rtol=0)

        full = full_batch(grid)
        base = forward(params, full)
        for _ in range(10):
            np.testing.assert_allclose(forward(params, full.permuted(rng.permutation(len(full)))),
                                       base, atol=1e-10, rtol=0)


def test_ac9_desk_scale_learning():
    with criterion(9, f"direction task reaches >= 95% train accuracy within {DEMO_STEPS} steps"):
        result = run_direction_demo(mask_ratio=0.5, seed=7)
        assert max(acc for _, acc in result.accuracy) >= 0.95
        assert result.final_accuracy >= 0.95


def test_ac10_determinism_and_serialization(tmp_path):
    rng = np.random.default_rng(10)
    with criterion(10, "byte-identical masks, lossless JSON, stable golden files"):
        grid = random_grid(rng, 6, 3, 3)
        for make in (lambda: mgtc_mask(grid, 0.4), lambda: mgtc_mask(grid, 0.4, mode="train", seed=5),
                     lambda: random_mask(grid, 0.4, 5), lambda: tube_mask(grid, 0.4, 5)):
            a, b = make(), make()
            a.save(tmp_path / "a.json")
            b.save(tmp_path / "b.json")
            assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
            back = TokenMask.load(tmp_path / "a.json")
            assert back == a and back.dumps() == a.dumps()
        golden_grid = grid_from_values(np.zeros((4, 32, 32)), (2, 16, 16))
        assert random_mask(golden_grid, 0.5, 2024).dumps() == (GOLDEN / "random_L8_r0.5_seed2024.json").read_text()
        assert tube_mask(golden_grid, 0.5, 2024).dumps() == (GOLDEN / "tube_s4_r0.5_seed2024.json").read_text()
