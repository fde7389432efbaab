import math

import numpy as np
import pytest

import mgtc.toy_transformer as tt
from conftest import random_grid
from mgtc.errors import FormatError, NumericError
from mgtc.flops import EncoderSpec
from mgtc.masking import mgtc_mask
from mgtc.toy_transformer import (
    TokenBatch,
    cross_entropy,
    forward,
    full_batch,
    grad_check,
    init_bound,
    init_params,
    load_params,
    loss_and_grads,
    make_batch,
    save_params,
    train_step,
)

SMALL = EncoderSpec(depth=2, width=16, mlp_ratio=2.0, num_classes=3, num_heads=2)
ONE_BLOCK = EncoderSpec(depth=1, width=8, mlp_ratio=2.0, num_classes=3, num_heads=2)


@pytest.fixture
def setup(rng):
    grid = random_grid(rng, 4, 2, 2, shape=(2, 2, 2))
    params = init_params(SMALL, grid.lattice, seed=3, token_dim=grid.token_dim)
    # break the zero init of positional tables and biases so every path carries gradient
    noisy = {k: v + 0.1 * rng.standard_normal(v.shape) for k, v in params.items()}
    return grid, params.replace(noisy)


def test_init_deterministic():
    a = init_params(SMALL, (4, 4), seed=1, token_dim=8)
    assert a.equal(init_params(SMALL, (4, 4), seed=1, token_dim=8))
    assert not a.equal(init_params(SMALL, (4, 4), seed=2, token_dim=8))


def test_init_scheme():
    assert init_bound(64) == 0.125
    p = init_params(EncoderSpec(1, 64, 2.0, 5), (2, 3), seed=0, token_dim=64)
    assert np.abs(p["blocks.0.w_qkv"]).max() <= 0.125
    assert np.abs(p["patch_w"]).max() <= 0.125
    assert not p["pos_t"].any() and not p["pos_s"].any()
    assert (p["blocks.0.ln1_g"] == 1).all()


def test_permutation_equivariance(setup, rng):
    grid, params = setup
    batch = full_batch(grid)
    base = forward(params, batch)
    for _ in range(5):
        np.testing.assert_allclose(forward(params, batch.permuted(rng.permutation(len(batch)))),
                                   base, atol=1e-10, rtol=0)


def test_zero_head_gives_zero_logits(setup):
    grid, params = setup
    arrays = dict(params.arrays, head_w=np.zeros_like(params["head_w"]), head_b=np.zeros_like(params["head_b"]))
    assert not forward(params.replace(arrays), full_batch(grid)).any()


def _ln(x, g, b):
    mu = sum(x) / len(x)
    var = sum((v - mu) ** 2 for v in x) / len(x)
    return [g[i] * (x[i] - mu) / math.sqrt(var + 1e-5) + b[i] for i in range(len(x))]


def oracle_logits(params, grid, keep):
    """Explicit-loop forward over the full token set, attending only to kept indices."""
    spec = params.spec
    d, heads = spec.width, spec.num_heads
    dh = d // heads
    cubes = grid.cubes(np.float64) / 255.0
    tokens = [list(params["cls"])]
    for i in range(grid.t_blocks):
        for j in range(grid.s_blocks):
            e = cubes[i, j] @ params["patch_w"] + params["patch_b"] + params["pos_t"][i] + params["pos_s"][j]
            tokens.append(list(e) if keep[i, j] else None)
    live = [n for n, t in enumerate(tokens) if t is not None]
    p = "blocks.0."
    a = {n: np.array(_ln(tokens[n], params[p + "ln1_g"], params[p + "ln1_b"])) for n in live}
    qkv = {n: a[n] @ params[p + "w_qkv"] + params[p + "b_qkv"] for n in live}
    out = {}
    for n in live:
        o = []
        for h in range(heads):
            q = qkv[n][h * dh:(h + 1) * dh]
            scores = {m: sum(q[u] * qkv[m][d + h * dh + u] for u in range(dh)) / math.sqrt(dh) for m in live}
            top = max(scores.values())
            z = sum(math.exp(s - top) for s in scores.values())
            for u in range(dh):
                o.append(sum(math.exp(scores[m] - top) / z * qkv[m][2 * d + h * dh + u] for m in live))
        out[n] = np.array(tokens[n]) + np.array(o) @ params[p + "w_o"] + params[p + "b_o"]
    x = out[0]
    m_in = np.array(_ln(list(x), params[p + "ln2_g"], params[p + "ln2_b"]))
    pre = m_in @ params[p + "w_fc1"] + params[p + "b_fc1"]
    act = np.array([0.5 * v * (1 + math.tanh(math.sqrt(2 / math.pi) * (v + 0.044715 * v ** 3))) for v in pre])
    x = x + act @ params[p + "w_fc2"] + params[p + "b_fc2"]
    z = np.array(_ln(list(x), params["lnf_g"], params["lnf_b"]))
    return z @ params["head_w"] + params["head_b"]


def test_masked_forward_matches_subset_oracle(rng):
    grid = random_grid(rng, 4, 2, 3, shape=(2, 2, 2))
    params = init_params(ONE_BLOCK, grid.lattice, seed=5, token_dim=grid.token_dim)
    params = params.replace({k: v + 0.2 * rng.standard_normal(v.shape) for k, v in params.items()})
    mask = mgtc_mask(grid, 0.5)
    got = forward(params, make_batch(grid, mask))
    np.testing.assert_allclose(got, oracle_logits(params, grid, mask.keep), atol=1e-8, rtol=0)


def test_attention_rows_are_distributions(setup):
    grid, params = setup
    _, probs = forward(params, full_batch(grid), return_attention=True)
    for p in probs:
        np.testing.assert_allclose(p.sum(axis=-1), 1.0, atol=1e-12)


def test_grad_check_passes(setup):
    grid, params = setup
    batch = make_batch(grid, mgtc_mask(grid, 0.25))
    assert grad_check(params, batch, 1) < 1e-4


def test_grad_check_catches_broken_backward(setup, monkeypatch):
    grid, params = setup
    batch = full_batch(grid)
    monkeypatch.setattr(tt, "_gelu_back", lambda dy, x, th: dy)
    assert grad_check(params, batch, 2, fraction=0.2) > 1e-1


def test_grad_check_refuses_large_models(rng):
    params = init_params(EncoderSpec(3, 16, num_classes=2), (2, 2), 0, 4)
    with pytest.raises(ValueError):
        grad_check(params, TokenBatch(np.zeros((1, 4)), np.zeros((1, 2), dtype=int)), 0)


def test_saturated_softmax_has_tiny_gradients(setup):
    grid, params = setup
    arrays = dict(params.arrays)
    arrays["head_b"] = np.array([0.0, 80.0, 0.0])
    loss, grads = loss_and_grads(params.replace(arrays), full_batch(grid), 1)
    assert loss < 1e-30
    assert max(np.abs(g).max() for g in grads.values()) < 1e-30


def test_cross_entropy_value():
    loss, probs = cross_entropy(np.array([0.0, 0.0]), 0)
    assert loss == pytest.approx(math.log(2))
    assert probs.sum() == pytest.approx(1.0)


def test_zero_learning_rate_is_identity(setup):
    grid, params = setup
    new, _ = train_step(params, full_batch(grid), 0, 0.0)
    assert new.equal(params)


def test_training_is_deterministic_and_descends(rng):
    grid = random_grid(rng, 4, 2, 2, shape=(2, 2, 2))
    params = init_params(SMALL, grid.lattice, seed=11, token_dim=grid.token_dim)
    batch = make_batch(grid, mgtc_mask(grid, 0.25))

    def run(p):
        losses = []
        for _ in range(30):
            p, loss = train_step(p, batch, 2, 1e-2)
            losses.append(loss)
        return losses

    losses = run(params)
    assert losses == run(params)
    assert all(b <= a for a, b in zip(losses[5:], losses[6:]))
    assert losses[-1] < losses[0]


def test_non_finite_inputs(setup):
    grid, params = setup
    batch = full_batch(grid)
    bad = TokenBatch(np.where(np.arange(batch.patches.size).reshape(batch.patches.shape) == 0, np.nan,
                              batch.patches), batch.positions)
    with pytest.raises(NumericError):
        forward(params, bad)
    with pytest.raises(NumericError):
        forward(params, TokenBatch(np.zeros((0, grid.token_dim)), np.zeros((0, 2), dtype=int)))
    arrays = dict(params.arrays, head_w=np.full_like(params["head_w"], np.inf))
    with pytest.raises(NumericError, match="head_w"), np.errstate(invalid="ignore"):
        train_step(params.replace(arrays), batch, 0, 0.1)


def test_positions_outside_lattice(setup):
    grid, params = setup
    batch = full_batch(grid)
    with pytest.raises(FormatError):
        forward(params, TokenBatch(batch.patches, batch.positions + 10))


def test_snapshot_round_trip(setup, tmp_path):
    _, params = setup
    save_params(params, tmp_path / "snap")
    back = load_params(tmp_path / "snap")
    assert back.equal(params) and back.spec == params.spec and back.lattice == params.lattice
    raw = (tmp_path / "snap.f64").read_bytes()
    (tmp_path / "snap.f64").write_bytes(raw[:-8])
    with pytest.raises(FormatError):
        load_params(tmp_path / "snap")
