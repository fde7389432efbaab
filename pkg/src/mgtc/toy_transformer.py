"""Small pre-norm transformer encoder in float64 numpy with manual backprop.

It consumes only the kept cubes of a :class:`TokenMask`, each carrying its
absolute lattice position through separable temporal and spatial tables.
Everything is deterministic given a seed, which makes finite-difference
checks and exact-repeat training runs possible.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from mgtc.errors import FormatError, NumericError
from mgtc.fileio import atomic_write
from mgtc.flops import EncoderSpec
from mgtc.masking import TokenMask
from mgtc.tokenizer import CubeGrid

SNAPSHOT_VERSION = 1
GRAD_CHECK_MAX_DEPTH = 2
GRAD_CHECK_MAX_WIDTH = 16
_GELU_C = np.sqrt(2.0 / np.pi)


@dataclass(frozen=True)
class TokenBatch:
    """Kept tokens: flattened cube pixels scaled to [0, 1] and their (i, j) lattice coordinates."""

    patches: np.ndarray
    positions: np.ndarray

    def __post_init__(self):
        if self.patches.ndim != 2 or self.positions.shape != (self.patches.shape[0], 2):
            raise FormatError(
                f"patches {self.patches.shape} and positions {self.positions.shape} disagree"
            )

    def __len__(self):
        return self.patches.shape[0]

    def permuted(self, order):
        order = np.asarray(order)
        return TokenBatch(self.patches[order], self.positions[order])


def make_batch(grid: CubeGrid, mask: TokenMask) -> TokenBatch:
    if mask.keep.shape != grid.lattice:
        raise FormatError(f"mask lattice {mask.keep.shape} does not match grid {grid.lattice}")
    cubes = grid.cubes(np.float64) / 255.0
    ti, sj = np.nonzero(mask.keep)
    return TokenBatch(cubes[ti, sj], np.stack([ti, sj], axis=1))


def full_batch(grid: CubeGrid) -> TokenBatch:
    cubes = grid.cubes(np.float64) / 255.0
    ti, sj = np.indices(grid.lattice).reshape(2, -1)
    return TokenBatch(cubes.reshape(grid.L, -1), np.stack([ti, sj], axis=1))


class ModelParams:
    """Named float64 arrays plus the shapes they were built for.

    Block tensors are named ``blocks.<l>.<tensor>``; iteration order is the
    insertion order, which is also the snapshot order.
    """

    def __init__(self, spec: EncoderSpec, lattice, token_dim, arrays):
        self.spec = spec
        self.lattice = tuple(lattice)
        self.token_dim = int(token_dim)
        self.arrays = dict(arrays)

    def __getitem__(self, name):
        return self.arrays[name]

    def __iter__(self):
        return iter(self.arrays)

    def items(self):
        return self.arrays.items()

    @property
    def size(self):
        return sum(a.size for a in self.arrays.values())

    def replace(self, arrays):
        return ModelParams(self.spec, self.lattice, self.token_dim, arrays)

    def copy(self):
        return self.replace({k: v.copy() for k, v in self.arrays.items()})

    def flat(self):
        return np.concatenate([a.reshape(-1) for a in self.arrays.values()])

    def equal(self, other):
        return self.arrays.keys() == other.arrays.keys() and all(
            np.array_equal(a, other.arrays[k]) for k, a in self.arrays.items()
        )


def _hidden(spec):
    return int(round(spec.mlp_ratio * spec.width))


def param_shapes(spec: EncoderSpec, lattice, token_dim):
    d, h, t_blocks, s_blocks = spec.width, _hidden(spec), lattice[0], lattice[1]
    shapes = {
        "patch_w": (token_dim, d),
        "patch_b": (d,),
        "cls": (d,),
        "pos_t": (t_blocks, d),
        "pos_s": (s_blocks, d),
    }
    for l in range(spec.depth):
        shapes.update({
            f"blocks.{l}.ln1_g": (d,),
            f"blocks.{l}.ln1_b": (d,),
            f"blocks.{l}.w_qkv": (d, 3 * d),
            f"blocks.{l}.b_qkv": (3 * d,),
            f"blocks.{l}.w_o": (d, d),
            f"blocks.{l}.b_o": (d,),
            f"blocks.{l}.ln2_g": (d,),
            f"blocks.{l}.ln2_b": (d,),
            f"blocks.{l}.w_fc1": (d, h),
            f"blocks.{l}.b_fc1": (h,),
            f"blocks.{l}.w_fc2": (h, d),
            f"blocks.{l}.b_fc2": (d,),
        })
    shapes.update({"lnf_g": (d,), "lnf_b": (d,), "head_w": (d, spec.num_classes), "head_b": (spec.num_classes,)})
    return shapes


def init_bound(fan_in):
    return 1.0 / np.sqrt(fan_in)


def init_params(spec: EncoderSpec, lattice, seed: int, token_dim: int) -> ModelParams:
    """Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)); biases, positional tables zero; norms identity."""
    rng = np.random.default_rng(seed)
    arrays = {}
    for name, shape in param_shapes(spec, lattice, token_dim).items():
        leaf = name.rsplit(".", 1)[-1]
        if leaf.endswith("_g"):
            arrays[name] = np.ones(shape)
        elif (len(shape) == 2 and not leaf.startswith("pos")) or leaf == "cls":
            b = init_bound(shape[0])
            arrays[name] = rng.uniform(-b, b, size=shape)
        else:
            arrays[name] = np.zeros(shape)
    return ModelParams(spec, lattice, token_dim, arrays)


def _layernorm(x, g, b, eps=1e-5):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    rstd = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * rstd
    return xhat * g + b, (xhat, rstd)


def _layernorm_back(dy, g, cache):
    xhat, rstd = cache
    dg = (dy * xhat).reshape(-1, xhat.shape[-1]).sum(axis=0)
    db = dy.reshape(-1, xhat.shape[-1]).sum(axis=0)
    dxhat = dy * g
    dx = rstd * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )
    return dx, dg, db


def _gelu(x):
    th = np.tanh(_GELU_C * (x + 0.044715 * x**3))
    return 0.5 * x * (1.0 + th), th


def _gelu_back(dy, x, th):
    du = _GELU_C * (1.0 + 3 * 0.044715 * x * x)
    return dy * (0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du)


def softmax(s, axis=-1):
    e = np.exp(s - s.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def _embed(params, batch):
    ti, sj = batch.positions[:, 0], batch.positions[:, 1]
    t_blocks, s_blocks = params.lattice
    if ti.min(initial=0) < 0 or ti.max(initial=0) >= t_blocks or sj.min(initial=0) < 0 or sj.max(initial=0) >= s_blocks:
        raise FormatError(f"token positions fall outside lattice {params.lattice}")
    tokens = batch.patches @ params["patch_w"] + params["patch_b"] + params["pos_t"][ti] + params["pos_s"][sj]
    return np.vstack([params["cls"][None, :], tokens])


def _run(params: ModelParams, batch: TokenBatch, keep_cache: bool):
    if len(batch) < 1:
        raise NumericError("forward needs at least one kept token")
    if not np.all(np.isfinite(batch.patches)):
        raise NumericError("non-finite values in token patches")
    spec = params.spec
    heads, d = spec.num_heads, spec.width
    dh = d // heads
    x = _embed(params, batch)
    m = x.shape[0]
    caches = []
    for l in range(spec.depth):
        p = f"blocks.{l}."
        a_in, ln1 = _layernorm(x, params[p + "ln1_g"], params[p + "ln1_b"])
        qkv = a_in @ params[p + "w_qkv"] + params[p + "b_qkv"]
        q, k, v = (qkv[:, i * d : (i + 1) * d].reshape(m, heads, dh).transpose(1, 0, 2) for i in range(3))
        probs = softmax(q @ k.transpose(0, 2, 1) / np.sqrt(dh))
        o = (probs @ v).transpose(1, 0, 2).reshape(m, d)
        x_mid = x + o @ params[p + "w_o"] + params[p + "b_o"]
        m_in, ln2 = _layernorm(x_mid, params[p + "ln2_g"], params[p + "ln2_b"])
        pre = m_in @ params[p + "w_fc1"] + params[p + "b_fc1"]
        act, th = _gelu(pre)
        x_out = x_mid + act @ params[p + "w_fc2"] + params[p + "b_fc2"]
        if keep_cache:
            caches.append((a_in, ln1, q, k, v, probs, o, m_in, ln2, pre, act, th))
        else:
            caches.append(probs)
        x = x_out
    z, lnf = _layernorm(x[0], params["lnf_g"], params["lnf_b"])
    logits = z @ params["head_w"] + params["head_b"]
    return logits, (x, z, lnf, caches)


def forward(params: ModelParams, batch: TokenBatch, return_attention: bool = False):
    """Class logits from the class token after joint space-time attention over kept tokens."""
    logits, (_, _, _, caches) = _run(params, batch, keep_cache=False)
    if return_attention:
        return logits, caches
    return logits


def cross_entropy(logits, target):
    logp = logits - logits.max()
    logp = logp - np.log(np.exp(logp).sum())
    return -logp[target], np.exp(logp)


def loss_and_grads(params: ModelParams, batch: TokenBatch, target: int):
    """Cross-entropy loss and its gradient for every parameter tensor."""
    spec = params.spec
    heads, d = spec.num_heads, spec.width
    dh = d // heads
    logits, (x, z, lnf, caches) = _run(params, batch, keep_cache=True)
    loss, probs_out = cross_entropy(logits, target)
    g = {}

    dlogits = probs_out.copy()
    dlogits[target] -= 1.0
    g["head_w"] = np.outer(z, dlogits)
    g["head_b"] = dlogits
    dz = params["head_w"] @ dlogits
    dx0, g["lnf_g"], g["lnf_b"] = _layernorm_back(dz, params["lnf_g"], lnf)
    dx = np.zeros_like(x)
    dx[0] = dx0

    m = x.shape[0]
    for l in reversed(range(spec.depth)):
        p = f"blocks.{l}."
        a_in, ln1, q, k, v, probs, o, m_in, ln2, pre, act, th = caches[l]
        # MLP branch
        g[p + "b_fc2"] = dx.sum(axis=0)
        g[p + "w_fc2"] = act.T @ dx
        dact = dx @ params[p + "w_fc2"].T
        dpre = _gelu_back(dact, pre, th)
        g[p + "b_fc1"] = dpre.sum(axis=0)
        g[p + "w_fc1"] = m_in.T @ dpre
        dm_in = dpre @ params[p + "w_fc1"].T
        dmid, g[p + "ln2_g"], g[p + "ln2_b"] = _layernorm_back(dm_in, params[p + "ln2_g"], ln2)
        dx_mid = dx + dmid
        # attention branch
        g[p + "b_o"] = dx_mid.sum(axis=0)
        g[p + "w_o"] = o.T @ dx_mid
        do = (dx_mid @ params[p + "w_o"].T).reshape(m, heads, dh).transpose(1, 0, 2)
        dprobs = do @ v.transpose(0, 2, 1)
        dv = probs.transpose(0, 2, 1) @ do
        dscores = probs * (dprobs - (dprobs * probs).sum(axis=-1, keepdims=True)) / np.sqrt(dh)
        dq = dscores @ k
        dk = dscores.transpose(0, 2, 1) @ q
        dqkv = np.concatenate([t.transpose(1, 0, 2).reshape(m, d) for t in (dq, dk, dv)], axis=1)
        g[p + "b_qkv"] = dqkv.sum(axis=0)
        g[p + "w_qkv"] = a_in.T @ dqkv
        da_in = dqkv @ params[p + "w_qkv"].T
        dln1, g[p + "ln1_g"], g[p + "ln1_b"] = _layernorm_back(da_in, params[p + "ln1_g"], ln1)
        dx = dx_mid + dln1

    g["cls"] = dx[0]
    dtok = dx[1:]
    g["patch_w"] = batch.patches.T @ dtok
    g["patch_b"] = dtok.sum(axis=0)
    g["pos_t"] = np.zeros_like(params["pos_t"])
    g["pos_s"] = np.zeros_like(params["pos_s"])
    np.add.at(g["pos_t"], batch.positions[:, 0], dtok)
    np.add.at(g["pos_s"], batch.positions[:, 1], dtok)
    return float(loss), {name: g[name] for name in params}


def _check_loss(loss, params):
    if not np.isfinite(loss):
        bad = [n for n, a in params.items() if not np.all(np.isfinite(a))]
        detail = f"non-finite parameters: {', '.join(bad)}" if bad else "parameters finite"
        raise NumericError(f"loss is {loss}; {detail}")


def train_step(params: ModelParams, batch: TokenBatch, target: int, lr: float):
    """One plain gradient-descent step; returns ``(new_params, loss_before_step)``."""
    return train_step_many(params, [batch], [target], lr)


def train_step_many(params: ModelParams, batches, targets, lr: float):
    """Full-batch gradient descent on the mean cross-entropy over several examples."""
    if not lr >= 0:
        raise ValueError(f"learning rate must be non-negative, got {lr}")
    total = 0.0
    acc = {name: np.zeros_like(a) for name, a in params.items()}
    for batch, target in zip(batches, targets):
        loss, grads = loss_and_grads(params, batch, target)
        total += loss
        for name, gr in grads.items():
            acc[name] += gr
    n = len(batches)
    total /= n
    _check_loss(total, params)
    new = {name: a - (lr / n) * acc[name] for name, a in params.items()}
    return params.replace(new), total


def grad_check(params: ModelParams, batch: TokenBatch, target: int, fraction: float = 0.05,
               step: float = 1e-4, seed: int = 0, floor: float = 1e-6, grad_fn=None):
    """Max relative error between analytic and central-difference gradients.

    A random ``fraction`` of all scalar parameters is probed. The relative
    error of a pair is ``|a - n| / max(|a|, |n|, floor)``.
    """
    spec = params.spec
    if spec.depth > GRAD_CHECK_MAX_DEPTH or spec.width > GRAD_CHECK_MAX_WIDTH:
        raise ValueError(
            f"gradient check is capped at depth <= {GRAD_CHECK_MAX_DEPTH}, width <= {GRAD_CHECK_MAX_WIDTH}"
        )
    grad_fn = grad_fn or loss_and_grads
    _, grads = grad_fn(params, batch, target)
    names = list(params)
    sizes = np.array([params[n].size for n in names])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    rng = np.random.default_rng(seed)
    count = max(1, int(round(fraction * offsets[-1])))
    picks = np.sort(rng.choice(offsets[-1], size=count, replace=False))

    worst = 0.0
    for flat_idx in picks:
        slot = int(np.searchsorted(offsets, flat_idx, side="right") - 1)
        name, local = names[slot], int(flat_idx - offsets[slot])
        probe = params.copy()
        arr = probe.arrays[name].reshape(-1)
        orig = arr[local]
        arr[local] = orig + step
        up, _ = cross_entropy(forward(probe, batch), target)
        arr[local] = orig - step
        down, _ = cross_entropy(forward(probe, batch), target)
        numeric = (up - down) / (2 * step)
        analytic = grads[name].reshape(-1)[local]
        err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)
        worst = max(worst, err)
    return worst


def save_params(params: ModelParams, stem):
    """Write ``<stem>.f64`` (flat little-endian float64) and ``<stem>.json`` (manifest)."""
    stem = Path(stem)
    entries, offset = [], 0
    for name, a in params.items():
        entries.append({"name": name, "shape": list(a.shape), "offset": offset})
        offset += a.size
    manifest = {
        "version": SNAPSHOT_VERSION,
        "spec": asdict(params.spec),
        "lattice": list(params.lattice),
        "token_dim": params.token_dim,
        "count": offset,
        "entries": entries,
    }
    atomic_write(stem.with_suffix(".f64"), params.flat().astype("<f8").tobytes())
    atomic_write(stem.with_suffix(".json"), json.dumps(manifest, indent=2) + "\n")


def load_params(stem) -> ModelParams:
    stem = Path(stem)
    manifest = json.loads(stem.with_suffix(".json").read_text())
    if manifest.get("version") != SNAPSHOT_VERSION:
        raise FormatError(f"unsupported snapshot version {manifest.get('version')}")
    flat = np.frombuffer(stem.with_suffix(".f64").read_bytes(), dtype="<f8")
    if flat.size != manifest["count"]:
        raise FormatError(f"snapshot holds {flat.size} values, manifest expects {manifest['count']}")
    arrays = {}
    for e in manifest["entries"]:
        size = int(np.prod(e["shape"], dtype=np.int64))
        arrays[e["name"]] = flat[e["offset"] : e["offset"] + size].reshape(e["shape"]).astype(np.float64)
    return ModelParams(EncoderSpec(**manifest["spec"]), manifest["lattice"], manifest["token_dim"], arrays)
