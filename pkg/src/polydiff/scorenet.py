"""Trainable joint score network s_theta(x_t, y_s, t, s).

Embeds the continuous coordinates and the token sequence, conditions on
the continuous-modality time, and emits (i) a score vector for the
continuous state and (ii) per-position logits over each position's true
categories (the mask token is never in the output support).  Under the
masked discrete schedule the clean-token posterior is independent of the
discrete time, so ``s`` is accepted in the signature for interface
uniformity but does not enter the computation.

Two architectures:

* ``mlp`` — concat(x, token embeddings, time embedding) through a SiLU
  MLP trunk.  Default for toy problems.
* ``attn`` — one token per numerical coordinate (shared 3-layer value MLP
  plus a per-coordinate type embedding) and one per categorical column
  (per-column lookup tables sized categories + 1 for the mask), integer
  positional embeddings, then transformer blocks with adaptive layer-norm
  conditioning (zero-initialized so blocks start as identities).  Final
  per-token latents feed 3-layer output MLPs.

All final output layers are zero-initialized: a fresh network emits a
zero continuous score and uniform token probabilities.  Guidance strength
is NOT a network input; guided combinations live in the sampler layer.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import ContractError, ShapeError

Params = dict


@dataclass(frozen=True)
class ScoreNetConfig:
    continuous_dim: int
    vocab_sizes: tuple  # extended sizes: true categories + 1 mask, per position
    hidden_dim: int = 256
    depth: int = 4
    arch: str = "mlp"
    time_embed_dim: int = 32
    heads: int = 4

    def __post_init__(self):
        if self.hidden_dim <= 0:
            raise ContractError("hidden_dim must be positive")
        if any(v < 2 for v in self.vocab_sizes):
            raise ContractError("every vocab size needs >= 1 category plus the mask")
        if self.arch not in ("mlp", "attn"):
            raise ContractError(f"unknown arch {self.arch!r}")
        if self.arch == "attn" and self.hidden_dim % self.heads:
            raise ContractError("hidden_dim must divide evenly over heads")

    @property
    def positions(self) -> int:
        return len(self.vocab_sizes)

    @property
    def true_counts(self) -> tuple:
        return tuple(v - 1 for v in self.vocab_sizes)


@dataclass
class ModelOutput:
    cont_score: Tensor
    logits: list = field(default_factory=list)


def time_features(t, dim: int) -> np.ndarray:
    """Sinusoidal features of a time value, frequencies geometric in [1, 1e4].

    ``t`` may be a scalar or a vector; the result has shape (..., dim) with
    the first half sines and the second half cosines.  Odd dims are
    rejected.  At t = 0 all sine components are 0 and all cosines are 1.
    """
    if dim % 2:
        raise ContractError(f"time embedding dim must be even, got {dim}")
    t = np.asarray(t, dtype=np.float64)
    freqs = np.geomspace(1.0, 1e4, dim // 2)
    ang = t[..., None] * freqs
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=-1)


def _uniform(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class _Init:
    """Accumulates named parameters with deterministic draw order."""

    def __init__(self, seed: int):
        self.rng = np.random.default_rng(seed)
        self.params: Params = {}

    def linear(self, name: str, fan_in: int, fan_out: int, zero: bool = False):
        w = np.zeros((fan_in, fan_out)) if zero else _uniform(self.rng, fan_in, (fan_in, fan_out))
        self.params[f"{name}_w"] = w
        self.params[f"{name}_b"] = np.zeros(fan_out)

    def table(self, name: str, rows: int, cols: int, scale: float = 0.02):
        self.params[name] = scale * self.rng.standard_normal((rows, cols))


def init(config: ScoreNetConfig, seed: int) -> Params:
    """Create parameters; identical (config, seed) pairs give identical values."""
    ini = _Init(seed)
    h = config.hidden_dim

    ini.linear("time0", config.time_embed_dim, h)
    ini.linear("time1", h, h)

    if config.arch == "mlp":
        for p, v in enumerate(config.vocab_sizes):
            ini.table(f"tok{p}", v, h)
        in_dim = config.continuous_dim + config.positions * h + h
        ini.linear("trunk0", in_dim, h)
        for d in range(1, config.depth):
            ini.linear(f"trunk{d}", h, h)
    else:
        ini.table("num_type", max(config.continuous_dim, 1), h)
        ini.linear("val0", 1, h)
        ini.linear("val1", h, h)
        ini.linear("val2", h, h)
        for p, v in enumerate(config.vocab_sizes):
            ini.table(f"tok{p}", v, h)
        ini.table("pos", config.continuous_dim + config.positions, h)
        for b in range(config.depth):
            ini.linear(f"blk{b}_qkv", h, 3 * h)
            ini.linear(f"blk{b}_proj", h, h)
            ini.linear(f"blk{b}_fc1", h, 4 * h)
            ini.linear(f"blk{b}_fc2", 4 * h, h)
            ini.linear(f"blk{b}_ada", h, 6 * h, zero=True)
        ini.linear("final_ada", h, 2 * h, zero=True)
        ini.linear("numhead0", h, h)
        ini.linear("numhead1", h, h)

    # Output layers are zero so the fresh model is score-zero / uniform.
    if config.arch == "mlp":
        ini.linear("head_cont", h, config.continuous_dim, zero=True)
        for p, k in enumerate(config.true_counts):
            ini.linear(f"head_cat{p}", h, k, zero=True)
    else:
        ini.linear("numhead2", h, 1, zero=True)
        for p, k in enumerate(config.true_counts):
            ini.linear(f"cathead{p}_0", h, h)
            ini.linear(f"cathead{p}_1", h, h)
            ini.linear(f"cathead{p}_2", h, k, zero=True)

    from .autograd import get_default_dtype

    dtype = get_default_dtype()
    return {k: Tensor(v.astype(dtype), requires_grad=True) for k, v in ini.params.items()}


def param_count(params: Params) -> int:
    return int(sum(p.data.size for p in params.values()))


def _lin(params: Params, name: str, x: Tensor) -> Tensor:
    return x @ params[f"{name}_w"] + params[f"{name}_b"]


def _time_embedding(params: Params, config: ScoreNetConfig, t, batch: int) -> Tensor:
    feats = time_features(np.broadcast_to(np.asarray(t, dtype=np.float64), (batch,)),
                          config.time_embed_dim)
    e = Tensor(feats.astype(params["time0_w"].data.dtype))
    e = _lin(params, "time0", e).silu()
    return _lin(params, "time1", e)


def forward(params: Params, config: ScoreNetConfig, x, y, t, s=None) -> ModelOutput:
    """Evaluate the score model on a batch.

    ``x``: (batch, continuous_dim) reals; ``y``: (batch, positions) token
    ids (mask allowed); ``t``: scalar or (batch,) continuous time; ``s`` is
    accepted for signature uniformity and ignored (see module docstring).
    Pure function of (params, inputs).
    """
    del s
    x_arr = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y_arr = np.atleast_2d(np.asarray(y))
    batch = x_arr.shape[0]
    if x_arr.shape[1] != config.continuous_dim:
        raise ShapeError(
            f"x has {x_arr.shape[1]} coordinates, config expects {config.continuous_dim}"
        )
    if y_arr.shape != (batch, config.positions):
        raise ShapeError(
            f"y shape {y_arr.shape} does not match (batch={batch}, positions={config.positions})"
        )
    for p, v in enumerate(config.vocab_sizes):
        col = y_arr[:, p]
        if col.min() < 0 or col.max() >= v:
            raise ContractError(f"token id out of range at position {p}")

    dtype = params["time0_w"].data.dtype
    xs = Tensor(x_arr.astype(dtype)) if not isinstance(x, Tensor) else x
    time_emb = _time_embedding(params, config, t, batch)

    if config.arch == "mlp":
        return _forward_mlp(params, config, xs, y_arr, time_emb)
    return _forward_attn(params, config, xs, y_arr, time_emb, batch)


def _forward_mlp(params, config, xs, y_arr, time_emb) -> ModelOutput:
    pieces = [xs]
    for p in range(config.positions):
        pieces.append(ag.embedding(params[f"tok{p}"], y_arr[:, p]))
    pieces.append(time_emb)
    h = ag.concat(pieces, axis=-1)
    for d in range(config.depth):
        h = _lin(params, f"trunk{d}", h).silu()
    cont = _lin(params, "head_cont", h)
    logits = [_lin(params, f"head_cat{p}", h) for p in range(config.positions)]
    return ModelOutput(cont_score=cont, logits=logits)


def _modulate(h: Tensor, shift: Tensor, scale: Tensor) -> Tensor:
    return h * (scale + 1.0) + shift


def _chunk6(c: Tensor, h: int):
    return [c[:, i * h:(i + 1) * h].reshape(c.shape[0], 1, h) for i in range(6)]


def _attention(params, name, h_tok: Tensor, heads: int) -> Tensor:
    batch, p_total, h = h_tok.shape
    dh = h // heads
    qkv = _lin(params, f"{name}_qkv", h_tok)  # (B, P, 3h)
    q = qkv[:, :, :h].reshape(batch, p_total, heads, dh).transpose((0, 2, 1, 3))
    k = qkv[:, :, h:2 * h].reshape(batch, p_total, heads, dh).transpose((0, 2, 1, 3))
    v = qkv[:, :, 2 * h:].reshape(batch, p_total, heads, dh).transpose((0, 2, 1, 3))
    att = ag.softmax((q @ k.swapaxes(-1, -2)) * (1.0 / np.sqrt(dh)))
    out = (att @ v).transpose((0, 2, 1, 3)).reshape(batch, p_total, h)
    return _lin(params, f"{name}_proj", out)


def _forward_attn(params, config, xs, y_arr, time_emb, batch) -> ModelOutput:
    h = config.hidden_dim
    d = config.continuous_dim

    # Numerical tokens: shared value MLP on each scalar + per-coordinate type row.
    vals = xs.reshape(batch * d, 1) if d else None
    tokens = []
    if d:
        ve = _lin(params, "val0", vals).silu()
        ve = _lin(params, "val1", ve).silu()
        ve = _lin(params, "val2", ve).reshape(batch, d, h)
        type_rows = params["num_type"].reshape(1, d, h)
        tokens.append(ve + type_rows)
    for p in range(config.positions):
        emb = ag.embedding(params[f"tok{p}"], y_arr[:, p]).reshape(batch, 1, h)
        tokens.append(emb)
    tok = ag.concat(tokens, axis=1) if len(tokens) > 1 else tokens[0]
    tok = tok + params["pos"].reshape(1, d + config.positions, h)

    c = time_emb.silu()
    for b in range(config.depth):
        ada = _lin(params, f"blk{b}_ada", c)
        sh1, sc1, g1, sh2, sc2, g2 = _chunk6(ada, h)
        att_in = _modulate(ag.layer_norm(tok), sh1, sc1)
        tok = tok + g1 * _attention(params, f"blk{b}", att_in, config.heads)
        mlp_in = _modulate(ag.layer_norm(tok), sh2, sc2)
        mlp_out = _lin(params, f"blk{b}_fc2", _lin(params, f"blk{b}_fc1", mlp_in).silu())
        tok = tok + g2 * mlp_out

    fada = _lin(params, "final_ada", c)
    fsh = fada[:, :h].reshape(batch, 1, h)
    fsc = fada[:, h:].reshape(batch, 1, h)
    tok = _modulate(ag.layer_norm(tok), fsh, fsc)

    num_lat = tok[:, :d, :]
    ne = _lin(params, "numhead0", num_lat).silu()
    ne = _lin(params, "numhead1", ne).silu()
    cont = _lin(params, "numhead2", ne).reshape(batch, d)

    logits = []
    for p in range(config.positions):
        lat = tok[:, d + p, :]
        le = _lin(params, f"cathead{p}_0", lat).silu()
        le = _lin(params, f"cathead{p}_1", le).silu()
        logits.append(_lin(params, f"cathead{p}_2", le))
    return ModelOutput(cont_score=cont, logits=logits)


class NetModel:
    """Inference adapter: (x, y, t, s) -> (score array, clean-token probs).

    Wraps frozen parameters for the samplers; forward calls do not record
    gradients, so concurrent use is safe.
    """

    def __init__(self, params: Params, config: ScoreNetConfig):
        self.params = {k: Tensor(p.data) for k, p in params.items()}
        self.config = config

    def __call__(self, x, y, t, s):
        out = forward(self.params, self.config, x, y, t, s)
        probs = [ag.softmax(l).data for l in out.logits]
        return np.asarray(out.cont_score.data, dtype=np.float64), probs
