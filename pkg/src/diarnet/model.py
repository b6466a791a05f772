"""Attractor-based conformer decoder for per-frame speaker activity.

One recording flows as:

    x0 (T, E)  front-end embeddings
    repeat for each of D blocks:
        x <- x + depth_pool(stack)        (skipped before block 1)
        A <- attractor_decode(A, x)       (slots refined against frames)
        x <- conformer_block(x, A)        (frames cross-attend to slots)
        stack.append(x)
    split final A into directions a_s and biases b_s
    logits[t, s] = x[t] . a_s + b_s + b_global

Self-attention over time goes through a small set of learned latents, so no
T x T score matrix is ever formed and cost stays linear in T.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .frontend import ConfigError, init_frontend_params


@dataclass
class ModelConfig:
    depth: int = 5
    embed_dim: int = 256
    latte_dim: int = 128
    n_latents: int = 16
    n_attractors: int = 8
    ff_expansion: int = 4
    conv_kernel: int = 9
    heads: int = 4

    def __post_init__(self):
        if self.embed_dim % self.heads != 0:
            raise ConfigError(f"embed_dim {self.embed_dim} not divisible by heads {self.heads}")
        if self.latte_dim % self.heads != 0:
            raise ConfigError(f"latte_dim {self.latte_dim} not divisible by heads {self.heads}")
        if self.conv_kernel % 2 != 1:
            raise ConfigError(f"conv_kernel must be odd, got {self.conv_kernel}")
        if self.embed_dim % 16 != 0:
            raise ConfigError(f"embed_dim must be divisible by 16, got {self.embed_dim}")
        if min(self.depth, self.n_latents, self.n_attractors) < 1:
            raise ConfigError("depth, n_latents and n_attractors must be positive")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in (
            "depth", "embed_dim", "latte_dim", "n_latents", "n_attractors",
            "ff_expansion", "conv_kernel", "heads")}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**{k: int(v) for k, v in d.items()})


@dataclass
class ForwardResult:
    """Everything the losses need from one forward pass."""
    logits: Tensor            # (T, S)
    frames: Tensor            # (T, E) final embeddings, used by clustering losses
    attractor_dirs: Tensor    # (S, E) post-split directions a_s
    attractor_biases: Tensor  # (S,)  per-slot biases b_s
    global_bias: Tensor       # scalar b_global


# ---------------------------------------------------------------------------
# parameter initialization
# ---------------------------------------------------------------------------

def _glorot(rng, n_in: int, n_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (n_in + n_out))
    return rng.uniform(-limit, limit, size=(n_in, n_out)).astype(np.float32)


def _linear(params: dict, rng, name: str, n_in: int, n_out: int) -> None:
    params[name + ".w"] = Tensor(_glorot(rng, n_in, n_out), requires_grad=True)
    params[name + ".b"] = Tensor(np.zeros(n_out, dtype=np.float32), requires_grad=True)


def _norm(params: dict, name: str, dim: int) -> None:
    params[name + ".g"] = Tensor(np.ones(dim, dtype=np.float32), requires_grad=True)
    params[name + ".b"] = Tensor(np.zeros(dim, dtype=np.float32), requires_grad=True)


def _attention(params: dict, rng, name: str, q_dim: int, kv_dim: int, inner: int,
               out_dim: int) -> None:
    _linear(params, rng, name + ".q", q_dim, inner)
    _linear(params, rng, name + ".k", kv_dim, inner)
    _linear(params, rng, name + ".v", kv_dim, inner)
    _linear(params, rng, name + ".o", inner, out_dim)


def _ff(params: dict, rng, name: str, dim: int, expansion: int) -> None:
    _norm(params, name + ".ln", dim)
    _linear(params, rng, name + ".w1", dim, dim * expansion)
    _linear(params, rng, name + ".w2", dim * expansion, dim)


def _conv_module(params: dict, rng, name: str, dim: int, kernel: int) -> None:
    _norm(params, name + ".ln", dim)
    _linear(params, rng, name + ".pw1", dim, 2 * dim)
    params[name + ".dw"] = Tensor(
        (rng.standard_normal((kernel, dim)) / math.sqrt(kernel)).astype(np.float32),
        requires_grad=True)
    params[name + ".norm_g"] = Tensor(np.ones(dim, dtype=np.float32), requires_grad=True)
    _linear(params, rng, name + ".pw2", dim, dim)


def init_model_params(cfg: ModelConfig, rng: np.random.Generator) -> dict:
    """All learnable tensors, flat-named; includes the front-end."""
    e, l = cfg.embed_dim, cfg.latte_dim
    params = init_frontend_params(e, rng)
    for d in range(1, cfg.depth + 1):
        blk = f"block{d}"
        _ff(params, rng, f"{blk}.ff1", e, cfg.ff_expansion)
        _norm(params, f"{blk}.latte.ln", e)
        params[f"{blk}.latte.latents"] = Tensor(
            (rng.standard_normal((cfg.n_latents, l)) / math.sqrt(l)).astype(np.float32),
            requires_grad=True)
        _linear(params, rng, f"{blk}.latte.k1", e, l)
        _linear(params, rng, f"{blk}.latte.v1", e, l)
        _linear(params, rng, f"{blk}.latte.q2", e, l)
        _linear(params, rng, f"{blk}.latte.k2", l, l)
        _linear(params, rng, f"{blk}.latte.v2", l, l)
        _linear(params, rng, f"{blk}.latte.o", l, e)
        _conv_module(params, rng, f"{blk}.conv1", e, cfg.conv_kernel)
        _norm(params, f"{blk}.xattn.ln", e)
        _attention(params, rng, f"{blk}.xattn", e, e, e, e)
        _conv_module(params, rng, f"{blk}.conv2", e, cfg.conv_kernel)
        _ff(params, rng, f"{blk}.ff2", e, cfg.ff_expansion)
        _norm(params, f"{blk}.out_ln", e)

        dec = f"adec{d}"
        _norm(params, f"{dec}.self.ln", e)
        _attention(params, rng, f"{dec}.self", e, e, e, e)
        _ff(params, rng, f"{dec}.ff1", e, cfg.ff_expansion)
        _norm(params, f"{dec}.cross.ln", e)
        _attention(params, rng, f"{dec}.cross", e, e, e, e)
        _ff(params, rng, f"{dec}.ff2", e, cfg.ff_expansion)

        if d >= 2:
            sap_hidden = max(e // 4, 8)
            _linear(params, rng, f"sap{d}.w1", e, sap_hidden)
            _linear(params, rng, f"sap{d}.w2", sap_hidden, 1)

    params["attractors.init"] = Tensor(
        (rng.standard_normal((cfg.n_attractors, e)) / math.sqrt(e)).astype(np.float32),
        requires_grad=True)
    _norm(params, "head.ln", e)
    _linear(params, rng, "head.split", e, e + 1)
    params["head.b_global"] = Tensor(np.zeros((), dtype=np.float32), requires_grad=True)
    return params


# ---------------------------------------------------------------------------
# building blocks
# ---------------------------------------------------------------------------

def _apply_linear(x: Tensor, params: dict, name: str) -> Tensor:
    return ad.matmul(x, params[name + ".w"]) + params[name + ".b"]


def _apply_ln(x: Tensor, params: dict, name: str) -> Tensor:
    return ad.layer_norm(x, params[name + ".g"], params[name + ".b"])


def _split_heads(x: Tensor, heads: int) -> Tensor:
    # (N, H*dh) -> (H, N, dh)
    n, inner = x.shape
    return x.reshape(n, heads, inner // heads).transpose(1, 0, 2)


def _merge_heads(x: Tensor) -> Tensor:
    # (H, N, dh) -> (N, H*dh)
    h, n, dh = x.shape
    return x.transpose(1, 0, 2).reshape(n, h * dh)


def _attend(q: Tensor, k: Tensor, v: Tensor, heads: int) -> Tensor:
    """Multi-head scaled dot-product attention on pre-projected tensors."""
    dh = q.shape[-1] // heads
    qh = _split_heads(q, heads)
    kh = _split_heads(k, heads)
    vh = _split_heads(v, heads)
    scores = ad.matmul(qh, kh.transpose(0, 2, 1)) * (1.0 / math.sqrt(dh))
    weights = ad.softmax(scores, axis=-1)
    return _merge_heads(ad.matmul(weights, vh))


def multihead_attention(q_in: Tensor, kv_in: Tensor, params: dict, name: str,
                        heads: int) -> Tensor:
    q = _apply_linear(q_in, params, name + ".q")
    k = _apply_linear(kv_in, params, name + ".k")
    v = _apply_linear(kv_in, params, name + ".v")
    ctx = _attend(q, k, v, heads)
    return _apply_linear(ctx, params, name + ".o")


def latte_attention(x: Tensor, params: dict, name: str, cfg: ModelConfig) -> Tensor:
    """Two-stage latent attention over time, linear in sequence length.

    Stage 1: the learned latents query the sequence (softmax over T per
    latent). Stage 2: every position queries the updated latents (softmax
    over latents per position). The residual is added by the caller.
    """
    heads = cfg.heads
    k1 = _apply_linear(x, params, name + ".k1")
    v1 = _apply_linear(x, params, name + ".v1")
    z = _attend(params[name + ".latents"], k1, v1, heads)     # (n_latents, L)
    q2 = _apply_linear(x, params, name + ".q2")
    k2 = _apply_linear(z, params, name + ".k2")
    v2 = _apply_linear(z, params, name + ".v2")
    out = _attend(q2, k2, v2, heads)                          # (T, L)
    return _apply_linear(out, params, name + ".o")


def _feed_forward(x: Tensor, params: dict, name: str) -> Tensor:
    h = ad.relu(_apply_linear(_apply_ln(x, params, name + ".ln"), params, name + ".w1"))
    return _apply_linear(h, params, name + ".w2")


def _conv_block(x: Tensor, params: dict, name: str) -> Tensor:
    """Pointwise GLU -> depthwise conv along time -> RMS norm -> pointwise."""
    h = _apply_linear(_apply_ln(x, params, name + ".ln"), params, name + ".pw1")
    e = x.shape[-1]
    gate = h[:, e:]
    h = h[:, :e] * ad.sigmoid(gate)
    h = ad.depthwise_conv1d(h, params[name + ".dw"])
    h = ad.relu(ad.rms_norm(h, params[name + ".norm_g"]))
    return _apply_linear(h, params, name + ".pw2")


def conformer_block(x: Tensor, attractors: Tensor, params: dict, name: str,
                    cfg: ModelConfig) -> Tensor:
    """FF/2, latent self-attention, conv, cross-attention to attractors,
    conv, FF/2, then a closing layer norm; residuals on every sublayer."""
    x = x + 0.5 * _feed_forward(x, params, f"{name}.ff1")
    x = x + latte_attention(_apply_ln(x, params, f"{name}.latte.ln"),
                            params, f"{name}.latte", cfg)
    x = x + _conv_block(x, params, f"{name}.conv1")
    x = x + multihead_attention(_apply_ln(x, params, f"{name}.xattn.ln"),
                                attractors, params, f"{name}.xattn", cfg.heads)
    x = x + _conv_block(x, params, f"{name}.conv2")
    x = x + 0.5 * _feed_forward(x, params, f"{name}.ff2")
    return _apply_ln(x, params, f"{name}.out_ln")


def attractor_decode(attractors: Tensor, x: Tensor, params: dict, name: str,
                     cfg: ModelConfig) -> Tensor:
    """One decoder layer: slots self-attend, then cross-attend to the frames,
    each attention followed by a feed-forward; pre-norm residuals throughout."""
    a = attractors
    a_n = _apply_ln(a, params, f"{name}.self.ln")
    a = a + multihead_attention(a_n, a_n, params, f"{name}.self", cfg.heads)
    a = a + _feed_forward(a, params, f"{name}.ff1")
    a = a + multihead_attention(_apply_ln(a, params, f"{name}.cross.ln"), x,
                                params, f"{name}.cross", cfg.heads)
    a = a + _feed_forward(a, params, f"{name}.ff2")
    return a


def sap_pool(stack: list[Tensor], params: dict, name: str) -> Tensor:
    """Score each depth entry per time step, softmax over depth, weighted sum."""
    if not stack:
        raise ConfigError("depth stack is empty")
    if len(stack) == 1:
        return stack[0]
    h = ad.stack(stack, axis=0)                       # (d, T, E)
    d, t, e = h.shape
    flat = h.reshape(d * t, e)
    s = ad.relu(_apply_linear(flat, params, name + ".w1"))
    s = _apply_linear(s, params, name + ".w2")        # (d*t, 1)
    weights = ad.softmax(s.reshape(d, t, 1), axis=0)  # softmax over depth
    return (weights * h).sum(axis=0)


# ---------------------------------------------------------------------------
# full forward
# ---------------------------------------------------------------------------

def split_attractors(attractors: Tensor, params: dict) -> tuple[Tensor, Tensor]:
    """Normalize, project each slot E -> E+1, split into direction and bias.

    The attractor residual stream is unnormalized; the closing layer norm
    keeps logit scale independent of decoder depth.
    """
    a_n = _apply_ln(attractors, params, "head.ln")
    proj = _apply_linear(a_n, params, "head.split")   # (S, E+1)
    e = attractors.shape[-1]
    return proj[:, :e], proj[:, e]


def forward(x0: Tensor, params: dict, cfg: ModelConfig) -> ForwardResult:
    """Run the decoder stack on front-end embeddings for one recording."""
    if x0.ndim != 2 or x0.shape[1] != cfg.embed_dim:
        raise ConfigError(f"expected (T, {cfg.embed_dim}) embeddings, got {x0.shape}")
    if "attractors.init" not in params:
        raise ConfigError("parameter store is missing attractors.init")
    if params["attractors.init"].shape != (cfg.n_attractors, cfg.embed_dim):
        raise ConfigError(
            f"attractors.init has shape {params['attractors.init'].shape}, "
            f"config wants {(cfg.n_attractors, cfg.embed_dim)}")

    x = x0
    stack = [x0]
    attractors = params["attractors.init"]
    for d in range(1, cfg.depth + 1):
        if d >= 2:
            # pooled depth summary re-injected as a global residual; before
            # block 1 the stack is just x0 and the residual would double it
            x = x + sap_pool(stack, params, f"sap{d}")
        attractors = attractor_decode(attractors, x, params, f"adec{d}", cfg)
        x = conformer_block(x, attractors, params, f"block{d}", cfg)
        stack.append(x)

    dirs, biases = split_attractors(attractors, params)
    logits = ad.matmul(x, dirs.transpose(1, 0)) + biases.reshape(1, -1) \
        + params["head.b_global"]
    return ForwardResult(logits=logits, frames=x, attractor_dirs=dirs,
                         attractor_biases=biases, global_bias=params["head.b_global"])


def predict_probs(clip, params: dict, cfg: ModelConfig, feat_cfg=None) -> np.ndarray:
    """Inference: audio clip -> per-frame speaker probabilities (T, S)."""
    from .frontend import encode_clip

    with ad.no_grad():
        x0 = encode_clip(clip, params, cfg.embed_dim, feat_cfg)
        res = forward(x0, params, cfg)
        return ad.sigmoid(res.logits).data


def param_count(params: dict) -> int:
    return sum(int(np.prod(t.shape)) for t in params.values())


def zero_grads(params: dict) -> None:
    for t in params.values():
        t.grad = None
