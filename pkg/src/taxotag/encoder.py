"""Self-attention text encoder with a two-stage linear projection head.

The forward pass maps a fixed-length token sequence through learned token
and position embeddings, ``n_layers`` post-norm attention blocks (multi-head
scaled dot-product attention with a key padding mask, residual, layer norm,
then a ReLU feed-forward sublayer, residual, layer norm), pools the first
([CLS]) position and applies two purely linear projections to produce the
query embedding.

Everything runs on float64 numpy arrays.  Parameters live in a flat
``name -> array`` mapping so optimizers, gradient checks and serialization
can treat them uniformly, and the exact reverse-mode gradients are
implemented by hand in :func:`encode_batch_backward`.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import InputError
from .tokenizer import TokenSequence

LAYER_NORM_EPS = 1e-5
INIT_SCALE = 0.05

Params = dict[str, np.ndarray]


@dataclass(frozen=True)
class EncoderConfig:
    d_model: int = 64
    n_heads: int = 4
    n_layers: int = 2
    d_ff: int = 128
    d_hidden_proj: int = 48
    d_label: int = 32
    max_len: int = 64

    def __post_init__(self) -> None:
        for name, value in asdict(self).items():
            if not isinstance(value, int) or value < 1:
                raise InputError(f"{name} must be a positive integer, got {value!r}")
        if self.d_model % self.n_heads != 0:
            raise InputError(
                f"n_heads={self.n_heads} must divide d_model={self.d_model}"
            )

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads


def expected_shapes(config: EncoderConfig, vocab_size: int) -> dict[str, tuple[int, ...]]:
    """Parameter name -> shape map; also fixes the initialization order."""
    d, ff, dh, dl = config.d_model, config.d_ff, config.d_hidden_proj, config.d_label
    shapes: dict[str, tuple[int, ...]] = {
        "tok_emb": (vocab_size, d),
        "pos_emb": (config.max_len, d),
    }
    for i in range(config.n_layers):
        p = f"layers.{i}."
        shapes[p + "attn.wq"] = (d, d)
        shapes[p + "attn.bq"] = (d,)
        shapes[p + "attn.wk"] = (d, d)
        shapes[p + "attn.bk"] = (d,)
        shapes[p + "attn.wv"] = (d, d)
        shapes[p + "attn.bv"] = (d,)
        shapes[p + "attn.wo"] = (d, d)
        shapes[p + "attn.bo"] = (d,)
        shapes[p + "ln1.gain"] = (d,)
        shapes[p + "ln1.bias"] = (d,)
        shapes[p + "ff.w1"] = (d, ff)
        shapes[p + "ff.b1"] = (ff,)
        shapes[p + "ff.w2"] = (ff, d)
        shapes[p + "ff.b2"] = (d,)
        shapes[p + "ln2.gain"] = (d,)
        shapes[p + "ln2.bias"] = (d,)
    shapes["proj1.w"] = (d, dh)
    shapes["proj1.b"] = (dh,)
    shapes["proj2.w"] = (dh, dl)
    shapes["proj2.b"] = (dl,)
    return shapes


def init_params(config: EncoderConfig, vocab_size: int, rng: np.random.Generator) -> Params:
    """Seeded initialization: uniform(-0.05, 0.05) weight matrices and
    embeddings, layer-norm gains 1, every bias 0."""
    params: Params = {}
    for name, shape in expected_shapes(config, vocab_size).items():
        if name.endswith(".gain"):
            params[name] = np.ones(shape)
        elif len(shape) == 1:
            params[name] = np.zeros(shape)
        else:
            params[name] = rng.uniform(-INIT_SCALE, INIT_SCALE, size=shape)
    return params


def softmax(x) -> np.ndarray:
    """Numerically stable softmax of a vector: exp(x - max) / sum."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise InputError("softmax expects a non-empty vector")
    if not np.all(np.isfinite(x)):
        raise InputError("softmax input must be finite")
    z = np.exp(x - np.max(x))
    return z / z.sum()


def _softmax_last(scores: np.ndarray) -> np.ndarray:
    # Rows may contain -inf at masked positions but never everywhere.
    z = np.exp(scores - scores.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


def scaled_attention(Q, K, V, mask=None) -> np.ndarray:
    """Single-head scaled dot-product attention over one sequence.

    Row i of the result is sum_j w_ij * V[j] with w_i the softmax over
    unmasked positions of Q[i].K[j] / sqrt(d_k); masked positions get
    pre-softmax score -inf, hence weight exactly zero.
    """
    Q = np.asarray(Q, dtype=np.float64)
    K = np.asarray(K, dtype=np.float64)
    V = np.asarray(V, dtype=np.float64)
    if Q.ndim != 2 or K.ndim != 2 or V.ndim != 2:
        raise InputError("Q, K, V must be matrices")
    n = Q.shape[0]
    if K.shape[0] != n or V.shape[0] != n:
        raise InputError("Q, K, V must have equal row counts")
    if Q.shape[1] != K.shape[1] or Q.shape[1] < 1:
        raise InputError("Q and K must share a positive key dimension")
    scores = Q @ K.T / math.sqrt(Q.shape[1])
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (n,):
            raise InputError(f"mask must have length {n}")
        if not mask.any():
            raise InputError("all positions masked")
        scores[:, ~mask] = -np.inf
    return _softmax_last(scores) @ V


def _layer_norm(x: np.ndarray, gain: np.ndarray, bias: np.ndarray):
    mean = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + LAYER_NORM_EPS)
    xhat = (x - mean) * inv_std
    return gain * xhat + bias, xhat, inv_std


def _layer_norm_backward(d_out, xhat, inv_std, gain):
    d_gain = (d_out * xhat).sum(axis=(0, 1))
    d_bias = d_out.sum(axis=(0, 1))
    g = d_out * gain
    dx = inv_std * (
        g
        - g.mean(axis=-1, keepdims=True)
        - xhat * (g * xhat).mean(axis=-1, keepdims=True)
    )
    return dx, d_gain, d_bias


def _split_heads(x: np.ndarray, n_heads: int) -> np.ndarray:
    b, length, d = x.shape
    return x.reshape(b, length, n_heads, d // n_heads).transpose(0, 2, 1, 3)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    b, h, length, dk = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, length, h * dk)


def _validate_batch(ids: np.ndarray, mask: np.ndarray, params: Params, config: EncoderConfig):
    if ids.ndim != 2 or ids.shape != mask.shape:
        raise InputError("ids and mask must be matching (batch, length) arrays")
    if ids.shape[1] != config.max_len:
        raise InputError(
            f"sequence length {ids.shape[1]} does not match max_len {config.max_len}"
        )
    vocab_size = params["tok_emb"].shape[0]
    if ids.min() < 0 or ids.max() >= vocab_size:
        raise InputError(f"token id out of range for vocabulary of size {vocab_size}")
    if not mask.any(axis=1).all():
        raise InputError("every sequence needs at least one unmasked position")


def encode_batch(ids, mask, params: Params, config: EncoderConfig, want_cache: bool = False):
    """Forward pass over a batch.

    Returns (embeddings of shape (batch, d_label), cache).  The cache holds
    every intermediate needed by :func:`encode_batch_backward` and is None
    unless requested.
    """
    ids = np.asarray(ids, dtype=np.int64)
    mask = np.asarray(mask, dtype=bool)
    _validate_batch(ids, mask, params, config)

    x = params["tok_emb"][ids] + params["pos_emb"][None, : config.max_len, :]
    x0 = x
    key_mask = mask[:, None, None, :]  # broadcast over heads and query rows

    layer_caches = []
    for i in range(config.n_layers):
        p = f"layers.{i}."
        x_in = x
        q = x_in @ params[p + "attn.wq"] + params[p + "attn.bq"]
        k = x_in @ params[p + "attn.wk"] + params[p + "attn.bk"]
        v = x_in @ params[p + "attn.wv"] + params[p + "attn.bv"]
        qh = _split_heads(q, config.n_heads)
        kh = _split_heads(k, config.n_heads)
        vh = _split_heads(v, config.n_heads)
        scores = qh @ kh.transpose(0, 1, 3, 2) / math.sqrt(config.d_head)
        scores = np.where(key_mask, scores, -np.inf)
        attn_w = _softmax_last(scores)
        concat = _merge_heads(attn_w @ vh)
        attn_out = concat @ params[p + "attn.wo"] + params[p + "attn.bo"]

        r1 = x_in + attn_out
        x1, xhat1, inv_std1 = _layer_norm(r1, params[p + "ln1.gain"], params[p + "ln1.bias"])

        f_pre = x1 @ params[p + "ff.w1"] + params[p + "ff.b1"]
        f_act = np.maximum(f_pre, 0.0)
        f_out = f_act @ params[p + "ff.w2"] + params[p + "ff.b2"]

        r2 = x1 + f_out
        x, xhat2, inv_std2 = _layer_norm(r2, params[p + "ln2.gain"], params[p + "ln2.bias"])

        if want_cache:
            layer_caches.append(
                {
                    "x_in": x_in, "qh": qh, "kh": kh, "vh": vh, "attn_w": attn_w,
                    "concat": concat, "xhat1": xhat1, "inv_std1": inv_std1,
                    "x1": x1, "f_pre": f_pre, "f_act": f_act,
                    "xhat2": xhat2, "inv_std2": inv_std2,
                }
            )

    h_cls = x[:, 0, :]
    p1 = h_cls @ params["proj1.w"] + params["proj1.b"]
    out = p1 @ params["proj2.w"] + params["proj2.b"]

    cache = None
    if want_cache:
        cache = {"ids": ids, "x0": x0, "layers": layer_caches, "h_cls": h_cls, "p1": p1}
    return out, cache


def encode_batch_backward(d_out: np.ndarray, cache: dict, params: Params, config: EncoderConfig) -> Params:
    """Exact gradients of the forward pass for every parameter tensor."""
    grads: Params = {name: np.zeros_like(arr) for name, arr in params.items()}
    inv_sqrt_dk = 1.0 / math.sqrt(config.d_head)

    grads["proj2.w"] = cache["p1"].T @ d_out
    grads["proj2.b"] = d_out.sum(axis=0)
    d_p1 = d_out @ params["proj2.w"].T
    grads["proj1.w"] = cache["h_cls"].T @ d_p1
    grads["proj1.b"] = d_p1.sum(axis=0)
    d_h = d_p1 @ params["proj1.w"].T

    batch, length = cache["ids"].shape
    dx = np.zeros((batch, length, config.d_model))
    dx[:, 0, :] = d_h

    for i in reversed(range(config.n_layers)):
        p = f"layers.{i}."
        lc = cache["layers"][i]

        d_r2, d_g2, d_b2 = _layer_norm_backward(dx, lc["xhat2"], lc["inv_std2"], params[p + "ln2.gain"])
        grads[p + "ln2.gain"] = d_g2
        grads[p + "ln2.bias"] = d_b2

        d_x1 = d_r2.copy()  # residual branch
        d_fout = d_r2
        grads[p + "ff.w2"] = np.einsum("blf,bld->fd", lc["f_act"], d_fout)
        grads[p + "ff.b2"] = d_fout.sum(axis=(0, 1))
        d_fact = d_fout @ params[p + "ff.w2"].T
        d_fpre = d_fact * (lc["f_pre"] > 0)
        grads[p + "ff.w1"] = np.einsum("bld,blf->df", lc["x1"], d_fpre)
        grads[p + "ff.b1"] = d_fpre.sum(axis=(0, 1))
        d_x1 += d_fpre @ params[p + "ff.w1"].T

        d_r1, d_g1, d_b1 = _layer_norm_backward(d_x1, lc["xhat1"], lc["inv_std1"], params[p + "ln1.gain"])
        grads[p + "ln1.gain"] = d_g1
        grads[p + "ln1.bias"] = d_b1

        d_x_in = d_r1.copy()  # residual branch
        d_attn_out = d_r1
        grads[p + "attn.wo"] = np.einsum("bld,ble->de", lc["concat"], d_attn_out)
        grads[p + "attn.bo"] = d_attn_out.sum(axis=(0, 1))
        d_concat = d_attn_out @ params[p + "attn.wo"].T
        d_ho = _split_heads(d_concat, config.n_heads)

        attn_w, vh = lc["attn_w"], lc["vh"]
        d_attn_w = np.einsum("bhld,bhmd->bhlm", d_ho, vh)
        d_vh = np.einsum("bhlm,bhld->bhmd", attn_w, d_ho)
        d_scores = attn_w * (d_attn_w - (d_attn_w * attn_w).sum(axis=-1, keepdims=True))
        d_qh = np.einsum("bhlm,bhmd->bhld", d_scores, lc["kh"]) * inv_sqrt_dk
        d_kh = np.einsum("bhlm,bhld->bhmd", d_scores, lc["qh"]) * inv_sqrt_dk

        d_q = _merge_heads(d_qh)
        d_k = _merge_heads(d_kh)
        d_v = _merge_heads(d_vh)
        x_in = lc["x_in"]
        grads[p + "attn.wq"] = np.einsum("bld,ble->de", x_in, d_q)
        grads[p + "attn.bq"] = d_q.sum(axis=(0, 1))
        grads[p + "attn.wk"] = np.einsum("bld,ble->de", x_in, d_k)
        grads[p + "attn.bk"] = d_k.sum(axis=(0, 1))
        grads[p + "attn.wv"] = np.einsum("bld,ble->de", x_in, d_v)
        grads[p + "attn.bv"] = d_v.sum(axis=(0, 1))
        d_x_in += d_q @ params[p + "attn.wq"].T
        d_x_in += d_k @ params[p + "attn.wk"].T
        d_x_in += d_v @ params[p + "attn.wv"].T
        dx = d_x_in

    np.add.at(grads["tok_emb"], cache["ids"], dx)
    grads["pos_emb"] = dx.sum(axis=0)
    return grads


def encode_sequence(seq: TokenSequence, params: Params, config: EncoderConfig) -> np.ndarray:
    """Deterministic forward pass of one sequence; returns the d_label vector."""
    out, _ = encode_batch(seq.ids[None, :], seq.mask[None, :], params, config)
    return out[0]


def save_model(path, params: Params, config: EncoderConfig, vocab_hash: str) -> None:
    """Write a single JSON document holding config, vocab hash and tensors.

    JSON float rendering round-trips float64 exactly, so saving and loading
    preserves parameters bit for bit and identical models produce identical
    files byte for byte.
    """
    doc = {
        "config": asdict(config),
        "vocab_hash": vocab_hash,
        "params": {
            name: {"shape": list(arr.shape), "data": arr.ravel().tolist()}
            for name, arr in params.items()
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load_model(path) -> tuple[Params, EncoderConfig, str]:
    """Load a model file, validating every tensor shape against its config."""
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InputError(f"unreadable model file {path}: {exc}") from exc
    try:
        config = EncoderConfig(**doc["config"])
        vocab_hash = str(doc["vocab_hash"])
        raw = doc["params"]
    except (KeyError, TypeError) as exc:
        raise InputError(f"model file {path} is missing required entries: {exc}") from exc
    if "tok_emb" not in raw:
        raise InputError("model file lacks the token embedding tensor")
    vocab_size = int(raw["tok_emb"]["shape"][0])
    expected = expected_shapes(config, vocab_size)
    if set(raw) != set(expected):
        missing = sorted(set(expected) - set(raw))
        extra = sorted(set(raw) - set(expected))
        raise InputError(f"model tensors mismatch: missing={missing} unexpected={extra}")
    params: Params = {}
    for name, shape in expected.items():
        entry = raw[name]
        if tuple(entry["shape"]) != shape:
            raise InputError(
                f"tensor {name} has shape {tuple(entry['shape'])}, expected {shape}"
            )
        arr = np.asarray(entry["data"], dtype=np.float64).reshape(shape)
        if not np.all(np.isfinite(arr)):
            raise InputError(f"tensor {name} contains non-finite values")
        params[name] = arr
    return params, config, vocab_hash
