# models/decoder.py

"""
Single cross-attention decoder: every learnable query attends over the
scene tokens, followed by a residual two-layer feed-forward block.

Individual queries run the same decoder with anchors: query k is seeded with
scene token k (projected by attn_wa), which is added to the query content
before attention and to the attended features before the feed-forward block.
Anchored queries take the token's centre as their reference point.
"""

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from errors import InputError
from models.params import GradientBuffer, ModelParams

# clip for token centres before they become reference logits
REFERENCE_CLIP = 0.01


@dataclass
class DecoderCache:
    tokens: np.ndarray
    anchors: Optional[np.ndarray]
    content: np.ndarray
    q_proj: np.ndarray
    keys: np.ndarray
    values: np.ndarray
    attention: np.ndarray
    attended: np.ndarray
    ffn_in: np.ndarray
    ffn_pre: np.ndarray
    ffn_hidden: np.ndarray


def softmax(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def anchor_tokens(tokens: np.ndarray, n_queries: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Seed the first min(n, n_queries) queries with the scene tokens in order.

    Returns:
        (anchors, anchored): (n_queries, D_tok) anchors with zero rows for
        unanchored queries, and the boolean mask of anchored rows
    """
    tokens = np.asarray(tokens, dtype=np.float64)
    k = min(tokens.shape[0], n_queries)
    anchors = np.zeros((n_queries, tokens.shape[1]))
    anchors[:k] = tokens[:k]
    anchored = np.zeros(n_queries, dtype=bool)
    anchored[:k] = True
    return anchors, anchored


def anchor_reference(anchors: np.ndarray, anchored: np.ndarray, ref_logits: np.ndarray) -> np.ndarray:
    """Reference logits: token centre (first two components) on anchored rows, learned elsewhere."""
    centre = np.clip(anchors[:, :2], REFERENCE_CLIP, 1.0 - REFERENCE_CLIP)
    return np.where(anchored[:, None], np.log(centre / (1.0 - centre)), ref_logits)


def decoder_forward(params: ModelParams, tokens: np.ndarray, anchors: Optional[np.ndarray] = None):
    """
    Compute the query embeddings h for one scene.

    Args:
        params: Model parameters
        tokens: (n, D_tok) scene tokens, n >= 1
        anchors: Optional (N_q, D_tok) per-query anchor tokens

    Returns:
        (H, cache): H has shape (N_q, D_emb)

    Raises:
        InputError: If there are no tokens, their width is not D_tok or the
            anchors do not fit the queries
    """
    tokens = np.asarray(tokens, dtype=np.float64)
    if tokens.ndim != 2 or tokens.shape[0] == 0:
        raise InputError("scene has no tokens")
    d_tok = params["attn_wk"].shape[0]
    if tokens.shape[1] != d_tok:
        raise InputError(f"token dimension {tokens.shape[1]} != D_tok {d_tok}")

    queries = params["queries"]
    if anchors is None:
        anchor_proj = np.zeros_like(queries)
    else:
        anchors = np.asarray(anchors, dtype=np.float64)
        if anchors.shape != (queries.shape[0], d_tok):
            raise InputError(f"anchor shape {anchors.shape} does not match ({queries.shape[0]}, {d_tok})")
        anchor_proj = anchors @ params["attn_wa"]

    dim = params["attn_wq"].shape[0]
    content = queries + anchor_proj
    q_proj = content @ params["attn_wq"]
    keys = tokens @ params["attn_wk"]
    values = tokens @ params["attn_wv"]
    attention = softmax(q_proj @ keys.T / np.sqrt(dim))
    attended = attention @ values

    ffn_in = attended + anchor_proj
    ffn_pre = ffn_in @ params["ffn_w1"] + params["ffn_b1"]
    ffn_hidden = np.maximum(ffn_pre, 0.0)
    out = ffn_in + ffn_hidden @ params["ffn_w2"] + params["ffn_b2"]
    cache = DecoderCache(tokens, anchors, content, q_proj, keys, values, attention, attended, ffn_in, ffn_pre, ffn_hidden)
    return out, cache


def decoder_backward(params: ModelParams, cache: DecoderCache, d_out: np.ndarray, grads: GradientBuffer) -> None:
    """
    Accumulate decoder parameter gradients given dLoss/dH.

    Raises:
        InputError: If d_out does not match the cached forward pass
    """
    if d_out.shape != cache.attended.shape:
        raise InputError(f"gradient shape {d_out.shape} does not match cached output {cache.attended.shape}")
    dim = params["attn_wq"].shape[0]

    grads.accumulate("ffn_w2", cache.ffn_hidden.T @ d_out)
    grads.accumulate("ffn_b2", d_out.sum(axis=0))
    d_pre = (d_out @ params["ffn_w2"].T) * (cache.ffn_pre > 0)
    grads.accumulate("ffn_w1", cache.ffn_in.T @ d_pre)
    grads.accumulate("ffn_b1", d_pre.sum(axis=0))
    d_ffn_in = d_out + d_pre @ params["ffn_w1"].T

    a = cache.attention
    d_attention = d_ffn_in @ cache.values.T
    d_values = a.T @ d_ffn_in
    d_scores = a * (d_attention - (d_attention * a).sum(axis=1, keepdims=True)) / np.sqrt(dim)
    d_q_proj = d_scores @ cache.keys
    d_keys = d_scores.T @ cache.q_proj

    d_content = d_q_proj @ params["attn_wq"].T
    grads.accumulate("attn_wq", cache.content.T @ d_q_proj)
    grads.accumulate("queries", d_content)
    grads.accumulate("attn_wk", cache.tokens.T @ d_keys)
    grads.accumulate("attn_wv", cache.tokens.T @ d_values)
    if cache.anchors is not None:
        grads.accumulate("attn_wa", cache.anchors.T @ (d_content + d_ffn_in))
