"""Small pre-norm transformer encoder exposing every intermediate block state.

The classification token sits at position 0 of every sequence; its hidden
state after each block is what the per-block heads read.  Blocks are
executed through one generator so that full encoding, prefix encoding and
early-stopping inference all share bitwise-identical arithmetic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import ModelConfig
from .data import CLS_ID, PAD_ID

# Additive attention-score penalty for padding keys; large enough that the
# post-softmax weight underflows to exactly 0.0.
_MASK_VALUE = -1e30

LAYER_NORM_EPS = 1e-5


@dataclass
class BlockStates:
    """Hidden states of a (possibly partial) encoder run.

    ``hidden[0]`` is the embedding output, ``hidden[n]`` the output of block
    n; ``cls_states[n-1]`` is position 0 of ``hidden[n]``.
    """

    hidden: list
    cls_states: list


class _BlockParams:
    __slots__ = ("ln1_gain", "ln1_bias", "wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo",
                 "ln2_gain", "ln2_bias", "w1", "b1", "w2", "b2")


def _linear_weight(rng: np.random.Generator, fan_in: int, fan_out: int) -> Tensor:
    bound = 1.0 / math.sqrt(fan_in)
    return ad.parameter(rng.uniform(-bound, bound, size=(fan_in, fan_out)))


class Encoder:
    """Token + position embedding followed by ``num_blocks`` residual blocks.

    Keeps a running ``blocks_executed`` counter (one increment per block
    run) which is the raw measurement behind the efficiency metric.
    """

    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        self.config = config
        d = config.hidden_dim
        self.token_emb = ad.parameter(rng.normal(0.0, 0.02, size=(config.vocab_size, d)))
        self.pos_emb = ad.parameter(rng.normal(0.0, 0.02, size=(config.max_seq_len, d)))
        self.blocks = [self._init_block(rng) for _ in range(config.num_blocks)]
        self.blocks_executed = 0
        self.truncation_count = 0
        self.last_truncated = False

    def _init_block(self, rng) -> _BlockParams:
        cfg = self.config
        d, f = cfg.hidden_dim, cfg.ffn_dim
        p = _BlockParams()
        p.ln1_gain = ad.parameter(np.ones(d))
        p.ln1_bias = ad.parameter(np.zeros(d))
        p.wq = _linear_weight(rng, d, d)
        p.bq = ad.parameter(np.zeros(d))
        p.wk = _linear_weight(rng, d, d)
        p.bk = ad.parameter(np.zeros(d))
        p.wv = _linear_weight(rng, d, d)
        p.bv = ad.parameter(np.zeros(d))
        p.wo = _linear_weight(rng, d, d)
        p.bo = ad.parameter(np.zeros(d))
        p.ln2_gain = ad.parameter(np.ones(d))
        p.ln2_bias = ad.parameter(np.zeros(d))
        p.w1 = _linear_weight(rng, d, f)
        p.b1 = ad.parameter(np.zeros(f))
        p.w2 = _linear_weight(rng, f, d)
        p.b2 = ad.parameter(np.zeros(d))
        return p

    def named_parameters(self):
        params = [("embed.token", self.token_emb), ("embed.pos", self.pos_emb)]
        for i, p in enumerate(self.blocks):
            for slot in _BlockParams.__slots__:
                params.append((f"block{i}.{slot}", getattr(p, slot)))
        return params

    # -- input preparation -------------------------------------------------------

    def _prepare_ids(self, token_ids) -> np.ndarray:
        """Normalize raw ids: strip trailing padding, ensure a leading CLS, truncate.

        Trailing [PAD] ids are dropped before the run; padding exists for
        fixed-width storage and is fully masked anyway, so removing it
        changes nothing but the work done.  Sequences that do not already
        start with the CLS id get it prepended.
        """
        ids = np.asarray(list(token_ids), dtype=np.int64)
        keep = len(ids)
        while keep > 0 and ids[keep - 1] == PAD_ID:
            keep -= 1
        ids = ids[:keep]
        if len(ids) == 0 or ids[0] != CLS_ID:
            ids = np.concatenate([[CLS_ID], ids])
        self.last_truncated = len(ids) > self.config.max_seq_len
        if self.last_truncated:
            self.truncation_count += 1
            ids = ids[: self.config.max_seq_len]
        if ids.min() < 0 or ids.max() >= self.config.vocab_size:
            raise IndexError(
                f"token id out of range [0, {self.config.vocab_size}): {int(ids.max())}"
            )
        return ids

    def _embed_prepared(self, ids: np.ndarray) -> Tensor:
        tok = ad.embedding(self.token_emb, ids)
        pos = ad.embedding(self.pos_emb, np.arange(len(ids)))
        return ad.add(tok, pos)

    def embed(self, token_ids) -> Tensor:
        """Embed a raw id sequence; position 0 is always the CLS embedding."""
        return self._embed_prepared(self._prepare_ids(token_ids))

    # -- the transformer stack -----------------------------------------------------

    def _attention(self, x_norm: Tensor, p: _BlockParams, mask: Tensor, attn_sink=None) -> Tensor:
        cfg = self.config
        dh = cfg.hidden_dim // cfg.num_heads
        scale = 1.0 / math.sqrt(dh)
        q = ad.add(ad.matmul(x_norm, p.wq), p.bq)
        k = ad.add(ad.matmul(x_norm, p.wk), p.bk)
        v = ad.add(ad.matmul(x_norm, p.wv), p.bv)
        outs = []
        for h in range(cfg.num_heads):
            cols = (slice(None), slice(h * dh, (h + 1) * dh))
            qh, kh, vh = q[cols], k[cols], v[cols]
            scores = ad.add(ad.mul(ad.matmul(qh, ad.transpose(kh)), scale), mask)
            attn = ad.softmax(scores, axis=-1)
            if attn_sink is not None:
                attn_sink.append(attn.data.copy())
            outs.append(ad.matmul(attn, vh))
        merged = ad.concat(outs, axis=1)
        return ad.add(ad.matmul(merged, p.wo), p.bo)

    def _run_block(self, x: Tensor, i: int, mask: Tensor, attn_sink=None) -> Tensor:
        self.blocks_executed += 1
        p = self.blocks[i]
        normed = ad.layer_norm(x, p.ln1_gain, p.ln1_bias, LAYER_NORM_EPS)
        x = ad.add(x, self._attention(normed, p, mask, attn_sink))
        normed = ad.layer_norm(x, p.ln2_gain, p.ln2_bias, LAYER_NORM_EPS)
        hidden = ad.gelu(ad.add(ad.matmul(normed, p.w1), p.b1))
        return ad.add(x, ad.add(ad.matmul(hidden, p.w2), p.b2))

    def iter_hidden(self, token_ids, attn_sink=None):
        """Yield the embedding output, then each block output, lazily.

        Consumers that stop early leave the remaining blocks unexecuted
        (and uncounted).
        """
        ids = self._prepare_ids(token_ids)
        mask = Tensor(np.where(ids == PAD_ID, _MASK_VALUE, 0.0))
        x = self._embed_prepared(ids)
        yield x
        for i in range(self.config.num_blocks):
            x = self._run_block(x, i, mask, attn_sink)
            yield x

    def encode_prefix(self, token_ids, upto: int, attn_sink=None) -> BlockStates:
        """Run blocks 1..upto only; values match the same prefix of a full run."""
        if not (1 <= upto <= self.config.num_blocks):
            raise ValueError(f"upto must be in [1, {self.config.num_blocks}], got {upto}")
        hidden = []
        for x in self.iter_hidden(token_ids, attn_sink):
            hidden.append(x)
            if len(hidden) == upto + 1:
                break
        cls_states = [h[0] for h in hidden[1:]]
        return BlockStates(hidden=hidden, cls_states=cls_states)

    def encode(self, token_ids, attn_sink=None) -> BlockStates:
        """Run every block and return all intermediate states."""
        return self.encode_prefix(token_ids, self.config.num_blocks, attn_sink)
