"""Shared masked-attention encoder, stacked relation layers, task heads.

The encoder is a standard pre-norm transformer whose attention logits get
an additive -1e9 at disallowed (query, key) pairs, which underflows to an
exactly-zero weight after softmax. Each relation layer specializes the
extraction and generation streams with a residual ReLU projection, then
lets each stream attend over the other (unscaled dot products). The
co-attention reuses the same permission mask so that source positions
never see the target and target positions never see their future; without
it the label head would leak information from the generation segment.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .data import N_LABELS
from .params import ParameterStore

MASK_BIAS = -1e9


@dataclass
class EncoderConfig:
    vocab_size: int
    d_model: int = 64
    n_heads: int = 4
    n_layers: int = 2
    ff_width: int = 128
    dropout: float = 0.5
    max_len: int = 128
    srl_layers: int = 2

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ValueError(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        if self.srl_layers < 0:
            raise ValueError("srl_layers must be >= 0")

    def to_dict(self):
        return dict(self.__dict__)


def mask_to_bias(attn_mask):
    """bool permission matrix -> additive float bias (0 allowed, -1e9 not)."""
    return np.where(attn_mask, 0.0, MASK_BIAS).astype(np.float32)


class KeyphraseModel:
    """Joint extractor-generator over a ParameterStore."""

    def __init__(self, config, store=None, seed=0):
        self.config = config
        if store is None:
            store = ParameterStore(seed=seed)
            self._build(store)
        self.store = store

    def _build(self, store):
        c = self.config
        d = c.d_model
        store.add("embed.token", (c.vocab_size, d), fan_in=d)
        store.add("embed.pos", (c.max_len, d), fan_in=d)
        store.add("embed.seg", (2, d), fan_in=d)
        for i in range(c.n_layers):
            p = f"enc{i}"
            store.add(f"{p}.ln1.g", (d,), init="ones")
            store.add(f"{p}.ln1.b", (d,), init="zeros")
            for name in ("wq", "wk", "wv", "wo"):
                store.add(f"{p}.attn.{name}", (d, d))
                if name != "wk":
                    # a key bias shifts every logit in a softmax row equally
                    # and cancels exactly, so it would be a dead parameter
                    store.add(f"{p}.attn.{name[1]}b", (d,), init="zeros")
            store.add(f"{p}.ln2.g", (d,), init="ones")
            store.add(f"{p}.ln2.b", (d,), init="zeros")
            store.add(f"{p}.ff.w1", (d, c.ff_width))
            store.add(f"{p}.ff.b1", (c.ff_width,), init="zeros")
            store.add(f"{p}.ff.w2", (c.ff_width, d))
            store.add(f"{p}.ff.b2", (d,), init="zeros")
        store.add("enc.ln_out.g", (d,), init="ones")
        store.add("enc.ln_out.b", (d,), init="zeros")
        for l in range(c.srl_layers):
            p = f"rel{l}"
            for s in ("p", "a"):
                store.add(f"{p}.{s}_proj.w", (d, d))
                store.add(f"{p}.{s}_proj.b", (d,), init="zeros")
                store.add(f"{p}.{s}_spec_ln.g", (d,), init="ones")
                store.add(f"{p}.{s}_spec_ln.b", (d,), init="zeros")
                store.add(f"{p}.{s}_co_ln.g", (d,), init="ones")
                store.add(f"{p}.{s}_co_ln.b", (d,), init="zeros")
        store.add("head.present.w", (d, N_LABELS))
        store.add("head.present.b", (N_LABELS,), init="zeros")
        store.add("head.absent.w", (d, c.vocab_size))
        store.add("head.absent.b", (c.vocab_size,), init="zeros")

    # ---- encoder ----

    def _attention(self, x, bias, layer):
        c = self.config
        s = self.store
        p = f"enc{layer}.attn"
        nd = x.data.ndim
        t = x.data.shape[-2]
        dh = c.d_model // c.n_heads
        heads_shape = x.data.shape[:-1] + (c.n_heads, dh)
        # [..., T, h, dh] -> [..., h, T, dh]
        perm = tuple(range(nd - 2)) + (nd - 1, nd - 2, nd)

        def split(t_):
            return ad.transpose(ad.reshape(t_, heads_shape), perm)

        q = split(ad.matmul(x, s[p + ".wq"]) + s[p + ".qb"])
        k = split(ad.matmul(x, s[p + ".wk"]))
        v = split(ad.matmul(x, s[p + ".wv"]) + s[p + ".vb"])
        scores = ad.matmul(q, ad.transpose(k, tuple(range(nd - 1)) + (nd, nd - 1))) * (1.0 / np.sqrt(dh))
        probs = ad.row_softmax(scores, bias=bias)
        ctx = ad.transpose(ad.matmul(probs, v), perm)
        ctx = ad.reshape(ctx, x.data.shape[:-1] + (c.d_model,))
        return ad.matmul(ctx, s[p + ".wo"]) + s[p + ".ob"]

    def hidden(self, ids, segments, bias):
        """Encode an id array (rank 1 or 2 for batched beams) into states."""
        c = self.config
        s = self.store
        t = ids.shape[-1]
        if t > c.max_len:
            raise ValueError(f"sequence length {t} exceeds max_len {c.max_len}")
        positions = np.broadcast_to(np.arange(t), ids.shape)
        x = ad.gather_rows(s["embed.token"], ids) + ad.gather_rows(s["embed.pos"], positions)
        x = x + ad.gather_rows(s["embed.seg"], segments)
        for i in range(c.n_layers):
            h = ad.layer_norm(x, s[f"enc{i}.ln1.g"], s[f"enc{i}.ln1.b"])
            x = x + self._attention(h, bias, i)
            h = ad.layer_norm(x, s[f"enc{i}.ln2.g"], s[f"enc{i}.ln2.b"])
            h = ad.relu(ad.matmul(h, s[f"enc{i}.ff.w1"]) + s[f"enc{i}.ff.b1"])
            x = x + (ad.matmul(h, s[f"enc{i}.ff.w2"]) + s[f"enc{i}.ff.b2"])
        return ad.layer_norm(x, s["enc.ln_out.g"], s["enc.ln_out.b"])

    # ---- relation stack ----

    def specialize(self, stream, layer, which):
        s = self.store
        p = f"rel{layer}.{which}"
        proj = ad.relu(ad.matmul(stream, s[p + "_proj.w"]) + s[p + "_proj.b"])
        return ad.layer_norm(stream + proj, s[p + "_spec_ln.g"], s[p + "_spec_ln.b"])

    def coattend(self, p_spec, a_spec, layer, bias=None):
        """Cross-stream attention, unscaled dot products, optional mask bias."""
        s = self.store
        nd = p_spec.data.ndim
        swap = tuple(range(nd - 2)) + (nd - 1, nd - 2)
        a_t = ad.transpose(a_spec, swap)
        p_t = ad.transpose(p_spec, swap)
        pa = ad.matmul(p_spec, a_t)
        ap = ad.matmul(a_spec, p_t)
        p_new = p_spec + ad.matmul(ad.row_softmax(pa, bias=bias), a_spec)
        a_new = a_spec + ad.matmul(ad.row_softmax(ap, bias=bias), p_spec)
        pre = f"rel{layer}."
        p_out = ad.layer_norm(p_new, s[pre + "p_co_ln.g"], s[pre + "p_co_ln.b"])
        a_out = ad.layer_norm(a_new, s[pre + "a_co_ln.g"], s[pre + "a_co_ln.b"])
        return p_out, a_out

    def task_streams(self, h, bias, train=False, rng=None):
        """L relation layers over shared initial streams P0 == A0 == H."""
        c = self.config
        p_stream, a_stream = h, h
        for l in range(c.srl_layers):
            p_spec = self.specialize(p_stream, l, "p")
            a_spec = self.specialize(a_stream, l, "a")
            p_stream, a_stream = self.coattend(p_spec, a_spec, l, bias)
            if train and c.dropout > 0.0:
                p_stream = ad.dropout(p_stream, c.dropout, rng)
                a_stream = ad.dropout(a_stream, c.dropout, rng)
        return p_stream, a_stream

    # ---- heads ----

    def label_probs(self, p_stream, doc_positions):
        s = self.store
        rows = ad.gather_rows(p_stream, doc_positions)
        return ad.row_softmax(ad.matmul(rows, s["head.present.w"]) + s["head.present.b"])

    def token_probs(self, a_stream, mask_positions):
        s = self.store
        rows = ad.gather_rows(a_stream, mask_positions)
        return ad.row_softmax(ad.matmul(rows, s["head.absent.w"]) + s["head.absent.b"])

    def forward(self, enc, train=False, rng=None):
        """Full pass for one EncodedInput -> (label probs, token probs)."""
        bias = mask_to_bias(enc.attn_mask)
        h = self.hidden(enc.ids, enc.segments, bias)
        p_stream, a_stream = self.task_streams(h, bias, train=train, rng=rng)
        y_p = self.label_probs(p_stream, enc.doc_positions)
        y_a = self.token_probs(a_stream, enc.mask_positions)
        return y_p, y_a

    def forward_batch(self, encs, train=False, rng=None):
        """Padded batch pass. Returns row-concatenated (y_p, y_a) plus the
        per-sample row ranges into each. Padded positions are fully masked
        as keys and never read, so their garbage rows are inert."""
        n = len(encs)
        t = max(e.total_len for e in encs)
        ids = np.zeros((n, t), dtype=np.int64)
        segments = np.zeros((n, t), dtype=np.int64)
        bias = np.full((n, 1, t, t), MASK_BIAS, dtype=np.float32)
        doc_idx, mask_idx, doc_slices, mask_slices = [], [], [], []
        for b, e in enumerate(encs):
            size = e.total_len
            ids[b, :size] = e.ids
            segments[b, :size] = e.segments
            bias[b, 0, :size, :size] = mask_to_bias(e.attn_mask)
            doc_slices.append((len(doc_idx), len(doc_idx) + len(e.doc_positions)))
            doc_idx.extend(b * t + e.doc_positions)
            mask_slices.append((len(mask_idx), len(mask_idx) + len(e.mask_positions)))
            mask_idx.extend(b * t + e.mask_positions)
        h = self.hidden(ids, segments, bias)
        p_stream, a_stream = self.task_streams(h, bias[:, 0], train=train, rng=rng)
        p_flat = ad.reshape(p_stream, (n * t, self.config.d_model))
        a_flat = ad.reshape(a_stream, (n * t, self.config.d_model))
        y_p = self.label_probs(p_flat, np.array(doc_idx, dtype=np.int64))
        y_a = self.token_probs(a_flat, np.array(mask_idx, dtype=np.int64))
        return y_p, y_a, doc_slices, mask_slices

    def streams_for(self, enc):
        """Inference-mode task streams for one input (no dropout, no grads)."""
        bias = mask_to_bias(enc.attn_mask)
        h = self.hidden(enc.ids, enc.segments, bias)
        return self.task_streams(h, bias, train=False)
