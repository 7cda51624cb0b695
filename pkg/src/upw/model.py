"""Hierarchical unified pix/word transformer.

Two pre-norm GQA transformer stacks share one token-embedding table and
one prediction head over the unified vocabulary:

  * a local stack at width image_dim runs over the pixels of a single
    window, optionally prefixed with one conditioning vector projected
    down from the global stream; its hidden state at the window's last
    position is the window's summary embedding;
  * a global stack at width dim runs causally over the mixed sequence of
    lifted word embeddings and window summary embeddings.

Each pix token is therefore predicted from the global context of all
previous windows (and words) via the conditioning prefix, plus the
preceding pixels of its own window via the local causal mask. Blocks are
pre-norm with a GELU feed-forward of width 4x; positions are learned
absolute embeddings with separate local and global tables; weights are
initialized normal(0, 0.02), biases zero, norm gains one. There is no
final norm after the last block, so a zero-layer stack returns its input
embeddings unchanged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

from . import vocab
from .autodiff import Tensor, concatenate, gelu, layer_norm, linear, log_softmax, softmax
from .errors import (
    AlignmentError,
    ConfigError,
    EmptyInputError,
    InvalidTokenError,
    ShapeError,
)
from .folding import validate_factor
from .windows import WindowGrid


@dataclass
class ModelConfig:
    dim: int = 768
    layers: int = 12
    heads: int = 12
    kv_heads: int = 6
    image_dim: int = 768
    image_layers: int = 5
    fold_factor: int = 16
    image_size: int = 224
    window_size: int = 16

    def __post_init__(self):
        # layers/image_layers may be zero for empty-stack test configs;
        # everything else must be a positive integer.
        for f in fields(self):
            v = getattr(self, f.name)
            floor = 0 if f.name in ("layers", "image_layers") else 1
            if not isinstance(v, int) or isinstance(v, bool) or v < floor:
                raise ConfigError(f"{f.name} must be an integer >= {floor}, got {v!r}")
        validate_factor(self.fold_factor)
        if self.heads % self.kv_heads:
            raise ConfigError(
                f"kv_heads ({self.kv_heads}) must divide heads ({self.heads})"
            )
        if self.dim % self.heads:
            raise ConfigError(f"heads ({self.heads}) must divide dim ({self.dim})")
        if self.image_dim % self.heads:
            raise ConfigError(
                f"heads ({self.heads}) must divide image_dim ({self.image_dim})"
            )

    @classmethod
    def tiny(cls) -> "ModelConfig":
        """Desk-scale configuration: full gradient checks and training runs
        finish in minutes on one core."""
        return cls(
            dim=32,
            layers=2,
            heads=4,
            kv_heads=2,
            image_dim=32,
            image_layers=2,
            fold_factor=32,
            image_size=8,
            window_size=4,
        )

    @property
    def window_len(self) -> int:
        return self.window_size**2

    @property
    def padded_image_size(self) -> int:
        return math.ceil(self.image_size / self.window_size) * self.window_size

    @property
    def windows_per_side(self) -> int:
        return self.padded_image_size // self.window_size

    @property
    def num_windows(self) -> int:
        return self.windows_per_side**2

    @property
    def total_vocab(self) -> int:
        return vocab.total_vocab(self.fold_factor)


# -- attention masks -----------------------------------------------------


def causal_mask(n: int) -> np.ndarray:
    """Lower-triangular boolean mask: position i attends keys 0..i."""
    return np.tril(np.ones((n, n), dtype=bool))


def _sub_chunk_len(window_len: int, sub_size: int) -> int:
    side = math.isqrt(window_len)
    if side * side != window_len:
        raise ShapeError(f"window length {window_len} is not a square")
    if sub_size < 1 or side % sub_size:
        raise AlignmentError(f"sub size {sub_size} does not divide window side {side}")
    return sub_size * sub_size


def local_window_mask(
    window_len: int, condition_len: int, sub_size: int | None = None
) -> np.ndarray:
    """Mask rows for the window positions of a conditioned local sequence.

    Shape (window_len, condition_len + window_len). Every window position
    attends the whole conditioning prefix; among themselves the window
    positions are causal. With sub_size set, tokens are assumed to be in
    sub-window-major order and a position attends the prefix, every
    position of completed earlier sub-windows, and its own sub-window
    causally.
    """
    mask = np.zeros((window_len, condition_len + window_len), dtype=bool)
    mask[:, :condition_len] = True
    if sub_size is None:
        mask[:, condition_len:] = causal_mask(window_len)
        return mask
    chunk = _sub_chunk_len(window_len, sub_size)
    for p in range(window_len):
        own = p // chunk
        for q in range(window_len):
            if q // chunk < own or (q // chunk == own and q <= p):
                mask[p, condition_len + q] = True
    return mask


def full_local_mask(
    window_len: int, condition_len: int, sub_size: int | None = None
) -> np.ndarray:
    """Square mask for the whole local sequence, prefix rows included.

    Prefix positions are causal among themselves and never look into the
    window; window rows follow local_window_mask.
    """
    n = condition_len + window_len
    mask = np.zeros((n, n), dtype=bool)
    mask[:condition_len, :condition_len] = causal_mask(condition_len)
    mask[condition_len:] = local_window_mask(window_len, condition_len, sub_size)
    return mask


def _validate_mask(mask: np.ndarray, q_len: int, k_len: int) -> np.ndarray:
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (q_len, k_len):
        raise ShapeError(
            f"mask shape {mask.shape} does not match query/key lengths ({q_len}, {k_len})"
        )
    if q_len and not mask.any(axis=1).all():
        raise ShapeError("attention mask has an all-masked query row")
    return mask


# -- grouped-query attention ----------------------------------------------


def gqa_attention(
    q: Tensor, k: Tensor, v: Tensor, mask: np.ndarray, heads: int, kv_heads: int
) -> Tensor:
    """Scaled dot-product attention with grouped key/value heads.

    q has width heads*d_head, k and v width kv_heads*d_head; each kv head
    serves heads/kv_heads consecutive query heads. Masked positions get
    exactly zero weight. Returns the concatenated heads (Tq, heads*d_head);
    the owning block applies the output projection.
    """
    if kv_heads < 1 or heads % kv_heads:
        raise ConfigError(f"kv_heads ({kv_heads}) must divide heads ({heads})")
    if q.ndim != 2 or k.ndim != 2 or v.ndim != 2:
        raise ShapeError("q, k, v must be 2-D (sequence, width)")
    tq, qw = q.shape
    tk, kw = k.shape
    if qw % heads:
        raise ShapeError(f"query width {qw} not divisible by {heads} heads")
    dh = qw // heads
    if kw != kv_heads * dh or v.shape != (tk, kv_heads * dh):
        raise ShapeError(
            f"key/value width must be kv_heads*d_head = {kv_heads * dh}, "
            f"got k {k.shape}, v {v.shape}"
        )
    mask = _validate_mask(mask, tq, tk)
    group = heads // kv_heads

    qh = q.reshape(tq, heads, dh).transpose((1, 0, 2))
    kh = k.reshape(tk, kv_heads, dh).transpose((1, 0, 2))
    vh = v.reshape(tk, kv_heads, dh).transpose((1, 0, 2))
    if group > 1:
        kh = kh.reshape(kv_heads, 1, tk, dh).broadcast_to(
            (kv_heads, group, tk, dh)
        ).reshape(heads, tk, dh)
        vh = vh.reshape(kv_heads, 1, tk, dh).broadcast_to(
            (kv_heads, group, tk, dh)
        ).reshape(heads, tk, dh)

    scores = (qh @ kh.transpose((0, 2, 1))) * (1.0 / math.sqrt(dh))
    scores = scores.masked_fill(~mask[None, :, :], -np.inf)
    weights = softmax(scores, axis=-1)
    out = weights @ vh
    return out.transpose((1, 0, 2)).reshape(tq, heads * dh)


# -- parameter initialization ---------------------------------------------

INIT_STD = 0.02


def _init_block(
    params: dict, name: str, width: int, kv_width: int, rng: np.random.Generator
) -> None:
    """Weights normal(0, 0.02), biases zero, norm gains one."""

    def w(shape):
        return Tensor(rng.normal(0.0, INIT_STD, shape), requires_grad=True)

    def zeros(shape):
        return Tensor(np.zeros(shape), requires_grad=True)

    def ones(shape):
        return Tensor(np.ones(shape), requires_grad=True)

    hidden = 4 * width
    params[f"{name}.ln1.g"] = ones((width,))
    params[f"{name}.ln1.b"] = zeros((width,))
    params[f"{name}.attn.wq"] = w((width, width))
    params[f"{name}.attn.bq"] = zeros((width,))
    params[f"{name}.attn.wk"] = w((width, kv_width))
    params[f"{name}.attn.bk"] = zeros((kv_width,))
    params[f"{name}.attn.wv"] = w((width, kv_width))
    params[f"{name}.attn.bv"] = zeros((kv_width,))
    params[f"{name}.attn.wo"] = w((width, width))
    params[f"{name}.attn.bo"] = zeros((width,))
    params[f"{name}.ln2.g"] = ones((width,))
    params[f"{name}.ln2.b"] = zeros((width,))
    params[f"{name}.mlp.w1"] = w((width, hidden))
    params[f"{name}.mlp.b1"] = zeros((hidden,))
    params[f"{name}.mlp.w2"] = w((hidden, width))
    params[f"{name}.mlp.b2"] = zeros((width,))


class UnifiedPixWordModel:
    """Parameters plus forward passes for the two-level model."""

    def __init__(
        self,
        cfg: ModelConfig,
        rng: np.random.Generator | int = 0,
        max_global_len: int | None = None,
    ):
        self.cfg = cfg
        if max_global_len is None:
            max_global_len = max(cfg.num_windows + 8, 64)
        self.max_global_len = max_global_len
        if isinstance(rng, (int, np.integer)):
            rng = np.random.default_rng(int(rng))
        self.params: dict[str, Tensor] = {}
        self._init_params(rng)

    def _init_params(self, rng: np.random.Generator) -> None:
        cfg = self.cfg
        p = self.params

        def w(shape):
            return Tensor(rng.normal(0.0, INIT_STD, shape), requires_grad=True)

        def zeros(shape):
            return Tensor(np.zeros(shape), requires_grad=True)

        p["embed.tokens"] = w((cfg.total_vocab, cfg.image_dim))
        p["local.pos"] = w((cfg.window_len + 1, cfg.image_dim))
        p["global.pos"] = w((self.max_global_len, cfg.dim))
        for i in range(cfg.image_layers):
            kv_width = cfg.kv_heads * (cfg.image_dim // cfg.heads)
            _init_block(p, f"local.{i}", cfg.image_dim, kv_width, rng)
        for i in range(cfg.layers):
            kv_width = cfg.kv_heads * (cfg.dim // cfg.heads)
            _init_block(p, f"global.{i}", cfg.dim, kv_width, rng)
        p["bridge.up.w"] = w((cfg.image_dim, cfg.dim))
        p["bridge.up.b"] = zeros((cfg.dim,))
        p["bridge.down.w"] = w((cfg.dim, cfg.image_dim))
        p["bridge.down.b"] = zeros((cfg.image_dim,))
        p["head.w"] = w((cfg.dim, cfg.total_vocab))
        p["head.b"] = zeros((cfg.total_vocab,))

    # -- plumbing ------------------------------------------------------

    def zero_grads(self) -> None:
        for t in self.params.values():
            t.grad = None

    def _block(self, name: str, x: Tensor, mask: np.ndarray) -> Tensor:
        p = self.params
        cfg = self.cfg
        y = layer_norm(x, p[f"{name}.ln1.g"], p[f"{name}.ln1.b"])
        q = linear(y, p[f"{name}.attn.wq"], p[f"{name}.attn.bq"])
        k = linear(y, p[f"{name}.attn.wk"], p[f"{name}.attn.bk"])
        v = linear(y, p[f"{name}.attn.wv"], p[f"{name}.attn.bv"])
        a = gqa_attention(q, k, v, mask, cfg.heads, cfg.kv_heads)
        x = x + linear(a, p[f"{name}.attn.wo"], p[f"{name}.attn.bo"])
        y = layer_norm(x, p[f"{name}.ln2.g"], p[f"{name}.ln2.b"])
        h = gelu(linear(y, p[f"{name}.mlp.w1"], p[f"{name}.mlp.b1"]))
        return x + linear(h, p[f"{name}.mlp.w2"], p[f"{name}.mlp.b2"])

    def embed_ids(self, ids: np.ndarray) -> Tensor:
        ids = np.asarray(ids, dtype=np.int64)
        if ids.size and (ids.min() < 0 or ids.max() >= self.cfg.total_vocab):
            raise InvalidTokenError(
                f"unified id outside [0, {self.cfg.total_vocab})"
            )
        return self.params["embed.tokens"][ids]

    def lift(self, x: Tensor) -> Tensor:
        """image_dim -> dim (learned affine, even when widths match)."""
        return linear(x, self.params["bridge.up.w"], self.params["bridge.up.b"])

    def lower(self, x: Tensor) -> Tensor:
        """dim -> image_dim, used for the conditioning prefix."""
        return linear(x, self.params["bridge.down.w"], self.params["bridge.down.b"])

    # -- forward passes --------------------------------------------------

    def forward_local(
        self,
        ids: np.ndarray,
        condition: Tensor | None = None,
        sub_size: int | None = None,
    ) -> tuple[Tensor, Tensor]:
        """Run the local stack over one window's unified ids.

        Returns (hidden states for the full sequence including the
        conditioning prefix when present, window embedding = hidden state
        at the final window position). Position 0 of the local table is
        reserved for the prefix; pixel j always sits at position j+1.
        """
        cfg = self.cfg
        ids = np.asarray(ids, dtype=np.int64)
        m = ids.shape[0]
        if m > cfg.window_len:
            raise ShapeError(
                f"window sequence length {m} exceeds window capacity {cfg.window_len}"
            )
        x = self.embed_ids(ids) + self.params["local.pos"][1 : m + 1]
        if condition is not None:
            if condition.ndim == 1:
                condition = condition.reshape(1, condition.shape[0])
            if condition.shape != (1, cfg.image_dim):
                raise ShapeError(
                    f"condition embedding must have width image_dim={cfg.image_dim}, "
                    f"got shape {condition.shape}"
                )
            prefix = condition + self.params["local.pos"][0:1]
            x = concatenate([prefix, x], axis=0)
            cl = 1
        else:
            cl = 0
        if m + cl == 0:
            raise EmptyInputError("local forward needs at least one position")
        mask = full_local_mask(m, cl, sub_size)
        for i in range(cfg.image_layers):
            x = self._block(f"local.{i}", x, mask)
        last = x[m + cl - 1 : m + cl]
        return x, last

    def forward_global(self, entries: Tensor) -> Tensor:
        """Causal GQA decoder over the mixed global sequence (T, dim)."""
        cfg = self.cfg
        if entries.ndim != 2 or entries.shape[1] != cfg.dim:
            raise ShapeError(f"global entries must be (T, dim={cfg.dim}), got {entries.shape}")
        t = entries.shape[0]
        if t == 0:
            raise EmptyInputError("global forward needs a non-empty sequence")
        if t > self.max_global_len:
            raise ShapeError(
                f"global sequence length {t} exceeds capacity {self.max_global_len}"
            )
        x = entries + self.params["global.pos"][:t]
        mask = causal_mask(t)
        for i in range(cfg.layers):
            x = self._block(f"global.{i}", x, mask)
        return x

    def predict_logits(self, hidden: Tensor) -> Tensor:
        """Affine map from global-width hidden states to unified logits."""
        if hidden.ndim != 2 or hidden.shape[1] != self.cfg.dim:
            raise ShapeError(
                f"hidden states must be (T, dim={self.cfg.dim}), got {hidden.shape}"
            )
        return linear(hidden, self.params["head.w"], self.params["head.b"])

    # -- sequence assembly -------------------------------------------------

    def _unified_windows(self, grid: WindowGrid) -> list[np.ndarray]:
        if grid.window_size != self.cfg.window_size:
            raise ShapeError(
                f"grid window size {grid.window_size} != model window size "
                f"{self.cfg.window_size}"
            )
        if grid.factor != self.cfg.fold_factor:
            raise ShapeError(
                f"grid factor {grid.factor} != model factor {self.cfg.fold_factor}"
            )
        return vocab.encode_image_windows(grid, self.cfg.fold_factor)

    def _window_summaries(self, uwindows: list[np.ndarray]) -> list[Tensor]:
        return [self.forward_local(u)[1] for u in uwindows]

    def _image_global_hiddens(self, summaries: list[Tensor]) -> Tensor:
        start = self.embed_ids(
            np.array([vocab.img_start_id(self.cfg.fold_factor)], dtype=np.int64)
        )
        entries = concatenate([self.lift(start)] + [self.lift(e) for e in summaries], axis=0)
        return self.forward_global(entries)

    def image_window_logits(self, grid: WindowGrid) -> list[Tensor]:
        """Per-window next-token logits for every pixel position.

        Row j of window w's logits predicts pixel j of that window; it is
        computed from the conditioning prefix (global context of all
        previous windows) plus pixels 0..j-1 of the window itself.
        """
        uwindows = self._unified_windows(grid)
        summaries = self._window_summaries(uwindows)
        g = self._image_global_hiddens(summaries)
        logits = []
        for w, u in enumerate(uwindows):
            cond = self.lower(g[w : w + 1])
            hiddens, _ = self.forward_local(u, condition=cond)
            m = u.shape[0]
            logits.append(self.predict_logits(self.lift(hiddens[0:m])))
        return logits

    def image_loss(self, grid: WindowGrid) -> tuple[Tensor, int]:
        """Mean next-pix-token cross-entropy in nats; pad targets excluded."""
        pad_uid = vocab.pad_pix_id(self.cfg.fold_factor)
        uwindows = self._unified_windows(grid)
        logits = self.image_window_logits(grid)
        total = None
        count = 0
        for u, lg in zip(uwindows, logits):
            weights = (u != pad_uid).astype(np.float64)
            if not weights.any():
                continue
            ls = log_softmax(lg, axis=-1)
            picked = ls[(np.arange(u.shape[0]), u)]
            term = -(picked * weights).sum()
            total = term if total is None else total + term
            count += int(weights.sum())
        if total is None:
            raise EmptyInputError("image contains no non-pad pixels to predict")
        return total * (1.0 / count), count

    def text_loss(self, data: bytes) -> tuple[Tensor, int]:
        """Plain decoder-only byte LM loss: bos + bytes predict bytes + eos."""
        f = self.cfg.fold_factor
        word_ids = vocab.encode_text(data)
        inputs = np.array([vocab.bos_id(f)] + word_ids, dtype=np.int64)
        targets = np.array(word_ids + [vocab.eos_id(f)], dtype=np.int64)
        entries = self.lift(self.embed_ids(inputs))
        hidden = self.forward_global(entries)
        ls = log_softmax(self.predict_logits(hidden), axis=-1)
        picked = ls[(np.arange(targets.shape[0]), targets)]
        return -picked.mean(), int(targets.shape[0])

    def mixed_loss(self, items: list) -> tuple[Tensor, int]:
        """Loss over a mixed document: list of ("text", bytes) and
        ("image", WindowGrid) parts in order.

        Word and marker tokens are predicted at the global level; pix
        tokens through the conditioned local passes. Pad pix targets are
        excluded everywhere.
        """
        f = self.cfg.fold_factor
        pad_uid = vocab.pad_pix_id(f)
        descs: list[tuple[str, object]] = [("id", vocab.bos_id(f))]
        for kind, payload in items:
            if kind == "text":
                descs.extend(("id", i) for i in vocab.encode_text(payload))
            elif kind == "image":
                descs.append(("id", vocab.img_start_id(f)))
                uwindows = self._unified_windows(payload)
                descs.extend(("win", u) for u in uwindows)
                descs.append(("id", vocab.img_end_id(f)))
            else:
                raise ValueError(f"unknown mixed item kind {kind!r}")

        rows = []
        for kind, payload in descs:
            if kind == "id":
                rows.append(self.lift(self.embed_ids(np.array([payload], dtype=np.int64))))
            else:
                rows.append(self.lift(self.forward_local(payload)[1]))
        g = self.forward_global(concatenate(rows, axis=0))

        total = None
        count = 0
        # Global-level targets: each position predicts the next entry when
        # that entry is a plain id; the eos closes the document.
        next_ids = [d[1] for d in descs[1:]] + [vocab.eos_id(f)]
        idx = [t for t, d in enumerate(descs) if not isinstance(next_ids[t], np.ndarray)]
        if idx:
            ls = log_softmax(self.predict_logits(g[np.array(idx)]), axis=-1)
            tgt = np.array([next_ids[t] for t in idx], dtype=np.int64)
            picked = ls[(np.arange(len(idx)), tgt)]
            total = -picked.sum()
            count += len(idx)
        # Local pix targets, conditioned on the global hidden right before
        # each window's entry.
        for t, (kind, payload) in enumerate(descs):
            if kind != "win":
                continue
            cond = self.lower(g[t - 1 : t])
            hiddens, _ = self.forward_local(payload, condition=cond)
            m = payload.shape[0]
            lg = self.predict_logits(self.lift(hiddens[0:m]))
            weights = (payload != pad_uid).astype(np.float64)
            if not weights.any():
                continue
            ls = log_softmax(lg, axis=-1)
            picked = ls[(np.arange(m), payload)]
            term = -(picked * weights).sum()
            total = term if total is None else total + term
            count += int(weights.sum())
        if total is None or count == 0:
            raise EmptyInputError("mixed document contains nothing to predict")
        return total * (1.0 / count), count
