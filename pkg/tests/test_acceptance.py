"""Acceptance suite: one test per criterion, one printed line per result.

Run with `pytest -s tests/test_acceptance.py` to see the lines live; the
training-backed criteria share two seeded smoke runs via a module fixture.
"""

import dataclasses
import functools
import math
import time

import numpy as np
import pytest

from upw.autodiff import Tensor, gelu, layer_norm, linear, log_softmax
from upw.errors import (
    CorruptionError,
    EncodingError,
    FormatError,
    TruncationError,
)
from upw.folding import (
    VALID_FACTORS,
    fold_image,
    fold_pixel,
    unfold_image,
    unfold_token,
    vocab_size,
)
from upw.gradcheck import grad_check
from upw.mixedfile import ImageRecord, TextRecord, read_mixed, write_mixed
from upw.model import (
    ModelConfig,
    UnifiedPixWordModel,
    causal_mask,
    gqa_attention,
)
from upw.training import LossCurve, TrainConfig, pretrain_images, sample_image
from upw.windows import (
    pad_and_partition,
    sub_partition,
    sub_unpartition,
    unpartition,
)


def criterion(number, title):
    def wrap(fn):
        @functools.wraps(fn)
        def run(*args, **kwargs):
            try:
                fn(*args, **kwargs)
            except BaseException:
                print(f"CRITERION {number:2d} FAIL - {title}")
                raise
            print(f"CRITERION {number:2d} PASS - {title}")

        return run

    return wrap


def reference_mha(q, k, v, mask, heads):
    tq, d = q.shape
    dh = d // heads
    out = np.zeros((tq, d))
    for h in range(heads):
        qh = q[:, h * dh : (h + 1) * dh]
        kh = k[:, h * dh : (h + 1) * dh]
        vh = v[:, h * dh : (h + 1) * dh]
        scores = np.where(mask, qh @ kh.T / np.sqrt(dh), -np.inf)
        w = np.exp(scores - scores.max(axis=-1, keepdims=True))
        w = w / w.sum(axis=-1, keepdims=True)
        out[:, h * dh : (h + 1) * dh] = w @ vh
    return out


SMOKE_IMAGE_SEED = 7
SMOKE = dict(steps=1000, learning_rate=1.5e-3, seed=1, adam_eps=1e-5, log_every=1)


def smoke_image():
    rng = np.random.default_rng(SMOKE_IMAGE_SEED)
    return rng.integers(0, 256, size=(8, 8, 3), dtype=np.uint8)


@pytest.fixture(scope="module")
def smoke_runs(tmp_path_factory):
    """Two identical seeded training runs of the tiny config."""
    runs = []
    img = smoke_image()
    for name in ("run1", "run2"):
        out = tmp_path_factory.mktemp(name)
        tc = TrainConfig(model=ModelConfig.tiny(), out_dir=str(out), **SMOKE)
        start = time.perf_counter()
        result = pretrain_images([img], tc)
        elapsed = time.perf_counter() - start
        runs.append((result, out, elapsed))
    return runs


@criterion(1, "vocab_size reproduces the folding-factor table exactly")
def test_criterion_01_vocab_table():
    start = time.perf_counter()
    expected = {2: 2097152, 4: 262144, 8: 32768, 16: 4096, 32: 512}
    for f, total in expected.items():
        assert vocab_size(f) == total
    assert time.perf_counter() - start < 1.0


@criterion(2, "tokenizer round trip exhaustive and random, quantization idempotent")
def test_criterion_02_round_trip():
    start = time.perf_counter()
    for f in (16, 32):
        for t in range(vocab_size(f)):
            assert fold_pixel(unfold_token(t, f), f) == t
    rng = np.random.default_rng(0)
    for f in VALID_FACTORS:
        pixels = rng.integers(0, 256, size=(10_000, 3), dtype=np.int64)
        n = 256 // f
        bins = pixels // f
        oracle_ids = (bins[:, 0] * n + bins[:, 1]) * n + bins[:, 2]
        img = pixels.reshape(100, 100, 3)
        once = fold_image(img, f)
        assert np.array_equal(once.tokens, oracle_ids)
        again = fold_image(unfold_image(once), f)  # quantization idempotent
        assert once.same_as(again)
    assert time.perf_counter() - start < 10.0


@criterion(3, "in-bin perturbations keep tokens, cross-bin perturbations change them")
def test_criterion_03_bin_robustness():
    start = time.perf_counter()
    rng = np.random.default_rng(1)
    for f in VALID_FACTORS:
        n = 256 // f
        pixels = rng.integers(0, 256, size=(10_000, 3), dtype=np.int64)
        bins = pixels // f
        ids = (bins[:, 0] * n + bins[:, 1]) * n + bins[:, 2]
        # in-bin wiggle of every channel
        wiggle = bins * f + rng.integers(0, f, size=pixels.shape)
        wbins = wiggle // f
        wids = (wbins[:, 0] * n + wbins[:, 1]) * n + wbins[:, 2]
        assert np.array_equal(wids, ids)
        # force one channel across a bin boundary
        channel = rng.integers(0, 3, size=len(pixels))
        crossed = bins.copy()
        rows = np.arange(len(pixels))
        crossed[rows, channel] = (crossed[rows, channel] + 1) % n
        cids = (crossed[:, 0] * n + crossed[:, 1]) * n + crossed[:, 2]
        assert (cids != ids).all()
    assert time.perf_counter() - start < 10.0


@criterion(4, "pad/partition/sub-chunk preprocessing is lossless bit-exact")
def test_criterion_04_lossless_preprocessing():
    start = time.perf_counter()
    rng = np.random.default_rng(2)
    for i in range(1000):
        w = int(rng.integers(1, 65))
        h = int(rng.integers(1, 65))
        ws = int(rng.choice([1, 2, 3, 4, 5, 8, 16]))
        f = int(rng.choice([16, 32]))
        from upw.folding import FoldedImage

        fi = FoldedImage(
            width=w, height=h, factor=f,
            tokens=rng.integers(0, vocab_size(f), size=w * h),
        )
        grid = pad_and_partition(fi, ws)
        divisors = [d for d in range(1, ws + 1) if ws % d == 0]
        sub = int(rng.choice(divisors))
        grid.windows = np.stack(
            [sub_unpartition(sub_partition(grid.windows[k], sub))
             for k in range(grid.num_windows)]
        )
        assert unpartition(grid).same_as(fi)
    assert time.perf_counter() - start < 30.0


@criterion(5, "default config matches the expected row; 224/16 gives 196 windows")
def test_criterion_05_config():
    cfg = ModelConfig()
    assert cfg.dim == 768 and cfg.layers == 12
    assert cfg.heads == 12 and cfg.kv_heads == 6
    assert cfg.image_dim == 768 and cfg.image_layers == 5
    assert cfg.fold_factor == 16 and cfg.image_size == 224 and cfg.window_size == 16
    assert (224 // 16) ** 2 == 196
    assert cfg.num_windows == 196


@criterion(6, "GQA with kv_heads == heads matches reference MHA within 1e-6")
def test_criterion_06_gqa_degeneration():
    start = time.perf_counter()
    rng = np.random.default_rng(3)
    for _ in range(100):
        heads = int(rng.choice([1, 2, 3, 4, 6, 8, 12]))
        dh = int(rng.integers(1, 9))
        tq = int(rng.integers(1, 13))
        q, k, v = (rng.normal(size=(tq, heads * dh)) for _ in range(3))
        mask = causal_mask(tq) if rng.integers(2) else np.ones((tq, tq), dtype=bool)
        got = gqa_attention(Tensor(q), Tensor(k), Tensor(v), mask, heads, heads)
        assert np.abs(got.data - reference_mha(q, k, v, mask, heads)).max() < 1e-6
    assert time.perf_counter() - start < 60.0


@criterion(7, "global and local causality hold bit-identically on 100 random inputs")
def test_criterion_07_causality():
    start = time.perf_counter()
    cfg = ModelConfig.tiny()
    model = UnifiedPixWordModel(cfg, rng=np.random.default_rng(4))
    rng = np.random.default_rng(5)
    for trial in range(50):
        # global: change a suffix entry, prefix hidden states must not move
        t = int(rng.integers(2, 12))
        x = rng.normal(size=(t, cfg.dim))
        j = int(rng.integers(1, t))
        x2 = x.copy()
        x2[j:] = rng.normal(size=(t - j, cfg.dim))
        h1 = model.forward_global(Tensor(x)).data
        h2 = model.forward_global(Tensor(x2)).data
        assert np.array_equal(h1[:j], h2[:j])
    for trial in range(50):
        img = rng.integers(0, 256, size=(8, 8, 3), dtype=np.uint8)
        grid = pad_and_partition(fold_image(img, cfg.fold_factor), cfg.window_size)
        w = int(rng.integers(1, grid.num_windows))
        k = int(rng.integers(0, cfg.window_len))
        windows = grid.windows.copy()
        windows[w, k] = (windows[w, k] + 1 + int(rng.integers(500))) % 512
        grid2 = dataclasses.replace(grid, windows=windows)
        u1 = model._unified_windows(grid)
        u2 = model._unified_windows(grid2)
        s1 = [e.data for e in model._window_summaries(u1)]
        s2 = [e.data for e in model._window_summaries(u2)]
        for prev in range(w):
            assert np.array_equal(s1[prev], s2[prev])
        lg1 = model.image_window_logits(grid)
        lg2 = model.image_window_logits(grid2)
        for prev in range(w):
            assert np.array_equal(lg1[prev].data, lg2[prev].data)
        assert np.array_equal(lg1[w].data[: k + 1], lg2[w].data[: k + 1])
    assert time.perf_counter() - start < 60.0


@criterion(8, "finite differences confirm per-block < 1e-4 and full model < 1e-3")
def test_criterion_08_gradients():
    start = time.perf_counter()
    rng = np.random.default_rng(6)

    # linear map at truncation level
    w = Tensor(rng.normal(size=(8, 5)), requires_grad=True)
    x = rng.normal(size=(4, 8))
    res = grad_check(lambda: (Tensor(x) @ w).sum(), {"w": w}, eps=1e-4)
    assert res.max_rel_error < 1e-8

    # per-block checks at dim 8, sequence 5
    dim, seq = 8, 5
    xb = rng.normal(size=(seq, dim))
    probe = rng.normal(size=(seq, dim))
    blocks: dict[str, tuple] = {}

    ln_params = {
        "g": Tensor(np.ones(dim), requires_grad=True),
        "b": Tensor(np.zeros(dim), requires_grad=True),
        "x": Tensor(xb.copy(), requires_grad=True),
    }
    blocks["layer_norm"] = (
        lambda: (layer_norm(ln_params["x"], ln_params["g"], ln_params["b"]) * probe).sum(),
        ln_params,
    )

    mlp_params = {
        "w1": Tensor(rng.normal(size=(dim, 4 * dim)) * 0.3, requires_grad=True),
        "b1": Tensor(np.zeros(4 * dim), requires_grad=True),
        "w2": Tensor(rng.normal(size=(4 * dim, dim)) * 0.3, requires_grad=True),
        "b2": Tensor(np.zeros(dim), requires_grad=True),
    }
    blocks["gelu_mlp"] = (
        lambda: (
            linear(gelu(linear(Tensor(xb), mlp_params["w1"], mlp_params["b1"])),
                   mlp_params["w2"], mlp_params["b2"]) * probe
        ).sum(),
        mlp_params,
    )

    heads, kv_heads = 4, 2
    kvw = kv_heads * (dim // heads)
    attn_params = {
        "wq": Tensor(rng.normal(size=(dim, dim)) * 0.3, requires_grad=True),
        "wk": Tensor(rng.normal(size=(dim, kvw)) * 0.3, requires_grad=True),
        "wv": Tensor(rng.normal(size=(dim, kvw)) * 0.3, requires_grad=True),
        "wo": Tensor(rng.normal(size=(dim, dim)) * 0.3, requires_grad=True),
    }
    mask = causal_mask(seq)
    blocks["attention"] = (
        lambda: (
            gqa_attention(
                Tensor(xb) @ attn_params["wq"],
                Tensor(xb) @ attn_params["wk"],
                Tensor(xb) @ attn_params["wv"],
                mask, heads, kv_heads,
            ) @ attn_params["wo"] * probe
        ).sum(),
        attn_params,
    )

    head_params = {
        "w": Tensor(rng.normal(size=(dim, 11)) * 0.5, requires_grad=True),
        "b": Tensor(np.zeros(11), requires_grad=True),
    }
    targets = rng.integers(0, 11, size=seq)
    blocks["softmax_head"] = (
        lambda: -log_softmax(linear(Tensor(xb), head_params["w"], head_params["b"]))[
            (np.arange(seq), targets)
        ].mean(),
        head_params,
    )

    for name, (loss_fn, params) in blocks.items():
        res = grad_check(loss_fn, params, eps=1e-4)
        assert res.max_rel_error < 1e-4, f"{name}: {res.max_rel_error:.3e}"

    # full tiny model against its training objective
    cfg = ModelConfig.tiny()
    model = UnifiedPixWordModel(cfg, rng=np.random.default_rng(7))
    grid = pad_and_partition(fold_image(smoke_image(), cfg.fold_factor), cfg.window_size)
    res = grad_check(
        lambda: model.image_loss(grid)[0],
        model.params,
        eps=1e-4,
        entries_per_param=3,
        rng=np.random.default_rng(8),
    )
    assert res.max_rel_error < 1e-3, str(res)
    assert time.perf_counter() - start < 300.0


@criterion(9, "training smoke: uniform start, 10x loss drop, greedy reproduction")
def test_criterion_09_training_smoke(smoke_runs):
    result, _, elapsed = smoke_runs[0]
    curve = result.curve
    initial = curve.losses[0]
    assert curve.points[0][0] == 0
    assert abs(initial - math.log(773)) < 0.1
    assert min(curve.losses) < 0.1 * initial
    fi = fold_image(smoke_image(), 32)
    decoded = sample_image(result.model, temperature=0.0, seed=0, width=8, height=8)
    assert decoded.same_as(fi)
    assert elapsed < 300.0


@criterion(10, "loss.csv artifact: increasing steps, finite, smoothed non-increasing")
def test_criterion_10_curve_artifact(smoke_runs):
    _, out, _ = smoke_runs[0]
    path = out / "loss.csv"
    assert path.exists()
    curve = LossCurve.read_csv(path)
    steps = curve.steps
    assert all(b > a for a, b in zip(steps, steps[1:]))
    assert all(math.isfinite(v) for v in curve.losses)
    smoothed = curve.smoothed(window=20)
    after = [i for i, s in enumerate(steps) if s >= 50]
    for i in after[:-1]:
        assert smoothed[i + 1] <= smoothed[i], f"smoothed rise at step {steps[i]}"


@criterion(11, "mixed container: 1000 random round trips, four malformed classes")
def test_criterion_11_mixed_format():
    start = time.perf_counter()
    rng = np.random.default_rng(9)
    for _ in range(1000):
        records = []
        for _ in range(int(rng.integers(0, 6))):
            if rng.integers(2):
                n = int(rng.integers(0, 30))
                records.append(
                    TextRecord(bytes(rng.integers(32, 127, size=n)).decode("ascii"))
                )
            else:
                w, h = int(rng.integers(1, 7)), int(rng.integers(1, 7))
                records.append(ImageRecord(
                    width=w, height=h,
                    rgb=rng.integers(0, 256, size=3 * w * h, dtype=np.uint8).tobytes(),
                ))
        blob = write_mixed(records)
        assert read_mixed(blob) == records
        assert write_mixed(read_mixed(blob)) == blob

    import struct

    from upw.mixedfile import MAGIC

    with pytest.raises(FormatError):
        read_mixed(b"BADMAGIC" + write_mixed([])[8:])
    good = write_mixed([TextRecord("hello")])
    with pytest.raises(TruncationError) as ei:
        read_mixed(good[:-2])
    assert ei.value.offset == len(good) - 2
    bad_utf8 = (
        MAGIC + struct.pack("<I", 1) + struct.pack("<Q", 1)
        + struct.pack("<B", 0) + struct.pack("<Q", 2) + b"\xff\xff"
    )
    with pytest.raises(EncodingError):
        read_mixed(bad_utf8)
    overflow = (
        MAGIC + struct.pack("<I", 1) + struct.pack("<Q", 1)
        + struct.pack("<B", 1) + struct.pack("<II", 4000, 4000) + b"\x00" * 8
    )
    with pytest.raises(CorruptionError):
        read_mixed(overflow)
    assert time.perf_counter() - start < 30.0


@criterion(12, "identical seeds produce byte-identical loss.csv and checkpoint")
def test_criterion_12_determinism(smoke_runs):
    (_, out1, _), (_, out2, _) = smoke_runs
    assert (out1 / "loss.csv").read_bytes() == (out2 / "loss.csv").read_bytes()
    assert (out1 / "model.ckpt").read_bytes() == (out2 / "model.ckpt").read_bytes()
