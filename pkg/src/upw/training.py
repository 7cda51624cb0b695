"""Desk-scale image unsupervised pretraining.

The loop minimizes mean next-pix-token cross-entropy (nats) over the
hierarchical model: every pixel is predicted from the global context of
all previous windows plus the preceding pixels of its own window. Runs
are deterministic: one seed fixes the parameter init, the batch order,
and therefore the whole loss curve and final checkpoint bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import vocab
from .autodiff import concatenate
from .checkpoint import save_checkpoint
from .errors import DataError, NumericalError, UsageError
from .folding import FoldedImage, fold_image
from .model import ModelConfig, UnifiedPixWordModel
from .windows import WindowGrid, pad_and_partition, unpartition


@dataclass
class TrainConfig:
    model: ModelConfig = field(default_factory=ModelConfig.tiny)
    steps: int = 200
    batch_size: int = 1
    learning_rate: float = 1e-3
    seed: int = 0
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    log_every: int = 1
    out_dir: str | None = None

    def __post_init__(self):
        if self.steps < 1:
            raise UsageError(f"steps must be >= 1, got {self.steps}")
        if self.batch_size < 1:
            raise UsageError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.learning_rate > 0:
            raise UsageError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.log_every < 1:
            raise UsageError(f"log_every must be >= 1, got {self.log_every}")
        if self.optimizer not in ("sgd", "adam"):
            raise UsageError(f"optimizer must be 'sgd' or 'adam', got {self.optimizer!r}")


@dataclass
class LossCurve:
    points: list[tuple[int, float]] = field(default_factory=list)

    def append(self, step: int, loss: float) -> None:
        if self.points and step <= self.points[-1][0]:
            raise ValueError("curve steps must be strictly increasing")
        if not math.isfinite(loss):
            raise NumericalError(f"non-finite loss {loss} at step {step}")
        self.points.append((step, loss))

    @property
    def steps(self) -> list[int]:
        return [s for s, _ in self.points]

    @property
    def losses(self) -> list[float]:
        return [l for _, l in self.points]

    def smoothed(self, window: int = 20) -> list[float]:
        """Trailing moving average of the recorded losses."""
        out = []
        vals = self.losses
        for i in range(len(vals)):
            lo = max(0, i - window + 1)
            out.append(sum(vals[lo : i + 1]) / (i + 1 - lo))
        return out

    def to_csv(self) -> str:
        lines = ["step,loss"]
        lines.extend(f"{s},{l!r}" for s, l in self.points)
        return "\n".join(lines) + "\n"

    def write_csv(self, path) -> None:
        Path(path).write_text(self.to_csv())

    @classmethod
    def read_csv(cls, path) -> "LossCurve":
        curve = cls()
        lines = Path(path).read_text().splitlines()
        if not lines or lines[0] != "step,loss":
            raise DataError(f"{path}: expected 'step,loss' header")
        for line in lines[1:]:
            s, _, l = line.partition(",")
            curve.append(int(s), float(l))
        return curve


class SgdOptimizer:
    def __init__(self, learning_rate: float):
        self.lr = learning_rate

    def step(self, params: dict) -> None:
        for name in sorted(params):
            p = params[name]
            if p.grad is not None:
                p.data -= self.lr * p.grad


class AdamOptimizer:
    def __init__(self, learning_rate: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for name in sorted(params):
            p = params[name]
            if p.grad is None:
                continue
            g = p.grad
            m = self.m.get(name)
            v = self.v.get(name)
            if m is None:
                m = np.zeros_like(p.data)
                v = np.zeros_like(p.data)
            m = self.beta1 * m + (1.0 - self.beta1) * g
            v = self.beta2 * v + (1.0 - self.beta2) * (g * g)
            self.m[name] = m
            self.v[name] = v
            p.data -= self.lr * ((m / c1) / (np.sqrt(v / c2) + self.eps))


def make_optimizer(tc: TrainConfig):
    if tc.optimizer == "sgd":
        return SgdOptimizer(tc.learning_rate)
    return AdamOptimizer(tc.learning_rate, tc.beta1, tc.beta2, tc.adam_eps)


def prepare_grids(images, cfg: ModelConfig) -> list[WindowGrid]:
    """Fold, pad, and partition raw RGB rasters for the model."""
    grids = []
    for i, img in enumerate(images):
        fi = img if isinstance(img, FoldedImage) else fold_image(img, cfg.fold_factor)
        if fi.width > cfg.image_size or fi.height > cfg.image_size:
            raise DataError(
                f"image {i} is {fi.width}x{fi.height}, larger than the configured "
                f"image size {cfg.image_size}"
            )
        grids.append(pad_and_partition(fi, cfg.window_size))
    return grids


@dataclass
class PretrainResult:
    curve: LossCurve
    model: UnifiedPixWordModel
    checkpoint_path: str | None = None
    curve_path: str | None = None


def pretrain_images(images, tc: TrainConfig) -> PretrainResult:
    """Run the image-only pretraining loop; see the module docstring."""
    if not images:
        raise DataError("empty training dataset")
    cfg = tc.model
    rng = np.random.default_rng(tc.seed)
    model = UnifiedPixWordModel(cfg, rng=rng)
    grids = prepare_grids(images, cfg)
    for g in grids:
        if g.num_windows + 1 > model.max_global_len:
            raise DataError(
                f"image needs {g.num_windows} windows, exceeding the model's "
                f"global capacity {model.max_global_len}"
            )
    optimizer = make_optimizer(tc)
    curve = LossCurve()
    for step in range(tc.steps):
        batch = rng.integers(0, len(grids), size=tc.batch_size)
        total = None
        for idx in batch:
            loss, _ = model.image_loss(grids[int(idx)])
            total = loss if total is None else total + loss
        total = total * (1.0 / tc.batch_size)
        value = float(total.data)
        if not math.isfinite(value):
            raise NumericalError(f"non-finite loss {value} at step {step}")
        if step % tc.log_every == 0 or step == tc.steps - 1:
            if not curve.points or curve.points[-1][0] != step:
                curve.append(step, value)
        model.zero_grads()
        total.backward()
        optimizer.step(model.params)
    model.zero_grads()

    result = PretrainResult(curve=curve, model=model)
    if tc.out_dir is not None:
        out = Path(tc.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        curve.write_csv(out / "loss.csv")
        save_checkpoint(out / "model.ckpt", model)
        result.curve_path = str(out / "loss.csv")
        result.checkpoint_path = str(out / "model.ckpt")
    return result


GREEDY_TEMPERATURE = 1e-8


def sample_image(
    model: UnifiedPixWordModel,
    temperature: float = 1.0,
    seed: int = 0,
    width: int | None = None,
    height: int | None = None,
) -> FoldedImage:
    """Autoregressively sample pix tokens window by window.

    Follows the training-time conditioning exactly: each window is
    generated under the global context of all completed windows, pixel
    by pixel under the local causal mask. Temperatures at or below
    GREEDY_TEMPERATURE decode greedily. Margin cells forced by padding
    are pinned to the pad token and skipped by the sampler.
    """
    cfg = model.cfg
    if temperature < 0:
        raise UsageError(f"temperature must be >= 0, got {temperature}")
    width = cfg.image_size if width is None else width
    height = cfg.image_size if height is None else height
    ws = cfg.window_size
    wx = math.ceil(width / ws)
    wy = math.ceil(height / ws)
    n_windows = wx * wy
    if n_windows + 1 > model.max_global_len:
        raise UsageError(
            f"{n_windows} windows exceed the model's global capacity "
            f"{model.max_global_len}"
        )
    f = cfg.fold_factor
    v = vocab.vocab_size(f)
    pad_uid = vocab.pad_pix_id(f)
    rng = np.random.default_rng(seed)
    greedy = temperature <= GREEDY_TEMPERATURE

    start = model.lift(
        model.embed_ids(np.array([vocab.img_start_id(f)], dtype=np.int64))
    )
    entries = [start]
    windows = np.zeros((n_windows, ws * ws), dtype=np.int64)
    for w in range(n_windows):
        g = model.forward_global(concatenate(entries, axis=0))
        cond = model.lower(g[w : w + 1])
        wy_i, wx_i = divmod(w, wx)
        ids: list[int] = []
        for j in range(ws * ws):
            r, c = divmod(j, ws)
            x_abs = wx_i * ws + c
            y_abs = wy_i * ws + r
            if x_abs >= width or y_abs >= height:
                ids.append(pad_uid)
                continue
            hiddens, _ = model.forward_local(np.asarray(ids, dtype=np.int64), condition=cond)
            logits = model.predict_logits(model.lift(hiddens[j : j + 1])).data[0]
            pix_logits = logits[vocab.PIX_OFFSET : vocab.PIX_OFFSET + v]
            if greedy:
                choice = int(np.argmax(pix_logits))
            else:
                z = pix_logits / temperature
                z = z - z.max()
                probs = np.exp(z)
                probs /= probs.sum()
                choice = int(rng.choice(v, p=probs))
            ids.append(vocab.PIX_OFFSET + choice)
        windows[w] = np.asarray(ids) - vocab.PIX_OFFSET
        summary = model.forward_local(np.asarray(ids, dtype=np.int64))[1]
        entries.append(model.lift(summary))

    grid = WindowGrid(
        windows_x=wx,
        windows_y=wy,
        window_size=ws,
        windows=windows,
        orig_width=width,
        orig_height=height,
        factor=f,
        pad_token_id=vocab.vocab_size(f),
    )
    return unpartition(grid)


def sgd_reference_update(before: np.ndarray, grad: np.ndarray, lr: float) -> np.ndarray:
    """Hand-rolled elementwise sgd step used as the equivalence oracle."""
    out = before.copy().reshape(-1)
    g = grad.reshape(-1)
    for i in range(out.shape[0]):
        out[i] = out[i] - lr * g[i]
    return out.reshape(before.shape)


def adam_reference_update(
    before: np.ndarray,
    grad: np.ndarray,
    lr: float,
    beta1: float,
    beta2: float,
    eps: float,
    m_prev: np.ndarray,
    v_prev: np.ndarray,
    t: int,
) -> np.ndarray:
    """Hand-rolled elementwise adam step (bias-corrected) oracle."""
    out = before.copy().reshape(-1)
    g = grad.reshape(-1)
    m = m_prev.copy().reshape(-1)
    v = v_prev.copy().reshape(-1)
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for i in range(out.shape[0]):
        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i]
        v[i] = beta2 * v[i] + (1.0 - beta2) * (g[i] * g[i])
        out[i] = out[i] - lr * ((m[i] / c1) / (math.sqrt(v[i] / c2) + eps))
    return out.reshape(before.shape)


def training_step_equivalence(tc: TrainConfig, image: np.ndarray | None = None) -> dict:
    """Apply one optimizer step and verify it bit-for-bit against the
    hand-rolled reference update; returns a per-parameter report and
    raises NumericalError naming the first mismatching parameter."""
    cfg = tc.model
    rng = np.random.default_rng(tc.seed)
    model = UnifiedPixWordModel(cfg, rng=rng)
    if image is None:
        image = rng.integers(0, 256, size=(cfg.image_size, cfg.image_size, 3), dtype=np.uint8)
    grid = prepare_grids([image], cfg)[0]
    loss, _ = model.image_loss(grid)
    model.zero_grads()
    loss.backward()
    before = {k: p.data.copy() for k, p in model.params.items()}
    grads = {k: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
             for k, p in model.params.items()}
    optimizer = make_optimizer(tc)
    optimizer.step(model.params)
    report = {}
    for name in sorted(model.params):
        if tc.optimizer == "sgd":
            expected = sgd_reference_update(before[name], grads[name], tc.learning_rate)
        else:
            expected = adam_reference_update(
                before[name], grads[name], tc.learning_rate,
                tc.beta1, tc.beta2, tc.adam_eps,
                np.zeros_like(before[name]), np.zeros_like(before[name]), 1,
            )
        ok = np.array_equal(expected, model.params[name].data)
        report[name] = ok
        if not ok:
            raise NumericalError(f"optimizer step mismatch in parameter {name!r}")
    return report
