"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numerical
failure. Errors go to stderr; data goes to files or stdout. Runs with
identical inputs and seeds produce byte-identical outputs.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import vocab
from .checkpoint import load_checkpoint
from .errors import DataError, NumericalError, UsageError
from .folding import VALID_FACTORS, fold_image, unfold_image, validate_factor, vocab_size
from .gradcheck import grad_check
from .mixedfile import (
    ImageRecord,
    TextRecord,
    iterate_mixed_file,
    write_mixed_file,
)
from .model import ModelConfig, UnifiedPixWordModel, full_local_mask
from .ppm import read_ppm, write_ppm
from .training import TrainConfig, pretrain_images, sample_image
from .windows import pad_and_partition


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # exit 1 instead of argparse's default 2
        raise UsageError(message)


def _parse_factor(value: str) -> int:
    try:
        factor = int(value)
    except ValueError:
        raise UsageError(
            f"invalid folding factor {value!r}: valid factors are "
            f"{{{', '.join(str(f) for f in VALID_FACTORS)}}}"
        ) from None
    return validate_factor(factor)


class _OrderedPath(argparse.Action):
    """Append (kind, path) pairs preserving the command-line order."""

    def __call__(self, parser, namespace, values, option_string=None):
        items = getattr(namespace, "items", None) or []
        items.append((self.const, values))
        namespace.items = items


def _out_path_for_factor(template: str, factor: int) -> Path:
    if "{factor}" in template:
        return Path(template.replace("{factor}", str(factor)))
    p = Path(template)
    return p.with_name(f"{p.stem}.f{factor}{p.suffix}")


def cmd_fold_viz(args) -> int:
    img = read_ppm(args.infile)
    if args.factor == "all":
        for f in VALID_FACTORS:
            out = _out_path_for_factor(args.outfile, f)
            write_ppm(out, unfold_image(fold_image(img, f)))
            print(out)
    else:
        f = _parse_factor(args.factor)
        write_ppm(args.outfile, unfold_image(fold_image(img, f)))
        print(args.outfile)
    return 0


def cmd_tokenize(args) -> int:
    img = read_ppm(args.infile)
    fi = fold_image(img, args.factor)
    grid = pad_and_partition(fi, args.window)
    windows = grid.windows
    if args.sub is not None:
        from .windows import sub_partition

        windows = np.stack(
            [
                np.concatenate(sub_partition(windows[k], args.sub))
                for k in range(grid.num_windows)
            ]
        )
    dump = {
        "width": fi.width,
        "height": fi.height,
        "factor": fi.factor,
        "window_size": grid.window_size,
        "sub_size": args.sub,
        "windows_x": grid.windows_x,
        "windows_y": grid.windows_y,
        "pad_token_id": grid.pad_token_id,
        "order": "row-major windows, row-major pixels"
        + ("" if args.sub is None else " re-chunked sub-window-major"),
        "windows": [[int(t) for t in windows[k]] for k in range(grid.num_windows)],
    }
    Path(args.outfile).write_text(json.dumps(dump, indent=1) + "\n")
    print(args.outfile)
    return 0


def cmd_pack(args) -> int:
    items = getattr(args, "items", None) or []
    if not items:
        raise UsageError("pack needs at least one --text or --image input")
    records = []
    for kind, path in items:
        if kind == "text":
            records.append(TextRecord(Path(path).read_text(encoding="utf-8")))
        else:
            records.append(ImageRecord.from_array(read_ppm(path)))
    write_mixed_file(args.outfile, records)
    print(args.outfile)
    return 0


def cmd_inspect_vocab(args) -> int:
    f = args.factor
    v = vocab_size(f)
    rows = [
        ("word", 0, 256),
        ("pix", vocab.PIX_OFFSET, vocab.PIX_OFFSET + v),
        ("pad_pix", vocab.pad_pix_id(f), vocab.pad_pix_id(f) + 1),
        ("bos", vocab.bos_id(f), vocab.bos_id(f) + 1),
        ("eos", vocab.eos_id(f), vocab.eos_id(f) + 1),
        ("img_start", vocab.img_start_id(f), vocab.img_start_id(f) + 1),
        ("img_end", vocab.img_end_id(f), vocab.img_end_id(f) + 1),
    ]
    print(f"factor {f}: pix vocab {v}, total {vocab.total_vocab(f)}")
    for name, lo, hi in rows:
        print(f"{name:10s} [{lo}, {hi})")
    return 0


def cmd_inspect_mask(args) -> int:
    mask = full_local_mask(args.window * args.window, args.condition, args.sub)
    for row in mask.astype(int):
        print("".join(str(x) for x in row))
    return 0


def cmd_inspect_mixed(args) -> int:
    print("idx  kind   detail")
    for i, rec in enumerate(iterate_mixed_file(args.file)):
        if isinstance(rec, TextRecord):
            preview = rec.text[:40].replace("\n", "\\n")
            print(f"{i:<4d} text   {len(rec.text.encode('utf-8'))} bytes: {preview!r}")
        else:
            print(f"{i:<4d} image  {rec.width}x{rec.height}")
    return 0


_INT_KEYS = {
    "dim", "layers", "heads", "kv_heads", "image_dim", "image_layers",
    "fold_factor", "image_size", "window_size",
    "steps", "batch_size", "seed", "log_every",
}
_FLOAT_KEYS = {"learning_rate", "beta1", "beta2", "adam_eps"}
_STR_KEYS = {"optimizer"}


def parse_train_config(path: str | Path, out_dir: str) -> TrainConfig:
    """Flat key=value text; '#' starts a comment; keys mirror the
    ModelConfig and TrainConfig field names."""
    model_kwargs = {}
    train_kwargs = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if not sep or not key:
            raise UsageError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        try:
            if key in _INT_KEYS:
                parsed = int(value)
            elif key in _FLOAT_KEYS:
                parsed = float(value)
            elif key in _STR_KEYS:
                parsed = value
            else:
                raise UsageError(f"{path}:{lineno}: unknown config key {key!r}")
        except ValueError:
            raise UsageError(f"{path}:{lineno}: bad value for {key}: {value!r}") from None
        if key in ModelConfig.__dataclass_fields__:
            model_kwargs[key] = parsed
        else:
            train_kwargs[key] = parsed
    model = ModelConfig(**{**ModelConfig.tiny().__dict__, **model_kwargs})
    return TrainConfig(model=model, out_dir=out_dir, **train_kwargs)


def _load_dataset(data: str) -> list[np.ndarray]:
    path = Path(data)
    if path.is_dir():
        files = sorted(path.glob("*.ppm"))
        if not files:
            raise DataError(f"no .ppm files in {path}")
        return [read_ppm(f) for f in files]
    images = [rec.array() for rec in iterate_mixed_file(path) if isinstance(rec, ImageRecord)]
    if not images:
        raise DataError(f"{path} contains no image records")
    return images


def cmd_train(args) -> int:
    tc = parse_train_config(args.config, args.out)
    images = _load_dataset(args.data)
    result = pretrain_images(images, tc)
    print(result.curve_path)
    print(result.checkpoint_path)
    print(f"final loss {result.curve.losses[-1]:.6f}")
    return 0


def cmd_sample(args) -> int:
    model = load_checkpoint(args.ckpt)
    fi = sample_image(model, temperature=args.temperature, seed=args.seed)
    write_ppm(args.outfile, unfold_image(fi))
    print(args.outfile)
    return 0


def cmd_gradcheck(args) -> int:
    cfg = ModelConfig.tiny()
    rng = np.random.default_rng(args.seed)
    model = UnifiedPixWordModel(cfg, rng=rng)
    image = rng.integers(0, 256, size=(cfg.image_size, cfg.image_size, 3), dtype=np.uint8)
    grid = pad_and_partition(fold_image(image, cfg.fold_factor), cfg.window_size)

    def loss_fn():
        return model.image_loss(grid)[0]

    result = grad_check(
        loss_fn, model.params, eps=args.eps, entries_per_param=args.entries, rng=rng
    )
    print(result)
    if result.max_rel_error >= args.tolerance:
        raise NumericalError(
            f"gradient check failed: max rel error {result.max_rel_error:.3e} "
            f">= {args.tolerance:.1e} (worst: {result.worst_param})"
        )
    print(f"gradient check passed: max rel error {result.max_rel_error:.3e}")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="upw", description=__doc__)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("fold-viz", help="fold an image and write its reconstruction")
    p.add_argument("--factor", required=True, help="folding factor or 'all'")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", dest="outfile", required=True)
    p.set_defaults(func=cmd_fold_viz)

    p = sub.add_parser("tokenize", help="dump an image's window token sequences as json")
    p.add_argument("--factor", required=True, type=_parse_factor)
    p.add_argument("--window", required=True, type=int)
    p.add_argument("--sub", type=int, default=None)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", dest="outfile", required=True)
    p.set_defaults(func=cmd_tokenize)

    p = sub.add_parser("pack", help="pack text and image files into a mixed container")
    p.add_argument("--text", action=_OrderedPath, const="text", metavar="FILE")
    p.add_argument("--image", action=_OrderedPath, const="image", metavar="FILE")
    p.add_argument("--out", dest="outfile", required=True)
    p.set_defaults(func=cmd_pack)

    p = sub.add_parser("inspect", help="print vocab tables, masks, or container contents")
    isub = p.add_subparsers(dest="what", parser_class=_Parser)
    q = isub.add_parser("vocab")
    q.add_argument("--factor", required=True, type=_parse_factor)
    q.set_defaults(func=cmd_inspect_vocab)
    q = isub.add_parser("mask")
    q.add_argument("--window", required=True, type=int)
    q.add_argument("--sub", type=int, default=None)
    q.add_argument("--condition", type=int, default=1)
    q.set_defaults(func=cmd_inspect_mask)
    q = isub.add_parser("mixed")
    q.add_argument("file")
    q.set_defaults(func=cmd_inspect_mixed)

    p = sub.add_parser("train", help="run image pretraining")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True, help="directory of .ppm files or a .upwmix file")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="sample an image from a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--out", dest="outfile", required=True)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("gradcheck", help="finite-difference check of the tiny model")
    p.add_argument("--eps", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--entries", type=int, default=4, help="coordinates checked per parameter")
    p.add_argument("--tolerance", type=float, default=1e-3)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "func", None):
            parser.print_help()
            return 1
        return args.func(args)
    except UsageError as e:
        print(f"upw: {e}", file=sys.stderr)
        return 1
    except (DataError, OSError) as e:
        print(f"upw: {e}", file=sys.stderr)
        return 2
    except NumericalError as e:
        print(f"upw: {e}", file=sys.stderr)
        return 3
    except SystemExit as e:  # --help and friends
        code = e.code
        return 0 if code is None else int(code)


if __name__ == "__main__":
    sys.exit(main())
