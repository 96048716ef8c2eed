"""Command-line entry point.

Exit codes: 0 success, 2 input error, 3 numeric failure, 4 check failure.

Config files are ``key = value`` text (see :mod:`mptpar.config`). A training
config mixes model keys with ``train.``-prefixed optimizer keys, e.g.
``dim = 64`` and ``train.lr = 0.001``. Every command that writes an artifact
also writes ``<artifact>.manifest.json`` recording its inputs.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import __version__
from . import config as kv
from .numerics import CheckpointError, ConfigError, NonFiniteError, analytic_grads, finite_diff_check
from .pipeline import (Model, ModelConfig, NonFiniteLossError, OracleModel, TaxonomyError, TrainConfig, evaluate,
                       forward, init_model, train_loop)
from .synthgen import DatasetError, GenSpec, InfeasibleError, dataset_bytes, generate_clip, generate_dataset, \
    read_dataset

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC, EXIT_CHECK = 0, 2, 3, 4
TRAIN_PREFIX = "train."
DEFAULT_SABOTAGE = "head.global.w"


class InputError(Exception):
    pass


@dataclasses.dataclass
class RunManifest:
    command: str
    argv: list[str]
    seed: int | None
    config: str
    artifacts: dict[str, str]
    tool_version: str = __version__

    def write(self, artifact: Path) -> Path:
        path = artifact.with_name(artifact.name + ".manifest.json")
        _atomic_write(path, (json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True) + "\n").encode())
        return path


def _atomic_write(path: Path, data: bytes) -> None:
    """Write through a temporary file so a failure never leaves a partial artifact."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent if str(path.parent) else ".", prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _read_text(path) -> str:
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror or exc}") from exc


def _read_clips(path):
    if not Path(path).is_file():
        raise InputError(f"dataset {path} does not exist")
    try:
        return read_dataset(path)
    except DatasetError as exc:
        raise InputError(f"dataset {path}: {exc}") from exc


def _load_model(path) -> Model:
    if not Path(path).is_file():
        raise InputError(f"checkpoint {path} does not exist")
    try:
        return Model.load(path)
    except (CheckpointError, kv.ConfigParseError, ConfigError, TaxonomyError) as exc:
        raise InputError(f"checkpoint {path}: {exc}") from exc


def _split_train_config(text: str) -> tuple[ModelConfig, TrainConfig]:
    values = kv.parse_kv(text)
    train = {k[len(TRAIN_PREFIX):]: v for k, v in values.items() if k.startswith(TRAIN_PREFIX)}
    model = {k: v for k, v in values.items() if not k.startswith(TRAIN_PREFIX)}
    mcfg, tcfg = kv.from_kv(ModelConfig, model), kv.from_kv(TrainConfig, train)
    mcfg.validate()
    tcfg.validate()
    return mcfg, tcfg


# ---------------------------------------------------------------- commands

def cmd_generate(args) -> int:
    values = kv.parse_kv(_read_text(args.spec))
    spec = kv.from_kv(GenSpec, values)
    if args.seed is not None:
        spec = dataclasses.replace(spec, seed=args.seed)
    try:
        clips = generate_dataset(spec)
    except InfeasibleError as exc:
        raise InputError(str(exc)) from exc
    out = Path(args.out)
    _atomic_write(out, dataset_bytes(clips))
    RunManifest("generate", sys.argv[1:] if args.argv is None else args.argv, spec.seed, kv.to_kv(spec),
                {"dataset": str(out)}).write(out)
    print(f"wrote {len(clips)} clips to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    clips = _read_clips(args.data)
    mcfg, tcfg = _split_train_config(_read_text(args.config)) if args.config else (ModelConfig(), TrainConfig())
    model = Model(mcfg)
    try:
        log = train_loop(clips, model, tcfg)
    except TaxonomyError as exc:
        raise InputError(str(exc)) from exc
    out = Path(args.out)
    _atomic_write(out, model.store.to_bytes(kv.to_kv(mcfg)))
    log_path = out.with_name(out.name + ".log")
    _atomic_write(log_path, log.to_text().encode())
    snapshot = kv.to_kv(mcfg) + "".join(f"{TRAIN_PREFIX}{line}\n" for line in kv.to_kv(tcfg).splitlines())
    RunManifest("train", sys.argv[1:] if args.argv is None else args.argv, tcfg.seed, snapshot,
                {"checkpoint": str(out), "log": str(log_path), "data": str(args.data)}).write(out)
    if log.epochs:
        print(f"final epoch loss {log.epochs[-1].total:.6f}")
    print(f"wrote checkpoint {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    clips = _read_clips(args.data)
    if args.oracle:
        predictor, config = OracleModel(), "oracle = true\n"
    elif args.checkpoint:
        predictor = _load_model(args.checkpoint)
        config = kv.to_kv(predictor.cfg)
    else:
        raise InputError("eval needs --checkpoint or --oracle")
    try:
        score = evaluate(clips, predictor)
    except TaxonomyError as exc:
        raise InputError(str(exc)) from exc
    report = score.report()
    out = Path(args.report)
    _atomic_write(out, report.encode())
    RunManifest("eval", sys.argv[1:] if args.argv is None else args.argv, None, config,
                {"report": str(out), "data": str(args.data),
                 "checkpoint": "" if args.oracle else str(args.checkpoint)}).write(out)
    sys.stdout.write(report)
    return EXIT_OK


def _gradcheck_clip(cfg: ModelConfig, seed: int):
    spec = GenSpec(n_min=3, n_max=3, frames=2, height=cfg.height, width=cfg.width, groups_min=2, groups_max=2,
                   n_individual=cfg.n_individual, n_social=cfg.n_social, n_global=cfg.n_global,
                   box_half=2.0, sigma=1.0, motion=1.0)
    return generate_clip(spec, seed)


TINY_GRADCHECK = ModelConfig(dim=16, channels=4, scene_tokens=2, stre_heads=2, agg_heads=2, fuse_heads=2,
                             relation_hidden=8, height=16, width=16, nmax=8)


def cmd_gradcheck(args) -> int:
    if args.tolerance < 0:
        raise InputError("tolerance must be non-negative")
    if args.config:
        overrides = kv.parse_kv(_read_text(args.config))
        cfg = kv.from_kv(ModelConfig, {**kv.parse_kv(kv.to_kv(TINY_GRADCHECK)), **overrides})
        cfg.validate()
    else:
        cfg = TINY_GRADCHECK
    store = init_model(cfg)
    try:
        clip = _gradcheck_clip(cfg, args.seed)
    except InfeasibleError as exc:
        raise InputError(f"gradcheck clip: {exc}") from exc

    def loss(s):
        return forward(clip, "train", s, cfg).loss

    grads = None
    if args.sabotage:
        if args.sabotage not in store:
            raise InputError(f"unknown parameter {args.sabotage!r}")
        grads = analytic_grads(loss, store)
        grads[args.sabotage] = grads[args.sabotage] + 1e-2  # deliberately wrong
    report = finite_diff_check(loss, store, max_coords=args.max_coords, seed=args.seed, grads=grads)
    name, err = report.worst()
    print(f"checked {sum(report.checked.values())} coordinates in {len(report.errors)} parameters")
    print(f"worst {name} {err:.3e}")
    failing = sorted(n for n, e in report.errors.items() if e > args.tolerance)
    if failing:
        for n in failing:
            print(f"FAIL {n} {report.errors[n]:.3e} > {args.tolerance:g}")
        return EXIT_CHECK
    print(f"all relative errors <= {args.tolerance:g}")
    return EXIT_OK


def write_pgm(path: Path, image: np.ndarray) -> None:
    """Binary graymap (P5), 8 bits per pixel."""
    h, w = image.shape
    header = f"P5\n{w} {h}\n255\n".encode("ascii")
    _atomic_write(path, header + np.asarray(image, dtype=np.uint8).tobytes())


def attention_images(attention: np.ndarray, fh: int, fw: int) -> np.ndarray:
    """``[T, K, H'W']`` rows (each summing to 1) -> ``[T, K, H', W']`` bytes, pixel = round(255 * a)."""
    pix = np.rint(np.clip(attention, 0.0, 1.0) * 255.0).astype(np.uint8)
    return pix.reshape(attention.shape[0], attention.shape[1], fh, fw)


def cmd_inspect(args) -> int:
    model = _load_model(args.checkpoint)
    if not model.cfg.use_scene:
        raise InputError("this checkpoint has no scene module")
    clips = _read_clips(args.data)
    if not 0 <= args.clip < len(clips):
        raise InputError(f"clip index {args.clip} out of range for {len(clips)} clips")
    out = forward(clips[args.clip], "eval", model.store, model.cfg)
    fh, fw = model.cfg.feature_size
    images = attention_images(out.scene_attention, fh, fw)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    written = []
    for t in range(images.shape[0]):
        for k in range(images.shape[1]):
            path = outdir / f"frame{t:02d}_token{k:02d}.pgm"
            write_pgm(path, images[t, k])
            written.append(path)
    RunManifest("inspect", sys.argv[1:] if args.argv is None else args.argv, None, kv.to_kv(model.cfg),
                {"checkpoint": str(args.checkpoint), "data": str(args.data), "out": str(outdir)}
                ).write(outdir / "attention")
    print(f"wrote {len(written)} attention maps to {outdir}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mptpar", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic dataset")
    p.add_argument("--spec", required=True, help="generator config (key = value)")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None, help="overrides the seed in the generator config")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--config", default=None, help="model keys plus train.* keys")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint (or the ground-truth oracle)")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--report", required=True)
    p.add_argument("--oracle", action="store_true", help="score the ground truth against itself")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of the end-to-end loss")
    p.add_argument("--config", default=None, help="overrides on the tiny default model")
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--max-coords", type=int, default=4, help="coordinates probed per parameter")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sabotage", nargs="?", const=DEFAULT_SABOTAGE, default=None, metavar="PARAM",
                   help="corrupt one parameter's analytic gradient (debugging the checker)")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("inspect", help="export scene attention maps as PGM images")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--clip", type=int, default=0, help="index of the clip in the dataset")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    args.argv = list(argv) if argv is not None else None
    try:
        return args.func(args)
    except (InputError, kv.ConfigParseError, ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (NonFiniteLossError, NonFiniteError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
