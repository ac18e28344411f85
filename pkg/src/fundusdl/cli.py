"""Command-line entry point: preprocess, train, evaluate, predict.

Runs are driven by a JSON config file (see RunConfig); every paper-shaped
constant is a default that the config can override. Exit codes: 0 success,
1 usage/config, 2 data, 3 model-artifact.
"""

import argparse
import dataclasses
import json
import logging
import os
import shutil
import sys

import numpy as np

from . import dataset as _dataset
from . import evaluate as _evaluate
from . import imgproc as _imgproc
from . import model as _model
from . import serialize as _serialize
from . import train as _train
from .augment import AugmentConfig, fit_stats
from .dataset import partition_manifest
from .errors import ArtifactError, ConfigError, DataError, FundusDLError

logger = logging.getLogger(__name__)

CONFIG_ENV_VAR = "FUNDUSDL_CONFIG"

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_ARTIFACT = 3


@dataclasses.dataclass
class PreprocessConfig:
    enabled: bool = False
    blur_sigma: float | None = None
    clahe: bool = False
    clip_limit: float = 40.0
    grid: tuple = (8, 8)


@dataclasses.dataclass
class RunConfig:
    """Everything one training run needs, resolvable from a JSON file."""

    seed: int = 1234
    train_dir: str = ""
    valid_dir: str = ""
    test_dir: str = ""
    model_out: str = "model.fdl"
    out_dir: str = "run"
    architecture: str = "vgg16-transfer"
    input_shape: tuple | None = None
    freeze_policy: str | None = "until_block"   # vgg16-transfer only
    freeze_value: object = "block4_pool"
    train: _train.TrainConfig = dataclasses.field(default_factory=_train.TrainConfig)
    augment: AugmentConfig = dataclasses.field(default_factory=AugmentConfig)
    preprocess: PreprocessConfig = dataclasses.field(default_factory=PreprocessConfig)

    def __post_init__(self):
        if self.architecture not in _model.ARCHITECTURES:
            raise ConfigError(
                f"config field 'architecture': unknown value {self.architecture!r}"
            )
        if self.input_shape is not None:
            self.input_shape = tuple(int(d) for d in self.input_shape)

    @classmethod
    def from_json(cls, obj):
        def build(dc_cls, data, where):
            names = {f.name for f in dataclasses.fields(dc_cls)}
            unknown = set(data) - names
            if unknown:
                raise ConfigError(f"config field '{where}.{sorted(unknown)[0]}' is unknown")
            return dc_cls(**data)

        data = dict(obj)
        sub = {}
        for key, dc_cls in (("train", _train.TrainConfig), ("augment", AugmentConfig),
                            ("preprocess", PreprocessConfig)):
            if key in data:
                sub[key] = build(dc_cls, data.pop(key), key)
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ConfigError(f"config field '{sorted(unknown)[0]}' is unknown")
        try:
            return cls(**data, **sub)
        except TypeError as exc:
            raise ConfigError(f"invalid config: {exc}") from exc

    def to_json(self):
        out = dataclasses.asdict(self)
        for key in ("input_shape",):
            if out[key] is not None:
                out[key] = list(out[key])
        out["preprocess"]["grid"] = list(out["preprocess"]["grid"])
        return out

    @classmethod
    def load(cls, path):
        try:
            with open(path, "r", encoding="utf-8") as fh:
                obj = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}")
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}")
        return cls.from_json(obj)


def _apply_preprocess_ops(img, pp):
    if pp.blur_sigma:
        blurred = _imgproc.gaussian_blur(img, pp.blur_sigma)
        img = _imgproc.weighted_add(img, 4.0, blurred, -4.0, 128.0)
    if pp.clahe:
        img = _imgproc.clahe(img, clip_limit=pp.clip_limit, grid=tuple(pp.grid))
    return img


def cmd_preprocess(args):
    pp = PreprocessConfig(
        enabled=bool(args.blur_sigma or args.clahe),
        blur_sigma=args.blur_sigma,
        clahe=args.clahe,
        clip_limit=args.clip,
        grid=tuple(args.grid),
    )
    in_dir, out_dir = args.in_dir, args.out_dir
    if not os.path.isdir(in_dir):
        raise DataError(f"input directory does not exist: {in_dir}")
    n_done = 0
    failures = []
    for cls in sorted(os.listdir(in_dir)):
        src_cls = os.path.join(in_dir, cls)
        if cls.startswith(".") or not os.path.isdir(src_cls):
            continue
        dst_cls = os.path.join(out_dir, cls)
        os.makedirs(dst_cls, exist_ok=True)
        for fname in sorted(os.listdir(src_cls)):
            if fname.startswith("."):
                continue
            if os.path.splitext(fname)[1].lower() not in _dataset.IMAGE_EXTENSIONS:
                continue
            src = os.path.join(src_cls, fname)
            dst = os.path.join(dst_cls, fname)
            try:
                if not pp.enabled:
                    shutil.copyfile(src, dst)  # no ops selected: bytes pass through
                else:
                    _apply_preprocess_ops(_imgproc.Image.load(src), pp).save(dst)
                n_done += 1
            except Exception as exc:
                logger.warning("failed to preprocess %s: %s", src, exc)
                failures.append(src)
    print(f"processed {n_done} image(s) into {out_dir}"
          + (f"; {len(failures)} failed" if failures else ""))
    return EXIT_DATA if failures else EXIT_OK


def _resolve_graph(cfg, rng):
    if cfg.architecture == "vgg16-transfer":
        freeze = None
        if cfg.freeze_policy == "until_block":
            freeze = cfg.freeze_value
        elif cfg.freeze_policy == "first_n":
            freeze = int(cfg.freeze_value)
        elif cfg.freeze_policy is not None:
            raise ConfigError(f"config field 'freeze_policy': unknown value {cfg.freeze_policy!r}")
        graph = _model.build_vgg16_transfer(
            input_shape=cfg.input_shape or (224, 224, 3), freeze=freeze
        )
    else:
        graph = _model.build_architecture(cfg.architecture, cfg.input_shape)
    _model.init_weights(graph, rng)
    return graph


def _load_partition(root, cfg, what):
    h, w, _ = cfg.input_shape or _model.build_architecture(cfg.architecture).input_shape
    samples, failed = _dataset.load_samples(root, size=(w, h))
    if not samples:
        raise DataError(f"{what} partition at {root} is empty")
    if cfg.preprocess.enabled:
        for s in samples:
            s.image = _apply_preprocess_ops(s.image, cfg.preprocess)
    return samples


def cmd_train(args):
    config_path = args.config or os.environ.get(CONFIG_ENV_VAR)
    if not config_path:
        raise ConfigError(f"no config file given (use --config or ${CONFIG_ENV_VAR})")
    cfg = RunConfig.load(config_path)
    if args.seed is not None:
        cfg.seed = args.seed
    cfg.train.seed = cfg.seed

    rng = np.random.default_rng(cfg.seed)
    graph = _resolve_graph(cfg, rng)

    train_samples = _load_partition(cfg.train_dir, cfg, "train")
    valid_samples = _load_partition(cfg.valid_dir, cfg, "valid")

    stats = fit_stats(train_samples)
    graph, history = _train.fit(
        graph, train_samples, valid_samples, cfg.train, cfg.augment, stats=stats, rng=rng
    )

    os.makedirs(cfg.out_dir, exist_ok=True)
    model_path = cfg.model_out
    if os.path.dirname(model_path):
        os.makedirs(os.path.dirname(model_path), exist_ok=True)
    _serialize.save_model(graph, stats, model_path)

    manifest = partition_manifest((("train", train_samples), ("valid", valid_samples)))
    print(manifest)
    with open(os.path.join(cfg.out_dir, "manifest.txt"), "w", encoding="utf-8") as fh:
        fh.write(manifest + "\n")
    with open(os.path.join(cfg.out_dir, "history.log"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(history.log_lines()) + "\n")
    with open(os.path.join(cfg.out_dir, "history.json"), "w", encoding="utf-8") as fh:
        json.dump(history.to_json(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(cfg.out_dir, "effective_config.json"), "w", encoding="utf-8") as fh:
        json.dump(cfg.to_json(), fh, indent=2, sort_keys=True)
        fh.write("\n")

    last = history.records[-1]
    print(f"trained {cfg.architecture} for {len(history.records)} epoch(s) "
          f"({history.stop_reason}); best epoch {history.best_epoch}; "
          f"final val_loss {last.val_loss:.6f} val_acc {last.val_acc:.4f}")
    print(f"model written to {model_path}")
    return EXIT_OK


def cmd_evaluate(args):
    graph, stats = _serialize.load_model(args.model)
    if stats is None:
        raise ArtifactError(f"{args.model} carries no normalization stats")
    report = _evaluate.batch_report(graph, stats, args.test_dir)
    print(report.text())
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(report.to_json(), fh, indent=2, sort_keys=True)
            fh.write("\n")
    return EXIT_DATA if report.failures else EXIT_OK


def cmd_predict(args):
    graph, stats = _serialize.load_model(args.model)
    if stats is None:
        raise ArtifactError(f"{args.model} carries no normalization stats")
    try:
        img = _imgproc.Image.load(args.image)
    except Exception as exc:
        raise DataError(f"cannot read image {args.image}: {exc}") from exc
    pred = _evaluate.predict(graph, stats, img, source_path=args.image)
    print(f"{pred.predicted_class.upper()} >>> {os.path.basename(args.image)}")
    print(_evaluate.format_score(pred.score))
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        sys.exit(EXIT_USAGE)


def build_parser():
    parser = _Parser(prog="fundusdl", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="apply optional blur/CLAHE stages to a corpus")
    p.add_argument("in_dir")
    p.add_argument("out_dir")
    p.add_argument("--blur-sigma", type=float, default=None,
                   help="blur-and-subtract vessel enhancement with this sigma")
    p.add_argument("--clahe", action="store_true", help="apply CLAHE")
    p.add_argument("--clip", type=float, default=40.0, help="CLAHE clip limit")
    p.add_argument("--grid", type=int, nargs=2, default=(8, 8), metavar=("TX", "TY"))
    p.add_argument("--seed", type=int, default=None, help="unused; accepted for uniformity")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="train a model from a JSON run config")
    p.add_argument("--config", default=None,
                   help=f"run config path (default: ${CONFIG_ENV_VAR})")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="batch-evaluate a model on a test layout")
    p.add_argument("--model", required=True)
    p.add_argument("--test-dir", required=True)
    p.add_argument("--out", default=None, help="also write a JSON report here")
    p.add_argument("--seed", type=int, default=None, help="unused; accepted for uniformity")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", help="score a single image")
    p.add_argument("--model", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--seed", type=int, default=None, help="unused; accepted for uniformity")
    p.set_defaults(func=cmd_predict)
    return parser


def main(argv=None):
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ArtifactError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ARTIFACT
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FundusDLError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
