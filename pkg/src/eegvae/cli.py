"""Command-line entry point: eegvae {generate,train,evaluate,reconstruct,params,gradcheck}.

Configuration comes from an optional JSON file with sections "data",
"model", "train", "synth" (strictly parsed: unknown sections or keys are
rejected by name), overridden by command-line flags.  The effective
config is echoed to stdout before each run and embedded in JSON reports.

Exit codes: 0 success, 1 validation/config error, 2 numeric/runtime error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys

from . import __version__
from .dsp import (EpochedDataset, SynthConfig, dataset_read, dataset_write,
                  minmax_normalize, synth_generate)
from .errors import ConfigError, NumericError, UsageError, ValidationError
from .gradcheck import standard_battery
from .metrics import export_reconstruction
from .model import (EncoderConfig, count_parameters, default_configs, model_init,
                    model_read, model_write)
from .rng import derive
from .training import TrainConfig, evaluate, train

# reference totals quoted for the real 9-subject setup; our exact counts
# differ by the documented flatten-width bookkeeping
_PARAM_REFERENCE = {
    "v1": {"classifier": 8516, "unsupervised": 52960, "total": 61476},
    "v2": {"classifier": 516, "total": 121853},
}


@dataclasses.dataclass(frozen=True)
class DataConfig:
    path: str | None = None
    normalize: bool = False
    fidelity_channels: tuple | str | None = None


@dataclasses.dataclass(frozen=True)
class RunConfig:
    data: DataConfig
    model_variant: str
    encoder: EncoderConfig
    train: TrainConfig
    synth: SynthConfig

    def to_echo_dict(self) -> dict:
        return {
            "data": dataclasses.asdict(self.data),
            "model": {"variant": self.model_variant, **dataclasses.asdict(self.encoder)},
            "synth": dataclasses.asdict(self.synth),
            "train": dataclasses.asdict(self.train),
        }


_MODEL_KEYS = ("variant",) + tuple(f.name for f in dataclasses.fields(EncoderConfig))
_TRAIN_KEYS = tuple(f.name for f in dataclasses.fields(TrainConfig))
_SYNTH_KEYS = tuple(f.name for f in dataclasses.fields(SynthConfig))
_DATA_KEYS = tuple(f.name for f in dataclasses.fields(DataConfig))


def _check_keys(section: str, doc: dict, allowed) -> None:
    for key in doc:
        if key not in allowed:
            raise ConfigError(f"unknown key '{key}' in config section '{section}'")


def _tupled(value):
    if isinstance(value, list):
        return tuple(_tupled(v) for v in value)
    return value


def _build(section: str, cls, doc: dict):
    try:
        return cls(**{k: _tupled(v) for k, v in doc.items()})
    except TypeError as exc:
        raise ConfigError(f"invalid value in config section '{section}': {exc}") from exc


def load_config(path, overrides: dict) -> RunConfig:
    """Parse the JSON config file, apply flag overrides, validate.

    overrides maps "section.key" to a value; only keys the user actually
    passed appear.  Defaults fill everything else.
    """
    doc: dict = {}
    if path is not None:
        try:
            with open(path) as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config file: {exc}") from exc
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config parse error at line {exc.lineno}, "
                              f"column {exc.colno}: {exc.msg}") from exc
        if not isinstance(doc, dict):
            raise ConfigError("config root must be a JSON object")
    _check_keys("(top level)", doc, ("data", "model", "train", "synth"))

    for name in ("data", "model", "train", "synth"):
        if name in doc and not isinstance(doc[name], dict):
            raise ConfigError(f"config section '{name}' must be a JSON object")
    sections = {name: dict(doc.get(name, {})) for name in ("data", "model", "train", "synth")}
    _check_keys("data", sections["data"], _DATA_KEYS)
    _check_keys("model", sections["model"], _MODEL_KEYS)
    _check_keys("train", sections["train"], _TRAIN_KEYS)
    _check_keys("synth", sections["synth"], _SYNTH_KEYS)

    for dotted, value in overrides.items():
        section, key = dotted.split(".", 1)
        sections[section][key] = value

    variant = sections["model"].pop("variant", "v1")
    if variant not in ("v1", "v2"):
        raise ConfigError(f"model variant must be 'v1' or 'v2', got '{variant}'")
    if variant == "v2" and "temporal_kernel" in sections["model"]:
        raise ConfigError("v2 temporal kernels are fixed at 64/16/4; "
                          "'temporal_kernel' applies to v1 only")

    return RunConfig(
        data=_build("data", DataConfig, sections["data"]),
        model_variant=variant,
        encoder=_build("model", EncoderConfig, sections["model"]),
        train=_build("train", TrainConfig, sections["train"]),
        synth=_build("synth", SynthConfig, sections["synth"]),
    )


def _echo(cfg: RunConfig) -> None:
    print(json.dumps(cfg.to_echo_dict(), sort_keys=True))


def _load_dataset(cfg: RunConfig, flag_path) -> EpochedDataset:
    path = flag_path if flag_path is not None else cfg.data.path
    if path is None:
        raise ConfigError("no dataset path given (use --data or config data.path)")
    ds = dataset_read(path)
    if cfg.data.normalize and not ds.normalized:
        ds = minmax_normalize(ds)
    return ds


def cmd_generate(cfg: RunConfig, args) -> int:
    _echo(cfg)
    ds = synth_generate(cfg.synth)
    if cfg.data.normalize:
        ds = minmax_normalize(ds)
    dataset_write(ds, args.out)
    print(f"wrote {ds.data.shape[0]} trials to {args.out}")
    return 0


def cmd_train(cfg: RunConfig, args) -> int:
    _echo(cfg)
    ds = _load_dataset(cfg, args.data)
    model = model_init(cfg.model_variant, default_configs(cfg.model_variant, cfg.encoder),
                       seed=derive(cfg.train.seed, 0))
    loop_cfg = dataclasses.replace(cfg.train, seed=derive(cfg.train.seed, 1))
    log_path = args.log if args.log is not None else args.out + ".log.jsonl"
    _, history = train(model, ds, loop_cfg, log_path=log_path)
    model_write(model, args.out)
    last = history[-1]
    print(f"trained {cfg.model_variant} for {loop_cfg.epochs} epochs: "
          f"l_total {last.l_total:.6g} (l_r {last.l_r:.6g}, l_kl {last.l_kl:.6g}, "
          f"l_clf {last.l_clf:.6g})")
    print(f"wrote model to {args.out}, log to {log_path}")
    return 0


def cmd_evaluate(cfg: RunConfig, args) -> int:
    _echo(cfg)
    model = model_read(args.model)
    ds = _load_dataset(cfg, args.data)
    report = evaluate(model, ds, eval_seed=args.seed,
                      fidelity_channel=cfg.data.fidelity_channels)
    doc = {"config": cfg.to_echo_dict(), "metrics": report.to_dict()}
    with open(args.report, "w", newline="") as fh:
        fh.write(json.dumps(doc, indent=2) + "\n")
    print(f"accuracy {report.accuracy:.4f}, kappa {report.kappa:.4f}, "
          f"mse_avg {report.mse_avg:.6g} over {report.n_trials} trials")
    print(f"wrote report to {args.report}")
    return 0


def cmd_reconstruct(cfg: RunConfig, args) -> int:
    _echo(cfg)
    model = model_read(args.model)
    ds = _load_dataset(cfg, args.data)
    channels = [c for c in args.channel.split(",") if c]
    export_reconstruction(model, ds, args.trial, channels, args.out,
                          eval_seed=args.seed)
    print(f"wrote trial {args.trial} channels {','.join(channels)} to {args.out}")
    return 0


def cmd_params(cfg: RunConfig, args) -> int:
    variant = args.variant
    model = model_init(variant, default_configs(variant), seed=0)
    counts = count_parameters(model)
    counts["unsupervised"] = counts["encoder"] + counts["decoder"]
    print(f"variant {variant}")
    for name in ("encoder", "decoder", "unsupervised", "classifier", "total"):
        ref = _PARAM_REFERENCE[variant].get(name)
        line = f"{name:>12} = {counts[name]}"
        if ref is not None:
            line += f"   (reference {ref}, delta {counts[name] - ref:+d})"
        print(line)
    return 0


def cmd_gradcheck(cfg: RunConfig, args) -> int:
    reports = standard_battery(seed=args.seed)
    failed = []
    for name, rep in reports:
        status = "pass" if rep.passed else "FAIL"
        print(f"{status}  {name:<28} worst_rel {rep.worst_rel:.3e}  ({rep.n_checked} checks)")
        if not rep.passed:
            failed.append(name)
    print(f"{len(reports) - len(failed)}/{len(reports)} ops passed")
    if failed:
        raise NumericError(f"gradient battery failed for: {', '.join(failed)}")
    return 0


class _Parser(argparse.ArgumentParser):
    # argparse calls .error for bad flags; route that into the exit taxonomy
    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="eegvae", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"eegvae {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("generate", help="write a synthetic 4-class dataset")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--out", required=True, help="output dataset path")
    p.add_argument("--seed", type=int, help="override synth.seed")

    p = sub.add_parser("train", help="train a model on a dataset file")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--variant", choices=("v1", "v2"), help="model variant")
    p.add_argument("--data", help="input dataset path")
    p.add_argument("--out", required=True, help="output model path")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--normalize", action="store_true", default=None,
                   help="min-max normalize the dataset in memory before training")
    p.add_argument("--log", help="JSONL loss log path (default: OUT.log.jsonl)")

    p = sub.add_parser("evaluate", help="evaluate a model, write a JSON report")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--model", required=True, help="model file")
    p.add_argument("--data", help="dataset path")
    p.add_argument("--report", required=True, help="output JSON report path")
    p.add_argument("--seed", type=int, default=0, help="evaluation noise seed")

    p = sub.add_parser("reconstruct", help="export original vs reconstruction CSV")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--model", required=True)
    p.add_argument("--data", help="dataset path")
    p.add_argument("--trial", type=int, required=True)
    p.add_argument("--channel", required=True,
                   help="channel name(s), comma separated; FCavg = mean(FC3, FC4)")
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--seed", type=int, default=0, help="evaluation noise seed")

    p = sub.add_parser("params", help="print parameter counts and reference deltas")
    p.add_argument("--variant", choices=("v1", "v2"), default="v1")

    p = sub.add_parser("gradcheck", help="run the finite-difference battery")
    p.add_argument("--seed", type=int, default=0)

    return parser


_FLAG_TO_CONFIG = {
    "variant": "model.variant",
    "epochs": "train.epochs",
    "lr": "train.lr",
    "weight_decay": "train.weight_decay",
    "batch_size": "train.batch_size",
    "normalize": "data.normalize",
}

_HANDLERS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "reconstruct": cmd_reconstruct,
    "params": cmd_params,
    "gradcheck": cmd_gradcheck,
}


def _collect_overrides(args) -> dict:
    overrides = {}
    for flag, dotted in _FLAG_TO_CONFIG.items():
        value = getattr(args, flag, None)
        if value is not None:
            overrides[dotted] = value
    seed = getattr(args, "seed", None)
    if seed is not None:
        if args.command == "generate":
            overrides["synth.seed"] = seed
        elif args.command == "train":
            overrides["train.seed"] = seed
    return overrides


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        cfg = load_config(getattr(args, "config", None), _collect_overrides(args))
        return _HANDLERS[args.command](cfg, args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (NumericError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
