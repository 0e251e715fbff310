"""Command-line entry point for dataset generation, training, and evaluation.

One executable with subcommands (`generate | pretrain | eval | sweep |
inspect`).  Every option resolves with the precedence CLI flag > config file >
built-in default; config files are INI with one section per subcommand.  Run
directories default to `<runs root>/<command>-<config hash>` so distinct
configurations never silently overwrite each other, and each completed run
holds a `manifest.json` recording everything needed to re-execute it.

Exit codes: 0 success, 2 usage error, 3 data or contract error, 4 runtime
error.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import os
import sys
from dataclasses import dataclass, replace
from pathlib import Path

import torch

from . import __version__
from .data import (
    AugmentConfig,
    SyntheticSceneSpec,
    generate_synthetic_scenes,
    load_tile_directory,
    save_tile_directory,
)
from .evaluation import (
    ChangeDetectConfig,
    ProbeConfig,
    change_detect_train,
    evaluate_change_detection,
    evaluate_probe,
    generate_synthetic_change_pairs,
    inspect_features,
    load_change_pairs,
    probe_train,
    save_change_pairs,
    scene_label_array,
    shallow_feature_energy,
    tiles_to_tensor,
)
from .exceptions import (
    CheckpointError,
    ConfigurationError,
    ContractError,
    FormatError,
    ManifestError,
    ParameterError,
    SwimDiffError,
    TrainingError,
)
from .training import JointTrainer, TrainConfig, load_query_encoder

RUNS_DIR_ENV = "SWIMDIFF_RUNS_DIR"
MANIFEST_FILE = "manifest.json"
ABLATION_TAGS = ("baseline", "swim_only", "diff_only", "full")
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_RUNTIME = 4


# ---------------------------------------------------------------------------
# Option resolution: CLI flag > config file > default
# ---------------------------------------------------------------------------

def _stage_tuple(raw: str) -> tuple[int, ...]:
    try:
        return tuple(int(part) for part in raw.replace(",", " ").split())
    except ValueError as exc:
        raise ConfigurationError(f"stages must be integers, got {raw!r}") from exc


# (option name, cast, help) per subcommand; defaults live in the dataclasses
# or the defaults dicts below, never duplicated here.
TRAIN_FIELDS = (
    ("epochs", int, "training epochs"),
    ("batch_size", int, "tiles per step"),
    ("sgd_lr", float, "contrastive-branch learning rate"),
    ("sgd_momentum", float, "contrastive-branch momentum"),
    ("sgd_weight_decay", float, "contrastive-branch weight decay"),
    ("adam_lr", float, "diffusion-branch learning rate"),
    ("temperature", float, "contrastive softmax temperature"),
    ("soft_temperature", float, "soft-label distribution temperature"),
    ("queue_capacity", int, "negative-embedding queue capacity"),
    ("encoder_momentum", float, "key-branch momentum coefficient"),
    ("diffusion_steps", int, "noise-schedule length"),
    ("beta_start", float, "first noise-schedule beta"),
    ("beta_end", float, "last noise-schedule beta"),
    ("lambda_contrastive", float, "contrastive loss weight"),
    ("lambda_diffusion", float, "diffusion loss weight"),
    ("seed", int, "training seed"),
    ("architecture", str, "encoder architecture name"),
    ("embedding_dim", int, "projection embedding width"),
    ("predictor_width", int, "noise-predictor base width"),
    ("detach_condition", bool, "block gradients through the conditioning features"),
    ("entropy_norm", str, "entropy normalizer: queue_size or fns_count"),
    ("fns_similarity_source", str, "anchor for scene matching: query or key"),
    ("checkpoint_every", int, "steps between extra checkpoints (0 disables)"),
    ("out_size", int, "augmented view side length"),
)

GENERATE_FIELDS = (
    ("n_scenes", int, "number of synthetic scenes"),
    ("tiles_per_scene", int, "tiles cut from each scene"),
    ("tile_size", int, "tile side length in pixels"),
    ("noise_level", float, "per-tile noise amplitude"),
    ("n_pairs", int, "change pairs to generate (kind=pairs)"),
    ("seed", int, "generation seed"),
)
GENERATE_DEFAULTS = {
    "n_scenes": 8, "tiles_per_scene": 64, "tile_size": 32,
    "noise_level": 0.05, "n_pairs": 16, "seed": 0,
}

CHANGE_DETECT_FIELDS = (
    ("epochs", int, "decoder training epochs"),
    ("batch_size", int, "pairs per step"),
    ("lr", float, "decoder learning rate"),
    ("weight_decay", float, "decoder weight decay"),
    ("threshold", float, "mask binarization threshold"),
    ("decoder_width", int, "decoder channel width"),
    ("stages", _stage_tuple, "encoder stages feeding the decoder, e.g. 0,1,2,3"),
    ("seed", int, "decoder training seed"),
)

CLASSIFY_FIELDS = (
    ("epochs", int, "probe training epochs"),
    ("batch_size", int, "tiles per probe step"),
    ("lr", float, "probe learning rate"),
    ("seed", int, "probe seed"),
)

INSPECT_FIELDS = (("n_images", int, "how many tiles to render"),)
INSPECT_DEFAULTS = {"n_images": 8}

SWEEP_PROBE_FIELDS = (
    ("probe_epochs", int, "probe epochs per sweep run"),
    ("probe_batch_size", int, "probe batch size"),
    ("probe_lr", float, "probe learning rate"),
)
SWEEP_PROBE_DEFAULTS = {"probe_epochs": 10, "probe_batch_size": 128, "probe_lr": 1e-2}


def load_config_section(path: str | None, section: str) -> dict[str, str]:
    if path is None:
        return {}
    config_path = Path(path)
    if not config_path.exists():
        raise ConfigurationError(f"config file not found: {config_path}")
    parser = configparser.ConfigParser()
    try:
        parser.read(config_path)
    except configparser.Error as exc:
        raise ConfigurationError(f"cannot parse {config_path}: {exc}") from exc
    if not parser.has_section(section):
        return {}
    return dict(parser.items(section))


def coerce(raw, cast, key: str):
    if cast is bool:
        state = configparser.ConfigParser.BOOLEAN_STATES.get(str(raw).strip().lower())
        if state is None:
            raise ConfigurationError(f"option {key!r}: not a boolean: {raw!r}")
        return state
    try:
        return cast(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"option {key!r}: {exc}") from exc


def gather_options(args: argparse.Namespace, fields, file_values: dict[str, str]) -> dict:
    """Merge CLI values over config-file values; omissions fall to defaults."""
    known = {key for key, _, _ in fields}
    unknown = sorted(set(file_values) - known)
    if unknown:
        raise ConfigurationError(
            f"unknown config keys {unknown}; valid keys: {sorted(known)}"
        )
    resolved = {}
    for key, cast, _ in fields:
        cli_value = getattr(args, key, None)
        if cli_value is not None:
            resolved[key] = coerce(cli_value, cast, key) if isinstance(cli_value, str) else cli_value
        elif key in file_values:
            resolved[key] = coerce(file_values[key], cast, key)
    return resolved


def add_field_arguments(parser: argparse.ArgumentParser, fields) -> None:
    for key, cast, help_text in fields:
        flag = "--" + key.replace("_", "-")
        if cast is bool:
            parser.add_argument(
                flag, action=argparse.BooleanOptionalAction, default=None, help=help_text
            )
        elif cast in (int, float):
            parser.add_argument(flag, type=cast, default=None, help=help_text)
        else:  # strings and custom casts arrive as raw strings
            parser.add_argument(flag, default=None, help=help_text)


def resolve_train_config(args: argparse.Namespace, file_values: dict[str, str]) -> TrainConfig:
    options = gather_options(args, TRAIN_FIELDS, file_values)
    out_size = options.pop("out_size", None)
    augment = AugmentConfig(out_size=out_size)
    return TrainConfig(augment=augment, **options)


def apply_ablation(config: TrainConfig, tag: str) -> TrainConfig:
    if tag == "baseline":
        return replace(config, swim_enabled=False, lambda_diffusion=0.0)
    if tag == "swim_only":
        return replace(config, swim_enabled=True, lambda_diffusion=0.0)
    if tag == "diff_only":
        return replace(config, swim_enabled=False)
    if tag == "full":
        return replace(config, swim_enabled=True)
    raise ConfigurationError(f"unknown ablation tag {tag!r}; choose from {ABLATION_TAGS}")


# ---------------------------------------------------------------------------
# Run directories and manifests
# ---------------------------------------------------------------------------

def runs_root(args: argparse.Namespace) -> Path:
    if getattr(args, "runs_dir", None):
        return Path(args.runs_dir)
    return Path(os.environ.get(RUNS_DIR_ENV) or "runs")


def config_digest(payload: dict) -> str:
    text = json.dumps(payload, sort_keys=True, default=str)
    return hashlib.sha256(text.encode()).hexdigest()[:12]


def prepare_out_dir(path: str | Path, force: bool) -> Path:
    path = Path(path)
    if path.exists() and any(path.iterdir()) and not force:
        raise ConfigurationError(
            f"output directory {path} is not empty; pass --force to reuse it"
        )
    path.mkdir(parents=True, exist_ok=True)
    return path


def resolve_run_dir(args: argparse.Namespace, command: str, payload: dict) -> Path:
    if getattr(args, "out", None):
        return prepare_out_dir(args.out, args.force)
    name = getattr(args, "name", None)
    slug = f"{command}-{name + '-' if name else ''}{config_digest(payload)}"
    return prepare_out_dir(runs_root(args) / slug, args.force)


@dataclass(frozen=True)
class RunManifest:
    """Record of a completed run: enough to re-execute it bit-identically."""

    run_id: str
    command: str
    version: str
    config: dict
    artifacts: tuple[str, ...]

    def write(self, run_dir: Path) -> Path:
        path = run_dir / MANIFEST_FILE
        body = {
            "run_id": self.run_id,
            "command": self.command,
            "version": self.version,
            "config": self.config,
            "artifacts": list(self.artifacts),
        }
        path.write_text(json.dumps(body, indent=2, sort_keys=True) + "\n")
        return path

    @classmethod
    def read(cls, run_dir: str | Path) -> "RunManifest":
        path = Path(run_dir) / MANIFEST_FILE
        if not path.exists():
            raise ManifestError(f"no run manifest at {path}")
        try:
            body = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ManifestError(f"cannot parse {path}: {exc}") from exc
        missing = {"run_id", "command", "version", "config", "artifacts"} - set(body)
        if missing:
            raise ManifestError(f"{path} is missing fields: {sorted(missing)}")
        return cls(
            run_id=body["run_id"],
            command=body["command"],
            version=body["version"],
            config=body["config"],
            artifacts=tuple(body["artifacts"]),
        )


def finish_run(run_dir: Path, command: str, config: dict, artifacts) -> None:
    RunManifest(
        run_id=run_dir.name,
        command=command,
        version=__version__,
        config=config,
        artifacts=tuple(sorted(artifacts)),
    ).write(run_dir)


def write_results(out_dir: Path, results: dict) -> Path:
    path = out_dir / "results.json"
    path.write_text(json.dumps(results, indent=2, sort_keys=True) + "\n")
    return path


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_generate(args: argparse.Namespace) -> int:
    file_values = load_config_section(args.config, "generate")
    values = {**GENERATE_DEFAULTS, **gather_options(args, GENERATE_FIELDS, file_values)}
    out = prepare_out_dir(args.out, args.force)
    if args.kind == "tiles":
        spec = SyntheticSceneSpec(
            n_scenes=values["n_scenes"],
            tiles_per_scene=values["tiles_per_scene"],
            tile_size=values["tile_size"],
            noise_level=values["noise_level"],
        )
        dataset = generate_synthetic_scenes(spec, values["seed"])
        save_tile_directory(dataset, out)
        print(f"wrote {len(dataset)} tiles across {values['n_scenes']} scenes to {out}")
    else:
        pairs = generate_synthetic_change_pairs(
            values["n_pairs"], values["tile_size"], values["seed"]
        )
        save_change_pairs(pairs, out)
        print(f"wrote {len(pairs)} change pairs to {out}")
    return 0


def cmd_pretrain(args: argparse.Namespace) -> int:
    file_values = load_config_section(args.config, "pretrain")
    config = apply_ablation(resolve_train_config(args, file_values), args.ablate)
    config.validate()
    dataset = load_tile_directory(args.data)
    payload = {
        "command": "pretrain",
        "ablate": args.ablate,
        "data": str(args.data),
        "train": config.to_dict(),
    }
    run_dir = resolve_run_dir(args, "pretrain", payload)
    trainer = JointTrainer(config)
    reports = trainer.train(dataset, run_dir)
    artifacts = [p.name for p in run_dir.glob("*.pt")] + ["metrics.csv"]
    finish_run(run_dir, "pretrain", payload, artifacts)
    last = reports[-1].total_loss if reports else float("nan")
    print(f"pretrained {trainer.step} steps (final loss {last:.4f}) in {run_dir}")
    return 0


def cmd_change_detect(args: argparse.Namespace) -> int:
    file_values = load_config_section(args.config, "change-detect")
    options = gather_options(args, CHANGE_DETECT_FIELDS, file_values)
    config = ChangeDetectConfig(**options)
    config.validate()
    encoder, _ = load_query_encoder(args.checkpoint)
    pairs = load_change_pairs(args.pairs)
    payload = {
        "command": "eval-change-detect",
        "checkpoint": str(args.checkpoint),
        "pairs": str(args.pairs),
        "eval": {**options, "stages": list(config.stages)},
    }
    run_dir = resolve_run_dir(args, "change-detect", payload)
    decoder = change_detect_train(pairs, encoder, config)
    result, counts = evaluate_change_detection(pairs, encoder, decoder, config.threshold)
    torch.save({"decoder": decoder.state_dict(), "stages": config.stages}, run_dir / "decoder.pt")
    write_results(run_dir, {
        "task": "change_detect",
        "dataset": str(args.pairs),
        "checkpoint": str(args.checkpoint),
        "metric": "f1",
        "value": result.f1,
        "seed": config.seed,
        "details": {
            "precision": result.precision,
            "recall": result.recall,
            "degenerate": result.degenerate,
            "threshold": config.threshold,
            "tp": counts.tp, "fp": counts.fp, "fn": counts.fn, "tn": counts.tn,
        },
    })
    finish_run(run_dir, "eval-change-detect", payload, ["decoder.pt", "results.json"])
    print(f"change detection f1 {result.f1:.4f} (precision {result.precision:.4f}, "
          f"recall {result.recall:.4f}) in {run_dir}")
    return 0


def cmd_classify(args: argparse.Namespace) -> int:
    file_values = load_config_section(args.config, "classify")
    options = gather_options(args, CLASSIFY_FIELDS, file_values)
    mode = {"linear": "linear_probe", "finetune": "fine_tune"}[args.mode]
    config = ProbeConfig(mode=mode, **options)
    config.validate()
    encoder, _ = load_query_encoder(args.checkpoint)
    dataset = load_tile_directory(args.data)
    images = tiles_to_tensor(dataset)
    labels, vocabulary = scene_label_array(dataset)
    payload = {
        "command": "eval-classify",
        "checkpoint": str(args.checkpoint),
        "data": str(args.data),
        "mode": mode,
        "eval": options,
    }
    run_dir = resolve_run_dir(args, "classify", payload)
    result = probe_train(
        images, torch.from_numpy(labels), encoder, n_classes=len(vocabulary), config=config
    )
    report = evaluate_probe(images, torch.from_numpy(labels), encoder, result.head)
    torch.save({"head": result.head.state_dict(), "classes": list(vocabulary)},
               run_dir / "probe.pt")
    write_results(run_dir, {
        "task": "classify",
        "dataset": str(args.data),
        "checkpoint": str(args.checkpoint),
        "metric": report["metric"],
        "value": report["value"],
        "seed": config.seed,
        "details": {"mode": mode, "lr_trace": list(result.lr_trace)},
    })
    finish_run(run_dir, "eval-classify", payload, ["probe.pt", "results.json"])
    print(f"{mode} {report['metric']} {report['value']:.4f} in {run_dir}")
    return 0


def cmd_inspect(args: argparse.Namespace) -> int:
    file_values = load_config_section(args.config, "inspect")
    values = {**INSPECT_DEFAULTS, **gather_options(args, INSPECT_FIELDS, file_values)}
    if values["n_images"] < 1:
        raise ParameterError(f"n_images must be >= 1, got {values['n_images']}")
    encoder, _ = load_query_encoder(args.checkpoint)
    dataset = load_tile_directory(args.data)
    images = tiles_to_tensor(dataset)[: values["n_images"]]
    labels, _ = scene_label_array(dataset)
    payload = {
        "command": "eval-inspect",
        "checkpoint": str(args.checkpoint),
        "data": str(args.data),
        "eval": values,
    }
    run_dir = resolve_run_dir(args, "inspect", payload)
    artifacts = inspect_features(encoder, images, run_dir, labels=labels[: images.shape[0]])
    energy = shallow_feature_energy(encoder, images)
    write_results(run_dir, {
        "task": "inspect",
        "dataset": str(args.data),
        "checkpoint": str(args.checkpoint),
        "metric": "shallow_high_frequency_energy",
        "value": energy,
        "seed": 0,
        "details": {"n_images": int(images.shape[0])},
    })
    finish_run(
        run_dir, "eval-inspect", payload,
        [path.name for path in artifacts.values()] + ["results.json", "artifacts.json"],
    )
    print(f"shallow high-frequency energy {energy:.6f}; artifacts in {run_dir}")
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    file_values = load_config_section(args.config, "pretrain")
    base = resolve_train_config(args, file_values)
    probe_values = {
        **SWEEP_PROBE_DEFAULTS,
        **gather_options(args, SWEEP_PROBE_FIELDS, load_config_section(args.config, "sweep")),
    }
    dataset = load_tile_directory(args.data)
    images = tiles_to_tensor(dataset)
    labels, vocabulary = scene_label_array(dataset)
    payload = {
        "command": "sweep",
        "data": str(args.data),
        "seeds": list(args.seeds),
        "variants": list(args.variants),
        "train": base.to_dict(),
        "probe": probe_values,
    }
    run_root = resolve_run_dir(args, "sweep", payload)
    rows = []
    for variant in args.variants:
        for seed in args.seeds:
            config = apply_ablation(replace(base, seed=seed), variant)
            config.validate()
            sub = prepare_out_dir(run_root / f"{variant}-seed{seed}", args.force)
            trainer = JointTrainer(config)
            trainer.train(dataset, sub)
            encoder, _ = load_query_encoder(sub / "final.pt")
            probe_config = ProbeConfig(
                epochs=probe_values["probe_epochs"],
                batch_size=probe_values["probe_batch_size"],
                lr=probe_values["probe_lr"],
                seed=seed,
            )
            probe = probe_train(
                images, torch.from_numpy(labels), encoder,
                n_classes=len(vocabulary), config=probe_config,
            )
            report = evaluate_probe(images, torch.from_numpy(labels), encoder, probe.head)
            energy = shallow_feature_energy(encoder, images)
            rows.append((variant, seed, report["value"], energy, sub.name))
            print(f"{variant} seed {seed}: probe accuracy {report['value']:.4f}, "
                  f"hf energy {energy:.6f}")
    summary = run_root / "summary.csv"
    with summary.open("w") as fh:
        fh.write("variant,seed,probe_accuracy,shallow_hf_energy,run_dir\n")
        for variant, seed, accuracy, energy, name in rows:
            fh.write(f"{variant},{seed},{accuracy!r},{energy!r},{name}\n")
    for variant in args.variants:
        scores = [acc for v, _, acc, _, _ in rows if v == variant]
        print(f"{variant}: mean probe accuracy {sum(scores) / len(scores):.4f}")
    finish_run(run_root, "sweep", payload, ["summary.csv"] + [r[4] for r in rows])
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _add_common(parser: argparse.ArgumentParser, with_name: bool = True) -> None:
    parser.add_argument("--config", default=None, help="INI config file")
    parser.add_argument("--out", default=None, help="output directory (overrides runs root)")
    parser.add_argument("--runs-dir", default=None,
                        help=f"runs root (default ${RUNS_DIR_ENV} or ./runs)")
    parser.add_argument("--force", action="store_true",
                        help="allow writing into a non-empty output directory")
    if with_name:
        parser.add_argument("--name", default=None, help="tag prepended to the run id")


def _add_inspect_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--checkpoint", required=True, help="pre-training checkpoint path")
    parser.add_argument("--data", required=True, help="tile dataset directory")
    add_field_arguments(parser, INSPECT_FIELDS)
    _add_common(parser)
    parser.set_defaults(func=cmd_inspect)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="swimdiff",
        description="Scene-matched contrastive pre-training with a diffusion constraint",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    commands = parser.add_subparsers(dest="command", required=True)

    generate = commands.add_parser("generate", help="write a synthetic dataset")
    generate.add_argument("--kind", choices=("tiles", "pairs"), default="tiles",
                          help="scene tiles for pre-training or change pairs for evaluation")
    add_field_arguments(generate, GENERATE_FIELDS)
    generate.add_argument("--out", required=True, help="dataset directory to create")
    generate.add_argument("--config", default=None, help="INI config file")
    generate.add_argument("--force", action="store_true",
                          help="allow writing into a non-empty output directory")
    generate.set_defaults(func=cmd_generate)

    pretrain = commands.add_parser("pretrain", help="run joint pre-training")
    pretrain.add_argument("--data", required=True, help="tile dataset directory")
    pretrain.add_argument("--ablate", choices=ABLATION_TAGS, default="full",
                          help="module ablation: baseline, swim_only, diff_only, or full")
    add_field_arguments(pretrain, TRAIN_FIELDS)
    _add_common(pretrain)
    pretrain.set_defaults(func=cmd_pretrain)

    evaluate = commands.add_parser("eval", help="evaluate a pre-trained checkpoint")
    eval_commands = evaluate.add_subparsers(dest="eval_command", required=True)

    change = eval_commands.add_parser("change-detect", help="train and score a change decoder")
    change.add_argument("--checkpoint", required=True, help="pre-training checkpoint path")
    change.add_argument("--pairs", required=True, help="change-pair dataset directory")
    add_field_arguments(change, CHANGE_DETECT_FIELDS)
    _add_common(change)
    change.set_defaults(func=cmd_change_detect)

    classify = eval_commands.add_parser("classify", help="probe scene classification")
    classify.add_argument("--checkpoint", required=True, help="pre-training checkpoint path")
    classify.add_argument("--data", required=True, help="tile dataset directory")
    classify.add_argument("--mode", choices=("linear", "finetune"), default="linear",
                          help="linear probe (frozen encoder) or full fine-tune")
    add_field_arguments(classify, CLASSIFY_FIELDS)
    _add_common(classify)
    classify.set_defaults(func=cmd_classify)

    inspect_eval = eval_commands.add_parser("inspect", help="write feature inspection artifacts")
    _add_inspect_arguments(inspect_eval)

    inspect_top = commands.add_parser("inspect", help="write feature inspection artifacts")
    _add_inspect_arguments(inspect_top)

    sweep = commands.add_parser("sweep", help="ablation grid: pretrain + linear probe")
    sweep.add_argument("--data", required=True, help="tile dataset directory")
    sweep.add_argument("--seeds", type=int, nargs="+", default=[0],
                       help="training seeds to cover")
    sweep.add_argument("--variants", nargs="+", choices=ABLATION_TAGS,
                       default=list(ABLATION_TAGS), help="ablation variants to cover")
    add_field_arguments(sweep, TRAIN_FIELDS)
    add_field_arguments(sweep, SWEEP_PROBE_FIELDS)
    _add_common(sweep)
    sweep.set_defaults(func=cmd_sweep)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else int(exc.code)
    try:
        return args.func(args)
    except (ParameterError, ContractError, ConfigurationError, ManifestError,
            FormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except SwimDiffError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # anything unexpected counts as a runtime failure
        print(f"unexpected error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
