import argparse
import asyncio
import json
import logging
import os
import platform
import sys
from collections.abc import Sequence
from datetime import UTC, datetime
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd
import torch
from pydantic import BaseModel, ValidationError

from t2s import __version__
from t2s.caption_schema import load_seed_prompt
from t2s.checkpoint import read_manifest
from t2s.config import Settings, get_settings, load_config_file, merge_config
from t2s.errors import ConfigError, T2SError
from t2s.schemas import (
    DenoiserConfig,
    EmbeddingClientConfig,
    EvalReport,
    PipelineConfig,
    SamplerConfig,
    SynthConfig,
    TrainingConfig,
    VaeConfig,
)
from t2s.services import evaluation_service, synth_service, training_service
from t2s.services.caption_service import RawSeries, build_fragment_dataset
from t2s.services.dataset_service import Dataset, load_dataset
from t2s.services.generation_service import TextSeriesGenerator
from t2s.services.llm_service import LLMService
from t2s.services.text_service import EmbeddingClient, OfflineTextEncoder, TextEncoder
from t2s.utils.metrics import MRR_CUTOFF
from t2s.utils.plotting import plot_loss_curve

# Configure logging
logging.basicConfig(
    level=os.getenv("LOG_LEVEL", "INFO").upper(),
    format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
)
logger = logging.getLogger(__name__)

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2
GLOBAL_KEYS = {"command", "config", "log_level"}
MANIFEST_NAME = "run_manifest.json"
FLAG_NAMES = {
    "cfg_scale": "--cfg",
    "learning_rate": "--lr",
    "n_candidates": "--candidates",
    "output_path": "--output",
    "llm_cache_path": "--llm-cache",
}


class UsageError(Exception):
    pass


class CliParser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


def _int_list(value: str) -> list[int]:
    try:
        return [int(v) for v in value.split(",") if v.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got '{value}'") from e


def _float_list(value: str) -> list[float]:
    try:
        return [float(v) for v in value.split(",") if v.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got '{value}'") from e


def _add_training_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", nargs="+", help="dataset JSONL/CSV files (one per length or domain)")
    p.add_argument("--iterations", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", dest="learning_rate", type=float)
    p.add_argument("--lam", type=float, help="latent consistency weight")
    p.add_argument("--beta-kl", type=float)
    p.add_argument("--lengths", type=_int_list, help="e.g. 24,48,96")
    p.add_argument("--seed", type=int)
    p.add_argument("--output-dir")
    p.add_argument("--normalization", choices=["minmax", "zscore"])
    p.add_argument("--log-every", type=int)
    p.add_argument("--plot", action="store_true", default=None, help="write a loss-curve PNG")


def _add_checkpoint_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--vae", help="LA-VAE checkpoint directory")
    p.add_argument("--dit", help="denoiser checkpoint directory")
    p.add_argument("--encoder", choices=["offline", "remote"])


def build_parser() -> CliParser:
    parser = CliParser(prog="t2s", description="Text-to-time-series generation")
    parser.add_argument("--config", help="flat JSON file of flag values (flags take precedence)")
    parser.add_argument("--log-level", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-dataset", help="caption fragments of raw series with an LLM")
    p.add_argument("--input", help="JSONL of raw series: {series, source_id, domain, boundaries?}")
    p.add_argument("--output", dest="output_path")
    p.add_argument("--fragment-length", type=int)
    p.add_argument("--token-limit", type=int)
    p.add_argument("--candidates", dest="n_candidates", type=int)
    p.add_argument("--concurrency", type=int)
    p.add_argument("--llm-cache", dest="llm_cache_path")
    p.add_argument("--seeds", help="seed prompt JSON (defaults to the shipped file)")
    p.add_argument("--domain")
    p.add_argument("--encoder", choices=["offline", "remote"])

    p = sub.add_parser("train-vae", help="pretrain the length-adaptive VAE")
    _add_training_flags(p)
    p.add_argument("--stride", type=int)
    p.add_argument("--grid-size", type=int)
    p.add_argument("--hidden", type=int)
    p.add_argument("--l-min", type=int)
    p.add_argument("--l-max", type=int)

    p = sub.add_parser("train-dit", help="train the flow-matching denoiser on VAE latents")
    _add_training_flags(p)
    _add_checkpoint_flags(p)
    p.add_argument("--p-drop", type=float, help="condition dropout probability")
    p.add_argument("--unfreeze-vae", action="store_true", default=None)
    p.add_argument("--no-text-guidance", dest="text_guidance", action="store_false", default=None)
    p.add_argument("--d-text", type=int)
    p.add_argument("--d-model", type=int)
    p.add_argument("--depth", type=int)
    p.add_argument("--heads", type=int)
    p.add_argument("--patch-size", type=int)

    p = sub.add_parser("generate", help="generate one series from a caption")
    _add_checkpoint_flags(p)
    p.add_argument("--caption")
    p.add_argument("--length", type=int)
    p.add_argument("--cfg", dest="cfg_scale", type=float)
    p.add_argument("--steps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--output", help=".json or .csv file (default: stdout)")

    for name, help_text in (("evaluate", "WAPE / MSE / MRR@10 per length"), ("sweep", "cfg x steps grid")):
        p = sub.add_parser(name, help=help_text)
        _add_checkpoint_flags(p)
        p.add_argument("--data", nargs="+")
        p.add_argument("--seed", type=int)
        p.add_argument("--candidates", type=int)
        p.add_argument("--threshold", type=float)
        p.add_argument("--normalization", choices=["minmax", "zscore"])
        if name == "evaluate":
            p.add_argument("--cfg", dest="cfg_scale", type=float)
            p.add_argument("--steps", type=int)
            p.add_argument("--output", help="report JSON path")
        else:
            p.add_argument("--cfg", dest="cfg_grid", type=_float_list, help="e.g. 1,4,7,10,13")
            p.add_argument("--steps", dest="steps_grid", type=_int_list, help="e.g. 10,20,50")
            p.add_argument("--output-dir")

    p = sub.add_parser("make-synth", help="write the synthetic toy corpus")
    p.add_argument("--samples-per-length", type=int)
    p.add_argument("--lengths", type=_int_list)
    p.add_argument("--seed", type=int)
    p.add_argument("--noise", type=float)
    p.add_argument("--output-dir")
    return parser


def _pick(resolved: dict[str, Any], keys: Sequence[str]) -> dict[str, Any]:
    return {k: resolved[k] for k in keys if resolved.get(k) is not None}


def _flag(field: str) -> str:
    return FLAG_NAMES.get(field, "--" + field.replace("_", "-"))


def _build(model: type[BaseModel], **values: Any) -> Any:
    """Validate flag values into a config model; rejected values are usage errors."""
    try:
        return model(**values)
    except ValidationError as e:
        problems = [
            f"{_flag(str(err['loc'][0]))}: {err['msg']}" if err["loc"] else err["msg"] for err in e.errors()
        ]
        raise UsageError("; ".join(problems)) from e


def _require(resolved: dict[str, Any], *keys: str) -> None:
    missing = [k for k in keys if resolved.get(k) in (None, "", [])]
    if missing:
        raise ConfigError(f"Missing required option(s): {', '.join('--' + k.replace('_', '-') for k in missing)}")


def _load_datasets(paths: Sequence[str]) -> list[Dataset]:
    return [load_dataset(p) for p in paths]


def _embedding_config(settings: Settings, d_text: int | None = None) -> EmbeddingClientConfig:
    return EmbeddingClientConfig(
        endpoint=settings.embed_endpoint,
        model=settings.embed_model,
        api_key=settings.embed_api_key,
        d_text=d_text or settings.d_text,
        cache_path=settings.cache_dir / "embeddings.jsonl",
    )


def _text_encoder(kind: str | None, settings: Settings, captions: Sequence[str], d_text: int | None) -> TextEncoder:
    if (kind or "offline") == "offline":
        return OfflineTextEncoder(d_text or settings.d_text)
    client = EmbeddingClient(_embedding_config(settings, d_text))
    return asyncio.run(client.lookup_encoder(captions))


def _generator(resolved: dict[str, Any], settings: Settings, captions: Sequence[str]) -> TextSeriesGenerator:
    _require(resolved, "vae", "dit")
    encoder = None
    if resolved.get("encoder") == "remote":
        encoder = _text_encoder("remote", settings, captions, None)
    return TextSeriesGenerator.from_checkpoints(resolved["vae"], resolved["dit"], encoder)


def write_manifest(directory: Path, command: str, argv: Sequence[str], resolved: dict[str, Any]) -> Path:
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "argv": list(argv),
        "config": resolved,
        "seed": resolved.get("seed"),
        "created_at": datetime.now(UTC).isoformat(),
        "versions": {
            "t2s": __version__,
            "python": platform.python_version(),
            "torch": torch.__version__,
            "numpy": np.__version__,
        },
    }
    path = directory / MANIFEST_NAME
    path.write_text(json.dumps(manifest, indent=2, default=str), encoding="utf-8")
    return path


def cmd_make_synth(resolved: dict[str, Any], settings: Settings) -> Path:
    config = _build(SynthConfig, **_pick(resolved, ["samples_per_length", "lengths", "seed", "noise", "output_dir"]))
    synth_service.make_synth(config)
    return Path(config.output_dir)


def cmd_train_vae(resolved: dict[str, Any], settings: Settings) -> Path:
    _require(resolved, "data")
    keys = ["iterations", "batch_size", "learning_rate", "lam", "beta_kl", "lengths", "seed", "output_dir"]
    config = _build(TrainingConfig, phase="vae", **_pick(resolved, [*keys, "normalization", "log_every"]))
    vae_config = _build(VaeConfig, **_pick(resolved, ["stride", "grid_size", "hidden", "l_min", "l_max"]))
    result = training_service.train_vae(config, _load_datasets(resolved["data"]), vae_config)
    if resolved.get("plot"):
        plot_loss_curve(result.run_log.to_frame(), Path(config.output_dir) / "vae_loss.png", "LA-VAE loss")
    return Path(config.output_dir)


def cmd_train_dit(resolved: dict[str, Any], settings: Settings) -> Path:
    _require(resolved, "data", "vae")
    keys = ["iterations", "batch_size", "learning_rate", "lam", "beta_kl", "p_drop", "lengths", "seed", "output_dir"]
    config = _build(
        TrainingConfig,
        phase="diffusion",
        **_pick(resolved, [*keys, "normalization", "unfreeze_vae", "text_guidance", "log_every"]),
    )
    datasets = _load_datasets(resolved["data"])
    captions = sorted({s.caption for ds in datasets for s in ds.samples})
    encoder = _text_encoder(resolved.get("encoder"), settings, captions, resolved.get("d_text"))
    vae_grid = VaeConfig(**read_manifest(resolved["vae"], "la_vae").config).grid_size
    denoiser_config = _build(
        DenoiserConfig,
        d_text=encoder.d_text,
        grid_size=vae_grid,
        **_pick(resolved, ["d_model", "depth", "heads", "patch_size"]),
    )
    result = training_service.train_diffusion(config, datasets, resolved["vae"], encoder, denoiser_config)
    if resolved.get("plot"):
        plot_loss_curve(result.run_log.to_frame(), Path(config.output_dir) / "dit_loss.png", "flow-matching loss")
    return Path(config.output_dir)


def cmd_generate(resolved: dict[str, Any], settings: Settings) -> Path:
    _require(resolved, "caption", "length")
    if resolved["length"] < 1:
        raise UsageError(f"--length: must be at least 1, got {resolved['length']}")
    sampler = _build(SamplerConfig, **_pick(resolved, ["cfg_scale", "steps", "seed"]))
    generator = _generator(resolved, settings, [resolved["caption"]])
    series = generator.generate(resolved["caption"], resolved["length"], sampler)

    payload = {"caption": resolved["caption"], "length": len(series), "series": [float(v) for v in series]}
    output = resolved.get("output")
    if output:
        path = Path(output)
        path.parent.mkdir(parents=True, exist_ok=True)
        if path.suffix.lower() == ".csv":
            pd.DataFrame({"t": np.arange(len(series)), "value": series}).to_csv(path, index=False)
        else:
            path.write_text(json.dumps(payload), encoding="utf-8")
        logger.info(f"Wrote {len(series)}-point series to {path}")
        return path.parent
    sys.stdout.write(json.dumps(payload) + "\n")
    return settings.runs_dir / "generate"


def _eval_kwargs(resolved: dict[str, Any]) -> dict[str, Any]:
    kwargs = _pick(resolved, ["threshold", "normalization"])
    if resolved.get("candidates") is not None:
        if resolved["candidates"] < 1:
            raise UsageError(f"--candidates: must be at least 1, got {resolved['candidates']}")
        kwargs["candidates_per_caption"] = resolved["candidates"]
    return kwargs


def _merge_reports(reports: Sequence[EvalReport]) -> EvalReport:
    return EvalReport(
        settings=reports[0].settings,
        rows=[row for r in reports for row in r.rows],
        failures=sum(r.failures for r in reports),
    )


def cmd_evaluate(resolved: dict[str, Any], settings: Settings) -> Path:
    _require(resolved, "data")
    sampler = _build(SamplerConfig, **_pick(resolved, ["cfg_scale", "steps", "seed"]))
    kwargs = _eval_kwargs(resolved)
    datasets = _load_datasets(resolved["data"])
    generator = _generator(resolved, settings, sorted({s.caption for ds in datasets for s in ds.samples}))
    report = _merge_reports([evaluation_service.evaluate(generator, ds, sampler, **kwargs) for ds in datasets])

    path = Path(resolved.get("output") or settings.runs_dir / "evaluate" / "report.json")
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(report.model_dump_json(indent=2), encoding="utf-8")
    for row in report.rows:
        logger.info(f"{row.dataset} L={row.length}: WAPE={row.wape} MSE={row.mse:.4f} MRR@10={row.mrr_at_10}")
    return path.parent


def cmd_sweep(resolved: dict[str, Any], settings: Settings) -> Path:
    _require(resolved, "data", "cfg_grid", "steps_grid")
    base = _build(SamplerConfig, **_pick(resolved, ["seed"]))
    for cfg_scale in resolved["cfg_grid"]:
        _build(SamplerConfig, cfg_scale=cfg_scale)
    for steps in resolved["steps_grid"]:
        _build(SamplerConfig, steps=steps)
    kwargs = _eval_kwargs(resolved)
    datasets = _load_datasets(resolved["data"])
    generator = _generator(resolved, settings, sorted({s.caption for ds in datasets for s in ds.samples}))
    out_dir = Path(resolved.get("output_dir") or settings.runs_dir / "sweep")

    cells = []
    for ds in datasets:
        result = evaluation_service.sweep(generator, ds, resolved["cfg_grid"], resolved["steps_grid"], base, **kwargs)
        cells.extend(result.cells)
    result = evaluation_service.SweepResult(cells)
    result.write_csv(out_dir / "sweep.csv")
    ranked = kwargs.get("candidates_per_caption", evaluation_service.DEFAULT_CANDIDATES) == MRR_CUTOFF
    result.plot_heatmap(out_dir / "sweep_heatmap.png", "mrr_at_10" if ranked else "mse")
    return out_dir


def cmd_build_dataset(resolved: dict[str, Any], settings: Settings) -> Path:
    _require(resolved, "input")
    corpus = []
    with Path(resolved["input"]).open(encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                corpus.append(RawSeries.model_validate_json(line))
    keys = ["output_path", "fragment_length", "token_limit", "n_candidates", "concurrency", "llm_cache_path", "domain"]
    config = _build(PipelineConfig, **_pick(resolved, keys))
    seeds = load_seed_prompt(resolved.get("seeds"))
    llm_config = LLMService.config_from_settings(settings, max_tokens=config.token_limit * 2)

    if resolved.get("encoder") == "remote":
        embedder = EmbeddingClient(_embedding_config(settings))
    else:
        embedder = OfflineTextEncoder(settings.d_text)
    result = asyncio.run(build_fragment_dataset(corpus, seeds, llm_config, embedder, config))
    logger.info(f"Pipeline finished: {len(result.samples)}/{result.total_fragments} fragments, {result.skipped} skipped")
    return Path(config.output_path).parent


COMMANDS = {
    "build-dataset": cmd_build_dataset,
    "train-vae": cmd_train_vae,
    "train-dit": cmd_train_dit,
    "generate": cmd_generate,
    "evaluate": cmd_evaluate,
    "sweep": cmd_sweep,
    "make-synth": cmd_make_synth,
}


def run(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        sys.stderr.write(f"{e}\n")
        return EXIT_USAGE
    except SystemExit as e:  # --help
        return int(e.code or 0)

    try:
        settings = get_settings()
        level = args.log_level or settings.log_level
        if level:
            logging.getLogger().setLevel(level.upper())

        flags = {k: v for k, v in vars(args).items() if k not in GLOBAL_KEYS}
        file_values = load_config_file(args.config)
        unknown = sorted(set(file_values) - set(flags))
        if unknown:
            raise ConfigError(f"Unknown keys for '{args.command}' in {args.config}: {unknown}")
        resolved = merge_config(file_values, flags)

        out_dir = COMMANDS[args.command](resolved, settings)
        write_manifest(out_dir, args.command, argv, resolved)
        return EXIT_OK
    except UsageError as e:
        logger.error(f"{args.command} rejected its arguments: {e}")
        sys.stderr.write(f"error: {e}\n")
        return EXIT_USAGE
    except T2SError as e:
        logger.error(f"{args.command} failed: {e}")
        sys.stderr.write(f"error: {e}\n")
        return EXIT_RUNTIME
    except Exception as e:
        logger.exception(f"{args.command} failed unexpectedly")
        sys.stderr.write(f"error: {e}\n")
        return EXIT_RUNTIME


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
