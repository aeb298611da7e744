import copy
import json
import logging
import math
import time
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd
import torch

from t2s import checkpoint
from t2s.errors import ArgumentError, ConfigError, NonFiniteLossError
from t2s.models.dit import TextSeriesDiT
from t2s.models.la_vae import LaVae, vae_loss
from t2s.schemas import CaptionedSample, DenoiserConfig, RunRecord, TrainingConfig, VaeConfig
from t2s.services import flow_service
from t2s.services.dataset_service import Dataset, MixedLengthSampler, normalize
from t2s.services.text_service import ConditionEmbedding, TextEncoder, null_condition

logger = logging.getLogger(__name__)

LATENT_SCALE_SAMPLES = 512
MIN_LATENT_STD = 1e-6


def condition_dropout(
    condition: ConditionEmbedding | np.ndarray, p_drop: float, rng: np.random.Generator
) -> ConditionEmbedding:
    """Null condition with probability p_drop, otherwise the condition unchanged."""
    if not 0.0 <= p_drop <= 1.0:
        raise ArgumentError(f"p_drop must be in [0, 1], got {p_drop}")
    if not isinstance(condition, ConditionEmbedding):
        vector = np.asarray(condition, dtype=np.float64)
        condition = ConditionEmbedding(vector=vector, is_null=not np.any(vector))
    if rng.random() < p_drop:
        return null_condition(condition.d_text)
    return condition


class RunLog:
    """Append-only per-iteration training record."""

    def __init__(self, records: Sequence[RunRecord] = ()):
        self.records: list[RunRecord] = []
        for record in records:
            self.append(record)

    def __len__(self) -> int:
        return len(self.records)

    def append(self, record: RunRecord) -> None:
        expected = len(self.records) + 1
        if record.iteration != expected:
            raise ArgumentError(f"RunLog expected iteration {expected}, got {record.iteration}")
        self.records.append(record)

    @property
    def losses(self) -> list[float]:
        return [r.total for r in self.records]

    def write_jsonl(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8") as fh:
            for record in self.records:
                fh.write(record.model_dump_json() + "\n")
        return path

    @classmethod
    def read_jsonl(cls, path: str | Path) -> "RunLog":
        with Path(path).open(encoding="utf-8") as fh:
            return cls([RunRecord.model_validate_json(line) for line in fh if line.strip()])

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for r in self.records:
            row = {"iteration": r.iteration, "total": r.total, "wall_time": r.wall_time, "updates": r.updates}
            for length, terms in r.terms.items():
                row[f"loss_len_{length}"] = terms["total"]
            rows.append(row)
        return pd.DataFrame(rows)


@dataclass
class TrainingResult:
    model: torch.nn.Module
    run_log: RunLog
    checkpoint_dir: Path
    vae: LaVae | None = None


def _select_lengths(datasets: Sequence[Dataset], lengths: Sequence[int]) -> list[Dataset]:
    wanted = set(lengths)
    selected = []
    for ds in datasets:
        kept = tuple(s for s in ds.samples if s.length in wanted)
        if len(kept) < len(ds):
            logger.warning(f"Dropping {len(ds) - len(kept)} samples from '{ds.name}' outside lengths {sorted(wanted)}")
        if kept:
            selected.append(Dataset(name=ds.name, samples=kept))
    covered = set().union(*(ds.lengths for ds in selected)) if selected else set()
    uncovered = sorted(wanted - covered)
    if uncovered:
        raise ConfigError(f"Datasets do not cover configured lengths {uncovered}")
    return selected


def _check_lengths(config: TrainingConfig, vae_config: VaeConfig) -> None:
    bad = [length for length in config.lengths if not vae_config.l_min <= length <= vae_config.l_max]
    if bad:
        raise ConfigError(f"Lengths {bad} outside VAE range [{vae_config.l_min}, {vae_config.l_max}]")


def series_tensor(samples: Sequence[CaptionedSample], scheme: str) -> torch.Tensor:
    return torch.tensor(np.stack([normalize(s.series, scheme)[0] for s in samples]), dtype=torch.float32)


def _abort(iteration: int, record: dict) -> None:
    logger.error(f"Aborting training at iteration {iteration}: non-finite loss {record}")
    raise NonFiniteLossError(iteration, record)


def _training_echo(config: TrainingConfig) -> dict:
    return json.loads(config.model_dump_json())


def train_vae(
    config: TrainingConfig,
    datasets: Sequence[Dataset],
    vae_config: VaeConfig | None = None,
) -> TrainingResult:
    """LA-VAE pretraining under the interleaved mixed-length loop; one optimizer step per iteration."""
    if config.phase != "vae":
        raise ConfigError(f"train_vae needs phase='vae', got '{config.phase}'")
    vae_config = vae_config or VaeConfig()
    _check_lengths(config, vae_config)
    selected = _select_lengths(datasets, config.lengths)

    torch.manual_seed(config.seed)
    generator = torch.Generator().manual_seed(config.seed)
    sampler = MixedLengthSampler(selected, seed=config.seed)
    model = LaVae(vae_config)
    model.train()
    optimizer = torch.optim.Adam(model.parameters(), lr=config.effective_learning_rate)

    run_log, updates, start = RunLog(), 0, time.perf_counter()
    logger.info(
        f"Training LA-VAE for {config.iterations} iterations on {sum(len(d) for d in selected)} samples "
        f"(lengths={config.lengths}, lr={config.effective_learning_rate})"
    )
    for iteration in range(1, config.iterations + 1):
        groups = sampler.batch(config.batch_size)
        optimizer.zero_grad()
        total = torch.zeros(())
        terms: dict[str, dict[str, float]] = {}
        for length, samples in groups.items():
            x = series_tensor(samples, config.normalization)
            out = model(x, generator)
            loss = vae_loss(x, out.x_hat, out.h, out.h_hat, out.posterior, config.lam, config.beta_kl)
            total = total + loss.total
            terms[str(length)] = {**loss.as_dict(), "count": float(len(samples))}

        if not torch.isfinite(total):
            _abort(iteration, {"total": float(total), "terms": terms})
        total.backward()
        optimizer.step()
        updates += 1

        run_log.append(
            RunRecord(
                iteration=iteration,
                total=float(total.detach()),
                terms=terms,
                wall_time=time.perf_counter() - start,
                updates=updates,
            )
        )
        if iteration % config.log_every == 0 or iteration == config.iterations:
            logger.info(f"[vae] iteration {iteration}/{config.iterations} loss={float(total):.5f}")

    model.eval()
    out_dir = Path(config.output_dir)
    ckpt = checkpoint.save_checkpoint(model, out_dir / "la_vae", "la_vae", vae_config, training=_training_echo(config))
    run_log.write_jsonl(out_dir / "vae_run_log.jsonl")
    return TrainingResult(model=model, run_log=run_log, checkpoint_dir=ckpt)


@torch.no_grad()
def estimate_latent_scale(vae: LaVae, datasets: Sequence[Dataset], scheme: str, seed: int = 0) -> float:
    """1 / std of upsampled training latents, or 1.0 when the std is degenerate."""
    samples = [s for ds in datasets for s in ds.samples]
    rng = np.random.default_rng(seed)
    if len(samples) > LATENT_SCALE_SAMPLES:
        samples = [samples[i] for i in sorted(rng.choice(len(samples), LATENT_SCALE_SAMPLES, replace=False))]
    by_length: dict[int, list[CaptionedSample]] = {}
    for s in samples:
        by_length.setdefault(s.length, []).append(s)

    was_training = vae.training
    vae.eval()
    grids = [vae.upsample(vae.encode(series_tensor(group, scheme))[0]) for group in by_length.values()]
    vae.train(was_training)
    std = float(torch.cat(grids).std())
    if not math.isfinite(std) or std < MIN_LATENT_STD:
        logger.warning(f"Degenerate latent std {std}; using latent_scale=1.0")
        return 1.0
    return 1.0 / std


def _load_vae(vae_checkpoint: str | Path | LaVae, fine_tune: bool) -> tuple[LaVae, str]:
    """The VAE to train against; an in-memory VAE is copied before fine-tuning so the caller's stays intact."""
    if isinstance(vae_checkpoint, LaVae):
        return (copy.deepcopy(vae_checkpoint) if fine_tune else vae_checkpoint), "<in-memory>"
    if vae_checkpoint is None:
        raise ConfigError("Diffusion training needs a pretrained LA-VAE checkpoint")
    vae, _ = checkpoint.load_la_vae(vae_checkpoint)
    return vae, str(vae_checkpoint)


def train_diffusion(
    config: TrainingConfig,
    datasets: Sequence[Dataset],
    vae_checkpoint: str | Path | LaVae,
    text_encoder: TextEncoder,
    denoiser_config: DenoiserConfig | None = None,
) -> TrainingResult:
    """
    Rectified-flow training of the denoiser on LA-VAE latents.

    Captions pass through condition dropout (or are always null with text_guidance=false).
    The LA-VAE stays frozen unless unfreeze_vae is set, in which case its own loss
    is added with ĥ taken from the one-step refined latent z_t + (1 − t)·u.
    """
    if config.phase != "diffusion":
        raise ConfigError(f"train_diffusion needs phase='diffusion', got '{config.phase}'")
    vae, vae_source = _load_vae(vae_checkpoint, config.unfreeze_vae)
    was_training = vae.training
    denoiser_config = denoiser_config or DenoiserConfig(d_text=text_encoder.d_text, grid_size=vae.config.grid_size)
    if denoiser_config.grid_size != vae.config.grid_size:
        raise ConfigError(
            f"Denoiser grid {denoiser_config.grid_size} does not match VAE grid {vae.config.grid_size}"
        )
    if denoiser_config.d_text != text_encoder.d_text:
        raise ConfigError(f"Denoiser d_text {denoiser_config.d_text} != text encoder d_text {text_encoder.d_text}")
    _check_lengths(config, vae.config)
    selected = _select_lengths(datasets, config.lengths)

    torch.manual_seed(config.seed)
    generator = torch.Generator().manual_seed(config.seed)
    dropout_rng = np.random.default_rng(config.seed + 1)
    sampler = MixedLengthSampler(selected, seed=config.seed)

    captions = sorted({s.caption for ds in selected for s in ds.samples})
    table = dict(zip(captions, text_encoder.encode(captions), strict=True)) if config.text_guidance else {}
    null = null_condition(denoiser_config.d_text)

    model = TextSeriesDiT(denoiser_config)
    scale = estimate_latent_scale(vae, selected, config.normalization, config.seed)
    model.latent_scale.fill_(scale)
    params = list(model.parameters())
    if config.unfreeze_vae:
        vae.train()
        params += list(vae.parameters())
    else:
        vae.eval()
    optimizer = torch.optim.Adam(params, lr=config.effective_learning_rate)

    run_log, updates, start = RunLog(), 0, time.perf_counter()
    logger.info(
        f"Training denoiser for {config.iterations} iterations (latent_scale={scale:.4f}, "
        f"p_drop={config.p_drop}, text_guidance={config.text_guidance}, unfreeze_vae={config.unfreeze_vae})"
    )
    model.train()
    for iteration in range(1, config.iterations + 1):
        groups = sampler.batch(config.batch_size)
        optimizer.zero_grad()
        total = torch.zeros(())
        terms: dict[str, dict[str, float]] = {}
        for length, samples in groups.items():
            x = series_tensor(samples, config.normalization)
            with torch.set_grad_enabled(config.unfreeze_vae):
                h, posterior = vae.encode(x, generator)
            z1 = vae.upsample(h) * scale
            z0 = torch.randn(z1.shape, generator=generator)
            t = flow_service.sample_training_time(generator, n=len(samples))
            z_t = flow_service.forward_path(z0, z1, t)

            conds = [
                condition_dropout(table[s.caption], config.p_drop, dropout_rng) if config.text_guidance else null
                for s in samples
            ]
            c = torch.tensor(np.stack([cond.vector for cond in conds]), dtype=torch.float32)
            u = model(z_t, t, c)
            fm = flow_service.fm_loss(u, flow_service.target_velocity(z0, z1))
            group_terms = {"fm": float(fm.detach())}
            group_total = fm

            if config.unfreeze_vae:
                refined = z_t + (1 - t).reshape(-1, 1, 1, 1) * u
                h_hat = vae.downsample(refined / scale, h.shape[1])
                x_hat = vae.decode(h_hat, length)
                vl = vae_loss(x, x_hat, h, h_hat, posterior, config.lam, config.beta_kl)
                group_total = group_total + vl.total
                group_terms |= {f"vae_{k}": v for k, v in vl.as_dict().items()}

            total = total + group_total
            terms[str(length)] = {
                **group_terms,
                "total": float(group_total.detach()),
                "count": float(len(samples)),
                "null_rate": sum(cond.is_null for cond in conds) / len(conds),
            }

        if not torch.isfinite(total):
            _abort(iteration, {"total": float(total), "terms": terms})
        total.backward()
        optimizer.step()
        updates += 1

        run_log.append(
            RunRecord(
                iteration=iteration,
                total=float(total.detach()),
                terms=terms,
                wall_time=time.perf_counter() - start,
                updates=updates,
            )
        )
        if iteration % config.log_every == 0 or iteration == config.iterations:
            logger.info(f"[dit] iteration {iteration}/{config.iterations} loss={float(total):.5f}")

    model.eval()
    out_dir = Path(config.output_dir)
    extra = {"latent_scale": scale, "text_encoder": text_encoder.name, "vae_checkpoint": vae_source}
    if config.unfreeze_vae:
        vae.eval()
        finetuned = checkpoint.save_checkpoint(
            vae, out_dir / "la_vae_finetuned", "la_vae", vae.config, training=_training_echo(config)
        )
        # latent_scale stays at its training-time value
        extra |= {
            "vae_checkpoint": str(finetuned),
            "base_vae_checkpoint": vae_source,
            "finetuned_latent_scale": estimate_latent_scale(vae, selected, config.normalization, config.seed),
        }
        logger.info(f"Denoiser pairs with the fine-tuned LA-VAE at {finetuned}")
    else:
        vae.train(was_training)
    ckpt = checkpoint.save_checkpoint(
        model, out_dir / "dit", "dit", denoiser_config, training=_training_echo(config), extra=extra
    )
    run_log.write_jsonl(out_dir / "dit_run_log.jsonl")
    return TrainingResult(model=model, run_log=run_log, checkpoint_dir=ckpt, vae=vae)
