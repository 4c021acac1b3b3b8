"""Adam training loop with cosine learning-rate decay and checkpointing.

Determinism contract: given (TrainConfig, DatasetManifest, NoiseSpec, network
seed), every batch, every noise realization, and therefore every logged number
is a pure function of configuration.  HCANET_THREADS > 1 only parallelizes
batch assembly through an order-preserving map, so results are identical to
the single-threaded run.

Per-sample noise seeds mix (spec seed, train seed, epoch, sample index)
through a fixed polynomial so no two draws share a Philox stream.  Validation
pairs are noised once with the dedicated validation seed and reused at every
epoch, so the validation curve measures the model, not the noise.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .data import PatchDataset
from .errors import ConfigError, NumericsError
from .loss import LossConfig, total_loss
from .metrics import evaluate
from .network import HcaNet
from .noise import NoiseSpec, apply_noise
from .tensor import Tensor

_MASK64 = 0xFFFFFFFFFFFFFFFF


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 8
    lr0: float = 1e-4
    lr_final: float = 1e-6
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    grad_clip: float = 1.0  # global-norm cap; 0 disables (paper-literal mode)
    seed: int = 0
    val_noise_seed: int = 101
    checkpoint_every: int = 1

    def __post_init__(self):
        if self.epochs <= 0:
            raise ConfigError(f"epochs must be positive, got {self.epochs}")
        if self.batch_size <= 0:
            raise ConfigError(f"batch_size must be positive, got {self.batch_size}")
        if not self.lr0 > self.lr_final > 0:
            raise ConfigError(f"need lr0 > lr_final > 0, got lr0={self.lr0}, lr_final={self.lr_final}")
        for name, b in (("beta1", self.beta1), ("beta2", self.beta2)):
            if not 0 < b < 1:
                raise ConfigError(f"{name} must be in (0, 1), got {b}")
        if self.eps <= 0:
            raise ConfigError(f"eps must be positive, got {self.eps}")
        if self.grad_clip < 0:
            raise ConfigError(f"grad_clip must be >= 0, got {self.grad_clip}")
        if self.checkpoint_every < 1:
            raise ConfigError(f"checkpoint_every must be >= 1, got {self.checkpoint_every}")

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True, separators=(",", ":"))

    @staticmethod
    def from_json(text: str) -> "TrainConfig":
        try:
            return TrainConfig(**json.loads(text))
        except (ValueError, TypeError) as e:
            raise ConfigError(f"bad TrainConfig JSON: {e}") from e


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    """Cosine interpolation from lr0 (epoch 0) down to lr_final (last epoch)."""
    if not 0 <= epoch < cfg.epochs:
        raise ConfigError(f"epoch {epoch} outside [0, {cfg.epochs})")
    if cfg.epochs == 1:
        return cfg.lr0  # degenerate schedule: the only epoch runs at lr0
    u = epoch / (cfg.epochs - 1)
    return cfg.lr_final + 0.5 * (cfg.lr0 - cfg.lr_final) * (1.0 + math.cos(math.pi * u))


# -- optimizer -----------------------------------------------------------------


@dataclass
class OptimizerState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0


def init_optimizer(params: dict[str, Tensor]) -> OptimizerState:
    return OptimizerState(
        m={n: np.zeros_like(p.data) for n, p in params.items()},
        v={n: np.zeros_like(p.data) for n, p in params.items()},
    )


def adam_step(
    params: dict[str, Tensor],
    grads: dict[str, np.ndarray],
    state: OptimizerState,
    lr: float,
    *,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """Bias-corrected Adam update, in place on the parameter tensors."""
    if lr <= 0:
        raise ConfigError(f"lr must be positive, got {lr}")
    state.step += 1
    t = state.step
    c1 = np.float32(1.0 / (1.0 - beta1**t))
    c2 = np.float32(1.0 / (1.0 - beta2**t))
    b1, b2 = np.float32(beta1), np.float32(beta2)
    lr32, eps32 = np.float32(lr), np.float32(eps)
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.data.shape:
            raise ConfigError(f"gradient shape {g.shape} does not match {name} {p.data.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericsError(f"non-finite gradient for parameter {name!r} at step {t}")
        g = g.astype(np.float32, copy=False)
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        p.data = p.data - lr32 * (m * c1) / (np.sqrt(v * c2) + eps32)


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale all gradients so the global L2 norm is at most max_norm."""
    sq = 0.0
    for g in grads.values():
        sq += float(np.sum(np.square(g, dtype=np.float64)))
    norm = math.sqrt(sq)
    if max_norm > 0 and norm > max_norm:
        s = np.float32(max_norm / norm)
        for g in grads.values():
            g *= s
    return norm


# -- batch assembly -------------------------------------------------------------


def _mix(*parts: int) -> int:
    """Polynomial seed mixing; injective for desk-scale (epoch, index) ranges."""
    z = 0
    for p in parts:
        z = (z * 1_000_003 + int(p)) & _MASK64
    return z


def _worker_count() -> int:
    raw = os.environ.get("HCANET_THREADS", "0")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"HCANET_THREADS must be an integer, got {raw!r}") from None
    if n < 0:
        raise ConfigError(f"HCANET_THREADS must be >= 0, got {n}")
    return n


def _noisy_pair(dataset: PatchDataset, index: int, spec: NoiseSpec, seed: int):
    clean = dataset.patch(index)
    noisy, _ = apply_noise(clean, dataclasses.replace(spec, seed=seed))
    return clean, noisy


def _assemble(dataset, items, spec, workers: int):
    """items: list of (sample index, noise seed). Order-preserving, so the
    result is identical for any worker count."""
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(lambda it: _noisy_pair(dataset, it[0], spec, it[1]), items))
    return [_noisy_pair(dataset, i, spec, s) for i, s in items]


def _to_batch(pairs) -> tuple[np.ndarray, np.ndarray]:
    clean = np.stack([np.transpose(c, (2, 0, 1)) for c, _ in pairs]).astype(np.float32)
    noisy = np.stack([np.transpose(n, (2, 0, 1)) for _, n in pairs]).astype(np.float32)
    return clean, noisy


# -- training loop ----------------------------------------------------------------


@dataclass
class TrainResult:
    history: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    best_val_psnr_db: float = float("-inf")
    noisy_val_psnr_db: float | None = None
    log_path: str | None = None
    best_path: str | None = None
    last_path: str | None = None


def _validate(net: HcaNet, val_pairs) -> tuple[float, float, float]:
    ps, ss, sa = [], [], []
    for clean, noisy in val_pairs:
        rep = evaluate(net.denoise(noisy), clean)
        ps.append(rep.psnr_db)
        ss.append(rep.ssim)
        sa.append(rep.sam_rad)
    return float(np.mean(ps)), float(np.mean(ss)), float(np.mean(sa))


def train(
    cfg: TrainConfig,
    dataset: PatchDataset,
    noise_spec: NoiseSpec,
    net: HcaNet,
    out_dir: str | None = None,
    loss_cfg: LossConfig = LossConfig(),
) -> TrainResult:
    """Optimize net on noisy/clean patch pairs; returns the epoch history.

    With out_dir set, writes log.jsonl (one record per epoch), last.hcaw at the
    checkpoint cadence, and best.hcaw whenever validation PSNR improves.  A
    non-finite loss or gradient aborts the run; checkpoints already on disk are
    left in place.
    """
    train_idx, val_idx = dataset.split_indices()
    if not train_idx:
        raise ConfigError("training split is empty")
    workers = _worker_count()
    if workers > 1:
        # warm the scale cache on one thread; the pool then only reads it
        for ci, s in {(d.cube_index, d.scale) for d in dataset.samples}:
            dataset._scaled_cube(ci, s)

    val_items = [(i, _mix(noise_spec.seed, cfg.val_noise_seed, rank)) for rank, i in enumerate(val_idx)]
    val_pairs = _assemble(dataset, val_items, noise_spec, workers)
    noisy_psnr = None
    if val_pairs:
        noisy_psnr = float(np.mean([evaluate(noisy, clean).psnr_db for clean, noisy in val_pairs]))

    params = dict(net.named_params())
    state = init_optimizer(params)
    result = TrainResult(noisy_val_psnr_db=noisy_psnr)

    log_file = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        result.log_path = os.path.join(out_dir, "log.jsonl")
        result.best_path = os.path.join(out_dir, "best.hcaw")
        result.last_path = os.path.join(out_dir, "last.hcaw")
        log_file = open(result.log_path, "w", encoding="utf-8")

    try:
        for epoch in range(cfg.epochs):
            lr = lr_at(epoch, cfg)
            order = dataset.epoch_order(epoch, train_idx)
            loss_sum, seen = 0.0, 0
            for start in range(0, len(order), cfg.batch_size):
                chunk = order[start : start + cfg.batch_size]
                items = [(i, _mix(noise_spec.seed, cfg.seed, epoch, i)) for i in chunk]
                clean, noisy = _to_batch(_assemble(dataset, items, noise_spec, workers))
                pred = net.denoise_batch(Tensor(noisy))
                loss = total_loss(pred, Tensor(clean), loss_cfg)
                lval = float(loss.data)
                if not math.isfinite(lval):
                    raise NumericsError(
                        f"training loss is not finite at epoch {epoch}, sample offset {start}; "
                        "checkpoints on disk are preserved"
                    )
                loss.backward()
                grads = {
                    n: (p.grad if p.grad is not None else np.zeros_like(p.data))
                    for n, p in params.items()
                }
                for p in params.values():
                    p.grad = None
                if cfg.grad_clip > 0:
                    clip_gradients(grads, cfg.grad_clip)
                adam_step(params, grads, state, lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)
                loss_sum += lval * len(chunk)
                seen += len(chunk)

            record = {"epoch": epoch, "lr": lr, "train_loss": loss_sum / seen}
            if val_pairs:
                vp, vs, va = _validate(net, val_pairs)
                record.update(val_psnr_db=vp, val_ssim=vs, val_sam_rad=va)
                if vp > result.best_val_psnr_db:
                    result.best_val_psnr_db = vp
                    result.best_epoch = epoch
                    if out_dir is not None:
                        net.save(result.best_path)
            result.history.append(record)
            if log_file is not None:
                log_file.write(json.dumps(record, sort_keys=True, separators=(",", ":")) + "\n")
                log_file.flush()
            if out_dir is not None and ((epoch + 1) % cfg.checkpoint_every == 0 or epoch == cfg.epochs - 1):
                net.save(result.last_path)
    finally:
        if log_file is not None:
            log_file.close()
    return result
