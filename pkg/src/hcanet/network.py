"""U-shaped denoising network of CAMixing blocks.

A 3x3x3 stem lifts the band axis into feature space, an encoder-decoder of
CAMixing blocks (CAFM then MSFN, each behind a pre-norm residual) processes
features at widths base_width * 2^level, skip connections concatenate encoder
features into the decoder and fuse with 1x1 convolutions, and a 3x3 tail
emits a residual map with one channel per band.  The denoised cube is
input + residual; nothing is clipped here.

Checkpoints: magic "HCAW", u32 version, length-prefixed canonical-JSON
NetworkConfig, then per-tensor records (length-prefixed name, u32 rank and
extents, raw little-endian f32 data).  Reload is bit-exact.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import asdict, dataclass
from typing import BinaryIO, Iterator

import numpy as np

from .cafm import CafmWeights, cafm_forward, init_cafm
from .errors import ConfigError, FormatError, ShapeError
from .msfn import FfnWeights, MsfnWeights, ffn_forward, init_ffn, init_msfn, msfn_forward
from .nn import (
    Conv2dWeights,
    ConvT2dWeights,
    Conv3dWeights,
    LayerNormWeights,
    conv2d,
    conv3d,
    downsample,
    init_conv2d,
    init_conv3d,
    init_downsample,
    init_layer_norm,
    init_upsample,
    layer_norm,
    upsample,
)
from .tensor import Tensor, add, concat, no_grad, reshape

CHECKPOINT_MAGIC = b"HCAW"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class NetworkConfig:
    bands: int
    base_width: int = 16
    levels: int = 4
    blocks_per_level: tuple[int, ...] = (2, 2, 2, 2)
    refinement_blocks: int = 2
    shuffle_groups: int = 4
    gamma: int = 2
    norm_enabled: bool = True
    local_branch: bool = True
    conv3d_enabled: bool = True
    msfn_enabled: bool = True

    def __post_init__(self):
        if self.bands < 1:
            raise ConfigError(f"bands must be positive, got {self.bands}")
        if self.levels < 1 or len(self.blocks_per_level) != self.levels:
            raise ConfigError(
                f"blocks_per_level has {len(self.blocks_per_level)} entries for {self.levels} levels"
            )
        if self.base_width % self.shuffle_groups:
            raise ConfigError(
                f"base_width {self.base_width} not divisible by shuffle_groups {self.shuffle_groups}"
            )
        if self.gamma < 1:
            raise ConfigError(f"gamma must be >= 1, got {self.gamma}")
        if any(b < 1 for b in self.blocks_per_level) or self.refinement_blocks < 0:
            raise ConfigError("block counts must be positive (refinement may be 0)")

    def width(self, level: int) -> int:
        return self.base_width * (1 << level)

    def to_json(self) -> str:
        d = asdict(self)
        d["blocks_per_level"] = list(self.blocks_per_level)
        return json.dumps(d, sort_keys=True, separators=(",", ":"))

    @staticmethod
    def from_json(text: str) -> "NetworkConfig":
        try:
            d = json.loads(text)
            d["blocks_per_level"] = tuple(d["blocks_per_level"])
            return NetworkConfig(**d)
        except (ValueError, TypeError, KeyError) as e:
            raise FormatError(f"bad NetworkConfig JSON: {e}") from e


def paper_config(bands: int = 31) -> NetworkConfig:
    """Full-size preset; parameter count lands near the 4.75M budget at 31 bands."""
    return NetworkConfig(bands=bands)


def desk_config(bands: int = 8) -> NetworkConfig:
    """Small preset for tests and toy training runs."""
    return NetworkConfig(
        bands=bands, base_width=16, levels=3, blocks_per_level=(1, 1, 1), refinement_blocks=1
    )


@dataclass
class BlockWeights:
    """One CAMixing block: pre-norm CAFM residual, then pre-norm FFN residual."""

    cafm: CafmWeights
    ffn: MsfnWeights | FfnWeights
    norm1: LayerNormWeights | None = None
    norm2: LayerNormWeights | None = None

    def named_params(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        if self.norm1 is not None:
            yield from self.norm1.named_params(prefix + "norm1.")
        yield from self.cafm.named_params(prefix + "cafm.")
        if self.norm2 is not None:
            yield from self.norm2.named_params(prefix + "norm2.")
        yield from self.ffn.named_params(prefix + "ffn.")


def _init_block(rng: np.random.Generator, cfg: NetworkConfig, c: int) -> BlockWeights:
    norm1 = init_layer_norm(c) if cfg.norm_enabled else None
    cafm = init_cafm(
        rng,
        c,
        groups=cfg.shuffle_groups,
        local_branch=cfg.local_branch,
        spectral_3d=cfg.conv3d_enabled,
    )
    norm2 = init_layer_norm(c) if cfg.norm_enabled else None
    if cfg.msfn_enabled:
        ffn = init_msfn(rng, c, expansion=cfg.gamma, spectral_3d=cfg.conv3d_enabled)
    else:
        ffn = init_ffn(rng, c, expansion=cfg.gamma)
    return BlockWeights(cafm=cafm, ffn=ffn, norm1=norm1, norm2=norm2)


def _block_forward(x: Tensor, blk: BlockWeights) -> Tensor:
    h = layer_norm(x, blk.norm1) if blk.norm1 is not None else x
    x = add(x, cafm_forward(h, blk.cafm))
    h = layer_norm(x, blk.norm2) if blk.norm2 is not None else x
    if isinstance(blk.ffn, MsfnWeights):
        return add(x, msfn_forward(h, blk.ffn))
    return add(x, ffn_forward(h, blk.ffn))


class HcaNet:
    """Weights plus forward logic; construction is deterministic in (config, seed)."""

    def __init__(self, config: NetworkConfig, seed: int = 0):
        self.config = config
        rng = np.random.Generator(np.random.Philox(seed))
        cfg = config
        c0, L = cfg.base_width, cfg.levels
        kd = (3, 3, 3) if cfg.conv3d_enabled else (1, 3, 3)
        self.stem_3d: Conv3dWeights = init_conv3d(rng, 1, c0, kd)
        self.stem_collapse: Conv2dWeights = init_conv2d(rng, c0 * cfg.bands, c0, 1)
        self.enc_blocks: list[list[BlockWeights]] = []
        self.downs: list[Conv2dWeights] = []
        for lvl in range(L - 1):
            c = cfg.width(lvl)
            self.enc_blocks.append([_init_block(rng, cfg, c) for _ in range(cfg.blocks_per_level[lvl])])
            self.downs.append(init_downsample(rng, c))
        cb = cfg.width(L - 1)
        self.bottleneck: list[BlockWeights] = [
            _init_block(rng, cfg, cb) for _ in range(cfg.blocks_per_level[L - 1])
        ]
        self.ups: list[ConvT2dWeights] = []
        self.skip_fuse: list[Conv2dWeights] = []
        self.dec_blocks: list[list[BlockWeights]] = []
        for lvl in range(L - 2, -1, -1):
            c = cfg.width(lvl)
            self.ups.append(init_upsample(rng, 2 * c))
            self.skip_fuse.append(init_conv2d(rng, 2 * c, c, 1))
            self.dec_blocks.append([_init_block(rng, cfg, c) for _ in range(cfg.blocks_per_level[lvl])])
        self.refine: list[BlockWeights] = [
            _init_block(rng, cfg, c0) for _ in range(cfg.refinement_blocks)
        ]
        self.tail: Conv2dWeights = init_conv2d(rng, c0, cfg.bands, 3)

    # -- parameters ---------------------------------------------------------

    def named_params(self) -> Iterator[tuple[str, Tensor]]:
        yield from self.stem_3d.named_params("stem_3d.")
        yield from self.stem_collapse.named_params("stem_collapse.")
        for lvl, blocks in enumerate(self.enc_blocks):
            for i, blk in enumerate(blocks):
                yield from blk.named_params(f"enc{lvl}.b{i}.")
            yield from self.downs[lvl].named_params(f"down{lvl}.")
        for i, blk in enumerate(self.bottleneck):
            yield from blk.named_params(f"mid.b{i}.")
        for d, blocks in enumerate(self.dec_blocks):
            yield from self.ups[d].named_params(f"up{d}.")
            yield from self.skip_fuse[d].named_params(f"fuse{d}.")
            for i, blk in enumerate(blocks):
                yield from blk.named_params(f"dec{d}.b{i}.")
        for i, blk in enumerate(self.refine):
            yield from blk.named_params(f"refine.b{i}.")
        yield from self.tail.named_params("tail.")

    def param_count(self) -> int:
        return sum(t.size for _, t in self.named_params())

    # -- forward ------------------------------------------------------------

    def forward(self, x: Tensor) -> Tensor:
        """Noisy batch (N, B, H, W) to residual map of the same shape."""
        cfg = self.config
        if x.ndim != 4 or x.shape[1] != cfg.bands:
            raise ShapeError(f"expected (N, {cfg.bands}, H, W), got {x.shape}")
        n, b, h, wd = x.shape
        div = 1 << (cfg.levels - 1)
        if h % div or wd % div:
            raise ShapeError(f"H, W must be divisible by {div} for {cfg.levels} levels, got {h}x{wd}")
        z = conv3d(reshape(x, (n, 1, b, h, wd)), self.stem_3d)
        z = conv2d(reshape(z, (n, cfg.base_width * b, h, wd)), self.stem_collapse)
        skips = []
        for lvl, blocks in enumerate(self.enc_blocks):
            for blk in blocks:
                z = _block_forward(z, blk)
            skips.append(z)
            z = downsample(z, self.downs[lvl])
        for blk in self.bottleneck:
            z = _block_forward(z, blk)
        for d, blocks in enumerate(self.dec_blocks):
            z = upsample(z, self.ups[d])
            z = conv2d(concat([z, skips[len(skips) - 1 - d]], axis=1), self.skip_fuse[d])
            for blk in blocks:
                z = _block_forward(z, blk)
        for blk in self.refine:
            z = _block_forward(z, blk)
        return conv2d(z, self.tail)

    def denoise_batch(self, x: Tensor) -> Tensor:
        """Reconstruction = input + residual; no clipping."""
        return add(x, self.forward(x))

    def denoise(self, cube: np.ndarray) -> np.ndarray:
        """Denoise one (H, W, B) cube without recording gradients."""
        if cube.ndim != 3:
            raise ShapeError(f"expected a (H, W, B) cube, got shape {cube.shape}")
        x = np.ascontiguousarray(np.transpose(cube, (2, 0, 1))[None])
        with no_grad():
            y = self.denoise_batch(Tensor(x)).data
        return np.ascontiguousarray(np.transpose(y[0], (1, 2, 0)))

    def residual(self, cube: np.ndarray) -> np.ndarray:
        if cube.ndim != 3:
            raise ShapeError(f"expected a (H, W, B) cube, got shape {cube.shape}")
        x = np.ascontiguousarray(np.transpose(cube, (2, 0, 1))[None])
        with no_grad():
            y = self.forward(Tensor(x)).data
        return np.ascontiguousarray(np.transpose(y[0], (1, 2, 0)))

    # -- checkpoints ----------------------------------------------------------

    def save(self, path) -> None:
        with open(path, "wb") as f:
            self._write(f)

    def _write(self, f: BinaryIO) -> None:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_VERSION))
        cfg = self.config.to_json().encode("utf-8")
        f.write(struct.pack("<I", len(cfg)))
        f.write(cfg)
        params = list(self.named_params())
        f.write(struct.pack("<I", len(params)))
        for name, t in params:
            nb = name.encode("utf-8")
            f.write(struct.pack("<I", len(nb)))
            f.write(nb)
            f.write(struct.pack("<I", t.ndim))
            f.write(struct.pack(f"<{t.ndim}I", *t.shape))
            f.write(np.ascontiguousarray(t.data, dtype="<f4").tobytes())

    @staticmethod
    def load(path) -> "HcaNet":
        with open(path, "rb") as f:
            data = f.read()
        return HcaNet._read(io.BytesIO(data))

    @staticmethod
    def _read(f: BinaryIO) -> "HcaNet":
        def take(n: int) -> bytes:
            b = f.read(n)
            if len(b) != n:
                raise FormatError("truncated checkpoint")
            return b

        if take(4) != CHECKPOINT_MAGIC:
            raise FormatError("not a checkpoint file (bad magic)")
        (version,) = struct.unpack("<I", take(4))
        if version != CHECKPOINT_VERSION:
            raise FormatError(f"unsupported checkpoint version {version}")
        (clen,) = struct.unpack("<I", take(4))
        config = NetworkConfig.from_json(take(clen).decode("utf-8"))
        net = HcaNet(config, seed=0)
        expected = dict(net.named_params())
        (count,) = struct.unpack("<I", take(4))
        if count != len(expected):
            raise FormatError(f"checkpoint has {count} tensors, model needs {len(expected)}")
        for _ in range(count):
            (nlen,) = struct.unpack("<I", take(4))
            name = take(nlen).decode("utf-8")
            if name not in expected:
                raise FormatError(f"unknown tensor {name!r} in checkpoint")
            (ndim,) = struct.unpack("<I", take(4))
            shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
            t = expected[name]
            if shape != t.shape:
                raise FormatError(f"tensor {name!r} has shape {shape}, model needs {t.shape}")
            raw = take(4 * int(np.prod(shape, dtype=np.int64)) if ndim else 4)
            t.data = np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float32)
        return net


def apply_ablation(config: NetworkConfig, seed: int = 0) -> HcaNet:
    """Construct a network honoring the config's ablation switches."""
    return HcaNet(config, seed=seed)
