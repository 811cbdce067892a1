"""A compact 1-D residual conv net for short multichannel windows.

The layout follows the classic 18-layer residual recipe — four stages of
two basic blocks (conv-BN-ReLU-conv-BN plus a shortcut) with channel
doubling — shrunk to 1-D and to 7-sample inputs: the stem is a stride-1
K=3 convolution with no max-pool (a downsampling stem would consume the
whole window), stages 2-4 open with stride 2 so the time axis runs
7 -> 4 -> 2 -> 1, then global average pooling and a linear head.

All parameters live in one flat float32 buffer; the per-layer tensors
are views into it, so the optimizer updates everything with a handful of
vectorized operations.  A float64 build of the same network is used for
finite-difference gradient verification.
"""

import dataclasses
import json
import struct
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import DataError, DivergenceError
from .seeding import round_half_up

_MODEL_MAGIC = b"TJM1"
_FORMAT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    """Architecture knobs; defaults give the 18-layer plan on 3x7 windows."""

    n_classes: int
    in_channels: int = 3
    input_length: int = 7
    width_mult: float = 0.25
    stage_blocks: tuple = (2, 2, 2, 2)
    stage_channels: tuple = (64, 128, 256, 512)
    stem_kernel: int = 3
    block_kernel: int = 3
    bn_eps: float = 1e-5
    bn_momentum: float = 0.1

    def __post_init__(self):
        if self.n_classes < 2:
            raise DataError(f"n_classes must be >= 2, got {self.n_classes}")
        if not self.width_mult > 0:
            raise DataError(f"width_mult must be positive, got {self.width_mult}")
        if self.in_channels < 1 or self.input_length < 1:
            raise DataError("in_channels and input_length must be >= 1")
        if len(self.stage_blocks) != len(self.stage_channels):
            raise DataError("stage_blocks and stage_channels must align")
        if any(b < 1 for b in self.stage_blocks):
            raise DataError("every stage needs at least one block")
        if self.stem_kernel % 2 == 0 or self.block_kernel % 2 == 0:
            raise DataError("kernels must be odd so padding preserves alignment")
        if any(c < 1 for c in self.channels()):
            raise DataError(f"width_mult {self.width_mult} collapses a stage to 0 channels")
        self.stage_lengths()  # raises if the stride plan is infeasible

    def channels(self) -> list:
        return [round_half_up(c * self.width_mult) for c in self.stage_channels]

    def stage_lengths(self) -> list:
        """Time lengths after the stem and each stage; canonical [7, 4, 2, 1]."""
        length = self.input_length
        pad = self.stem_kernel // 2
        if length + 2 * pad < self.stem_kernel:
            raise DataError(f"input_length {length} too short for the stem kernel")
        lengths = []
        pad = self.block_kernel // 2
        for stage in range(len(self.stage_blocks)):
            stride = 1 if stage == 0 else 2
            if length + 2 * pad < self.block_kernel:
                raise DataError(f"stride plan exhausts the signal at stage {stage + 1}")
            length = (length + 2 * pad - self.block_kernel) // stride + 1
            if length < 1:
                raise DataError(f"stride plan exhausts the signal at stage {stage + 1}")
            lengths.append(length)
        return lengths


def _param_table(config: ModelConfig) -> list:
    """(name, shape, kind) for every learnable tensor, in build order."""
    ch = config.channels()
    table = [
        ("stem.conv.w", (ch[0], config.in_channels, config.stem_kernel), "conv"),
        ("stem.bn.gamma", (ch[0],), "gamma"),
        ("stem.bn.beta", (ch[0],), "beta"),
    ]
    in_ch = ch[0]
    for stage, (blocks, out_ch) in enumerate(zip(config.stage_blocks, ch), start=1):
        for block in range(1, blocks + 1):
            base = f"stage{stage}.block{block}"
            stride = 2 if (stage > 1 and block == 1) else 1
            table.extend([
                (f"{base}.conv1.w", (out_ch, in_ch, config.block_kernel), "conv"),
                (f"{base}.bn1.gamma", (out_ch,), "gamma"),
                (f"{base}.bn1.beta", (out_ch,), "beta"),
                (f"{base}.conv2.w", (out_ch, out_ch, config.block_kernel), "conv"),
                (f"{base}.bn2.gamma", (out_ch,), "gamma"),
                (f"{base}.bn2.beta", (out_ch,), "beta"),
            ])
            if stride != 1 or in_ch != out_ch:
                table.extend([
                    (f"{base}.proj.w", (out_ch, in_ch, 1), "conv"),
                    (f"{base}.proj_bn.gamma", (out_ch,), "gamma"),
                    (f"{base}.proj_bn.beta", (out_ch,), "beta"),
                ])
            in_ch = out_ch
    table.append(("head.w", (config.n_classes, ch[-1]), "linear_w"))
    table.append(("head.b", (config.n_classes,), "linear_b"))
    return table


class ParamStore:
    """All parameters of one model in a single flat buffer, plus BN running stats.

    ``params[name]`` are Tensors whose values/grad are views into
    ``flat_values``/``flat_grads``; running statistics are plain arrays
    keyed ``<bn prefix>.mean`` / ``<bn prefix>.var``.
    """

    def __init__(self, config: ModelConfig, seed: int, dtype=np.float32):
        self.config = config
        self.seed = int(seed)
        self.table = _param_table(config)
        total = sum(int(np.prod(shape)) for _, shape, _ in self.table)
        self.flat_values = np.zeros(total, dtype=dtype)
        self.flat_grads = np.zeros(total, dtype=dtype)
        self.params = {}
        offset = 0
        for name, shape, _ in self.table:
            size = int(np.prod(shape))
            tensor = ad.Tensor(self.flat_values[offset : offset + size].reshape(shape),
                               requires_grad=True)
            tensor.grad = self.flat_grads[offset : offset + size].reshape(shape)
            self.params[name] = tensor
            offset += size
        self.running = {}
        for name, shape, kind in self.table:
            if kind == "gamma":
                prefix = name[: -len(".gamma")]
                self.running[f"{prefix}.mean"] = np.zeros(shape, dtype=dtype)
                self.running[f"{prefix}.var"] = np.ones(shape, dtype=dtype)
        self._initialize()

    def _initialize(self):
        # Kaiming-uniform for conv/linear weights, identity-affine for BN,
        # zero head bias; one fixed draw order makes builds reproducible.
        rng = np.random.Generator(np.random.PCG64(self.seed))
        for name, shape, kind in self.table:
            target = self.params[name].values
            if kind == "conv":
                fan_in = shape[1] * shape[2]
                bound = np.sqrt(6.0 / fan_in)
                target[...] = rng.uniform(-bound, bound, size=shape)
            elif kind == "linear_w":
                bound = np.sqrt(6.0 / shape[1])
                target[...] = rng.uniform(-bound, bound, size=shape)
            elif kind == "gamma":
                target[...] = 1.0
            else:  # beta, linear_b
                target[...] = 0.0

    @property
    def n_params(self) -> int:
        return self.flat_values.size

    def zero_grads(self):
        self.flat_grads[...] = 0.0

    def snapshot(self):
        return self.flat_values.copy(), {k: v.copy() for k, v in self.running.items()}

    def restore(self, snap):
        values, running = snap
        self.flat_values[...] = values
        for key, arr in self.running.items():
            arr[...] = running[key]


def build(config: ModelConfig, seed: int, dtype=np.float32) -> ParamStore:
    """Deterministically initialized ParamStore for the given architecture."""
    return ParamStore(config, seed, dtype=dtype)


def forward(store: ParamStore, batch, train: bool = False, tape=None, probe=None) -> ad.Tensor:
    """Run the network; returns logits (B, n_classes).

    ``probe``, when a list, collects every pre-ReLU activation buffer —
    a diagnostic hook used by gradient checks to verify that finite
    difference probes stay clear of the ReLU kinks.
    """
    config = store.config
    batch = np.asarray(batch)
    if batch.ndim != 3 or batch.shape[1:] != (config.in_channels, config.input_length):
        raise DataError(
            f"batch must be (B, {config.in_channels}, {config.input_length}), got {batch.shape}"
        )
    p = store.params
    run = store.running
    eps, mom = config.bn_eps, config.bn_momentum

    def bn(h, prefix):
        return ad.batchnorm1d(tape, h, p[f"{prefix}.gamma"], p[f"{prefix}.beta"],
                              run[f"{prefix}.mean"], run[f"{prefix}.var"],
                              train=train, momentum=mom, eps=eps, channels_last=True)

    def rectify(h):
        if probe is not None:
            probe.append(h.values)
        return ad.relu(tape, h)

    # the whole net runs channels-last (B, L, C): conv becomes one
    # contiguous GEMM per layer and BN broadcasts along the fast axis
    pad = config.block_kernel // 2
    blc = np.ascontiguousarray(batch.transpose(0, 2, 1))
    h = ad.conv1d(tape, ad.Tensor(blc), p["stem.conv.w"], stride=1,
                  pad=config.stem_kernel // 2, channels_last=True)
    h = rectify(bn(h, "stem.bn"))
    for stage in range(1, len(config.stage_blocks) + 1):
        for block in range(1, config.stage_blocks[stage - 1] + 1):
            base = f"stage{stage}.block{block}"
            stride = 2 if (stage > 1 and block == 1) else 1
            out = ad.conv1d(tape, h, p[f"{base}.conv1.w"], stride=stride, pad=pad,
                            channels_last=True)
            out = rectify(bn(out, f"{base}.bn1"))
            out = ad.conv1d(tape, out, p[f"{base}.conv2.w"], stride=1, pad=pad,
                            channels_last=True)
            out = bn(out, f"{base}.bn2")
            if f"{base}.proj.w" in p:
                shortcut = ad.conv1d(tape, h, p[f"{base}.proj.w"], stride=stride, pad=0,
                                     channels_last=True)
                shortcut = bn(shortcut, f"{base}.proj_bn")
            else:
                shortcut = h
            h = rectify(ad.add(tape, out, shortcut))
    pooled = ad.global_avg_pool(tape, h, channels_last=True)
    logits = ad.linear(tape, pooled, p["head.w"], p["head.b"])
    if not np.all(np.isfinite(logits.values)):
        raise DivergenceError("non-finite logits in forward pass")
    return logits


def save_model(store: ParamStore, path) -> None:
    """JSON header (config, seed, version, shape table) + packed f32 payload."""
    if store.flat_values.dtype != np.float32:
        raise ValueError("only float32 stores are serialized")
    tensors = [[name, list(shape)] for name, shape, _ in store.table]
    tensors += [[name, list(arr.shape)] for name, arr in store.running.items()]
    header = {
        "version": _FORMAT_VERSION,
        "config": dataclasses.asdict(store.config),
        "seed": store.seed,
        "tensors": tensors,
    }
    blob = json.dumps(header, sort_keys=True).encode("ascii")
    with open(path, "wb") as fh:
        fh.write(_MODEL_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for name, _, _ in store.table:
            fh.write(store.params[name].values.astype("<f4", copy=False).tobytes())
        for arr in store.running.values():
            fh.write(arr.astype("<f4", copy=False).tobytes())


def load_model(path) -> ParamStore:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _MODEL_MAGIC:
        raise DataError(f"{path}: not a model file (bad magic)")
    if len(blob) < 8:
        raise DataError(f"{path}: truncated model file")
    (header_len,) = struct.unpack_from("<I", blob, 4)
    try:
        header = json.loads(blob[8 : 8 + header_len].decode("ascii"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: corrupt model header: {exc}") from None
    if header.get("version") != _FORMAT_VERSION:
        raise DataError(
            f"{path}: unsupported model format version {header.get('version')!r}"
        )
    cfg = dict(header["config"])
    cfg["stage_blocks"] = tuple(cfg["stage_blocks"])
    cfg["stage_channels"] = tuple(cfg["stage_channels"])
    config = ModelConfig(**cfg)
    store = build(config, header["seed"])
    expected = [[name, list(shape)] for name, shape, _ in store.table]
    expected += [[name, list(arr.shape)] for name, arr in store.running.items()]
    if header["tensors"] != expected:
        raise DataError(f"{path}: tensor table does not match the embedded config")
    offset = 8 + header_len
    for name, shape in header["tensors"]:
        size = int(np.prod(shape))
        end = offset + 4 * size
        if end > len(blob):
            raise DataError(f"{path}: truncated model payload at {name}")
        values = np.frombuffer(blob, dtype="<f4", count=size, offset=offset).reshape(shape)
        if name in store.params:
            store.params[name].values[...] = values
        else:
            store.running[name][...] = values
        offset = end
    if offset != len(blob):
        raise DataError(f"{path}: trailing bytes after model payload")
    return store
