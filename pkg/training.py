"""Toy trainer: clip losses, AdamW with polynomial decay, checkpoints.

Checkpoint layout (all integers unsigned little-endian):

    b"DHZC"             magic
    u32                 format version
    u32 + bytes         network config as key-value text (UTF-8)
    u64                 optimizer step
    u32                 tensor count
    per tensor:
      u32 + bytes       key (UTF-8)
      u32               ndim, then ndim x u32 dims
      f8[size] x 3      value, first moment, second moment (little-endian doubles)
"""

import csv
import logging
import math
import os
import struct
from dataclasses import dataclass, field

import numpy as np

import tensor as T
from constants import CHECKPOINT_MAGIC, CHECKPOINT_VERSION
from errors import DataError, DimensionError, TrainingError
from image_io import atomic_path, dump_key_values, parse_key_values
from losses import flow_loss, output_loss, physical_loss, pyramid, total_loss
from map_net import NetworkConfig, build_parameters, forward_clip, to_chw

logger = logging.getLogger(__name__)

LOG_FIELDS = ("step", "lr", "out", "phy", "flow", "total")


@dataclass
class TrainingClip:
    """Aligned (H, W, 3) hazy and clear frames plus (H, W) transmissions."""

    hazy: list
    gt: list
    transmissions: list = field(default_factory=list)

    def __post_init__(self):
        if len(self.hazy) != len(self.gt) or not self.hazy:
            raise DimensionError(f"{len(self.hazy)} hazy frames but {len(self.gt)} ground-truth frames")
        if self.transmissions and len(self.transmissions) != len(self.hazy):
            raise DimensionError(f"{len(self.transmissions)} transmission maps for {len(self.hazy)} frames")
        for i, (a, b) in enumerate(zip(self.hazy, self.gt)):
            if np.shape(a) != np.shape(b):
                raise DimensionError(f"frame {i}: hazy {np.shape(a)} and ground truth {np.shape(b)} differ")

    def __len__(self):
        return len(self.hazy)

    def window(self, start, length):
        end = start + length
        return TrainingClip(self.hazy[start:end], self.gt[start:end], self.transmissions[start:end])


@dataclass
class OptimizerState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def initial(cls, params):
        return cls(0, {k: np.zeros_like(t.data) for k, t in params},
                   {k: np.zeros_like(t.data) for k, t in params})


def learning_rate(step, cfg):
    """lr0 * (1 - k/K)^power, zero once the planned K steps are spent."""
    if step >= cfg.total_steps:
        return 0.0
    return cfg.learning_rate * (1.0 - step / cfg.total_steps) ** cfg.poly_power


def adamw_update(params, state, lr):
    """One bias-corrected Adam step with decoupled weight decay; returns the new state."""
    cfg = params.config
    t = state.step + 1
    m, v = {}, {}
    for key, p in params:
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        m[key] = cfg.beta1 * state.m[key] + (1.0 - cfg.beta1) * g
        v[key] = cfg.beta2 * state.v[key] + (1.0 - cfg.beta2) * g * g
        m_hat = m[key] / (1.0 - cfg.beta1 ** t)
        v_hat = v[key] / (1.0 - cfg.beta2 ** t)
        p.data = p.data - lr * (m_hat / (np.sqrt(v_hat) + cfg.adam_eps) + cfg.weight_decay * p.data)
    return OptimizerState(t, m, v)


def _average(terms):
    total = terms[0]
    for term in terms[1:]:
        total = total + term
    return total / len(terms)


def clip_loss(batch, params):
    """LossReport averaged over the frames of one clip; `graph` holds the total."""
    cfg = params.config
    scales = cfg.scales
    hazy = [to_chw(f) for f in batch.hazy]
    gt = [np.transpose(np.asarray(f, dtype=np.float64), (2, 0, 1)) for f in batch.gt]
    outputs, intermediates, _ = forward_clip(hazy, params)
    hazy_pyr = [pyramid(h.data, scales) for h in hazy]
    gt_pyr = [pyramid(g, scales) for g in gt]

    out_terms, phy_terms, flow_terms = [], [], []
    for i, (out, per_scale) in enumerate(zip(outputs, intermediates)):
        out_terms.append(output_loss(out, gt[i]))
        preds = [(so.i_hat, so.j_hat) for so in per_scale]
        targets = [(hazy_pyr[i][s], gt_pyr[i][s]) for s in range(scales)]
        phy_terms.append(physical_loss(preds, targets, scales))
        if cfg.use_msr:
            earlier = range(i - 1, max(i - 1 - cfg.ranges, -1), -1)
            history = [[gt_pyr[k][s] for k in earlier] for s in range(scales)]
            flows = [so.flows for so in per_scale]
            flow_terms.append(flow_loss(history, flows, [gt_pyr[i][s] for s in range(scales)],
                                        cfg.ranges, cfg.range_mode))
        if batch.transmissions and logger.isEnabledFor(logging.DEBUG):
            err = np.abs(per_scale[-1].t_hat.data[0] - batch.transmissions[i]).mean()
            logger.debug("frame %d: transmission mean abs error %.6f", i, err)

    flow = _average(flow_terms) if flow_terms else T.Tensor(0.0)
    return total_loss(_average(out_terms), _average(phy_terms), flow, cfg.lambda_phy, cfg.lambda_flow)


def _check_finite(report, step):
    for name in ("out", "phy", "flow", "total"):
        value = getattr(report, name)
        if not math.isfinite(value):
            raise TrainingError(f"non-finite {name} loss ({value}) at step {step}", component=name)


def train_step(batch, params, opt_state, cfg=None):
    """Forward, backward and one AdamW update; returns (report, params, new optimizer state)."""
    if cfg is not None and cfg != params.config:
        raise TrainingError("train_step called with a config that does not match the parameters")
    report = clip_loss(batch, params)
    _check_finite(report, opt_state.step)
    params.zero_grad()
    T.backward(report.graph)
    report.graph = None
    lr = learning_rate(opt_state.step, params.config)
    opt_state = adamw_update(params, opt_state, lr)
    params.zero_grad()
    return report, params, opt_state


def _open_log(path, fresh):
    exists = os.path.exists(path) and not fresh
    handle = open(path, "a" if exists else "w", newline="", encoding="utf-8")
    writer = csv.writer(handle)
    if not exists:
        writer.writerow(LOG_FIELDS)
    return handle, writer


def train(clip, params, opt_state, steps, log_path=None, fresh_log=True):
    """Run `steps` updates, cycling clip windows by global step.

    Returns (reports, optimizer state); parameters are updated in place.

    The log gets one row per step and is flushed as it goes, so a failed run
    leaves the rows before the failure behind.
    """
    cfg = params.config
    length = min(cfg.clip_length, len(clip))
    starts = len(clip) - length + 1
    handle = writer = None
    if log_path is not None:
        handle, writer = _open_log(log_path, fresh_log)
    reports = []
    try:
        for _ in range(steps):
            k = opt_state.step
            lr = learning_rate(k, cfg)
            report, params, opt_state = train_step(clip.window(k % starts, length), params, opt_state)
            reports.append(report)
            if writer is not None:
                writer.writerow([k, repr(lr), repr(report.out), repr(report.phy),
                                 repr(report.flow), repr(report.total)])
                handle.flush()
            logger.debug("step %d lr=%.3e total=%.6f", k, lr, report.total)
            if k % 50 == 0:
                logger.info("step %d: total %.6f (out %.6f, phy %.6f, flow %.6f)",
                            k, report.total, report.out, report.phy, report.flow)
    finally:
        if handle is not None:
            handle.close()
    return reports, opt_state


# -- checkpoints -----------------------------------------------------------------
def _pack_bytes(data):
    return struct.pack("<I", len(data)) + data


def save_checkpoint(path, params, opt_state):
    text = dump_key_values(params.config.to_mapping()).encode("utf-8")
    parts = [CHECKPOINT_MAGIC, struct.pack("<I", CHECKPOINT_VERSION), _pack_bytes(text),
             struct.pack("<QI", opt_state.step, len(params))]
    for key, t in params:
        parts.append(_pack_bytes(key.encode("utf-8")))
        parts.append(struct.pack("<I", t.ndim) + struct.pack(f"<{t.ndim}I", *t.shape))
        for array in (t.data, opt_state.m[key], opt_state.v[key]):
            parts.append(np.ascontiguousarray(array, dtype="<f8").tobytes())
    with atomic_path(path) as tmp:
        with open(tmp, "wb") as f:
            f.write(b"".join(parts))
    logger.info("wrote checkpoint %s (step %d, %d tensors)", path, opt_state.step, len(params))


class _Reader:
    def __init__(self, data, path):
        self.data, self.pos, self.path = data, 0, path

    def take(self, n):
        if self.pos + n > len(self.data):
            raise DataError(f"{self.path}: checkpoint is truncated")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def blob(self):
        (n,) = self.unpack("<I")
        return self.take(n)

    def doubles(self, shape):
        count = int(np.prod(shape, dtype=np.int64))
        return np.frombuffer(self.take(8 * count), dtype="<f8").astype(np.float64).reshape(shape)


def load_checkpoint(path):
    """Return (config, parameters, optimizer state) stored at `path`."""
    try:
        with open(path, "rb") as f:
            reader = _Reader(f.read(), path)
    except OSError as e:
        raise DataError(f"could not read checkpoint {path}: {e}") from None
    if reader.take(4) != CHECKPOINT_MAGIC:
        raise DataError(f"{path} is not a checkpoint file")
    (version,) = reader.unpack("<I")
    if version != CHECKPOINT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    cfg = NetworkConfig.from_mapping(parse_key_values(reader.blob().decode("utf-8"), source=path))
    step, count = reader.unpack("<QI")
    params = build_parameters(cfg)
    if count != len(params):
        raise DataError(f"{path}: {count} tensors stored, configuration expects {len(params)}")
    m, v = {}, {}
    for _ in range(count):
        key = reader.blob().decode("utf-8")
        (ndim,) = reader.unpack("<I")
        shape = reader.unpack(f"<{ndim}I")
        if key not in params.tensors or params.tensors[key].shape != shape:
            raise DataError(f"{path}: unexpected tensor {key} with shape {shape}")
        params.tensors[key].data = reader.doubles(shape)
        m[key] = reader.doubles(shape)
        v[key] = reader.doubles(shape)
    return cfg, params, OptimizerState(step, m, v)
