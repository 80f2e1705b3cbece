"""The recurrent dehazing network.

A frame is encoded into S feature levels. Decoding runs coarse to fine: at
each scale a prior branch and a scene branch are initialised from the
encoder level and the upsampled coarser result, the prior reads the token
memory and guides the scene feature, and the scene feature is aligned to
earlier frames over several temporal ranges. Per-scale heads predict the
transmission, atmospheric light and haze-free image, whose recombination is
supervised against the hazy input. The finest scene feature drives a
residual head added to the input frame.

Decoder scale s uses encoder level S-1-s, so s = 0 is the coarsest.
"""

import dataclasses
import logging
from dataclasses import dataclass

import numpy as np

import tensor as T
from constants import (
    ADAM_BETA1, ADAM_BETA2, ADAM_EPS, A_RANGE, CHANNELS, CLIP_LENGTH, D_BINS, DEFAULT_SEED,
    FFN_EXPANSION, HEADS, LAMBDA_FLOW, LAMBDA_PHY, LEAKY_SLOPE, LEARNING_RATE, LOGIT_EPS,
    MEMORY_TOKENS, POLY_POWER, RANGES, SCALES, TRAIN_STEPS, WEIGHT_DECAY, WINDOW,
    RangeMode,
)
from errors import ContractError, DimensionError, ParameterError
from layers import Conv, Initializer, conv_stack, make_conv_stack
from losses import pyramid
from multirange_recovery import (
    StdaParams, build_range_sets, gmra_with_weights, identity_flow, space_time_sample,
    stda, upsample_flow,
)
from prior_guidance import TokenMemory, compress_prior, guide_scene, memory_attention

logger = logging.getLogger(__name__)

_CONFIG_KEYS = {"rng_seed": "seed"}


def _logit(x):
    x = np.clip(x, LOGIT_EPS, 1.0 - LOGIT_EPS)
    return np.log(x / (1.0 - x))


# atmospheric-light head starts at the middle of the synthesis range
AIRLIGHT_LOGIT = float(_logit(np.mean(A_RANGE)))


@dataclass
class NetworkConfig:
    scales: int = SCALES
    channels: tuple = None
    ranges: int = RANGES
    d_bins: int = D_BINS
    memory: int = MEMORY_TOKENS
    window: int = WINDOW
    heads: int = HEADS
    ffn_expansion: int = FFN_EXPANSION
    lambda_phy: float = LAMBDA_PHY
    lambda_flow: float = LAMBDA_FLOW
    learning_rate: float = LEARNING_RATE
    weight_decay: float = WEIGHT_DECAY
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    adam_eps: float = ADAM_EPS
    poly_power: float = POLY_POWER
    total_steps: int = TRAIN_STEPS
    clip_length: int = CLIP_LENGTH
    rng_seed: int = DEFAULT_SEED
    use_mpg: bool = True
    use_memory: bool = True
    use_msr: bool = True
    guide_stda: bool = True
    guide_gmra: bool = True
    range_mode: RangeMode = RangeMode.MULTI

    def __post_init__(self):
        if self.channels is None:
            self.channels = CHANNELS if self.scales == len(CHANNELS) else tuple(
                CHANNELS[0] * 2 ** level for level in range(self.scales))
        self.channels = tuple(int(c) for c in self.channels)
        self.range_mode = RangeMode(self.range_mode)
        if self.scales < 2:
            raise ParameterError(f"need at least 2 scales, got {self.scales}")
        if len(self.channels) != self.scales:
            raise ParameterError(f"{len(self.channels)} channel widths for {self.scales} scales")
        for name in ("ranges", "d_bins", "memory", "window", "heads", "ffn_expansion", "clip_length"):
            if getattr(self, name) < 1:
                raise ParameterError(f"{name} must be >= 1, got {getattr(self, name)}")
        if any(c < 1 or c % self.heads for c in self.channels):
            raise ParameterError(f"channel widths {self.channels} must be positive multiples of {self.heads} heads")
        if self.lambda_phy < 0 or self.lambda_flow < 0:
            raise ParameterError("loss weights must be >= 0")
        if self.learning_rate < 0 or self.weight_decay < 0 or self.total_steps < 1:
            raise ParameterError("learning rate and weight decay must be >= 0 and total_steps >= 1")

    @property
    def divisor(self):
        return 2 ** (self.scales - 1)

    def to_mapping(self):
        return {_CONFIG_KEYS.get(f.name, f.name): getattr(self, f.name) for f in dataclasses.fields(self)}

    @classmethod
    def from_mapping(cls, values):
        """Build from (string or typed) values; keys not naming a field are ignored."""
        kwargs = {}
        for f in dataclasses.fields(cls):
            key = _CONFIG_KEYS.get(f.name, f.name)
            if key in values:
                kwargs[f.name] = _parse(f.name, values[key])
        return cls(**kwargs)


def _parse(name, value):
    if not isinstance(value, str):
        return value
    default = {f.name: f.default for f in dataclasses.fields(NetworkConfig)}[name]
    try:
        if name == "channels":
            return tuple(int(v) for v in value.split(","))
        if isinstance(default, bool):
            if value.lower() not in ("true", "false"):
                raise ValueError(value)
            return value.lower() == "true"
        if isinstance(default, RangeMode):
            return RangeMode(value)
        if isinstance(default, int):
            return int(value)
        return float(value)
    except ValueError:
        raise ParameterError(f"bad value for {name}: {value!r}") from None


@dataclass
class ScaleModules:
    up_prior: Conv
    up_scene: Conv
    prior_init: list
    scene_init: list
    dist_head: Conv
    fuse: list
    stda: StdaParams
    t_head: Conv
    a_head: Conv
    j_head: Conv


class Parameters:
    """Every learnable tensor of one network, in a stable key order."""

    def __init__(self, config):
        self.config = config
        self.tensors = {}
        init = Initializer(config.rng_seed)
        cfg, ch = config, config.channels

        self.encoder = []
        for level, c in enumerate(ch):
            c_in = 3 if level == 0 else ch[level - 1]
            self.encoder.append([
                Conv.create(self.tensors, f"encoder.l{level}.0", init, c_in, c, stride=1 if level == 0 else 2),
                Conv.create(self.tensors, f"encoder.l{level}.1", init, c, c),
            ])

        self.scales = []
        for s in range(cfg.scales):
            level = cfg.scales - 1 - s
            c = ch[level]
            key = f"decoder.s{s}"
            c_in = c if s == 0 else 2 * c
            up_prior = up_scene = None
            if s > 0:
                up_prior = Conv.create(self.tensors, f"{key}.up_prior", init, ch[level + 1], 4 * c)
                up_scene = Conv.create(self.tensors, f"{key}.up_scene", init, ch[level + 1], 4 * c)
            prior_init = make_conv_stack(self.tensors, f"{key}.prior_init", init, (c_in, c, c))
            scene_init = make_conv_stack(self.tensors, f"{key}.scene_init", init, (c_in, c, c))
            dist_head = fuse = stda_params = None
            if cfg.use_mpg:
                if cfg.use_memory:
                    dist_head = Conv.create(self.tensors, f"{key}.dist_head", init, c, cfg.d_bins, k=1)
                fuse = make_conv_stack(self.tensors, f"{key}.fuse", init, (2 * c, c, c), zero_last=True)
            if cfg.use_msr:
                stda_params = StdaParams.create(self.tensors, f"{key}.stda", init, c,
                                                cfg.window, cfg.heads, cfg.ffn_expansion)
            t_head = Conv.create(self.tensors, f"{key}.t_head", init, c, 1)
            a_head = Conv.create(self.tensors, f"{key}.a_head", init, c, 1, k=1)
            a_head.bias.data = np.full(1, AIRLIGHT_LOGIT)
            self.scales.append(ScaleModules(
                up_prior=up_prior,
                up_scene=up_scene,
                prior_init=prior_init,
                scene_init=scene_init,
                dist_head=dist_head,
                fuse=fuse,
                stda=stda_params,
                t_head=t_head,
                a_head=a_head,
                j_head=Conv.create(self.tensors, f"{key}.j_head", init, c, 3, zero=True),
            ))

        self.residual = make_conv_stack(self.tensors, "residual", init, (ch[0], ch[0], 3), zero_last=True)

    def __iter__(self):
        return iter(self.tensors.items())

    def __len__(self):
        return len(self.tensors)

    def zero_grad(self):
        for t in self.tensors.values():
            t.zero_grad()


def build_parameters(cfg):
    params = Parameters(cfg)
    logger.debug("built %d parameter tensors (%d values)", len(params), parameter_count(params))
    return params


def parameter_count(params):
    return sum(t.size for t in params.tensors.values())


# -- frames --------------------------------------------------------------------
def to_chw(frame):
    """(H, W, 3) array -> constant (3, H, W) Tensor."""
    return T.Tensor(np.transpose(np.asarray(frame, dtype=np.float64), (2, 0, 1)))


def to_hwc(tensor):
    return np.ascontiguousarray(tensor.data.transpose(1, 2, 0))


@dataclass
class Features:
    frame: T.Tensor
    levels: list
    base_logits: list = None  # logits of the frame pyramid, coarsest first


@dataclass
class ScaleOutputs:
    t_hat: T.Tensor
    a_hat: T.Tensor
    j_hat: T.Tensor
    i_hat: T.Tensor
    flows: list
    range_weights: T.Tensor = None
    distribution: T.Tensor = None
    token: T.Tensor = None
    memory_weights: T.Tensor = None


@dataclass(frozen=True)
class FrameState:
    """Recurrent per-video state: per-scale histories (most recent first) and token memories."""

    extent: tuple
    scene_history: tuple
    prior_history: tuple
    memories: tuple

    @classmethod
    def initial(cls, cfg, height, width):
        empty = tuple(() for _ in range(cfg.scales))
        memories = tuple(TokenMemory(cfg.memory) for _ in range(cfg.scales))
        return cls((height, width), empty, empty, memories)


def encode(frame, params):
    """Per-level features of a (3, H, W) frame, finest level first."""
    cfg = params.config
    frame = frame if isinstance(frame, T.Tensor) else T.Tensor(frame)
    if frame.ndim != 3 or frame.shape[0] != 3:
        raise DimensionError(f"expected a (3, H, W) frame, got {frame.shape}")
    h, w = frame.shape[1:]
    if h % cfg.divisor or w % cfg.divisor:
        raise DimensionError(f"frame extent {(h, w)} must be divisible by {cfg.divisor} for {cfg.scales} scales")
    levels, x = [], frame
    for convs in params.encoder:
        for conv in convs:
            x = T.leaky_relu(conv(x), LEAKY_SLOPE)
        levels.append(x)
    return Features(frame, levels, [T.Tensor(_logit(p)) for p in pyramid(frame.data, cfg.scales)])


def _prior_branch(cfg, modules, p_init, j_init, memory):
    if not cfg.use_mpg:
        return p_init, j_init, memory, None, None, None
    distribution = token = weights = None
    p = p_init
    if cfg.use_memory:
        p, weights = memory_attention(p_init, memory)
        distribution, token = compress_prior(p_init, modules.dist_head, cfg.d_bins)
        memory = memory.push(token)
    return p, guide_scene(p, j_init, modules.fuse), memory, distribution, token, weights


def decode_step(features, state, params, cfg=None):
    """Decode one encoded frame; returns (dehazed (3, H, W), per-scale outputs, next state)."""
    cfg = cfg or params.config
    extent = features.frame.shape[1:]
    if state.extent != extent or len(state.memories) != cfg.scales:
        raise ContractError(f"state for extent {state.extent} with {len(state.memories)} scales "
                            f"used on a {extent} frame with {cfg.scales} scales")
    outputs, scene_hist, prior_hist, memories = [], [], [], []
    prev_p = prev_j = prev_flows = None
    for s, modules in enumerate(params.scales):
        e = features.levels[cfg.scales - 1 - s]
        c, h, w = e.shape
        if s == 0:
            p_in = j_in = e
        else:
            p_in = T.concat([e, T.pixel_shuffle(modules.up_prior(prev_p), 2)], axis=0)
            j_in = T.concat([e, T.pixel_shuffle(modules.up_scene(prev_j), 2)], axis=0)
        p_init = conv_stack(modules.prior_init, p_in)
        j_init = conv_stack(modules.scene_init, j_in)
        p, j, memory, distribution, token, mem_weights = _prior_branch(
            cfg, modules, p_init, j_init, state.memories[s])

        flows, range_weights, j_out = [], None, j
        if cfg.use_msr:
            query = j if cfg.guide_stda else j_init
            scene_sets = build_range_sets(state.scene_history[s], cfg.ranges, cfg.range_mode, target=query)
            feats = []
            for r, range_set in enumerate(scene_sets):
                init = identity_flow(h, w) if prev_flows is None else upsample_flow(prev_flows[r])
                j_r, flow = stda(query, range_set, init, modules.stda)
                feats.append(j_r)
                flows.append(flow)
            priors = None
            if cfg.guide_gmra:
                prior_sets = build_range_sets(state.prior_history[s], cfg.ranges, cfg.range_mode, target=p)
                priors = [space_time_sample(ps.stack(), f) for ps, f in zip(prior_sets, flows)]
            j_out, range_weights = gmra_with_weights(feats, priors, j, p)

        t_hat = T.sigmoid(modules.t_head(p))
        a_hat = T.sigmoid(T.reshape(T.mean(modules.a_head(p)), (1,)))
        j_hat = T.sigmoid(features.base_logits[s] + modules.j_head(j_out))
        t3 = T.expand(t_hat, (3, h, w))
        i_hat = j_hat * t3 + a_hat * (1.0 - t3)
        outputs.append(ScaleOutputs(t_hat, a_hat, j_hat, i_hat, flows, range_weights,
                                    distribution, token, mem_weights))

        keep = cfg.ranges - 1
        scene_hist.append((j_out,) + state.scene_history[s][:keep])
        prior_hist.append((p,) + state.prior_history[s][:keep])
        memories.append(memory)
        prev_p, prev_j, prev_flows = p, j_out, flows

    residual = conv_stack(params.residual, prev_j)
    dehazed = T.clamp(features.frame + residual, 0.0, 1.0)
    state = FrameState(extent, tuple(scene_hist), tuple(prior_hist), tuple(memories))
    return dehazed, outputs, state


def forward_clip(frames, params, state=None):
    """Run (3, H, W) frames in order; returns (outputs, per-frame scale outputs, final state)."""
    frames = list(frames)
    if not frames:
        raise ContractError("cannot run an empty video")
    extent = frames[0].shape[1:]
    for i, f in enumerate(frames):
        if f.shape != frames[0].shape:
            raise DimensionError(f"frame {i} has shape {f.shape}, expected {frames[0].shape}")
    state = state or FrameState.initial(params.config, *extent)
    outputs, intermediates = [], []
    for frame in frames:
        out, scales, state = decode_step(encode(frame, params), state, params)
        outputs.append(out)
        intermediates.append(scales)
    return outputs, intermediates, state


def run_video(video, params, cfg=None):
    """Dehaze a list of (H, W, 3) frames; returns ((H, W, 3) outputs, per-frame intermediates).

    Inference only: no graph is recorded.
    """
    if cfg is not None and cfg != params.config:
        raise ContractError("parameters were built for a different configuration")
    video = list(video)
    if not video:
        raise ContractError("cannot run an empty video")
    with T.no_grad():
        outputs, intermediates, _ = forward_clip([to_chw(f) for f in video], params)
    return [to_hwc(o) for o in outputs], intermediates
