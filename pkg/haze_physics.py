"""Atmospheric scattering model and hazy-video synthesis.

A hazy frame is I = J*t + A*(1 - t), with transmission t = exp(-beta * depth).
Frames are (H, W, 3) float64 arrays in [0, 1]; depth and transmission maps
are (H, W) arrays. One (beta, A) pair is drawn per synthesized video from a
small xorshift generator so results are reproducible from the seed alone.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from constants import A_RANGE, BETA_CHOICES, DEFAULT_SEED, T_FLOOR
from errors import DataError, DimensionError, ParameterError

logger = logging.getLogger(__name__)

MASK64 = (1 << 64) - 1


class XorShift64Star:
    """xorshift64* generator seeded through one splitmix64 step.

    State update: x ^= x >> 12; x ^= x << 25; x ^= x >> 27 (mod 2^64).
    Output: x * 0x2545F4914F6CDD1D (mod 2^64). `uniform` keeps the top 53 bits.
    """

    def __init__(self, seed=DEFAULT_SEED):
        z = (int(seed) + 0x9E3779B97F4A7C15) & MASK64
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        z ^= z >> 31
        self.state = z or 0x9E3779B97F4A7C15

    def next_u64(self):
        x = self.state
        x ^= x >> 12
        x ^= (x << 25) & MASK64
        x ^= x >> 27
        self.state = x
        return (x * 0x2545F4914F6CDD1D) & MASK64

    def uniform(self, low=0.0, high=1.0):
        u = (self.next_u64() >> 11) * (1.0 / (1 << 53))
        return low + (high - low) * u

    def choice(self, options):
        options = list(options)
        return options[min(int(self.uniform() * len(options)), len(options) - 1)]


@dataclass(frozen=True)
class HazeParams:
    """Per-video scattering coefficient (1/m) and scalar atmospheric light."""

    beta: float
    airlight: float

    def __post_init__(self):
        if not self.beta >= 0:
            raise ParameterError(f"beta must be >= 0, got {self.beta}")
        if not 0.0 <= self.airlight <= 1.0:
            raise ParameterError(f"atmospheric light must lie in [0, 1], got {self.airlight}")


@dataclass(frozen=True)
class SynthesisConfig:
    beta_choices: tuple = BETA_CHOICES
    airlight_range: tuple = A_RANGE
    rng_seed: int = DEFAULT_SEED

    def __post_init__(self):
        if not self.beta_choices:
            raise ParameterError("beta_choices must not be empty")
        if any(b < 0 for b in self.beta_choices):
            raise ParameterError(f"beta values must be >= 0, got {self.beta_choices}")
        low, high = self.airlight_range
        if not 0.0 <= low <= high <= 1.0:
            raise ParameterError(f"airlight_range must be a sub-interval of [0, 1], got {self.airlight_range}")

    @classmethod
    def from_mapping(cls, values):
        """Build from typed values or strings as read from a key-value config file."""
        def floats(value):
            items = value.split(",") if isinstance(value, str) else value
            try:
                return tuple(float(v) for v in items)
            except ValueError:
                raise ParameterError(f"expected a list of numbers, got {value!r}") from None

        kwargs = {}
        if "beta_choices" in values:
            kwargs["beta_choices"] = floats(values["beta_choices"])
        if "airlight_range" in values:
            kwargs["airlight_range"] = floats(values["airlight_range"])
            if len(kwargs["airlight_range"]) != 2:
                raise ParameterError(f"airlight_range needs two values, got {values['airlight_range']!r}")
        if "seed" in values:
            try:
                kwargs["rng_seed"] = int(values["seed"])
            except ValueError:
                raise ParameterError(f"seed must be an integer, got {values['seed']!r}") from None
        return cls(**kwargs)

    def to_mapping(self):
        return {"beta_choices": self.beta_choices, "airlight_range": self.airlight_range,
                "seed": self.rng_seed}


@dataclass
class SynthesizedVideo:
    hazy: list
    transmissions: list
    params: HazeParams
    seed: int = 0


def check_frame(frame, name="frame"):
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim != 3 or frame.shape[2] != 3:
        raise DimensionError(f"{name} must be (H, W, 3), got {frame.shape}")
    if frame.size and (frame.min() < 0.0 or frame.max() > 1.0):
        raise ParameterError(f"{name} values must lie in [0, 1]")
    return frame


def fill_invalid_depth(depth):
    """Replace NaN, infinite and negative depths by the largest valid depth."""
    depth = np.array(depth, dtype=np.float64)
    valid = np.isfinite(depth) & (depth >= 0)
    if not valid.any():
        raise DataError("depth map has no valid pixels")
    if not valid.all():
        depth[~valid] = depth[valid].max()
    return depth


def transmission_from_depth(depth, beta):
    if not beta >= 0:
        raise ParameterError(f"beta must be >= 0, got {beta}")
    depth = np.asarray(depth, dtype=np.float64)
    if depth.ndim != 2:
        raise DimensionError(f"depth map must be (H, W), got {depth.shape}")
    if not np.all(np.isfinite(depth)) or depth.min() < 0:
        raise ParameterError("depth must be finite and non-negative")
    return np.exp(-beta * depth)


def _check_pair(frame, transmission):
    frame = check_frame(frame)
    t = np.asarray(transmission, dtype=np.float64)
    if t.shape != frame.shape[:2]:
        raise DimensionError(f"transmission {t.shape} does not match frame {frame.shape}")
    return frame, t


def compose_haze(scene, transmission, airlight):
    """I = J*t + A*(1 - t), a convex blend of the scene and the airlight."""
    scene, t = _check_pair(scene, transmission)
    if not 0.0 <= airlight <= 1.0:
        raise ParameterError(f"atmospheric light must lie in [0, 1], got {airlight}")
    if t.size and not (np.all(np.isfinite(t)) and t.min() >= 0.0 and t.max() <= 1.0):
        raise ParameterError("transmission values must lie in [0, 1]")
    t = t[..., None]
    hazy = scene * t + airlight * (1.0 - t)
    # only rounding residue can leave [0, 1] here
    return np.clip(hazy, 0.0, 1.0)


def recover_scene(hazy, transmission, airlight, t_floor=T_FLOOR):
    """Exact inverse of `compose_haze` with the transmission floored at `t_floor`."""
    if not t_floor > 0:
        raise ParameterError(f"t_floor must be > 0, got {t_floor}")
    hazy, t = _check_pair(hazy, transmission)
    t = np.maximum(t, t_floor)[..., None]
    scene = (hazy - airlight * (1.0 - t)) / t
    return np.clip(scene, 0.0, 1.0)


def sample_haze_params(rng, cfg, beta=None):
    beta = rng.choice(cfg.beta_choices) if beta is None else beta
    low, high = cfg.airlight_range
    return HazeParams(beta=float(beta), airlight=rng.uniform(low, high))


def _apply_params(clear, depths, params, workers):
    def one(pair):
        frame, depth = pair
        t = transmission_from_depth(depth, params.beta)
        return compose_haze(frame, t, params.airlight), t

    pairs = list(zip(clear, depths))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, pairs))
    else:
        results = [one(p) for p in pairs]
    return [r[0] for r in results], [r[1] for r in results]


def _check_video(clear, depths):
    if len(clear) != len(depths):
        raise DimensionError(f"{len(clear)} clear frames but {len(depths)} depth maps")
    if not clear:
        raise DimensionError("cannot synthesize an empty video")
    for i, (frame, depth) in enumerate(zip(clear, depths)):
        if np.shape(frame)[:2] != np.shape(depth):
            raise DimensionError(f"frame {i}: image {np.shape(frame)} and depth {np.shape(depth)} differ")


def synthesize_video(clear, depths, cfg, workers=1):
    """Apply one sampled (beta, A) pair to every frame of a clear video."""
    _check_video(clear, depths)
    rng = XorShift64Star(cfg.rng_seed)
    params = sample_haze_params(rng, cfg)
    hazy, transmissions = _apply_params(clear, depths, params, workers)
    logger.info("synthesized %d frames with beta=%g A=%.6f (seed %d)",
                len(hazy), params.beta, params.airlight, cfg.rng_seed)
    return SynthesizedVideo(hazy, transmissions, params, seed=cfg.rng_seed)


def synthesize_video_variants(clear, depths, cfg, workers=1):
    """One hazy video per beta in `cfg.beta_choices`, each with its own A."""
    _check_video(clear, depths)
    rng = XorShift64Star(cfg.rng_seed)
    videos = []
    for beta in cfg.beta_choices:
        params = sample_haze_params(rng, cfg, beta=beta)
        hazy, transmissions = _apply_params(clear, depths, params, workers)
        videos.append(SynthesizedVideo(hazy, transmissions, params, seed=cfg.rng_seed))
    return videos


def expected_transmission(distribution):
    """Transmission estimate from a (D, H, W) bin distribution with centres d/(D-1)."""
    distribution = np.asarray(distribution, dtype=np.float64)
    bins = distribution.shape[0]
    centres = np.linspace(0.0, 1.0, bins) if bins > 1 else np.ones(1)
    return np.tensordot(centres, distribution, axes=([0], [0]))


def make_toy_clip(num_frames=8, height=32, width=32, seed=DEFAULT_SEED):
    """Procedural clear clip with a translating square and a ground-plane depth ramp.

    Returns (frames, depths); depths are in meters, far at the top row.
    """
    rng = XorShift64Star(seed)
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    phases = [rng.uniform(0, 2 * math.pi) for _ in range(3)]
    freqs = [rng.uniform(0.15, 0.45) for _ in range(3)]
    base = np.stack([
        0.5 + 0.25 * np.sin(freqs[c] * xx + phases[c]) * np.cos(0.6 * freqs[c] * yy)
        + 0.15 * (yy / max(height - 1, 1) - 0.5)
        for c in range(3)
    ], axis=-1)
    side = max(2, min(height, width) // 4)
    colour = np.array([rng.uniform(0.05, 0.95) for _ in range(3)])
    x0 = int(rng.uniform(0, width - side))
    y0 = int(rng.uniform(0, height - side))
    dx, dy = rng.choice((-1, 1)), rng.choice((-1, 0, 1))
    far, near = 150.0, 10.0
    ramp = far + (near - far) * yy / max(height - 1, 1)

    frames, depths = [], []
    for i in range(num_frames):
        frame = base.copy()
        depth = ramp.copy()
        sx = (x0 + dx * i) % (width - side + 1)
        sy = (y0 + dy * i) % (height - side + 1)
        frame[sy:sy + side, sx:sx + side] = colour
        depth[sy:sy + side, sx:sx + side] = near + 5.0
        frames.append(np.clip(frame, 0.0, 1.0))
        depths.append(depth)
    return frames, depths
