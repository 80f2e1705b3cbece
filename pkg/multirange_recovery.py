"""Multi-range temporal alignment and aggregation.

Past features are grouped into range sets (the r most recent frames, for
r = 1..R). Each set is aligned to the target frame by space-time deformable
attention: sample the stack along a (time, y, x) flow, refine the flow with a
small offset network, resample, then run windowed cross-attention against the
target and a feed-forward block. The R aligned range features are merged per
pixel with softmax weights from scene and prior affinities.

Flows are (3, H, W) maps in normalized coordinates: -1 addresses the first
index of an axis and +1 the last (corner-aligned), out-of-range values clamp.
Channel 0 indexes the stack slot, most recent frame first.
"""

import math
from dataclasses import dataclass

import numpy as np

import tensor as T
from constants import FFN_EXPANSION, HEADS, WINDOW, RangeMode
from errors import ContractError, DimensionError
from layers import Linear, conv_stack, make_conv_stack, register, tokens, untokens

MASKED = -1e30


# -- range sets --------------------------------------------------------------
@dataclass
class RangeSet:
    r: int
    frames: list

    def stack(self):
        return T.stack([f if isinstance(f, T.Tensor) else T.Tensor(f) for f in self.frames], axis=0)


def build_range_sets(history, ranges, mode=RangeMode.MULTI, target=None):
    """Range sets over `history` (most recent first), padded with the oldest entry.

    With no history the target itself is the only entry.
    """
    if ranges < 1:
        raise ContractError(f"need at least one range, got {ranges}")
    frames = list(history)
    if not frames:
        if target is None:
            raise ContractError("empty history and no target frame to fall back on")
        frames = [target]

    def pick(k):
        return frames[min(k, len(frames) - 1)]

    mode = RangeMode(mode)
    if mode is RangeMode.SINGLE_SET:
        return [RangeSet(ranges, [pick(k) for k in range(ranges)])]
    if mode is RangeMode.FRAME_BY_FRAME:
        return [RangeSet(1, [pick(r)]) for r in range(ranges)]
    return [RangeSet(r, [pick(k) for k in range(r)]) for r in range(1, ranges + 1)]


# -- space-time sampling ------------------------------------------------------
def identity_flow(height, width):
    """Flow that reads the most recent slot at every pixel's own position."""
    ys = np.linspace(-1.0, 1.0, height) if height > 1 else np.zeros(1)
    xs = np.linspace(-1.0, 1.0, width) if width > 1 else np.zeros(1)
    flow = np.empty((3, height, width))
    flow[0] = -1.0
    flow[1] = ys[:, None]
    flow[2] = xs[None, :]
    return flow


def _axis(coord, extent):
    """Corner indices, upper-corner weight and d(position)/d(coord) along one axis."""
    if extent == 1:
        zero = np.zeros(coord.shape, dtype=np.intp)
        return zero, zero, np.zeros(coord.shape), np.zeros(coord.shape)
    pos = (coord + 1.0) * 0.5 * (extent - 1)
    inside = (pos >= 0) & (pos <= extent - 1)
    pos = np.clip(pos, 0.0, extent - 1)
    i0 = np.minimum(np.floor(pos).astype(np.intp), extent - 2)
    frac = pos - i0
    dpos = np.where(inside, 0.5 * (extent - 1), 0.0)
    return i0, i0 + 1, frac, dpos


def space_time_sample(stack, flow):
    """Trilinear read of an (r, C, H, W) stack at a (3, H, W) flow; returns (C, H, W)."""
    flow = flow if isinstance(flow, T.Tensor) else T.Tensor(flow)
    if stack.ndim != 4:
        raise DimensionError(f"stack must be (r, C, H, W), got {stack.shape}")
    r, c, h, w = stack.shape
    if flow.shape != (3, h, w):
        raise DimensionError(f"flow {flow.shape} does not match stack extent ({h}, {w})")
    t0, t1, ft, dt = _axis(flow.data[0], r)
    y0, y1, fy, dy = _axis(flow.data[1], h)
    x0, x1, fx, dx = _axis(flow.data[2], w)
    data = stack.data

    corners = []
    for ti, wt, st in ((t0, 1.0 - ft, -1.0), (t1, ft, 1.0)):
        for yi, wy, sy in ((y0, 1.0 - fy, -1.0), (y1, fy, 1.0)):
            for xi, wx, sx in ((x0, 1.0 - fx, -1.0), (x1, fx, 1.0)):
                corners.append((ti, yi, xi, wt, wy, wx, st, sy, sx))

    out = np.zeros((h, w, c))
    for ti, yi, xi, wt, wy, wx, *_ in corners:
        out += (wt * wy * wx)[..., None] * data[ti, :, yi, xi]

    def _backward(g):
        gh = g.transpose(1, 2, 0)
        gstack = np.zeros_like(data)
        gt, gy, gx = np.zeros((h, w)), np.zeros((h, w)), np.zeros((h, w))
        for ti, yi, xi, wt, wy, wx, st, sy, sx in corners:
            np.add.at(gstack, (ti, slice(None), yi, xi), (wt * wy * wx)[..., None] * gh)
            dot = (gh * data[ti, :, yi, xi]).sum(axis=-1)
            gt += st * wy * wx * dot
            gy += sy * wt * wx * dot
            gx += sx * wt * wy * dot
        return gstack, np.stack([gt * dt, gy * dy, gx * dx])

    return T.Tensor.from_op(out.transpose(2, 0, 1), (stack, flow), _backward, "space_time_sample")


def refine_flow(j_target, aligned_init, flow_init, offset_net):
    """clamp(flow_init + offset_net(concat(j_target, aligned_init, flow_init)), -1, 1)."""
    flow_init = flow_init if isinstance(flow_init, T.Tensor) else T.Tensor(flow_init)
    extent = j_target.shape[1:]
    for name, x in (("aligned feature", aligned_init), ("flow", flow_init)):
        if x.shape[1:] != extent:
            raise DimensionError(f"{name} extent {x.shape[1:]} does not match target {extent}")
    delta = conv_stack(offset_net, T.concat([j_target, aligned_init, flow_init], axis=0))
    return T.clamp(flow_init + delta, -1.0, 1.0)


# -- windowed attention -----------------------------------------------------
@dataclass
class StdaParams:
    offset_net: list
    u_q: T.Tensor
    u_kv: T.Tensor
    ffn: list
    window: int = WINDOW
    heads: int = HEADS

    @classmethod
    def create(cls, params, key, init, channels, window=WINDOW, heads=HEADS, expansion=FFN_EXPANSION):
        if channels % heads:
            raise DimensionError(f"{channels} channels cannot be split into {heads} heads")
        offset_net = make_conv_stack(params, f"{key}.offset", init,
                                     (2 * channels + 3, channels, 3), zero_last=True)
        u_q = register(params, f"{key}.u_q", init.uniform((channels, channels), channels))
        u_kv = register(params, f"{key}.u_kv", init.uniform((channels, 2 * channels), channels))
        hidden = expansion * channels
        ffn = [Linear.create(params, f"{key}.ffn.0", init, channels, hidden),
               Linear.create(params, f"{key}.ffn.1", init, hidden, channels)]
        return cls(offset_net, u_q, u_kv, ffn, window, heads)


def _padded(n, window):
    return -(-n // window) * window


def _partition(x, window, heads):
    """(C, H, W) -> (windows*heads, window*window, C/heads), zero-padded to whole windows."""
    c, h, w = x.shape
    hp, wp = _padded(h, window), _padded(w, window)
    if (hp, wp) != (h, w):
        x = T.pad_hw(x, 0, hp - h, 0, wp - w)
    nh, nw, dh = hp // window, wp // window, c // heads
    x = T.reshape(x, (heads, dh, nh, window, nw, window))
    x = T.transpose(x, (2, 4, 0, 3, 5, 1))
    return T.reshape(x, (nh * nw * heads, window * window, dh))


def _merge(x, c, h, w, window, heads):
    hp, wp = _padded(h, window), _padded(w, window)
    nh, nw = hp // window, wp // window
    x = T.reshape(x, (nh, nw, heads, window, window, c // heads))
    x = T.transpose(x, (2, 5, 0, 3, 1, 4))
    x = T.reshape(x, (c, hp, wp))
    return x if (hp, wp) == (h, w) else T.getitem(x, (slice(None), slice(0, h), slice(0, w)))


def _padding_mask(h, w, window, heads):
    hp, wp = _padded(h, window), _padded(w, window)
    valid = np.zeros((hp, wp))
    valid[:h, :w] = 1.0
    nh, nw = hp // window, wp // window
    valid = valid.reshape(nh, window, nw, window).transpose(0, 2, 1, 3).reshape(nh * nw, 1, window * window)
    mask = np.where(valid > 0, 0.0, MASKED)
    mask = np.repeat(mask, heads, axis=0)
    return np.broadcast_to(mask, (nh * nw * heads, window * window, window * window)).copy()


def window_cross_attention(query, key, value, window=WINDOW, heads=HEADS):
    """Multi-head attention restricted to non-overlapping window x window tiles.

    All three inputs are (C, H, W); padded key positions are masked out.
    """
    if not query.shape == key.shape == value.shape:
        raise DimensionError(f"query {query.shape}, key {key.shape} and value {value.shape} differ")
    c, h, w = query.shape
    if c % heads:
        raise DimensionError(f"{c} channels cannot be split into {heads} heads")
    q, k, v = (_partition(x, window, heads) for x in (query, key, value))
    scores = T.matmul(q, T.transpose(k, (0, 2, 1))) / math.sqrt(c // heads)
    if (_padded(h, window), _padded(w, window)) != (h, w):
        scores = scores + T.Tensor(_padding_mask(h, w, window, heads))
    out = T.matmul(T.softmax(scores, axis=-1), v)
    return _merge(out, c, h, w, window, heads)


def stda_attention(j_target, aligned, params):
    """Cross-attention of the target (queries) against aligned range features (keys/values)."""
    if j_target.shape != aligned.shape:
        raise DimensionError(f"target {j_target.shape} and aligned feature {aligned.shape} differ")
    c, h, w = j_target.shape
    q = T.matmul(tokens(j_target), params.u_q)
    kv = T.matmul(tokens(aligned), params.u_kv)
    k = T.getitem(kv, (slice(None), slice(0, c)))
    v = T.getitem(kv, (slice(None), slice(c, 2 * c)))
    return window_cross_attention(untokens(q, h, w), untokens(k, h, w), untokens(v, h, w),
                                  params.window, params.heads)


def feed_forward(x, ffn):
    c, h, w = x.shape
    t = tokens(x)
    hidden = T.leaky_relu(ffn[0](t), 0.0)
    return untokens(t + ffn[1](hidden), h, w)


def stda(j_target, stack, flow_init, params):
    """Align one range set to the target; returns (range feature, refined flow)."""
    if isinstance(stack, RangeSet):
        stack = stack.stack()
    aligned_init = space_time_sample(stack, flow_init)
    flow = refine_flow(j_target, aligned_init, flow_init, params.offset_net)
    aligned = space_time_sample(stack, flow)
    return feed_forward(stda_attention(j_target, aligned, params), params.ffn), flow


# -- aggregation ---------------------------------------------------------------
def gmra_with_weights(range_feats, aligned_priors, j_target, p_target=None):
    """Per-pixel softmax over ranges of scene (+ prior) affinity; returns (output, weights (R, H, W)).

    Passing `aligned_priors=None` drops the prior score.
    """
    range_feats = list(range_feats)
    if not range_feats:
        raise ContractError("gmra needs at least one range feature")
    if aligned_priors is not None:
        aligned_priors = list(aligned_priors)
        if len(aligned_priors) != len(range_feats):
            raise DimensionError(f"{len(range_feats)} range features but {len(aligned_priors)} aligned priors")
    c, h, w = j_target.shape
    root = math.sqrt(c)
    scores = []
    for r, feat in enumerate(range_feats):
        if feat.shape != j_target.shape:
            raise DimensionError(f"range {r + 1} feature {feat.shape} does not match {j_target.shape}")
        score = T.tensor_sum(j_target * feat, axis=0) / root
        if aligned_priors is not None:
            prior = aligned_priors[r]
            if p_target is None or prior.shape != p_target.shape or p_target.shape != j_target.shape:
                raise DimensionError(f"range {r + 1} prior does not match the target prior")
            score = score + T.tensor_sum(p_target * prior, axis=0) / root
        scores.append(score)
    weights = T.softmax(T.stack(scores, axis=0), axis=0)
    out = None
    for r, feat in enumerate(range_feats):
        term = T.expand(T.getitem(weights, slice(r, r + 1)), (c, h, w)) * feat
        out = term if out is None else out + term
    return out, weights


def gmra(range_feats, aligned_priors, j_target, p_target=None):
    return gmra_with_weights(range_feats, aligned_priors, j_target, p_target)[0]


# -- coarse-to-fine ----------------------------------------------------------
def _interp_matrix(n_in, n_out):
    m = np.zeros((n_out, n_in))
    if n_in == 1:
        m[:, 0] = 1.0
        return m
    pos = np.arange(n_out) * (n_in - 1) / (n_out - 1)
    i0 = np.minimum(np.floor(pos).astype(np.intp), n_in - 2)
    frac = pos - i0
    rows = np.arange(n_out)
    m[rows, i0] = 1.0 - frac
    m[rows, i0 + 1] += frac
    return m


def upsample_flow(flow, factor=2):
    """Corner-aligned bilinear upsampling of a (3, h, w) flow.

    Normalized coordinates are resolution-free, so values carry over unscaled.
    """
    flow = flow if isinstance(flow, T.Tensor) else T.Tensor(flow)
    ch, h, w = flow.shape
    rows = _interp_matrix(h, h * factor)
    cols = _interp_matrix(w, w * factor).T
    rows = T.Tensor(np.broadcast_to(rows, (ch,) + rows.shape).copy())
    cols = T.Tensor(np.broadcast_to(cols, (ch,) + cols.shape).copy())
    return T.matmul(T.matmul(rows, flow), cols)
