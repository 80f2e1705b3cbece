"""Training objectives: output fidelity, physical disentanglement and flow warping.

Scales are indexed coarse to fine, s = 0 .. S-1, and scale s is weighted by
2^(s - (S-1)) so the full-resolution scale carries weight 1.
"""

from dataclasses import dataclass, field

import numpy as np

import tensor as T
from constants import LAMBDA_FLOW, LAMBDA_PHY, RangeMode
from errors import ContractError, DimensionError, ParameterError
from multirange_recovery import build_range_sets, space_time_sample


@dataclass
class LossReport:
    out: float
    phy: float
    flow: float
    total: float
    graph: T.Tensor = field(default=None, repr=False, compare=False)

    def as_row(self):
        return {"out": self.out, "phy": self.phy, "flow": self.flow, "total": self.total}


def _as_tensor(x):
    return x if isinstance(x, T.Tensor) else T.Tensor(x)


def scale_weight(s, scales):
    return 2.0 ** (s - (scales - 1))


def l1(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"L1 between mismatched shapes {a.shape} and {b.shape}")
    return T.mean(T.absolute(a - b))


def output_loss(j_hat, j_gt):
    return l1(j_hat, j_gt)


def physical_loss(preds, targets, scales=None):
    """sum_s w_s * (L1(I^_s, I_s) + L1(J^_s, J_s)) over (I^, J^) / (I, J) pairs per scale."""
    preds, targets = list(preds), list(targets)
    scales = len(targets) if scales is None else scales
    if len(preds) != scales or len(targets) != scales:
        raise ContractError(f"physical loss needs {scales} scales, got {len(preds)} predictions "
                            f"and {len(targets)} targets")
    total = None
    for s, ((i_hat, j_hat), (i_gt, j_gt)) in enumerate(zip(preds, targets)):
        term = (l1(i_hat, i_gt) + l1(j_hat, j_gt)) * scale_weight(s, scales)
        total = term if total is None else total + term
    return total


def flow_loss(gt_history, flows, gt_targets, ranges, mode=RangeMode.MULTI):
    """Warp ground-truth history with each learned flow and compare to the target.

    gt_history[s] lists earlier ground-truth frames at scale s, most recent
    first; flows[s][r] is the flow of range set r at scale s.
    """
    scales = len(gt_targets)
    if len(gt_history) != scales or len(flows) != scales:
        raise ContractError(f"flow loss needs {scales} scales of history and flows")
    total = None
    for s in range(scales):
        target = _as_tensor(gt_targets[s])
        sets = build_range_sets(gt_history[s], ranges, mode, target=target)
        per_scale = flows[s] or []
        if len(per_scale) < len(sets):
            raise ContractError(f"scale {s}: {len(per_scale)} flows for {len(sets)} range sets")
        for r, range_set in enumerate(sets):
            if per_scale[r] is None:
                raise ContractError(f"missing flow for scale {s}, range {r + 1}")
            warped = space_time_sample(range_set.stack(), per_scale[r])
            term = l1(warped, target) * scale_weight(s, scales)
            total = term if total is None else total + term
    return total if total is not None else T.Tensor(0.0)


def total_loss(out, phy, flow, lambda_phy=LAMBDA_PHY, lambda_flow=LAMBDA_FLOW):
    """Weighted sum; accepts scalar Tensors (graph kept for backward) or plain numbers."""
    if lambda_phy < 0 or lambda_flow < 0:
        raise ParameterError(f"loss weights must be >= 0, got {lambda_phy} and {lambda_flow}")
    out, phy, flow = (_as_tensor(x) for x in (out, phy, flow))
    total = out + phy * lambda_phy + flow * lambda_flow
    return LossReport(out.item(), phy.item(), flow.item(), total.item(), graph=total)


def avg_pool(frame, factor=2):
    """Non-overlapping factor x factor mean of a (C, H, W) array."""
    c, h, w = frame.shape
    if h % factor or w % factor:
        raise DimensionError(f"extent {(h, w)} is not divisible by {factor}")
    return frame.reshape(c, h // factor, factor, w // factor, factor).mean(axis=(2, 4))


def pyramid(frame, scales):
    """Average-pool pyramid of a (C, H, W) array, coarsest first, full resolution last."""
    levels = [np.asarray(frame, dtype=np.float64)]
    for _ in range(scales - 1):
        levels.append(avg_pool(levels[-1]))
    return levels[::-1]
