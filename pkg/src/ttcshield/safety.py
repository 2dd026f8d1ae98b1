"""Time-to-collision risk: pairwise/static TTC, thresholding, aggregated state cost.

Sign convention for pairs: relative quantities are (other - ego), so a
closing pair has a negative projection of relative velocity onto the
line of centers and the TTC comes out positive.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

INF = float("inf")


@dataclass(frozen=True)
class TtcParams:
    """Knobs of the TTC risk functional.

    d_s folds both collision-circle radii into one safety distance and is
    deliberately generous; a configuration already inside it is treated as
    an envelope violation (TTC clamped to ttc_floor, flat overlap_penalty
    added) rather than a zero-time collision.
    """

    d_s: float = 5.0             # m, safety distance
    t_safe: float = 5.0          # s, TTCs above this carry zero risk
    lam: float = 0.5             # weight of static-obstacle terms
    ttc_floor: float = 0.05      # s, clamp for near-overlap
    overlap_penalty: float = 1e3

    def __post_init__(self):
        if not (self.d_s > 0.0 and self.t_safe > 0.0 and self.lam >= 0.0):
            raise ValueError("require d_s > 0, t_safe > 0, lambda >= 0")
        if not (0.0 < self.ttc_floor < self.t_safe):
            raise ValueError(
                f"ttc_floor must lie in (0, t_safe), got {self.ttc_floor}"
            )


def ttc_pair(ego, other, p: TtcParams) -> float:
    """Seconds until the pair's separation shrinks to d_s, +inf if non-closing.

    Constant-velocity linearization along the line of centers: with
    dx = other.position - ego.position and dv = other.velocity - ego.velocity,
    proj = (dv . dx) / |dx| is the signed closing rate and
    TTC = -(|dx| - d_s) / proj for proj < 0. Already inside the envelope
    (|dx| <= d_s, including coincident centers) returns ttc_floor; the
    result is clamped below by ttc_floor.
    """
    dx = other.position - ego.position
    dist = dx.norm()
    if dist <= p.d_s:
        return p.ttc_floor
    dv = other.velocity - ego.velocity
    proj = dv.dot(dx) / dist
    if proj >= 0.0:
        return INF
    return max(p.ttc_floor, -(dist - p.d_s) / proj)


def ttc_static(ego, obs, p: TtcParams) -> float:
    """TTC against a static obstacle: only the ego velocity is projected."""
    dx = obs.position - ego.position
    dist = dx.norm()
    if dist <= p.d_s:
        return p.ttc_floor
    proj = ego.velocity.dot(dx) / dist
    if proj <= 0.0:
        return INF
    return max(p.ttc_floor, (dist - p.d_s) / proj)


def ttc_quadratic_oracle(ego, other, p: TtcParams) -> float:
    """First time the pair's center distance equals d_s, by explicit quadratic solve.

    Solves |dx + dv*t|^2 = d_s^2 for the smallest non-negative real root
    (accelerations treated as zero). Returns +inf when no such root exists.
    Serves as the independent check of ttc_pair's linearized form; the two
    agree exactly on collision-course (collinear) geometry, and the oracle
    never returns less than the linearized value elsewhere.
    """
    dx = other.position - ego.position
    dv = other.velocity - ego.velocity
    a = dv.dot(dv)
    b = 2.0 * dx.dot(dv)
    c = dx.dot(dx) - p.d_s * p.d_s
    if a == 0.0:
        return 0.0 if c == 0.0 else INF
    disc = b * b - 4.0 * a * c
    if disc < 0.0:
        return INF
    # numerically stable root pair
    sqrt_disc = math.sqrt(disc)
    q = -0.5 * (b + sqrt_disc) if b >= 0.0 else -0.5 * (b - sqrt_disc)
    roots = [q / a, c / q] if q != 0.0 else [0.0, -b / a]
    non_negative = [t for t in roots if t >= 0.0]
    return min(non_negative) if non_negative else INF


def threshold_ttc(ttc: float, t_safe: float) -> float:
    """Keep TTCs up to and including t_safe; larger ones become +inf (no risk)."""
    return ttc if ttc <= t_safe else INF


def state_cost(ego, hdvs, obstacles, p: TtcParams) -> float:
    """Aggregated risk of one configuration.

    sum_j 1/threshold(ttc_pair(ego, j)) + lambda * sum_s 1/threshold(ttc_static(ego, s)),
    with 1/inf = 0, plus a flat overlap_penalty for every entity already
    inside the d_s envelope.
    """
    total = 0.0
    for other in hdvs:
        dist = (other.position - ego.position).norm()
        ttc = threshold_ttc(ttc_pair(ego, other, p), p.t_safe)
        if math.isfinite(ttc):
            total += 1.0 / ttc
        if dist <= p.d_s:
            total += p.overlap_penalty
    for obs in obstacles:
        dist = (obs.position - ego.position).norm()
        ttc = threshold_ttc(ttc_static(ego, obs, p), p.t_safe)
        if math.isfinite(ttc):
            total += p.lam / ttc
        if dist <= p.d_s:
            total += p.overlap_penalty
    return total


# --- array core -------------------------------------------------------------
# The planner scores thousands of predicted configurations per tick; these
# vectorized twins of the scalar functions operate on plain (k, 2) arrays.


def pair_ttc_array(ego_pos, ego_vel, other_pos, other_vel, p: TtcParams):
    """Vectorized ttc_pair. Returns (ttc, inside_envelope) over k others."""
    dpos = np.asarray(other_pos, dtype=float) - np.asarray(ego_pos, dtype=float)
    dvel = np.asarray(other_vel, dtype=float) - np.asarray(ego_vel, dtype=float)
    dist = np.hypot(dpos[:, 0], dpos[:, 1])
    inside = dist <= p.d_s
    denom = np.where(inside, 1.0, dist)  # keeps 0/0 out of the division
    proj = (dvel[:, 0] * dpos[:, 0] + dvel[:, 1] * dpos[:, 1]) / denom
    ttc = np.full(dist.shape, INF)
    closing = (proj < 0.0) & ~inside
    ttc[closing] = np.maximum(p.ttc_floor, -(dist[closing] - p.d_s) / proj[closing])
    ttc[inside] = p.ttc_floor
    return ttc, inside


def static_ttc_array(ego_pos, ego_vel, obs_pos, p: TtcParams):
    """Vectorized ttc_static. Returns (ttc, inside_envelope) over m obstacles."""
    dpos = np.asarray(obs_pos, dtype=float) - np.asarray(ego_pos, dtype=float)
    ego_vel = np.asarray(ego_vel, dtype=float)
    dist = np.hypot(dpos[:, 0], dpos[:, 1])
    inside = dist <= p.d_s
    denom = np.where(inside, 1.0, dist)
    proj = (ego_vel[0] * dpos[:, 0] + ego_vel[1] * dpos[:, 1]) / denom
    ttc = np.full(dist.shape, INF)
    closing = (proj > 0.0) & ~inside
    ttc[closing] = np.maximum(p.ttc_floor, (dist[closing] - p.d_s) / proj[closing])
    ttc[inside] = p.ttc_floor
    return ttc, inside


def state_cost_arrays(ego_pos, ego_vel, hdv_pos, hdv_vel, obs_pos, p: TtcParams) -> float:
    """state_cost over raw position/velocity arrays (hdv_*: (k, 2), obs_pos: (m, 2))."""
    total = 0.0
    if len(hdv_pos):
        ttc, inside = pair_ttc_array(ego_pos, ego_vel, hdv_pos, hdv_vel, p)
        kept = ttc[ttc <= p.t_safe]
        total += float(np.sum(1.0 / kept)) + p.overlap_penalty * int(np.sum(inside))
    if len(obs_pos):
        ttc, inside = static_ttc_array(ego_pos, ego_vel, obs_pos, p)
        kept = ttc[ttc <= p.t_safe]
        total += p.lam * float(np.sum(1.0 / kept)) + p.overlap_penalty * int(np.sum(inside))
    return total
