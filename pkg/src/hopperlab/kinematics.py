"""Closed-form kinematics of the three-chain parallel leg and its serial template.

Frames and conventions:
  - Base frame: x forward, y left, z up, origin at the hip-motor plane center.
  - Chain i (i = 0, 1, 2) lives in a frame yawed by 2*pi*i/3 about z; its hip
    pivot sits at [0, r, 0] and the upper link of length D rotates in the
    chain's y-z plane.  Joint angle q_i = 0 points the knee radially outward,
    positive q_i lifts the knee (+z).
  - The lower link (length d) connects knee to foot through ball joints, so
    the only constraint per chain is |foot - knee_i| = d.
  - Serial template: roll about base x, pitch swinging the foot along +x,
    prismatic extension ext along the leg axis.  Foot points straight down
    (0, 0, -ext) at roll = pitch = 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from hopperlab.rotations import rotz, wrap_angle

_CHAIN_YAW = (0.0, 2.0 * math.pi / 3.0, 4.0 * math.pi / 3.0)
_CHAIN_ROT = tuple(rotz(a) for a in _CHAIN_YAW)
_CHAIN_ROT_T = np.stack([r.T for r in _CHAIN_ROT])  # (chain, 3, 3)

# Exclusion margin around the knee-fold singular surface.  Inside the
# workspace we require sin(q_i - alpha_i) >= this for every chain; at the
# surface itself the forward map stops being injective (knee-in vs knee-out).
BRANCH_MARGIN = 0.05


class KinematicsError(Exception):
    """Base class for kinematic failures."""


class UnreachableError(KinematicsError):
    """Requested pose has no real solution (or violates travel limits)."""


class SingularError(KinematicsError):
    """Jacobian (or constraint system) is singular at the requested pose."""


class DegenerateError(KinematicsError):
    """Pose lies on an arc where a joint angle is undefined."""


@dataclass(frozen=True)
class ChainGeometry:
    """Physical constants and travel limits of the leg.

    r: hip-pivot radial offset (m); D: upper-link length (m);
    d: lower-link length (m).  Chain yaw angles are fixed at 0, 120, 240 deg.
    """

    r: float = 0.06
    D: float = 0.14
    d: float = 0.30
    q_min: float = -1.3
    q_max: float = 1.3
    tilt_max: float = 0.6
    ext_min: float = 0.20
    ext_max: float = 0.36
    chain_yaw: tuple = field(default=_CHAIN_YAW, init=False, repr=False)

    def __post_init__(self):
        if not (self.r > 0.0 and self.D > 0.0 and self.d > 0.0):
            raise ValueError("link lengths r, D, d must be positive")
        if not self.d > self.r:
            raise ValueError("lower link d must exceed hip offset r")
        if not (0.0 < self.ext_min < self.ext_max <= self.D + self.d):
            raise ValueError("extension limits must satisfy 0 < ext_min < ext_max <= D + d")
        if not self.q_min < self.q_max:
            raise ValueError("parallel joint limits are empty")
        if not 0.0 < self.tilt_max < 0.5 * math.pi:
            raise ValueError("tilt limit must lie in (0, pi/2)")

    @property
    def nominal_ext(self) -> float:
        """Leg length of the symmetric stance pose q = 0 (foot straight down)."""
        reach = self.r + self.D
        return math.sqrt(self.d ** 2 - reach ** 2) if self.d > reach else 0.0


@dataclass
class ParallelJointState:
    """Hip motor angles and rates of the three chains."""

    q: np.ndarray
    qd: np.ndarray = None

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float).reshape(3)
        self.qd = np.zeros(3) if self.qd is None else np.asarray(self.qd, dtype=float).reshape(3)


@dataclass
class SerialJointState:
    """Template joints: q = (roll, pitch, ext), qd the matching rates."""

    q: np.ndarray
    qd: np.ndarray = None

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float).reshape(3)
        self.qd = np.zeros(3) if self.qd is None else np.asarray(self.qd, dtype=float).reshape(3)

    @property
    def roll(self) -> float:
        return float(self.q[0])

    @property
    def pitch(self) -> float:
        return float(self.q[1])

    @property
    def ext(self) -> float:
        return float(self.q[2])


def knee_position(geom: ChainGeometry, chain: int, q_i: float) -> np.ndarray:
    """Knee point of one chain in the base frame; chain is 0, 1 or 2."""
    local = np.array([0.0, geom.r + geom.D * math.cos(q_i), geom.D * math.sin(q_i)])
    return _CHAIN_ROT[chain] @ local


def fk_parallel(geom: ChainGeometry, q: np.ndarray) -> np.ndarray:
    """Foot position from hip angles.

    The two knee-distance difference equations are linear in the foot
    coordinates; eliminating x, y leaves a quadratic in z whose lower root
    (foot below the hips) is the physical assembly.
    """
    q = np.asarray(q, dtype=float)
    k = np.stack([knee_position(geom, i, q[i]) for i in range(3)])
    a = 2.0 * np.array(
        [
            [k[0, 0] - k[1, 0], k[0, 1] - k[1, 1]],
            [k[2, 0] - k[1, 0], k[2, 1] - k[1, 1]],
        ]
    )
    det = a[0, 0] * a[1, 1] - a[0, 1] * a[1, 0]
    if abs(det) < 1e-12:
        raise SingularError("knee difference system is rank-deficient")
    b = np.array([k[0] @ k[0] - k[1] @ k[1], k[2] @ k[2] - k[1] @ k[1]])
    c = -2.0 * np.array([k[0, 2] - k[1, 2], k[2, 2] - k[1, 2]])
    e2 = np.linalg.solve(a, b)
    f2 = np.linalg.solve(a, c)
    base = np.array([e2[0], e2[1], 0.0])
    direction = np.array([f2[0], f2[1], 1.0])
    g = base - k[0]
    qa = direction @ direction
    qb = 2.0 * (direction @ g)
    qc = g @ g - geom.d ** 2
    disc = qb * qb - 4.0 * qa * qc
    if disc < 0.0:
        raise UnreachableError("no real foot position for these hip angles")
    u = (-qb - math.sqrt(disc)) / (2.0 * qa)
    return base + u * direction


def _chain_ik_terms(geom: ChainGeometry, x: np.ndarray):
    """Stacked per-chain quantities: hip-relative foot p, rho^2, cos(q - alpha)."""
    p = _CHAIN_ROT_T @ np.asarray(x, dtype=float)  # (chain, 3)
    p[:, 1] -= geom.r
    rho_sq = p[:, 1] * p[:, 1] + p[:, 2] * p[:, 2]
    if np.any(rho_sq < 1e-20):
        raise DegenerateError("foot on a chain pivot axis; hip angle undefined")
    n = np.einsum("ij,ij->i", p, p) + geom.D ** 2 - geom.d ** 2
    cos_term = n / (2.0 * geom.D * np.sqrt(rho_sq))
    return p, rho_sq, n, cos_term


def ik_parallel(geom: ChainGeometry, x: np.ndarray) -> np.ndarray:
    """Hip angles reaching foot position x (knee-out assembly)."""
    p, _, _, c = _chain_ik_terms(geom, x)
    if np.any(np.abs(c) > 1.0 + 1e-12):
        raise UnreachableError("foot outside the reachable shell of a chain")
    q = np.arctan2(p[:, 2], p[:, 1]) + np.arccos(np.clip(c, -1.0, 1.0))
    return wrap_angle(q)


def ik_jacobian_parallel(geom: ChainGeometry, x: np.ndarray) -> np.ndarray:
    """Analytic d(ik_parallel)/dx, rows = chains, evaluated at foot position x."""
    p, rho_sq, n, c = _chain_ik_terms(geom, x)
    sin_sq = 1.0 - c * c
    if np.any(sin_sq < 1e-12):
        raise SingularError("knee-fold boundary; hip angle derivative diverges")
    rho = np.sqrt(rho_sq)
    planar = p.copy()
    planar[:, 0] = 0.0
    dalpha = np.zeros((3, 3))
    dalpha[:, 1] = -p[:, 2] / rho_sq
    dalpha[:, 2] = p[:, 1] / rho_sq
    dc = p / (geom.D * rho)[:, None] - (n / (2.0 * geom.D * rho ** 3))[:, None] * planar
    dq_dp = dalpha - dc / np.sqrt(sin_sq)[:, None]
    # row i: dq_dp[i] @ R_i^T
    return np.einsum("ci,cij->cj", dq_dp, _CHAIN_ROT_T)


def jacobian_parallel(geom: ChainGeometry, q: np.ndarray) -> np.ndarray:
    """Foot-velocity Jacobian of the parallel leg: xdot = J @ qdot."""
    x = fk_parallel(geom, q)
    m = ik_jacobian_parallel(geom, x)
    if abs(np.linalg.det(m)) < 1e-10:
        raise SingularError("parallel leg at a singular configuration")
    return np.linalg.inv(m)


def fk_serial(geom: ChainGeometry, q: np.ndarray) -> np.ndarray:
    """Foot position of the serial template; q = (roll, pitch, ext)."""
    roll, pitch, ext = np.asarray(q, dtype=float)
    cr, sr = math.cos(roll), math.sin(roll)
    cp, sp = math.cos(pitch), math.sin(pitch)
    return ext * np.array([sp * cr, sr, -cp * cr])


def ik_serial(geom: ChainGeometry, x: np.ndarray) -> np.ndarray:
    """Serial joints reaching foot x, branch roll, pitch in (-pi/2, pi/2)."""
    x = np.asarray(x, dtype=float)
    ext = math.sqrt(float(x @ x))
    if not geom.ext_min - 1e-9 <= ext <= geom.ext_max + 1e-9:
        raise UnreachableError(f"foot distance {ext:.4f} outside extension limits")
    ext = min(max(ext, geom.ext_min), geom.ext_max)
    if x[2] > 0.0:
        raise UnreachableError("foot above the hip plane is outside the branch")
    plane = math.hypot(x[0], x[2])
    if plane < 1e-12:
        raise DegenerateError("foot on the lateral axis; pitch undefined")
    roll = math.atan2(x[1], plane)
    pitch = math.atan2(x[0], -x[2])
    return np.array([roll, pitch, ext])


def jacobian_serial(geom: ChainGeometry, q: np.ndarray) -> np.ndarray:
    """Analytic foot-velocity Jacobian of the serial template."""
    roll, pitch, ext = np.asarray(q, dtype=float)
    cr, sr = math.cos(roll), math.sin(roll)
    cp, sp = math.cos(pitch), math.sin(pitch)
    n = np.array([sp * cr, sr, -cp * cr])
    dn_droll = np.array([-sp * sr, cr, cp * sr])
    dn_dpitch = np.array([cp * cr, 0.0, sp * cr])
    return np.column_stack([ext * dn_droll, ext * dn_dpitch, n])


def branch_margin(geom: ChainGeometry, x: np.ndarray) -> float:
    """Smallest sin(q_i - alpha_i) over chains; <= 0 means outside/ambiguous."""
    try:
        _, _, _, c = _chain_ik_terms(geom, x)
    except DegenerateError:
        return -1.0
    if np.any(np.abs(c) > 1.0):
        return -1.0
    return math.sqrt(max(0.0, float(np.min(1.0 - c * c))))


def in_workspace(geom: ChainGeometry, q: np.ndarray, margin: float = BRANCH_MARGIN) -> bool:
    """True when q is inside limits and clear of the knee-fold boundary."""
    q = np.asarray(q, dtype=float)
    if np.any(q < geom.q_min) or np.any(q > geom.q_max):
        return False
    try:
        x = fk_parallel(geom, q)
    except KinematicsError:
        return False
    if branch_margin(geom, x) < margin:
        return False
    # FK root selection and the knee-out IK branch must agree.
    return bool(np.max(np.abs(wrap_angle(ik_parallel(geom, x) - q))) < 1e-7)


def joint_limits_clip(geom: ChainGeometry, q: np.ndarray) -> np.ndarray:
    """Clip hip-angle targets into the actuator travel range."""
    return np.clip(np.asarray(q, dtype=float), geom.q_min, geom.q_max)


def sample_workspace(geom: ChainGeometry, rng: np.random.Generator, n: int) -> np.ndarray:
    """Rejection-sample n hip-angle triples uniform over the usable workspace."""
    out = np.empty((n, 3))
    count = 0
    while count < n:
        q = rng.uniform(geom.q_min, geom.q_max, 3)
        if in_workspace(geom, q):
            out[count] = q
            count += 1
    return out


def clamp_foot_target(geom: ChainGeometry, x: np.ndarray, margin: float = BRANCH_MARGIN) -> np.ndarray:
    """Project an out-of-reach foot target back into the workspace.

    Shrinks the target toward the symmetric stance point until every chain
    clears the reachability margin; bisection keeps the result near the
    boundary rather than collapsing to the nominal pose.
    """
    x = np.asarray(x, dtype=float)
    anchor = np.array([0.0, 0.0, -geom.nominal_ext])
    if branch_margin(geom, x) >= margin:
        return x
    lo, hi = 0.0, 1.0  # fraction of the way from anchor to x
    for _ in range(40):
        mid = 0.5 * (lo + hi)
        if branch_margin(geom, anchor + mid * (x - anchor)) >= margin:
            lo = mid
        else:
            hi = mid
    return anchor + lo * (x - anchor)
