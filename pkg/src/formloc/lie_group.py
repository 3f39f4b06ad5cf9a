"""Relative-configuration group of one agent and its tracked neighbors.

An agent tracking n neighbors carries the state (p, theta): p stacks the n
planar neighbor offsets in the world frame (block k points from the agent
to neighbor k) and theta is the agent heading.  These states form a matrix
group under

    (p, theta) * (p', theta') = ((R(theta) p'_k + p_k)_k, theta + theta')

with identity (0, 0); a single shared rotation acts on every offset block.
Body-frame velocities xi = (v, w) drive the kinematics

    dp_k/dt = R(theta) v_k,      dtheta/dt = w,

and for constant xi the flow is exact: q(t) = q(0) * exp(t * xi).  That
closed form is what `step_body_velocity` uses, so propagation carries no
integrator drift.  Headings are stored unwrapped; `wrap_angle` reduces
angle differences to (-pi, pi] where a canonical representative matters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "AlgebraElement",
    "GroupElement",
    "compose",
    "embed",
    "embed_algebra",
    "exp",
    "identity",
    "inverse",
    "left_invariant_basis",
    "rotation",
    "step_body_velocity",
    "step_jacobian",
    "wrap_angle",
]

# Below this |w| the closed-form rotation integral switches to its series
# branch; the two branches agree to O(w^3) at the boundary.
_SMALL_W = 1e-8


def rotation(theta: float) -> np.ndarray:
    """2x2 counter-clockwise rotation matrix."""
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def wrap_angle(angle):
    """Reduce an angle (or array of angles) to the interval (-pi, pi]."""
    a = np.asarray(angle, dtype=float)
    wrapped = np.pi - np.remainder(np.pi - a, 2.0 * np.pi)
    if np.ndim(angle) == 0:
        return float(wrapped)
    return wrapped


@dataclass(frozen=True)
class GroupElement:
    """Configuration (p, theta) of an agent with n >= 1 tracked neighbors.

    p has length 2n; block p[2k:2k+2] is the world-frame offset from the
    agent to neighbor k.  theta is the heading in radians, unwrapped.
    """

    p: np.ndarray
    theta: float

    def __post_init__(self):
        p = np.array(self.p, dtype=float).reshape(-1)
        if p.size < 2 or p.size % 2 != 0:
            raise ValueError(f"p must stack n >= 1 planar offsets, got length {p.size}")
        p.setflags(write=False)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "theta", float(self.theta))

    @property
    def n(self) -> int:
        return self.p.size // 2

    def offset(self, k: int) -> np.ndarray:
        """World-frame offset of neighbor k."""
        return self.p[2 * k : 2 * k + 2]

    def offsets(self) -> np.ndarray:
        """All neighbor offsets as an (n, 2) view."""
        return self.p.reshape(-1, 2)


@dataclass(frozen=True)
class AlgebraElement:
    """Body-frame velocity (v, w): stacked neighbor rates plus heading rate."""

    v: np.ndarray
    w: float

    def __post_init__(self):
        v = np.array(self.v, dtype=float).reshape(-1)
        if v.size < 2 or v.size % 2 != 0:
            raise ValueError(f"v must stack n >= 1 planar rates, got length {v.size}")
        v.setflags(write=False)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "w", float(self.w))

    @property
    def n(self) -> int:
        return self.v.size // 2


def identity(n: int) -> GroupElement:
    """Identity configuration for n tracked neighbors."""
    if n < 1:
        raise ValueError(f"need at least one neighbor, got n={n}")
    return GroupElement(np.zeros(2 * n), 0.0)


def _check_same_n(a, b):
    if a.n != b.n:
        raise ValueError(f"neighbor counts differ: {a.n} vs {b.n}")


def compose(q: GroupElement, q2: GroupElement) -> GroupElement:
    """Group product q * q2: rotate q2's offsets by q.theta, then translate."""
    _check_same_n(q, q2)
    p = (q2.offsets() @ rotation(q.theta).T).ravel() + q.p
    return GroupElement(p, q.theta + q2.theta)


def inverse(q: GroupElement) -> GroupElement:
    """Group inverse: (p, theta)^-1 = (-R(-theta) p, -theta)."""
    p = -(q.offsets() @ rotation(-q.theta).T).ravel()
    return GroupElement(p, -q.theta)


def exp(xi: AlgebraElement) -> GroupElement:
    """Exponential map: the time-1 flow of the constant body velocity xi.

    Integrating dp_k/dt = R(t w) v_k from 0 to 1 gives per block

        p_k = a(w) v_k + b(w) J v_k,   a = sin(w)/w,  b = (1 - cos(w))/w,

    with J the quarter-turn.  b is evaluated as 2 sin(w/2)^2 / w to avoid
    cancellation; below _SMALL_W both coefficients switch to their series.
    """
    w = xi.w
    v = xi.v.reshape(-1, 2)
    if abs(w) < _SMALL_W:
        a = 1.0 - w * w / 6.0
        b = 0.5 * w
    else:
        a = np.sin(w) / w
        b = 2.0 * np.sin(0.5 * w) ** 2 / w
    px = a * v[:, 0] - b * v[:, 1]
    py = b * v[:, 0] + a * v[:, 1]
    return GroupElement(np.column_stack([px, py]).ravel(), w)


def left_invariant_basis(q: GroupElement) -> np.ndarray:
    """Coordinate expressions of the left-invariant frame at q, as columns.

    Columns 2k, 2k+1 are the two translational fields of neighbor k
    (heading-aligned and its quarter-turn); the last column is d/dtheta.
    The result is block-diag(R(theta), ..., R(theta), 1), so it maps body
    velocities (v, w) to coordinate velocities (dp/dt, dtheta/dt).
    """
    n = q.n
    basis = np.zeros((2 * n + 1, 2 * n + 1))
    basis[: 2 * n, : 2 * n] = np.kron(np.eye(n), rotation(q.theta))
    basis[2 * n, 2 * n] = 1.0
    return basis


def step_body_velocity(q: GroupElement, xi: AlgebraElement, dt: float) -> GroupElement:
    """Advance q by the exact flow of the constant body velocity xi over dt."""
    _check_same_n(q, xi)
    if dt < 0:
        raise ValueError(f"dt must be non-negative, got {dt}")
    return compose(q, exp(AlgebraElement(dt * xi.v, dt * xi.w)))


def step_jacobian(theta: float, xi: AlgebraElement, dt: float) -> np.ndarray:
    """Discrete linearization I + dt * df/d(p, theta) of the kinematics.

    The offset rates R(theta) v_k depend on the state only through theta,
    so the only off-diagonal entries are d(dp_k/dt)/dtheta = R(theta + pi/2) v_k
    in the last column.  Shared by the estimator predict step and the
    empirical observability Gramian.
    """
    n = xi.n
    f = np.eye(2 * n + 1)
    f[: 2 * n, 2 * n] = dt * (xi.v.reshape(-1, 2) @ rotation(theta + 0.5 * np.pi).T).ravel()
    return f


def embed(q: GroupElement) -> np.ndarray:
    """Homogeneous-matrix embedding: n diagonal copies of R(theta), p in the
    last column, 1 in the corner.  Group products become matrix products."""
    n = q.n
    m = np.zeros((2 * n + 1, 2 * n + 1))
    m[: 2 * n, : 2 * n] = np.kron(np.eye(n), rotation(q.theta))
    m[: 2 * n, 2 * n] = q.p
    m[2 * n, 2 * n] = 1.0
    return m


def embed_algebra(xi: AlgebraElement) -> np.ndarray:
    """Matrix form of a body velocity; its matrix exponential embeds exp(xi)."""
    n = xi.n
    j = np.array([[0.0, -xi.w], [xi.w, 0.0]])
    m = np.zeros((2 * n + 1, 2 * n + 1))
    m[: 2 * n, : 2 * n] = np.kron(np.eye(n), j)
    m[: 2 * n, 2 * n] = xi.v
    return m
