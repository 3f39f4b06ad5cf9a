"""Extended Kalman filter over the relative-configuration group.

The mean lives on the group and is propagated with the exact flow of the
communicated body velocity, so prediction adds no discretization error of
its own.  The covariance lives in the coordinate chart (p, theta) and uses
the discrete linearization from `lie_group.step_jacobian`.  Updates fuse
half squared distances plus the measured heading; the heading innovation is
wrapped to (-pi, pi] while the stored heading stays unwrapped.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lie_group import AlgebraElement, GroupElement, step_body_velocity, step_jacobian, wrap_angle
from .observability import observation, observation_jacobian

__all__ = [
    "EstimatorState",
    "NoiseConfig",
    "SingularUpdateError",
    "initialize",
    "predict",
    "update",
]


class SingularUpdateError(RuntimeError):
    """Innovation covariance was not invertible at working precision."""


@dataclass(frozen=True)
class NoiseConfig:
    """Process power spectral densities and measurement variances."""

    process_position_psd: float = 1e-4
    process_heading_psd: float = 1e-6
    meas_distance_var: float = 1e-4
    meas_heading_var: float = 1e-6

    def __post_init__(self):
        if self.process_position_psd < 0 or self.process_heading_psd < 0:
            raise ValueError("process PSDs must be non-negative")
        if self.meas_distance_var <= 0 or self.meas_heading_var <= 0:
            raise ValueError("measurement variances must be positive")


@dataclass(eq=False)
class EstimatorState:
    """Filter mean (a group element) and coordinate covariance."""

    mean: GroupElement
    covariance: np.ndarray

    def __post_init__(self):
        dim = 2 * self.mean.n + 1
        cov = np.array(self.covariance, dtype=float)
        if cov.shape != (dim, dim):
            raise ValueError(f"covariance must be {dim}x{dim}, got {cov.shape}")
        skew = np.max(np.abs(cov - cov.T)) if cov.size else 0.0
        if skew > 1e-9 * (1.0 + np.max(np.abs(cov))):
            raise ValueError("covariance is not symmetric")
        cov = 0.5 * (cov + cov.T)
        cov.setflags(write=False)
        object.__setattr__(self, "covariance", cov)


def _trusted_state(mean: GroupElement, cov: np.ndarray) -> EstimatorState:
    # hot-path constructor for covariances this module just computed;
    # same symmetrize-and-freeze as __post_init__ without the re-validation
    state = object.__new__(EstimatorState)
    sym = 0.5 * (cov + cov.T)
    sym.setflags(write=False)
    state.mean = mean
    state.covariance = sym
    return state


def predict(state: EstimatorState, xi: AlgebraElement, dt: float,
            noise: NoiseConfig) -> EstimatorState:
    """Propagate mean and covariance through one sampling interval.

    The mean follows the exact group flow of xi; the covariance advances as
    F P F^T + dt * diag(PSDs) with F the discrete linearization at the
    current mean.
    """
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    n = state.mean.n
    if xi.n != n:
        raise ValueError(f"velocity tracks {xi.n} neighbors, state tracks {n}")
    mean = step_body_velocity(state.mean, xi, dt)
    f = step_jacobian(state.mean.theta, xi, dt)
    qd = dt * np.concatenate([
        np.full(2 * n, noise.process_position_psd),
        [noise.process_heading_psd],
    ])
    cov = f @ state.covariance @ f.T + np.diag(qd)
    return _trusted_state(mean, cov)


def update(state: EstimatorState, y, noise: NoiseConfig) -> EstimatorState:
    """Fuse one measurement vector (n half squared distances, then heading).

    Uses the Joseph-form covariance update and re-symmetrizes, so the
    covariance stays positive semidefinite for any gain.
    """
    y = np.asarray(y, dtype=float).reshape(-1)
    n = state.mean.n
    if y.size != n + 1:
        raise ValueError(f"expected {n + 1} measurements, got {y.size}")
    p_cov = state.covariance
    h = observation_jacobian(state.mean)
    rdiag = np.concatenate([np.full(n, noise.meas_distance_var), [noise.meas_heading_var]])
    s = h @ p_cov @ h.T + np.diag(rdiag)
    if not np.all(np.isfinite(s)):
        raise SingularUpdateError("innovation covariance is not finite")
    try:
        gain = np.linalg.solve(s, h @ p_cov).T
    except np.linalg.LinAlgError as exc:
        raise SingularUpdateError(f"innovation covariance not invertible: {exc}") from exc

    innovation = y - observation(state.mean)
    innovation[-1] = wrap_angle(innovation[-1])
    delta = gain @ innovation
    mean = GroupElement(state.mean.p + delta[:-1], state.mean.theta + delta[-1])

    ikh = np.eye(2 * n + 1) - gain @ h
    cov = ikh @ p_cov @ ikh.T + gain @ np.diag(rdiag) @ gain.T
    return _trusted_state(mean, cov)


def initialize(truth: GroupElement, offset_bound: float, seed,
               initial_var: float | None = None, heading_var: float | None = None,
               noise: NoiseConfig | None = None) -> EstimatorState:
    """Seed a filter near the true configuration.

    Each position coordinate is offset by an independent uniform draw from
    [-offset_bound, offset_bound]; the heading starts at its true (measured)
    value.  The position variance defaults to offset_bound^2 / 3, the
    variance of that draw; the heading variance defaults to the heading
    measurement variance when a NoiseConfig is supplied.  `seed` may be an
    integer or an existing numpy Generator.
    """
    if offset_bound < 0:
        raise ValueError(f"offset_bound must be non-negative, got {offset_bound}")
    if initial_var is not None and initial_var <= 0:
        raise ValueError(f"initial_var must be positive, got {initial_var}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    n = truth.n
    offsets = rng.uniform(-offset_bound, offset_bound, size=2 * n)
    var = initial_var if initial_var is not None else offset_bound ** 2 / 3.0
    if heading_var is not None:
        hvar = heading_var
    elif noise is not None:
        hvar = noise.meas_heading_var
    else:
        hvar = var
    cov = np.diag(np.concatenate([np.full(2 * n, var), [hvar]]))
    return EstimatorState(GroupElement(truth.p + offsets, truth.theta), cov)
