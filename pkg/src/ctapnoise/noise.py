"""Noise classes, quasistatic sampling and Markovian (Lindblad) dephasing.

Quasistatic noise shifts levels 1 and 2 by ``x1, x2`` drawn once per run.
Markovian noise ``x2(t) = eta * x1(t)`` with white ``x1`` averages to a
Lindblad equation with the diagonal jump operator ``O = |1><1| + eta |2><2|``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numba
import numpy as np

from .quantum import (
    DEFAULT_STEPS,
    ZERO_DETUNING,
    Detunings,
    DriveCondition,
    path_efficiency,
    pulse_values,
)

SIGMA1 = 17.6
DEFAULT_GAMMA = 1.0
LINDBLAD_STEPS = 4000

QUASISTATIC = ("1", "2", "3")
MARKOVIAN = ("4a", "4b", "4")
CLASS_TAGS = QUASISTATIC + MARKOVIAN

CLASS_NAMES = {
    "1": "NM-correlated",
    "2": "NM-anticorrelated",
    "3": "NM-uncorrelated",
    "4a": "M-correlated",
    "4b": "M-anticorrelated",
    "4": "M-merged",
}

# admissible eta intervals per class
ETA_RANGE = {
    "1": (0.1, 5.0),
    "2": (-5.0, -0.1),
    "4a": (0.1, 5.0),
    "4b": (-5.0, -0.1),
    "4": (-5.0, 5.0),
}
SIGMA2_FACTOR = 5.0


@dataclass(frozen=True)
class NoiseSpec:
    """A noise class together with its parameters.

    ``eta`` is required for classes 1, 2, 4a, 4b and 4 and must be ``None``
    for class 3; ``sigma2`` is required for class 3 only; ``gamma`` is
    required for the Markovian classes only.
    """

    class_tag: str
    eta: float | None = None
    sigma1: float = SIGMA1
    sigma2: float | None = None
    gamma: float | None = None

    def __post_init__(self):
        tag = self.class_tag
        if tag not in CLASS_TAGS:
            raise ValueError(f"unknown noise class {tag!r}")
        if not self.sigma1 > 0:
            raise ValueError("sigma1 must be positive")
        if tag == "3":
            if self.eta is not None:
                raise ValueError("class 3 (uncorrelated) takes no eta")
            if self.sigma2 is None or not 0 < self.sigma2 <= SIGMA2_FACTOR * self.sigma1 * (1 + 1e-12):
                raise ValueError("class 3 needs sigma2 in (0, 5 sigma1]")
        else:
            if self.eta is None:
                raise ValueError(f"class {tag} needs eta")
            lo, hi = ETA_RANGE[tag]
            if not lo <= self.eta <= hi:
                raise ValueError(f"eta={self.eta} outside [{lo}, {hi}] for class {tag}")
            if self.sigma2 is not None:
                raise ValueError(f"class {tag} takes no sigma2")
        if tag in MARKOVIAN:
            if self.gamma is None or not self.gamma >= 0:
                raise ValueError("Markovian classes need gamma >= 0")
        elif self.gamma is not None:
            raise ValueError("quasistatic classes take no gamma")

    @property
    def markovian(self) -> bool:
        return self.class_tag in MARKOVIAN

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseSpec":
        return cls(**d)


@dataclass(frozen=True)
class NoiseRealization:
    x1: float
    x2: float


def sample_quasistatic(spec: NoiseSpec, rng: np.random.Generator, size=None):
    """Draw quasistatic shifts for ``spec``.

    Returns a :class:`NoiseRealization` when ``size`` is None, otherwise a
    pair of arrays ``(x1, x2)``.
    """
    if spec.markovian:
        raise ValueError(f"class {spec.class_tag} is Markovian; no quasistatic draw")
    n = 1 if size is None else size
    x1 = rng.normal(0.0, spec.sigma1, n)
    if spec.class_tag == "3":
        x2 = rng.normal(0.0, spec.sigma2, n)
    else:
        x2 = spec.eta * x1
    if size is None:
        return NoiseRealization(float(x1[0]), float(x2[0]))
    return x1, x2


def jump_operator(eta: float) -> np.ndarray:
    return np.diag([0.0, 1.0, float(eta)])


@numba.njit(cache=True)
def _lindblad_rhs(rho, out, hp, hs, d1, d2, dec):
    # H = [[0, hp, 0], [hp, d1, hs], [0, hs, d2]], dec[j, k] = (gamma / 2) (o_j - o_k)^2
    h = np.zeros((3, 3))
    h[0, 1] = hp
    h[1, 0] = hp
    h[1, 1] = d1
    h[1, 2] = hs
    h[2, 1] = hs
    h[2, 2] = d2
    for j in range(3):
        for k in range(3):
            acc = 0j
            for m in range(3):
                acc += h[j, m] * rho[m, k] - rho[j, m] * h[m, k]
            out[j, k] = -1j * acc - dec[j, k] * rho[j, k]


@numba.njit(cache=True)
def _lindblad_run(rho, hp, hs, d1, d2, dec, dt, path):
    """Classical RK4; ``hp, hs`` are sampled on the half-step grid."""
    n_steps = (hp.shape[0] - 1) // 2
    k1 = np.empty((3, 3), np.complex128)
    k2 = np.empty((3, 3), np.complex128)
    k3 = np.empty((3, 3), np.complex128)
    k4 = np.empty((3, 3), np.complex128)
    tmp = np.empty((3, 3), np.complex128)
    record = path.shape[0] > 1
    if record:
        path[0] = rho
    for n in range(n_steps):
        i0 = 2 * n
        _lindblad_rhs(rho, k1, hp[i0], hs[i0], d1, d2, dec)
        for j in range(3):
            for k in range(3):
                tmp[j, k] = rho[j, k] + 0.5 * dt * k1[j, k]
        _lindblad_rhs(tmp, k2, hp[i0 + 1], hs[i0 + 1], d1, d2, dec)
        for j in range(3):
            for k in range(3):
                tmp[j, k] = rho[j, k] + 0.5 * dt * k2[j, k]
        _lindblad_rhs(tmp, k3, hp[i0 + 1], hs[i0 + 1], d1, d2, dec)
        for j in range(3):
            for k in range(3):
                tmp[j, k] = rho[j, k] + dt * k3[j, k]
        _lindblad_rhs(tmp, k4, hp[i0 + 2], hs[i0 + 2], d1, d2, dec)
        for j in range(3):
            for k in range(3):
                rho[j, k] += dt / 6.0 * (k1[j, k] + 2.0 * k2[j, k] + 2.0 * k3[j, k] + k4[j, k])
        # hermitize against round-off drift
        for j in range(3):
            rho[j, j] = rho[j, j].real
            for k in range(j + 1, 3):
                avg = 0.5 * (rho[j, k] + np.conj(rho[k, j]))
                rho[j, k] = avg
                rho[k, j] = np.conj(avg)
        if record:
            path[n + 1] = rho


@numba.njit(cache=True, parallel=True)
def _lindblad_batch(etas, gamma, hp, hs, d1, d2, dt):
    n = etas.shape[0]
    out = np.empty(n)
    dummy = np.empty((1, 3, 3), np.complex128)
    for i in numba.prange(n):
        o = np.array([0.0, 1.0, etas[i]])
        dec = np.empty((3, 3))
        for j in range(3):
            for k in range(3):
                dec[j, k] = 0.5 * gamma * (o[j] - o[k]) ** 2
        rho = np.zeros((3, 3), np.complex128)
        rho[0, 0] = 1.0
        _lindblad_run(rho, hp, hs, d1, d2, dec, dt, dummy)
        out[i] = rho[2, 2].real
    return out


def _stable_steps(drive: DriveCondition, det: Detunings, eta_max: float, gamma: float, steps: int) -> int:
    # keep |lambda| dt <= 1 inside the RK4 stability region
    span = drive.t_end - drive.t_start
    spectral = drive.omega_p_max + drive.omega_s_max + abs(det.delta_p) + abs(det.delta)
    decay = 0.5 * gamma * (1.0 + eta_max) ** 2
    return max(int(steps), int(math.ceil(span * (spectral + decay))))


def _half_step_pulses(drive: DriveCondition, steps: int):
    t = np.linspace(drive.t_start, drive.t_end, 2 * steps + 1)
    omega_p, omega_s = pulse_values(t, drive)
    return 0.5 * omega_p, 0.5 * omega_s, (drive.t_end - drive.t_start) / steps


def check_density_matrix(rho, tol: float = 1e-8) -> None:
    rho = np.asarray(rho)
    if rho.shape != (3, 3):
        raise ValueError("density matrix must be 3x3")
    if np.abs(rho - rho.conj().T).max() > 1e-10:
        raise ValueError("density matrix is not Hermitian")
    if abs(np.trace(rho).real - 1.0) > tol:
        raise ValueError("density matrix trace differs from 1")
    if np.linalg.eigvalsh(0.5 * (rho + rho.conj().T)).min() < -tol:
        raise ValueError("density matrix is not positive semidefinite")


def lindblad_propagate(drive: DriveCondition, eta: float, gamma: float, initial=None,
                       steps: int = LINDBLAD_STEPS, det: Detunings = ZERO_DETUNING,
                       return_path: bool = False):
    """Integrate the dephasing master equation over the drive window.

    Returns the final density matrix, or ``(times, path)`` with the state
    after every step when ``return_path`` is set.  ``steps`` is raised
    automatically if a large ``gamma * eta^2`` would leave the RK4 stability
    region.
    """
    if not gamma >= 0:
        raise ValueError("gamma must be >= 0")
    if initial is None:
        initial = np.diag([1.0, 0.0, 0.0]).astype(complex)
    rho = np.array(initial, dtype=np.complex128)
    check_density_matrix(rho)
    steps = _stable_steps(drive, det, abs(eta), gamma, steps)
    hp, hs, dt = _half_step_pulses(drive, steps)
    o = np.array([0.0, 1.0, float(eta)])
    dec = 0.5 * gamma * (o[:, None] - o[None, :]) ** 2
    path = np.empty((steps + 1 if return_path else 1, 3, 3), np.complex128)
    _lindblad_run(rho, hp, hs, float(det.delta_p), float(det.delta), dec, dt, path)
    if return_path:
        return np.linspace(drive.t_start, drive.t_end, steps + 1), path
    return rho


def lindblad_efficiency(drive: DriveCondition, etas, gamma: float,
                        steps: int = LINDBLAD_STEPS, det: Detunings = ZERO_DETUNING) -> np.ndarray:
    """Final ``<2|rho|2>`` from ``|0><0|`` for an array of correlation ratios."""
    if not gamma >= 0:
        raise ValueError("gamma must be >= 0")
    etas = np.ascontiguousarray(np.atleast_1d(np.asarray(etas, dtype=float)))
    steps = _stable_steps(drive, det, float(np.abs(etas).max(initial=0.0)), gamma, steps)
    hp, hs, dt = _half_step_pulses(drive, steps)
    out = _lindblad_batch(etas, float(gamma), hp, hs, float(det.delta_p), float(det.delta), dt)
    return np.clip(out, 0.0, 1.0)


def white_noise_efficiency(drive: DriveCondition, eta: float, gamma: float, noise_dt: float,
                           n_traj: int, rng: np.random.Generator, substeps: int | None = None,
                           chunk: int = 1000):
    """Average target population over explicit white-noise trajectories.

    ``x1`` is held constant on intervals of length ``noise_dt`` with
    variance ``gamma / noise_dt`` and ``x2 = eta * x1``.  Returns
    ``(mean, standard_error)``.  Independent of the master equation, so it
    serves as a check on it.
    """
    span = drive.t_end - drive.t_start
    n_noise = int(round(span / noise_dt))
    if not math.isclose(n_noise * noise_dt, span, rel_tol=1e-9):
        raise ValueError("noise_dt must divide the time window")
    if substeps is None:
        substeps = max(1, -(-DEFAULT_STEPS // n_noise))
    steps = n_noise * substeps
    scale = math.sqrt(gamma / noise_dt)
    values = []
    remaining = n_traj
    while remaining > 0:
        m = min(chunk, remaining)
        x1 = np.repeat(rng.normal(0.0, scale, (m, n_noise)), substeps, axis=1)
        values.append(path_efficiency(drive, x1, eta * x1, steps=steps))
        remaining -= m
    values = np.concatenate(values)
    return float(values.mean()), float(values.std(ddof=1) / math.sqrt(n_traj))
