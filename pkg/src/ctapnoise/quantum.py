"""Three-level CTAP/STIRAP dynamics with Gaussian pump and Stokes pulses.

Basis ordering is ``|0>, |1>, |2>`` and units are set by the pulse width
``T = 1``: times are in ``T``, rates and energies in ``1/T`` (hbar = 1).

Pure states are propagated with a fourth-order commutator-free Magnus
scheme: every step is the product of two exact exponentials of real
symmetric tridiagonal generators, so the evolution is unitary up to
round-off.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numba
import numpy as np

DEFAULT_STEPS = 500
MIN_STEPS = 200

# Gauss-Legendre nodes and mixing weights of the two-exponential CF4 scheme
_SQ3 = math.sqrt(3.0)
_C1, _C2 = 0.5 - _SQ3 / 6.0, 0.5 + _SQ3 / 6.0
_A1, _A2 = 0.25 + _SQ3 / 6.0, 0.25 - _SQ3 / 6.0


@dataclass(frozen=True)
class DriveCondition:
    """Peak amplitudes, overlap delay and time window of one protocol run."""

    omega_p_max: float
    omega_s_max: float
    tau: float = 0.7
    t_start: float = -5.0
    t_end: float = 5.0
    width: float = 1.0
    name: str = field(default="", compare=False)

    def __post_init__(self):
        # zero amplitudes are allowed for frozen-population checks
        if not (self.omega_p_max >= 0 and self.omega_s_max >= 0):
            raise ValueError("pulse amplitudes must be non-negative")
        if not self.width > 0:
            raise ValueError("pulse width must be positive")
        if not self.t_start < self.t_end:
            raise ValueError("t_start must precede t_end")

    @property
    def global_margin(self) -> float:
        """Smallest of ``Omega_max * tau`` over the two pulses."""
        return min(self.omega_p_max, self.omega_s_max) * self.tau

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "omega_p_max": self.omega_p_max,
            "omega_s_max": self.omega_s_max,
            "tau": self.tau,
            "t_start": self.t_start,
            "t_end": self.t_end,
            "width": self.width,
        }


@dataclass(frozen=True)
class Detunings:
    delta_p: float = 0.0
    delta: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.delta_p) and math.isfinite(self.delta)):
            raise ValueError("detunings must be finite")


ZERO_DETUNING = Detunings()

DRIVE_EQUAL = DriveCondition(50.0, 50.0, name="equal")
DRIVE_PUMP = DriveCondition(20 * math.sqrt(10), 10 * math.sqrt(10), name="pump")
DRIVE_STOKES = DriveCondition(10 * math.sqrt(10), 20 * math.sqrt(10), name="stokes")

#: The three driving conditions whose efficiencies form a feature vector,
#: in feature order (p = s, p > s, p < s).
FEATURE_DRIVES = (DRIVE_EQUAL, DRIVE_PUMP, DRIVE_STOKES)

DRIVES = {
    "equal": DRIVE_EQUAL,
    "pump": DRIVE_PUMP,
    "stokes": DRIVE_STOKES,
    "i": DRIVE_EQUAL,
    "ii": DRIVE_PUMP,
    "iii": DRIVE_STOKES,
}


def get_drive(name: str) -> DriveCondition:
    try:
        return DRIVES[name.lower()]
    except KeyError:
        raise ValueError(f"unknown drive {name!r}; choose from {sorted(DRIVES)}") from None


def pulse_values(t, drive: DriveCondition):
    """Pump and Stokes Rabi frequencies at time(s) ``t``.

    The Stokes pulse peaks at ``-tau`` and the pump at ``+tau``
    (counterintuitive ordering).
    """
    t = np.asarray(t, dtype=float)
    omega_p = drive.omega_p_max * np.exp(-(((t - drive.tau) / drive.width) ** 2))
    omega_s = drive.omega_s_max * np.exp(-(((t + drive.tau) / drive.width) ** 2))
    if omega_p.ndim == 0:
        return float(omega_p), float(omega_s)
    return omega_p, omega_s


def hamiltonian(t: float, drive: DriveCondition, det: Detunings = ZERO_DETUNING,
                x1: float = 0.0, x2: float = 0.0) -> np.ndarray:
    """Total Hamiltonian including the diagonal noise shifts ``x1, x2``."""
    omega_p, omega_s = pulse_values(t, drive)
    h = np.zeros((3, 3))
    h[1, 1] = det.delta_p + x1
    h[2, 2] = det.delta + x2
    h[0, 1] = h[1, 0] = 0.5 * omega_p
    h[1, 2] = h[2, 1] = 0.5 * omega_s
    return h


@lru_cache(maxsize=64)
def _pulse_nodes(drive: DriveCondition, steps: int):
    """Pulse values at the two Gauss-Legendre nodes of every step."""
    dt = (drive.t_end - drive.t_start) / steps
    tn = drive.t_start + dt * np.arange(steps)
    pa, sa = pulse_values(tn + _C1 * dt, drive)
    pb, sb = pulse_values(tn + _C2 * dt, drive)
    # generator couplings for the two exponentials, already scaled by dt/2
    first_p = 0.5 * dt * (_A1 * pa + _A2 * pb)
    first_s = 0.5 * dt * (_A1 * sa + _A2 * sb)
    second_p = 0.5 * dt * (_A2 * pa + _A1 * pb)
    second_s = 0.5 * dt * (_A2 * sa + _A1 * sb)
    out = tuple(np.ascontiguousarray(a) for a in (first_p, first_s, second_p, second_s))
    for a in out:
        a.flags.writeable = False
    return out + (dt,)


@numba.njit(cache=True)
def _apply_exp(ur, ui, hp, hs, h1, h2):
    """In place ``psi <- exp(-i A) psi`` for A = [[0,hp,0],[hp,h1,hs],[0,hs,h2]].

    Taylor series with scaling so that every stage has norm <= 1; the series
    is summed until the term drops below 1e-18, which makes the stage exact
    to round-off.
    """
    norm = abs(hp) + abs(hs) + max(abs(h1), abs(h2))
    m = 1
    while norm > m:
        m *= 2
    hp /= m
    hs /= m
    h1 /= m
    h2 /= m
    for _ in range(m):
        tr0, tr1, tr2 = ur[0], ur[1], ur[2]
        ti0, ti1, ti2 = ui[0], ui[1], ui[2]
        for k in range(1, 60):
            ar0 = hp * tr1
            ar1 = hp * tr0 + h1 * tr1 + hs * tr2
            ar2 = hs * tr1 + h2 * tr2
            ai0 = hp * ti1
            ai1 = hp * ti0 + h1 * ti1 + hs * ti2
            ai2 = hs * ti1 + h2 * ti2
            f = 1.0 / k
            tr0, tr1, tr2 = ai0 * f, ai1 * f, ai2 * f
            ti0, ti1, ti2 = -ar0 * f, -ar1 * f, -ar2 * f
            ur[0] += tr0
            ur[1] += tr1
            ur[2] += tr2
            ui[0] += ti0
            ui[1] += ti1
            ui[2] += ti2
            if tr0 * tr0 + tr1 * tr1 + tr2 * tr2 + ti0 * ti0 + ti1 * ti1 + ti2 * ti2 < 1e-36:
                break


@numba.njit(cache=True)
def _evolve(ur, ui, fp, fs, sp, ss, d1, d2, dt):
    """Propagate over all steps; ``d1, d2`` hold one value or one per step."""
    n_steps = fp.shape[0]
    per_step = d1.shape[0] > 1
    for n in range(n_steps):
        j = n if per_step else 0
        h1 = 0.5 * dt * d1[j]
        h2 = 0.5 * dt * d2[j]
        _apply_exp(ur, ui, fp[n], fs[n], h1, h2)
        _apply_exp(ur, ui, sp[n], ss[n], h1, h2)


@numba.njit(cache=True, parallel=True)
def _target_population_batch(fp, fs, sp, ss, d1, d2, dt):
    n = d1.shape[0]
    out = np.empty(n)
    for i in numba.prange(n):
        ur = np.zeros(3)
        ui = np.zeros(3)
        ur[0] = 1.0
        _evolve(ur, ui, fp, fs, sp, ss, d1[i:i + 1], d2[i:i + 1], dt)
        out[i] = ur[2] * ur[2] + ui[2] * ui[2]
    return out


@numba.njit(cache=True, parallel=True)
def _target_population_paths(fp, fs, sp, ss, d1, d2, dt):
    n = d1.shape[0]
    out = np.empty(n)
    for i in numba.prange(n):
        ur = np.zeros(3)
        ui = np.zeros(3)
        ur[0] = 1.0
        _evolve(ur, ui, fp, fs, sp, ss, d1[i], d2[i], dt)
        out[i] = ur[2] * ur[2] + ui[2] * ui[2]
    return out


def _check_steps(steps: int) -> int:
    steps = int(steps)
    if steps < MIN_STEPS:
        raise ValueError(f"steps must be >= {MIN_STEPS}, got {steps}")
    return steps


def propagate(drive: DriveCondition, det: Detunings = ZERO_DETUNING, x1: float = 0.0,
              x2: float = 0.0, initial=None, steps: int = DEFAULT_STEPS) -> np.ndarray:
    """Evolve ``initial`` (default ``|0>``) from ``t_start`` to ``t_end``.

    ``x1`` and ``x2`` are quasistatic shifts of levels 1 and 2 added on top
    of the detunings.
    """
    steps = _check_steps(steps)
    if initial is None:
        initial = np.array([1.0, 0.0, 0.0], dtype=complex)
    psi = np.asarray(initial, dtype=complex).reshape(3)
    if abs(np.vdot(psi, psi).real - 1.0) > 1e-10:
        raise ValueError("initial state is not normalized")
    fp, fs, sp, ss, dt = _pulse_nodes(drive, steps)
    ur = np.ascontiguousarray(psi.real)
    ui = np.ascontiguousarray(psi.imag)
    d1 = np.array([det.delta_p + x1], dtype=float)
    d2 = np.array([det.delta + x2], dtype=float)
    _evolve(ur, ui, fp, fs, sp, ss, d1, d2, dt)
    return ur + 1j * ui


def transfer_efficiency(drive: DriveCondition, x1, x2, det: Detunings = ZERO_DETUNING,
                        steps: int = DEFAULT_STEPS) -> np.ndarray:
    """Final ``|2>`` population from ``|0>`` for arrays of quasistatic shifts."""
    steps = _check_steps(steps)
    x1, x2 = np.broadcast_arrays(np.asarray(x1, dtype=float), np.asarray(x2, dtype=float))
    shape = x1.shape
    d1 = np.ascontiguousarray(x1.ravel() + det.delta_p)
    d2 = np.ascontiguousarray(x2.ravel() + det.delta)
    fp, fs, sp, ss, dt = _pulse_nodes(drive, steps)
    out = _target_population_batch(fp, fs, sp, ss, d1, d2, dt)
    return np.clip(out, 0.0, 1.0).reshape(shape)


def single_trajectory_efficiency(drive: DriveCondition, x1: float = 0.0, x2: float = 0.0,
                                 steps: int = DEFAULT_STEPS) -> float:
    """Target population for one noise realization at zero baseline detuning."""
    return float(transfer_efficiency(drive, np.array([x1]), np.array([x2]), steps=steps)[0])


def path_efficiency(drive: DriveCondition, x1_paths, x2_paths,
                    steps: int = DEFAULT_STEPS) -> np.ndarray:
    """Target population for time-dependent noise, one row per trajectory.

    Each row holds the level shifts on every integration step (held
    constant within a step).
    """
    steps = _check_steps(steps)
    x1_paths = np.ascontiguousarray(x1_paths, dtype=float)
    x2_paths = np.ascontiguousarray(x2_paths, dtype=float)
    if x1_paths.shape != x2_paths.shape or x1_paths.ndim != 2 or x1_paths.shape[1] != steps:
        raise ValueError("noise paths must have shape (n_trajectories, steps)")
    fp, fs, sp, ss, dt = _pulse_nodes(drive, steps)
    out = _target_population_paths(fp, fs, sp, ss, x1_paths, x2_paths, dt)
    return np.clip(out, 0.0, 1.0)


@dataclass(frozen=True)
class DressedFrame:
    theta: float
    phi: float
    lambda_d: float
    lambda_minus: float
    lambda_plus: float
    dark: np.ndarray
    minus: np.ndarray
    plus: np.ndarray

    @property
    def eigenvectors(self) -> np.ndarray:
        """Columns ``(dark, minus, plus)``."""
        return np.column_stack([self.dark, self.minus, self.plus])

    @property
    def eigenvalues(self) -> np.ndarray:
        return np.array([self.lambda_d, self.lambda_minus, self.lambda_plus])


def dressed_frame(omega_p: float, omega_s: float, delta_p: float = 0.0) -> DressedFrame:
    """Instantaneous eigenbasis at two-photon resonance (``delta = 0``)."""
    rms2 = omega_p ** 2 + omega_s ** 2
    if not rms2 > 0:
        raise ValueError("dressed frame undefined when both pulses vanish")
    rms = math.sqrt(rms2)
    theta = math.atan2(omega_p, omega_s)
    phi = math.atan2(rms, delta_p + math.sqrt(delta_p ** 2 + rms2))
    st, ct = math.sin(theta), math.cos(theta)
    sf, cf = math.sin(phi), math.cos(phi)
    dark = np.array([ct, 0.0, -st])
    minus = np.array([st * cf, -sf, ct * cf])
    plus = np.array([st * sf, cf, ct * sf])
    return DressedFrame(
        theta=theta,
        phi=phi,
        lambda_d=0.0,
        lambda_minus=-0.5 * rms * math.tan(phi),
        lambda_plus=0.5 * rms / math.tan(phi),
        dark=dark,
        minus=minus,
        plus=plus,
    )


def mixing_angle(t, drive: DriveCondition):
    omega_p, omega_s = pulse_values(t, drive)
    return np.arctan2(omega_p, omega_s)


@dataclass(frozen=True)
class AdiabaticityReport:
    global_margin: float
    local_ratio_max: float
    t_at_max: float
    active_window: tuple
    global_violation: bool
    local_violation: bool

    @property
    def flagged(self) -> bool:
        return self.global_violation or self.local_violation

    def to_dict(self) -> dict:
        return {
            "global_margin": self.global_margin,
            "local_ratio_max": self.local_ratio_max,
            "t_at_max": self.t_at_max,
            "active_window": list(self.active_window),
            "global_violation": self.global_violation,
            "local_violation": self.local_violation,
        }


GLOBAL_MARGIN_MIN = 10.0
LOCAL_RATIO_MAX = 0.1
# local condition is only checked where the coupling is this fraction of its peak
ACTIVE_FRACTION = 1e-3


def adiabaticity_report(drive: DriveCondition, det: Detunings = ZERO_DETUNING,
                        grid: int = 2001) -> AdiabaticityReport:
    """Global margin ``Omega_max * tau`` and the peak local ratio.

    The local ratio is ``|dtheta/dt|`` over the smaller of the two
    Autler-Townes gaps ``|delta_p +- sqrt(delta_p^2 + Omega^2)| / 2``.  In the
    far tails both numerator and gap vanish and the ratio is meaningless, so
    it is evaluated only where the rms coupling exceeds ``ACTIVE_FRACTION`` of
    its peak.
    """
    if grid < 100:
        raise ValueError("grid must be >= 100")
    t = np.linspace(drive.t_start, drive.t_end, grid)
    omega_p, omega_s = pulse_values(t, drive)
    rms = np.hypot(omega_p, omega_s)
    active = rms >= ACTIVE_FRACTION * rms.max()
    # for Gaussians theta = arctan(r exp(4 tau t / T^2)), so dtheta/dt = (2 tau / T^2) sin(2 theta)
    theta = np.arctan2(omega_p, omega_s)
    theta_dot = 2.0 * drive.tau / drive.width ** 2 * np.sin(2.0 * theta)
    root = np.sqrt(det.delta_p ** 2 + rms ** 2)
    gap = 0.5 * np.minimum(np.abs(det.delta_p + root), np.abs(det.delta_p - root))
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(active, np.abs(theta_dot) / gap, 0.0)
    ratio = np.nan_to_num(ratio, nan=np.inf)
    k = int(np.argmax(ratio))
    margin = drive.global_margin
    local = float(ratio[k])
    return AdiabaticityReport(
        global_margin=margin,
        local_ratio_max=local,
        t_at_max=float(t[k]),
        active_window=(float(t[active][0]), float(t[active][-1])),
        global_violation=margin < GLOBAL_MARGIN_MIN,
        local_violation=local > LOCAL_RATIO_MAX,
    )
