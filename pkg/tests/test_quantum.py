import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import solve_ivp
from scipy.linalg import expm

from ctapnoise.noise import SIGMA1
from ctapnoise.quantum import (
    DEFAULT_STEPS,
    DRIVE_EQUAL,
    DRIVE_PUMP,
    DRIVE_STOKES,
    Detunings,
    DriveCondition,
    adiabaticity_report,
    dressed_frame,
    get_drive,
    hamiltonian,
    mixing_angle,
    propagate,
    pulse_values,
    single_trajectory_efficiency,
    transfer_efficiency,
)


def reference_state(drive, det, x1, x2, initial=(1, 0, 0)):
    """Adaptive high-order Runge-Kutta solution of the Schroedinger equation."""
    def rhs(t, y):
        psi = y[:3] + 1j * y[3:]
        d = -1j * hamiltonian(t, drive, det, x1, x2) @ psi
        return np.concatenate([d.real, d.imag])

    y0 = np.concatenate([np.real(initial), np.imag(initial)]).astype(float)
    sol = solve_ivp(rhs, (drive.t_start, drive.t_end), y0, method="DOP853", rtol=1e-12, atol=1e-13)
    return sol.y[:3, -1] + 1j * sol.y[3:, -1]


class TestPulses:
    def test_peaks(self):
        p, _ = pulse_values(DRIVE_PUMP.tau, DRIVE_PUMP)
        _, s = pulse_values(-DRIVE_PUMP.tau, DRIVE_PUMP)
        assert p == DRIVE_PUMP.omega_p_max
        assert s == DRIVE_PUMP.omega_s_max

    def test_midpoint(self):
        p, s = pulse_values(0.0, DRIVE_EQUAL)
        np.testing.assert_allclose([p, s], [50 * math.exp(-0.49)] * 2, rtol=1e-15)

    def test_positive_and_ordered(self):
        t = np.linspace(-5, 5, 101)
        p, s = pulse_values(t, DRIVE_EQUAL)
        assert np.all(p > 0) and np.all(s > 0)
        assert t[np.argmax(s)] < t[np.argmax(p)]

    def test_invalid_drive(self):
        with pytest.raises(ValueError):
            DriveCondition(50, 50, width=0)
        with pytest.raises(ValueError):
            DriveCondition(50, 50, t_start=1, t_end=0)
        with pytest.raises(ValueError):
            get_drive("nope")


class TestHamiltonian:
    def test_uncoupled(self):
        drive = DriveCondition(0.0, 0.0)
        h = hamiltonian(0.3, drive, Detunings(2.0, -1.5))
        np.testing.assert_array_equal(h, np.diag([0.0, 2.0, -1.5]))

    def test_noise_on_diagonal(self):
        h = hamiltonian(0.0, DRIVE_EQUAL, x1=3.0, x2=-3.0)
        np.testing.assert_array_equal(np.diag(h), [0.0, 3.0, -3.0])
        assert h[0, 2] == h[2, 0] == 0.0

    @given(st.floats(-5, 5), st.floats(-100, 100), st.floats(-100, 100))
    def test_hermitian(self, t, x1, x2):
        h = hamiltonian(t, DRIVE_PUMP, Detunings(1.0, -2.0), x1, x2)
        assert np.max(np.abs(h - h.conj().T)) == 0.0


class TestPropagation:
    def test_ideal_transfer(self):
        psi = propagate(DRIVE_EQUAL)
        assert abs(psi[2]) ** 2 > 0.999

    def test_frozen_without_pulses(self):
        psi = propagate(DriveCondition(0.0, 0.0), Detunings(3.0, 1.0))
        assert abs(np.vdot([1, 0, 0], psi)) == pytest.approx(1.0, abs=1e-14)
        # a superposition only picks up the diagonal phases
        psi0 = np.array([0.6, 0.0, 0.8j])
        psi = propagate(DriveCondition(0.0, 0.0), Detunings(3.0, 1.0), initial=psi0)
        np.testing.assert_allclose(psi, psi0 * np.exp(-1j * np.array([0.0, 3.0, 1.0]) * 10.0), atol=1e-12)

    def test_rejects_unnormalized(self):
        with pytest.raises(ValueError):
            propagate(DRIVE_EQUAL, initial=np.array([1.0, 1.0, 0.0]))

    def test_against_adaptive_reference(self):
        psi = propagate(DRIVE_EQUAL, x1=0.0, x2=2 * SIGMA1)
        ref = reference_state(DRIVE_EQUAL, Detunings(), 0.0, 2 * SIGMA1)
        np.testing.assert_allclose(psi, ref, atol=1e-6)

    def test_against_midpoint_exponential(self):
        # piecewise-constant exact exponentials at a tenfold finer step
        drive, x1, x2 = DRIVE_PUMP, 4.0, -7.0
        n = 20000
        dt = (drive.t_end - drive.t_start) / n
        psi = np.array([1, 0, 0], dtype=complex)
        for k in range(n):
            psi = expm(-1j * dt * hamiltonian(drive.t_start + (k + 0.5) * dt, drive, x1=x1, x2=x2)) @ psi
        np.testing.assert_allclose(propagate(drive, x1=x1, x2=x2), psi, atol=1e-6)

    @pytest.mark.parametrize("x1, x2", [(0.0, 0.0), (0.0, 2 * SIGMA1), (-15.0, 4.0), (30.0, 60.0)])
    def test_step_doubling(self, x1, x2):
        a = propagate(DRIVE_EQUAL, x1=x1, x2=x2, steps=DEFAULT_STEPS)
        b = propagate(DRIVE_EQUAL, x1=x1, x2=x2, steps=2 * DEFAULT_STEPS)
        assert np.max(np.abs(a - b)) < 1e-6

    @settings(max_examples=40, deadline=None)
    @given(st.floats(-200, 200), st.floats(-200, 200), st.sampled_from([DRIVE_EQUAL, DRIVE_PUMP, DRIVE_STOKES]))
    def test_norm_conserved(self, x1, x2, drive):
        psi = propagate(drive, x1=x1, x2=x2)
        assert abs(np.vdot(psi, psi).real - 1.0) < 1e-8

    def test_batch_matches_single(self):
        x1 = np.array([-3.0, 0.0, 12.5])
        x2 = np.array([1.0, 35.2, -8.0])
        batch = transfer_efficiency(DRIVE_STOKES, x1, x2)
        single = [abs(propagate(DRIVE_STOKES, x1=a, x2=b)[2]) ** 2 for a, b in zip(x1, x2)]
        np.testing.assert_allclose(batch, single, rtol=0, atol=1e-15)


class TestSingleTrajectory:
    def test_noiseless(self):
        assert single_trajectory_efficiency(DRIVE_EQUAL) > 0.999

    def test_large_noise_disrupts(self):
        assert single_trajectory_efficiency(DRIVE_EQUAL, 50 * SIGMA1, 50 * SIGMA1) < 0.5

    def test_bitwise_repeatable(self):
        a = single_trajectory_efficiency(DRIVE_PUMP, 3.3, -1.7)
        b = single_trajectory_efficiency(DRIVE_PUMP, 3.3, -1.7)
        assert a == b

    @settings(max_examples=30, deadline=None)
    @given(st.floats(-60, 60), st.floats(-60, 60))
    def test_relabeling_identity(self, x1, x2):
        # |0> <-> |2> with time reversal swaps the pulses and maps (x1, x2) -> (x2 - x1, x2)
        a = single_trajectory_efficiency(DRIVE_PUMP, x1, x2)
        b = single_trajectory_efficiency(DRIVE_STOKES, x2 - x1, x2)
        assert a == pytest.approx(b, abs=1e-9)

    @settings(max_examples=30, deadline=None)
    @given(st.floats(-60, 60), st.floats(-60, 60))
    def test_inversion_identity(self, x1, x2):
        # H -> -H up to a sign gauge of |1>
        a = single_trajectory_efficiency(DRIVE_PUMP, x1, x2)
        b = single_trajectory_efficiency(DRIVE_PUMP, -x1, -x2)
        assert a == pytest.approx(b, abs=1e-9)

    def test_equal_shift_swap_is_not_a_symmetry(self):
        # swapping amplitudes at x2 = x1 is not an identity of the dynamics
        a = single_trajectory_efficiency(DRIVE_PUMP, 20.0, 20.0)
        b = single_trajectory_efficiency(DRIVE_STOKES, 20.0, 20.0)
        assert abs(a - b) > 0.05


class TestDressedFrame:
    def test_pump_off(self):
        f = dressed_frame(0.0, 10.0)
        assert f.theta == 0.0
        np.testing.assert_allclose(f.dark, [1, 0, 0], atol=1e-15)

    def test_equal(self):
        f = dressed_frame(7.0, 7.0)
        assert f.theta == pytest.approx(math.pi / 4)
        np.testing.assert_allclose(f.dark, np.array([1, 0, -1]) / math.sqrt(2), atol=1e-15)

    def test_both_zero(self):
        with pytest.raises(ValueError):
            dressed_frame(0.0, 0.0)

    @settings(max_examples=50)
    @given(st.floats(0, 80), st.floats(0.01, 80), st.floats(-50, 50))
    def test_against_eigensolver(self, op, os_, dp):
        f = dressed_frame(op, os_, dp)
        h = np.array([[0, op / 2, 0], [op / 2, dp, os_ / 2], [0, os_ / 2, 0]])
        assert f.lambda_d == 0.0
        assert f.dark[1] == 0.0
        assert f.theta == pytest.approx(math.atan(op / os_), abs=1e-15)
        vecs = f.eigenvectors
        np.testing.assert_allclose(vecs.T @ vecs, np.eye(3), atol=1e-10)
        for lam, v in zip(f.eigenvalues, vecs.T):
            np.testing.assert_allclose(h @ v, lam * v, atol=1e-10)
        np.testing.assert_allclose(sorted(f.eigenvalues), np.linalg.eigvalsh(h), atol=1e-10)


class TestAdiabaticity:
    def test_dark_state_endpoints(self):
        theta = mixing_angle(np.array([-5.0, 5.0]), DRIVE_EQUAL)
        assert theta[0] < 1e-3
        assert theta[1] > math.pi / 2 - 1e-3

    def test_drive_i(self):
        r = adiabaticity_report(DRIVE_EQUAL)
        assert r.global_margin == pytest.approx(35.0)
        assert not r.flagged

    def test_weak_drive_flagged(self):
        r = adiabaticity_report(DriveCondition(1.0, 1.0))
        assert r.global_margin == pytest.approx(0.7)
        assert r.global_violation and r.flagged

    def test_drive_ii_numeric_max(self):
        r = adiabaticity_report(DRIVE_PUMP, grid=4001)
        t = np.linspace(-5, 5, 200001)
        p, s = pulse_values(t, DRIVE_PUMP)
        theta = np.unwrap(np.arctan2(p, s))
        theta_dot = np.gradient(theta, t)
        rms = np.hypot(p, s)
        active = rms >= 1e-3 * rms.max()
        ratio = np.abs(theta_dot[active]) / (0.5 * rms[active])
        assert r.local_ratio_max == pytest.approx(ratio.max(), rel=1e-4)
        assert r.global_margin == pytest.approx(10 * math.sqrt(10) * 0.7)

    def test_grid_too_small(self):
        with pytest.raises(ValueError):
            adiabaticity_report(DRIVE_EQUAL, grid=50)
