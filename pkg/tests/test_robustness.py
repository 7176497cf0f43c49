import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from robust_vrft.exceptions import DegenerateIR
from robust_vrft.harness import ExperimentConfig, generate_data, run_seed
from robust_vrft.lti import (DataSet, Signal, TransferFunction, closed_loop, hinf_grid_oracle,
                             prbs, simulate, true_impulse_response)
from robust_vrft.robustness import (RobustnessSpec, estimate_ms, penalty_h, sensitivity_signals,
                                    stabilizing_gain, toeplitz_hinf)
from robust_vrft.sysid import ImpulseResponseEstimate, KernelParams, tune_kernel
from robust_vrft.vrft import pid_basis

from conftest import first_order, random_stable

# controller gains reported for the example-1 VRFT design
RHO_EX1_REPORTED = [1.1246, 0.3124, 6.9713]


class TestToeplitzHinf:
    def test_diagonal(self):
        assert toeplitz_hinf([3.0, 0.0, 0.0]) == pytest.approx(3.0)

    def test_first_order(self):
        assert toeplitz_hinf(true_impulse_response(first_order(0.5), 200)) == pytest.approx(2.0, abs=1e-3)

    def test_zero(self):
        assert toeplitz_hinf(np.zeros(4)) == 0.0

    def test_nonfinite(self):
        with pytest.raises(ValueError):
            toeplitz_hinf([1.0, np.nan])

    def test_power_method_agrees(self):
        s = true_impulse_response(TransferFunction([1.0, -0.3], [1.0, -1.5, 0.8]), 100)
        assert toeplitz_hinf(s, "power") == pytest.approx(toeplitz_hinf(s), rel=1e-3)
        assert toeplitz_hinf(s) == pytest.approx(np.linalg.norm(
            ImpulseResponseEstimate(s).toeplitz(), 2), rel=1e-10)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10_000))
    def test_norm_bounds(self, seed):
        tf = random_stable(np.random.default_rng(seed), 0.9, 2)
        s = true_impulse_response(tf, 200)
        h = toeplitz_hinf(s)
        assert h <= np.sum(np.abs(s)) + 1e-12
        assert h >= np.max(np.abs(s)) - 1e-12
        # finite sections never exceed the operator norm
        assert h <= hinf_grid_oracle(tf) * (1 + 1e-9)

    @settings(max_examples=15, deadline=None)
    @given(st.integers(0, 10_000))
    def test_monotone_in_order_and_converges(self, seed):
        tf = random_stable(np.random.default_rng(seed), 0.93, 2)
        s = true_impulse_response(tf, 400)
        vals = [toeplitz_hinf(s[:M + 1]) for M in (25, 50, 100, 200, 400)]
        assert np.all(np.diff(vals) >= -1e-10)
        assert vals[-1] == pytest.approx(hinf_grid_oracle(tf), rel=1e-2)


class TestSensitivitySignals:
    def setup_method(self):
        rng = np.random.default_rng(0)
        self.data = DataSet(Signal(rng.normal(size=50)), Signal(rng.normal(size=50)))

    def test_zero_controller(self):
        sig = sensitivity_signals(self.data, TransferFunction([0.0]))
        np.testing.assert_array_equal(sig.zeta.samples, self.data.u.samples)
        assert sig.xi is self.data.u

    def test_static(self):
        u = self.data.u
        sig = sensitivity_signals(DataSet(u, u), TransferFunction([2.5]))
        np.testing.assert_allclose(sig.zeta.samples, 3.5 * u.samples)

    def test_noise_free_oracle(self, G1):
        u = prbs(2000, 11).samples
        data = DataSet(Signal(u), Signal(simulate(G1, u)))
        C = pid_basis().controller(RHO_EX1_REPORTED)
        sig = sensitivity_signals(data, C)
        kp = tune_kernel(sig.zeta, sig.xi, 100)
        est = estimate_ms(data, C, RobustnessSpec(ir_order=100), kp)
        _, S = closed_loop(C, G1)
        assert est == pytest.approx(hinf_grid_oracle(S), rel=0.05)


class TestEstimateMs:
    def test_zero_controller(self):
        u = prbs(1000, 10).samples
        data = DataSet(Signal(u), Signal(np.zeros(1000)))
        est = estimate_ms(data, TransferFunction([0.0]), RobustnessSpec(ir_order=50),
                          KernelParams(1.0, 0.8, 1e-3))
        assert est == pytest.approx(1.0, abs=1e-3)

    def test_true_ir_bypass(self, G1):
        C = pid_basis().controller(RHO_EX1_REPORTED)
        _, S = closed_loop(C, G1)
        assert toeplitz_hinf(true_impulse_response(S, 400)) == pytest.approx(
            hinf_grid_oracle(S), rel=1e-2)

    def test_example1_reported_controller(self):
        # estimator on the published example-1 controller, 20 dB noise, several seeds
        cfg = ExperimentConfig.preset("example1")
        C = cfg.controller_basis().controller(RHO_EX1_REPORTED)
        for i in range(3):
            d = generate_data(cfg, run_seed(7, i))
            sig = sensitivity_signals(d.batch1, C)
            kp = tune_kernel(sig.zeta, sig.xi, 100)
            est = estimate_ms(d.batch1, C, RobustnessSpec(ir_order=100), kp, d.batch2)
            assert est == pytest.approx(2.20, abs=0.15)


class TestPenalty:
    def test_values(self):
        assert penalty_h(1.7, 1.8) == 0.0
        assert penalty_h(1.8, 1.8) == 0.0
        assert penalty_h(2.1952, 1.8) == pytest.approx(0.5 * 0.3952 ** 2)
        assert penalty_h(2.1952, 1.8) == pytest.approx(0.07809, abs=1e-5)

    @settings(max_examples=50)
    @given(st.floats(1.0, 3.0), st.floats(0.0, 2.0), st.floats(1e-6, 1.0))
    def test_monotone_nonnegative(self, d, x, h):
        assert penalty_h(x, d) >= 0
        if x > d:
            assert penalty_h(x + h, d) > penalty_h(x, d)
        else:
            assert penalty_h(x, d) == 0


class TestStabilizingGain:
    def test_g1(self, G1):
        assert stabilizing_gain(true_impulse_response(G1, 400)) == pytest.approx(0.8039, abs=0.01)

    def test_g2(self, G2):
        assert stabilizing_gain(true_impulse_response(G2, 400)) == pytest.approx(0.3828, abs=0.01)

    def test_static(self):
        assert stabilizing_gain([2.0], 0.5) == pytest.approx(0.25)

    def test_degenerate(self):
        with pytest.raises(DegenerateIR):
            stabilizing_gain(np.zeros(3))

    def test_safety_range(self):
        with pytest.raises(ValueError):
            stabilizing_gain([1.0], 1.0)


def test_robustness_settings_validation():
    with pytest.raises(ValueError):
        RobustnessSpec(ms_desired=0.9)
    with pytest.raises(ValueError):
        RobustnessSpec(penalty_weight=0.5)
