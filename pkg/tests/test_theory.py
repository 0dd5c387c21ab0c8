import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedsim import (
    AlgorithmConfig,
    ConfigurationError,
    ConvergenceBudget,
    DeviceDataset,
    FEDDANE,
    Objective,
    SynthConfig,
    TheoremInapplicableError,
    TheoryConstants,
    UndefinedDissimilarityError,
    UndefinedInexactnessError,
    estimate_fstar,
    generate_synthetic,
    global_gradient,
    global_loss,
    iteration_bound,
    make_identical_devices,
    measure_dissimilarity,
    measure_inexactness,
    network_lipschitz,
    rho_convex,
    rho_device_specific,
    rho_nonconvex,
    solve_subproblem_exact,
    solve_subproblem_inexact,
    verify_sufficient_decrease,
)
from fedsim.synthdata import FederatedDataset


def rho_convex_fraction(L, mu, gamma, B):
    """Exact rational evaluation of the convex decrease constant."""
    L, mu, gamma, B = (Fraction(x) for x in (L, mu, gamma, B))
    return (
        (2 - 3 * gamma) / (2 * mu)
        - (2 * L * (1 + gamma) ** 2 + 3 * L) / (2 * mu**2)
        - (B**2 - 1) * ((L * (1 + gamma) ** 2 + L) / mu**2 + gamma / mu)
    )


def rho_nonconvex_fraction(L, mu, gamma, B, lam):
    L, mu, gamma, B, lam = (Fraction(x) for x in (L, mu, gamma, B, lam))
    m = mu - lam
    return (
        1 / mu
        - 3 * gamma / (2 * m)
        - L * (1 + gamma) ** 2 / m**2
        - 3 * L / (2 * mu * m)
        - (B**2 - 1) * (L * (1 + gamma) ** 2 / m**2 + L / (mu * m) + gamma / m)
    )


def rho_device_fraction(per_device, L, B):
    L, B = Fraction(L), Fraction(B)
    own = Fraction(0)
    cross = Fraction(0)
    for L_k, mu_k, g_k in per_device:
        L_k, mu_k, g_k = Fraction(L_k), Fraction(mu_k), Fraction(g_k)
        own += 1 / mu_k - 3 * g_k / (2 * mu_k) - L_k * (1 + g_k) ** 2 / mu_k**2 - 3 * L_k / (2 * mu_k**2)
        cross += L * (1 + g_k) ** 2 / mu_k**2 + L_k / mu_k**2 + g_k / mu_k
    n = len(per_device)
    return own / n - (B**2 - 1) * cross / n


class TestDissimilarity:
    def test_identical_devices_give_one(self, identical_network):
        obj = Objective(task="multinomial-logistic", input_dim=6, num_classes=3)
        rng = np.random.default_rng(0)
        for _ in range(5):
            w = rng.normal(size=obj.num_params) * 0.5
            assert measure_dissimilarity(identical_network, obj, w) == pytest.approx(
                1.0, abs=1e-9
            )

    def test_opposing_gradients_undefined(self):
        # two devices whose least-squares residuals pull in opposite directions
        X = np.array([[1.0]])
        d1 = DeviceDataset(features=X, labels=np.array([1.0]), device_id=0)
        d2 = DeviceDataset(features=X, labels=np.array([-1.0]), device_id=1)
        fd = FederatedDataset(devices=(d1, d2), num_classes=0)
        obj = Objective(task="linear-regression", input_dim=1)
        with pytest.raises(UndefinedDissimilarityError):
            measure_dissimilarity(fd, obj, np.zeros(1))

    def test_matches_straight_line_recomputation(self, small_synth, small_obj):
        rng = np.random.default_rng(1)
        w = rng.normal(size=small_obj.num_params) * 0.3
        value = measure_dissimilarity(small_synth, small_obj, w)
        num = 0.0
        g = np.zeros_like(w)
        for p_k, dev in zip(small_synth.p, small_synth.devices):
            g_k = small_obj.gradient(w, dev)
            num += p_k * float(g_k @ g_k)
            g += p_k * g_k
        expected = math.sqrt(num / float(g @ g))
        assert value == pytest.approx(expected, rel=1e-12)

    def test_jensen_floor(self, small_synth, small_obj):
        rng = np.random.default_rng(2)
        for _ in range(20):
            w = rng.normal(size=small_obj.num_params)
            assert measure_dissimilarity(small_synth, small_obj, w) >= 1.0 - 1e-9


class TestInexactness:
    def test_exact_solution_gives_zero(self):
        w_exact = np.array([1.0, 2.0])
        w_prev = np.array([0.0, 0.0])
        assert measure_inexactness(w_exact, w_exact, w_prev) == 0.0

    def test_no_progress_gives_one(self):
        w_exact = np.array([1.0, 2.0])
        w_prev = np.array([0.0, 0.0])
        assert measure_inexactness(w_prev, w_exact, w_prev) == pytest.approx(1.0)

    def test_degenerate_denominator_raises(self):
        w = np.array([1.0, 1.0])
        with pytest.raises(UndefinedInexactnessError):
            measure_inexactness(w, w, w)

    def test_more_epochs_are_more_exact(self, logistic_obj, logistic_device):
        rng = np.random.default_rng(3)
        w_prev = rng.normal(size=logistic_obj.num_params) * 0.3
        g_prev = logistic_obj.gradient(w_prev, logistic_device)
        g_t = g_prev * 1.2
        mu = 1.0
        exact = solve_subproblem_exact(logistic_obj, logistic_device, w_prev,
                                       g_t=g_t, grad_k_prev=g_prev, mu=mu, tol=1e-12)
        gammas = {}
        for epochs in (1, 50):
            w = solve_subproblem_inexact(logistic_obj, logistic_device, w_prev,
                                         g_t=g_t, grad_k_prev=g_prev, mu=mu,
                                         epochs=epochs, eta=0.02, batch_size=5,
                                         rng=np.random.default_rng(9))
            gammas[epochs] = measure_inexactness(w, exact.params, w_prev)
        assert gammas[50] < gammas[1]


class TestRhoConvex:
    def test_homogeneous_exact_case(self):
        c = TheoryConstants(L=2.0, mu=4.0, gamma=0.0, B=1.0)
        assert rho_convex(c) == pytest.approx(1 / 4 - 5 * 2 / (2 * 16), rel=1e-15)

    def test_boundary_zero(self):
        c = TheoryConstants(L=1.0, mu=2.5, gamma=0.0, B=1.0)
        assert rho_convex(c) == 0.0

    def test_large_heterogeneity_approximation(self):
        for Bsq, tol in [(1e4, 0.02), (1e6, 2e-4)]:
            mu = 5 * 1.0 * Bsq
            c = TheoryConstants(L=1.0, mu=mu, gamma=0.0, B=math.sqrt(Bsq))
            target = 3 / (25 * 1.0 * Bsq)
            assert abs(rho_convex(c) / target - 1) < tol

    @given(
        L=st.floats(0.05, 20.0),
        mu=st.floats(0.1, 100.0),
        gamma=st.floats(0.0, 0.99),
        B=st.floats(1.0, 30.0),
    )
    @settings(max_examples=200, deadline=None)
    def test_matches_exact_rational_expansion(self, L, mu, gamma, B):
        got = rho_convex(TheoryConstants(L=L, mu=mu, gamma=gamma, B=B))
        exact = float(rho_convex_fraction(L, mu, gamma, B))
        assert got == pytest.approx(exact, rel=1e-12, abs=1e-15)


class TestRhoNonconvex:
    def test_reduces_to_convex_at_zero_curvature_shift(self):
        for gamma in (0.0, 0.3):
            for B in (1.0, 2.5):
                base = TheoryConstants(L=1.5, mu=3.0, gamma=gamma, B=B)
                shifted = TheoryConstants(L=1.5, mu=3.0, gamma=gamma, B=B, lam=0.0)
                assert rho_nonconvex(shifted) == pytest.approx(rho_convex(base), rel=1e-12)

    def test_positive_shift_decreases_rho(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            L = rng.uniform(0.1, 5)
            mu = rng.uniform(1.0, 20)
            gamma = rng.uniform(0, 0.9)
            B = rng.uniform(1, 5)
            lam = rng.uniform(1e-3, mu * 0.9)
            a = rho_nonconvex(TheoryConstants(L=L, mu=mu, gamma=gamma, B=B, lam=lam))
            b = rho_convex(TheoryConstants(L=L, mu=mu, gamma=gamma, B=B))
            assert a < b

    def test_requires_positive_margin(self):
        with pytest.raises(ConfigurationError):
            rho_nonconvex(TheoryConstants(L=1.0, mu=1.0, gamma=0.0, B=1.0, lam=1.0))

    def test_vanishes_as_mu_grows(self):
        values = [
            rho_nonconvex(TheoryConstants(L=1.0, mu=mu, gamma=0.1, B=2.0, lam=0.5))
            for mu in (10.0, 100.0, 1000.0, 10000.0)
        ]
        assert values[-1] > 0 or values[-2] > 0  # eventually positive
        assert abs(values[-1]) < abs(values[-2]) < abs(values[-3])

    @given(
        L=st.floats(0.05, 20.0),
        mu=st.floats(0.5, 100.0),
        gamma=st.floats(0.0, 0.99),
        B=st.floats(1.0, 30.0),
        frac=st.floats(0.0, 0.9),
    )
    @settings(max_examples=200, deadline=None)
    def test_matches_exact_rational_expansion(self, L, mu, gamma, B, frac):
        lam = mu * frac
        got = rho_nonconvex(TheoryConstants(L=L, mu=mu, gamma=gamma, B=B, lam=lam))
        exact = float(rho_nonconvex_fraction(L, mu, gamma, B, lam))
        assert got == pytest.approx(exact, rel=1e-12, abs=1e-15)


class TestRhoDeviceSpecific:
    def test_identical_constants_collapse_to_convex(self):
        c = TheoryConstants(L=1.3, mu=4.2, gamma=0.2, B=1.7)
        per_device = [(1.3, 4.2, 0.2)] * 7
        got = rho_device_specific(per_device, L=1.3, B=1.7)
        assert got == pytest.approx(rho_convex(c), rel=1e-12)

    def test_two_device_hand_expansion(self):
        per_device = [(1.0, 2.0, 0.1), (3.0, 5.0, 0.4)]
        L, B = 2.5, 1.9
        got = rho_device_specific(per_device, L=L, B=B)
        exact = float(rho_device_fraction(per_device, L, B))
        assert got == pytest.approx(exact, rel=1e-12)

    def test_unit_dissimilarity_drops_cross_term(self):
        per_device = [(1.0, 2.0, 0.0), (4.0, 8.0, 0.0)]
        got = rho_device_specific(per_device, L=100.0, B=1.0)
        expected = 0.5 * ((1 / 2 - 5 * 1 / (2 * 4)) + (1 / 8 - 5 * 4 / (2 * 64)))
        assert got == pytest.approx(expected, rel=1e-12)

    def test_network_l_switch(self):
        per_device = [(1.0, 2.0, 0.1)]
        with_network = rho_device_specific(per_device, L=10.0, B=2.0)
        with_local = rho_device_specific(per_device, L=10.0, B=2.0,
                                         network_l_in_cross_term=False)
        assert with_local > with_network  # L_k = 1 < network L = 10

    def test_empty_list_rejected(self):
        with pytest.raises(ConfigurationError):
            rho_device_specific([], L=1.0, B=1.0)


class TestMonotonicity:
    def test_rho_non_increasing_in_gamma_and_b(self):
        gammas = np.linspace(0, 0.95, 12)
        bs = np.linspace(1, 6, 12)
        for L in (0.5, 2.0):
            for mu in (1.0, 10.0):
                values = [rho_convex(TheoryConstants(L=L, mu=mu, gamma=g, B=2.0))
                          for g in gammas]
                assert all(a >= b - 1e-15 for a, b in zip(values, values[1:]))
                values = [rho_convex(TheoryConstants(L=L, mu=mu, gamma=0.3, B=b))
                          for b in bs]
                assert all(a >= b - 1e-15 for a, b in zip(values, values[1:]))
                values = [rho_nonconvex(TheoryConstants(L=L, mu=mu, gamma=g, B=2.0,
                                                        lam=mu * 0.3))
                          for g in gammas]
                assert all(a >= b - 1e-15 for a, b in zip(values, values[1:]))
                values = [rho_device_specific([(L, mu, g)] * 3, L=L, B=2.0)
                          for g in gammas]
                assert all(a >= b - 1e-15 for a, b in zip(values, values[1:]))


class TestIterationBound:
    def test_zero_gap_needs_zero_updates(self):
        assert iteration_bound(ConvergenceBudget(delta=0.0, epsilon=0.01, rho=0.1)) == 0

    def test_arithmetic(self):
        assert iteration_bound(ConvergenceBudget(delta=1.0, epsilon=0.01, rho=0.1)) == 1000

    def test_nonpositive_rho_inapplicable(self):
        with pytest.raises(TheoremInapplicableError):
            iteration_bound(ConvergenceBudget(delta=1.0, epsilon=0.01, rho=0.0))


class TestEstimateFstar:
    def test_reaches_interpolating_optimum(self):
        rng = np.random.default_rng(5)
        X = rng.normal(size=(40, 4))
        w_true = rng.normal(size=4)
        dev = DeviceDataset(features=X, labels=X @ w_true, device_id=0)
        fd = FederatedDataset(devices=(dev,), num_classes=0)
        obj = Objective(task="linear-regression", input_dim=4)
        fstar, converged = estimate_fstar(fd, obj, tol=1e-10)
        assert converged
        assert fstar == pytest.approx(0.0, abs=1e-16)


@pytest.fixture(scope="module")
def homogeneous():
    rng = np.random.default_rng(6)
    X = rng.normal(size=(40, 5))
    W = rng.normal(size=(3, 5))
    y = np.argmax(X @ W.T, axis=1)
    base = DeviceDataset(features=X, labels=y, device_id=0)
    fd = make_identical_devices(base, num_devices=10, num_classes=3)
    obj = Objective(task="multinomial-logistic", input_dim=5, num_classes=3)
    return fd, obj


class TestVerifySufficientDecrease:
    def test_single_device_exact_solve_decreases_deterministically(self, homogeneous):
        fd, obj = homogeneous
        single = FederatedDataset(devices=fd.devices[:1], num_classes=3)
        L = network_lipschitz(single, obj)
        mu = 5 * L
        cfg = AlgorithmConfig(algorithm=FEDDANE, devices_per_round=1, mu=mu,
                              exact_tol=1e-10)
        constants = TheoryConstants(L=L, mu=mu, gamma=0.0, B=1.0)
        rng = np.random.default_rng(7)
        w_prev = rng.normal(size=obj.num_params) * 0.4
        report = verify_sufficient_decrease(single, obj, w_prev, cfg, constants,
                                            trials=3, seed=1)
        assert report.applicable and report.passed
        assert report.ci_half_width == pytest.approx(0.0, abs=1e-12)
        assert report.mean_decrease >= report.rho * report.grad_sq_norm - 1e-12

    def test_homogeneous_network_decrease_holds(self, homogeneous):
        fd, obj = homogeneous
        L = network_lipschitz(fd, obj)
        mu = 5 * L
        cfg = AlgorithmConfig(algorithm=FEDDANE, devices_per_round=4, mu=mu,
                              exact_tol=1e-10)
        constants = TheoryConstants(L=L, mu=mu, gamma=1e-6, B=1.0)
        rng = np.random.default_rng(8)
        w_prev = rng.normal(size=obj.num_params) * 0.4
        report = verify_sufficient_decrease(fd, obj, w_prev, cfg, constants,
                                            trials=20, seed=2)
        assert report.applicable and report.passed

    def test_negative_rho_marked_inapplicable(self, homogeneous):
        fd, obj = homogeneous
        constants = TheoryConstants(L=10.0, mu=0.5, gamma=0.5, B=4.0)
        assert rho_convex(constants) < 0
        cfg = AlgorithmConfig(algorithm=FEDDANE, devices_per_round=2, mu=0.5,
                              epochs=1, eta=0.01, batch_size=10)
        w_prev = np.zeros(obj.num_params)
        report = verify_sufficient_decrease(fd, obj, w_prev, cfg, constants,
                                            trials=3, seed=3)
        assert not report.applicable
        assert report.passed is None
