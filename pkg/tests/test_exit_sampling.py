import numpy as np
import pytest
from scipy.integrate import simpson
from scipy.stats import chisquare, kstest, ks_2samp

from sdepath import (
    Cuboid,
    ParameterError,
    RegionII,
    RngStream,
    ZeroStepError,
    sample_exit_cuboid,
    sample_exit_single,
    sample_region_ii,
    survival_single,
)
from sdepath.exit_sampling import (
    _absorbed_density,
    _conditional_position_batch,
    _cuboid_exit_batch,
    _exit_prob,
    _invert_exit,
    _rect_exit_batch,
    _region_rect,
    _survival,
)

from _oracles import cuboid_exit_mean_oracle, exit_times_oracle, survival_oracle


def _mpmath_survival(theta, terms=60):
    """Independent high-precision evaluation of the eigenfunction series."""
    import mpmath as mp

    mp.mp.dps = 40
    s = mp.mpf(0)
    for k in range(terms):
        c = 2 * k + 1
        s += (-1) ** k / mp.mpf(c) * mp.e ** (-(c**2) * mp.pi**2 * theta / 8)
    return float(4 / mp.pi * s)


class TestSurvival:
    def test_zero_time(self):
        assert survival_single(1.0, 0.0) == 1.0
        assert survival_single(0.2, 0.0) == 1.0

    def test_long_time_against_independent_series(self):
        # dominated by the first eigenmode; check against mpmath
        val = survival_single(1.0, 10.0)
        ref = _mpmath_survival(10.0)
        assert val == pytest.approx(ref, rel=1e-12)
        assert val < 1e-5

    def test_unit_time_against_monte_carlo(self):
        val = survival_single(1.0, 1.0)
        rng = np.random.default_rng(2718)
        p, se = survival_oracle(rng, 100_000, 1.0, 1.0, dt=2e-4)
        assert abs(val - p) < 3.0 * se

    def test_scaling_invariance(self):
        # S depends only on t / a^2
        assert survival_single(2.0, 0.8) == pytest.approx(
            survival_single(1.0, 0.2), rel=1e-12
        )

    def test_series_agree_in_overlap_window(self):
        from sdepath.exit_sampling import _exit_refl, _survival_eig

        theta = np.linspace(0.45, 0.55, 21)
        refl = 1.0 - _exit_refl(theta)
        eig = _survival_eig(theta)
        assert np.max(np.abs(refl - eig)) < 1e-13

    def test_accuracy_against_mpmath_grid(self):
        for theta in [0.05, 0.2, 0.49, 0.51, 1.0, 3.0, 8.0]:
            assert float(_survival(np.asarray(theta))) == pytest.approx(
                _mpmath_survival(theta), abs=1e-10
            )

    def test_monotone_decreasing(self):
        # below theta ~ 0.015 the exit probability is under 1 ulp of 1.0,
        # so start where S is still resolvable in double precision
        theta = np.geomspace(0.02, 20, 200)
        s = _survival(theta)
        assert np.all(np.diff(s) < 0)
        assert np.allclose(s + _exit_prob(theta), 1.0, atol=1e-14)

    def test_parameter_errors(self):
        with pytest.raises(ParameterError):
            survival_single(0.0, 1.0)
        with pytest.raises(ParameterError):
            survival_single(1.0, -0.5)

    def test_infinite_width(self):
        assert survival_single(np.inf, 5.0) == 1.0


class TestAbsorbedDensity:
    def test_integrates_to_survival(self):
        xi = np.linspace(-1.0, 1.0, 4001)
        for theta in [0.05, 0.3, 0.7, 2.0]:
            dens = _absorbed_density(np.full_like(xi, theta), xi)
            total = simpson(dens, x=xi)
            assert total == pytest.approx(float(_survival(np.asarray(theta))), abs=1e-8)

    def test_mode_at_center(self):
        # the rejection envelope takes the center value as the sup
        xi = np.linspace(-0.999, 0.999, 801)
        for theta in np.geomspace(0.02, 5.0, 40):
            dens = _absorbed_density(np.full_like(xi, theta), xi)
            center = _absorbed_density(np.asarray(theta), np.asarray(0.0))
            assert np.all(dens <= center * (1.0 + 1e-12))

    def test_vanishes_at_walls(self):
        for theta in [0.1, 1.0]:
            val = _absorbed_density(np.asarray(theta), np.asarray(1.0))
            assert abs(val) < 1e-12


class TestInversion:
    def test_round_trip(self):
        theta = np.geomspace(8e-4, 20.0, 200)
        target = _exit_prob(theta)
        back = _invert_exit(target)
        assert np.max(np.abs(_exit_prob(back) - target) / target) < 1e-10

    def test_uniform_targets(self):
        u = RngStream(31, 0).uniforms(20_000)
        theta = _invert_exit(u)
        resid = np.abs(_exit_prob(theta) - u) / u
        assert resid.max() < 1e-10


class TestSampleExitSingle:
    def test_invariants_every_sample(self):
        a0, a1 = 0.1, 0.2
        for i in range(3000):
            s = sample_exit_single(RngStream(100, i), a0, a1)
            if s.face == "time":
                assert s.tau == a0
                assert abs(s.dW[0]) < a1
            else:
                assert s.face == "space"
                assert abs(s.dW[0]) == a1
                assert s.sign == (1 if s.dW[0] > 0 else -1)
                assert 0.0 < s.tau <= a0

    def test_inverse_cdf_residual(self):
        # replay the face and inverse-CDF uniforms; the sampled tau must
        # invert the conditional exit law to 1e-10
        a0, a1 = 0.1, 0.2
        p_space = 1.0 - survival_single(a1, a0)
        worst = 0.0
        for i in range(2000):
            s = sample_exit_single(RngStream(55, i), a0, a1)
            replay = RngStream(55, i)
            u_face = replay.uniform()
            if s.face != "space":
                continue
            assert u_face < p_space
            u_tau = replay.uniform()
            ratio = (1.0 - survival_single(a1, s.tau)) / p_space
            worst = max(worst, abs(u_tau - ratio))
        assert worst < 1e-10

    def test_infinite_width_gaussian(self):
        st = RngStream(8, 0)
        vals = []
        for _ in range(4000):
            s = sample_exit_single(st, 0.25, np.inf)
            assert s.face == "time" and s.tau == 0.25
            vals.append(s.dW[0])
        res = kstest(np.array(vals) / np.sqrt(0.25), "norm")
        assert res.pvalue > 0.001

    def test_space_face_probability(self):
        a0, a1 = 0.1, 0.15
        streams = [RngStream(400, i) for i in range(20_000)]
        _, _, space = _rect_exit_batch(
            streams, np.full(20_000, a0), np.full(20_000, a1)
        )
        p_emp = space.mean()
        p_th = 1.0 - survival_single(a1, a0)
        se = np.sqrt(p_th * (1.0 - p_th) / 20_000)
        assert abs(p_emp - p_th) < 3.0 * se

    def test_exit_time_distribution_sanity(self):
        # moderate-size KS against the bridge-corrected grid oracle
        a0, a1 = 0.1, 0.05
        n = 20_000
        streams = [RngStream(401, i) for i in range(n)]
        tau, _, space = _rect_exit_batch(streams, np.full(n, a0), np.full(n, a1))
        rng = np.random.default_rng(11)
        tau_o, space_o = exit_times_oracle(rng, n, a0, a1, dt=a0 * 5e-4)
        res = ks_2samp(tau[space], tau_o[space_o])
        assert res.pvalue > 0.001

    def test_parameter_errors(self):
        with pytest.raises(ParameterError):
            sample_exit_single(RngStream(0, 0), 0.0, 1.0)
        with pytest.raises(ParameterError):
            sample_exit_single(RngStream(0, 0), 1.0, -1.0)


class TestConditionalPosition:
    @pytest.mark.parametrize(("theta", "n"), [(0.3, 40_000), (1.0, 100_000), (3.0, 40_000)])
    def test_chi_square_gof(self, theta, n):
        # rejection output vs the truncated absorbing density, 50 bins
        streams = [RngStream(202, i) for i in range(n)]
        w = _conditional_position_batch(
            streams, np.arange(n), np.full(n, theta), np.ones(n)
        )
        assert np.all(np.abs(w) < 1.0)
        edges = np.linspace(-1.0, 1.0, 51)
        counts, _ = np.histogram(w, bins=edges)
        xi = np.linspace(-1.0, 1.0, 2001)
        dens = _absorbed_density(np.full_like(xi, theta), xi)
        dens /= simpson(dens, x=xi)
        cdf = np.concatenate([[0.0], np.cumsum((dens[1:] + dens[:-1]) * 0.5 * np.diff(xi))])
        cdf /= cdf[-1]
        probs = np.diff(np.interp(edges, xi, cdf))
        expected = probs * n
        # merge sparse boundary bins so the chi-square approximation holds
        keep_c, keep_e = [], []
        acc_c = acc_e = 0.0
        for c, e in zip(counts, expected):
            acc_c += c
            acc_e += e
            if acc_e >= 5.0:
                keep_c.append(acc_c)
                keep_e.append(acc_e)
                acc_c = acc_e = 0.0
        keep_c[-1] += acc_c
        keep_e[-1] += acc_e
        stat = chisquare(keep_c, f_exp=np.array(keep_e) * sum(keep_c) / sum(keep_e))
        assert stat.pvalue > 0.001

    def test_gaussian_shortcut_region(self):
        # tiny theta: essentially a free Gaussian, clipped inside the walls
        n = 30_000
        streams = [RngStream(203, i) for i in range(n)]
        tau = np.full(n, 1e-4)
        w = _conditional_position_batch(streams, np.arange(n), tau, np.ones(n))
        assert np.all(np.abs(w) < 1.0)
        res = kstest(w / 1e-2, "norm")
        assert res.pvalue > 0.001


class TestSampleExitCuboid:
    def test_all_infinite_widths(self):
        c = Cuboid(a0=0.3, a=np.array([np.inf, np.inf]))
        for i in range(50):
            s = sample_exit_cuboid(RngStream(300, i), c)
            assert s.face == "time" and s.tau == 0.3

    def test_invariants(self):
        c = Cuboid(a0=0.1, a=np.array([0.2, 0.35]))
        for i in range(2000):
            s = sample_exit_cuboid(RngStream(301, i), c)
            if s.face == "time":
                assert s.tau == 0.1
                assert np.all(np.abs(s.dW) < c.a)
            else:
                i_exit = s.coord
                assert abs(s.dW[i_exit]) == c.a[i_exit]
                others = [j for j in range(2) if j != i_exit]
                assert np.all(np.abs(s.dW[others]) <= c.a[others])
                assert 0.0 < s.tau <= 0.1

    def test_m1_matches_single_distribution(self):
        n = 20_000
        a0, a1 = 0.1, 0.2
        streams = [RngStream(302, i) for i in range(n)]
        tau_c, _, _, _ = _cuboid_exit_batch(
            streams, np.full(n, a0), np.full((n, 1), a1)
        )
        streams = [RngStream(303, i) for i in range(n)]
        tau_s, _, _ = _rect_exit_batch(streams, np.full(n, a0), np.full(n, a1))
        res = ks_2samp(tau_c, tau_s)
        assert res.pvalue > 0.01

    def test_mean_exit_time_m2_against_oracle(self):
        n = 40_000
        a0, aw = 0.1, 0.2
        streams = [RngStream(304, i) for i in range(n)]
        tau, _, _, _ = _cuboid_exit_batch(
            streams, np.full(n, a0), np.full((n, 2), aw)
        )
        rng = np.random.default_rng(5)
        mean_o, se_o = cuboid_exit_mean_oracle(rng, n, a0, [aw, aw], dt=a0 * 1e-3)
        se_s = tau.std(ddof=1) / np.sqrt(n)
        assert abs(tau.mean() - mean_o) < 3.0 * np.hypot(se_o, se_s)

    def test_invalid_cuboid(self):
        with pytest.raises(ParameterError):
            Cuboid(a0=-1.0, a=np.array([1.0]))
        with pytest.raises(ParameterError):
            Cuboid(a0=1.0, a=np.array([0.0]))


class TestRegionII:
    def test_zero_qnorm_full_strip(self):
        reg = RegionII(qnorm=0.0, alpha=0.9, h=0.1, remaining=0.35)
        st1, st2 = RngStream(9, 9), RngStream(9, 9)
        tau, dw = sample_region_ii(st1, reg, beta=0.1)
        assert tau == 0.1
        assert dw == st2.normal() * np.sqrt(0.1)
        # horizon shorter than h: the step is the remaining budget
        reg = RegionII(qnorm=0.0, alpha=0.9, h=0.1, remaining=0.04)
        tau, dw = sample_region_ii(RngStream(9, 10), reg, beta=0.1)
        assert tau == 0.04

    def test_membership_always_holds(self):
        reg = RegionII(qnorm=3.0, alpha=1.0, h=0.1, remaining=10.0)
        for i in range(5000):
            tau, dw = sample_region_ii(RngStream(500, i), reg, beta=0.1)
            assert reg.contains(tau, dw), (tau, dw)
        reg = RegionII(qnorm=0.9, alpha=1.0, h=0.1, remaining=10.0)
        for i in range(5000):
            tau, dw = sample_region_ii(RngStream(501, i), reg, beta=0.1)
            assert reg.contains(tau, dw), (tau, dw)

    def test_rectangles_contained_in_region(self):
        # every inscribed box: corners plus the parabola tangency point
        alpha, h = 1.0, 0.1
        for qnorm in (3.0, 0.9):
            reg = RegionII(qnorm=qnorm, alpha=alpha, h=h, remaining=10.0)
            c = alpha**2 * h / qnorm
            tmax = min(h, reg.remaining)
            for i in range(400):
                trace = []
                sample_region_ii(RngStream(502, i), reg, beta=0.1, trace=trace)
                assert trace
                for _, t0, x0, a0r, a1r in trace:
                    pts = [
                        (t0, x0 - a1r),
                        (t0, x0 + a1r),
                        (t0 + a0r, x0 - a1r),
                        (t0 + a0r, x0 + a1r),
                        (t0 + a0r, min(max(0.0, x0 - a1r), x0 + a1r)),
                    ]
                    for t, x in pts:
                        assert -1e-15 <= t <= tmax * (1.0 + 1e-12)
                        assert qnorm * (x * x - t) <= alpha**2 * h * (1.0 + 1e-12)
                        assert qnorm * (t - x * x) <= alpha**2 * h * (1.0 + 1e-12)

    def test_longer_steps_than_cuboid_when_alpha_dominates(self):
        # alpha^2 > qnorm: the region strictly contains the adaptive-I box
        qnorm, alpha, h = 0.5, 0.9, 0.1
        n = 10_000
        reg = RegionII(qnorm=qnorm, alpha=alpha, h=h, remaining=10.0)
        tau_ii = np.empty(n)
        for i in range(n):
            tau_ii[i], _ = sample_region_ii(RngStream(503, i), reg, beta=0.1)
        a1 = np.sqrt(h) * alpha / np.sqrt(qnorm)
        streams = [RngStream(504, i) for i in range(n)]
        tau_i, _, _ = _rect_exit_batch(streams, np.full(n, h), np.full(n, a1))
        assert tau_ii.mean() > tau_i.mean()
        # and the region-II step is never shorter than the box exit law allows
        assert tau_ii.max() <= 10.0 * h + 1e-12

    def test_zero_budget_rejected(self):
        reg = RegionII(qnorm=1.0, alpha=0.9, h=0.1, remaining=1e-15)
        with pytest.raises(ZeroStepError):
            sample_region_ii(RngStream(0, 0), reg, beta=0.1)

    def test_beta_validation(self):
        reg = RegionII(qnorm=1.0, alpha=0.9, h=0.1, remaining=1.0)
        with pytest.raises(ParameterError):
            sample_region_ii(RngStream(0, 0), reg, beta=0.0)

    def test_geometry_closed_form(self):
        # at the origin the first box is [0, min(tmax, c)] x [-sqrt(c), sqrt(c)]
        a0, a1 = _region_rect(
            np.array([0.0]), np.array([0.0]), np.array([0.027]), np.array([0.1])
        )
        assert a0[0] == pytest.approx(0.027, rel=1e-12)
        assert a1[0] == pytest.approx(np.sqrt(0.027), rel=1e-12)
        # split branches above t = c: the segment stays in the branch
        a0, a1 = _region_rect(
            np.array([0.05]), np.array([0.2]), np.array([0.02]), np.array([0.1])
        )
        outer = np.sqrt(0.05 + 0.02) - 0.2
        inner = 0.2 - np.sqrt(0.05 - 0.02)
        assert a1[0] == pytest.approx(min(outer, inner), rel=1e-12)
