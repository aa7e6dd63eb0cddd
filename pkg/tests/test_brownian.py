import numpy as np
import pytest

from sdepath import (
    BrownianRecord,
    OrderingError,
    ParameterError,
    RngStream,
    gaussian_increment,
    record_step,
)


class TestRngStream:
    def test_same_key_replays_bitwise(self):
        a = RngStream(123, 45)
        b = RngStream(123, 45)
        assert np.array_equal(a.normals(100), b.normals(100))
        assert a.uniform() == b.uniform()

    def test_scalar_and_vector_draws_agree(self):
        # the engine batches draws; the stream must not care
        a = RngStream(7, 0)
        b = RngStream(7, 0)
        scalars = np.array([a.normal() for _ in range(33)])
        assert np.array_equal(scalars, b.normals(33))
        a = RngStream(7, 1)
        b = RngStream(7, 1)
        scalars = np.array([a.uniform() for _ in range(33)])
        assert np.array_equal(scalars, b.uniforms(33))

    def test_distinct_streams_differ(self):
        a = RngStream(1, 0).normals(64)
        b = RngStream(1, 1).normals(64)
        c = RngStream(2, 0).normals(64)
        assert not np.array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_stream_independence_correlation(self):
        n = 4000
        xs = RngStream(9, 0).normals(n)
        ys = RngStream(9, 1).normals(n)
        corr = np.corrcoef(xs, ys)[0, 1]
        assert abs(corr) < 4.0 / np.sqrt(n)


class TestGaussianIncrement:
    def test_moments(self):
        # mean within a 4-sigma band, variance within 5% relative
        stream = RngStream(2024, 0)
        dt, n = 0.01, 10**6
        draws = gaussian_increment(stream, dt, n)
        assert abs(draws.mean()) < 4.0 * np.sqrt(dt) / np.sqrt(n)
        assert abs(draws.var() - dt) < 0.05 * dt

    def test_matches_scalar_api(self):
        s1, s2 = RngStream(5, 5), RngStream(5, 5)
        a = gaussian_increment(s1, 0.25, 3)
        b = s2.normals(3) * np.sqrt(0.25)
        assert np.array_equal(a, b)

    def test_nonpositive_dt_rejected(self):
        with pytest.raises(ParameterError):
            gaussian_increment(RngStream(0, 0), 0.0, 1)
        with pytest.raises(ParameterError):
            gaussian_increment(RngStream(0, 0), -0.1, 1)


class TestBrownianRecord:
    def test_single_step(self):
        rec = BrownianRecord(T=1.0, m=1)
        record_step(rec, 0.5, [0.3])
        assert np.allclose(rec.times, [0.0, 0.5])
        assert np.allclose(rec.cumulative, [[0.0], [0.3]])

    def test_two_steps_cancel(self):
        rec = BrownianRecord(T=1.0, m=1)
        record_step(rec, 0.5, [0.3])
        record_step(rec, 0.5, [-0.3])
        assert rec.times[-1] == 1.0
        assert rec.cumulative[-1][0] == 0.0

    def test_overshoot_rejected(self):
        rec = BrownianRecord(T=1.0, m=1)
        record_step(rec, 0.9, [0.0])
        with pytest.raises(OrderingError):
            record_step(rec, 0.2, [0.0])

    def test_non_advancing_rejected(self):
        rec = BrownianRecord(T=1.0, m=1)
        with pytest.raises(OrderingError):
            record_step(rec, 0.0, [0.0])

    def test_freeze_blocks_writes(self):
        rec = BrownianRecord(T=1.0, m=2)
        record_step(rec, 0.25, [0.1, -0.2])
        rec.freeze()
        with pytest.raises(OrderingError):
            record_step(rec, 0.25, [0.0, 0.0])
        with pytest.raises(ValueError):
            rec.times[0] = 5.0

    def test_from_arrays_validates(self):
        with pytest.raises(OrderingError):
            BrownianRecord.from_arrays(1.0, [0.0, 0.5, 0.4], [[0.1], [0.1]])
        rec = BrownianRecord.from_arrays(1.0, [0.0, 0.5, 1.0], [[0.1], [-0.1]])
        assert rec.frozen
        assert np.allclose(rec.cumulative[:, 0], [0.0, 0.1, 0.0])


def test_terminal_variance_matches_horizon():
    # over many fixed-step paths, Var W(T) per coordinate is close to T
    from sdepath import StepController, get_problem
    from sdepath.engine import run_batch

    n = 10**5
    streams = [RngStream(77, i) for i in range(n)]
    problem = get_problem("gbm-0.1-1.2")
    res = run_batch(problem, StepController.fixed(1.0 / 8), "explicit", streams)
    var = res.final_W[:, 0].var()
    assert abs(var - problem.T) < 0.05 * problem.T
