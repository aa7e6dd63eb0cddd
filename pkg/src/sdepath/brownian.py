"""Seedable random streams and bookkeeping of the Brownian path.

Every Monte Carlo sample owns one :class:`RngStream`, keyed by
``(seed, stream_id)`` through a counter-based Philox generator, so distinct
stream ids give non-overlapping, statistically independent streams and the
same key replays the identical draw sequence bit for bit.

The partition times, per-step increments and running Brownian values are
kept in a :class:`BrownianRecord` so the exact solution can later be
evaluated on the same realization as the numerical one (common random
numbers).
"""

import numpy as np

from .errors import OrderingError, ParameterError

# Absolute tolerance, relative to T, for deciding the horizon was reached.
# Covers float accumulation over <= 1e7 steps.
HORIZON_RTOL = 1e-12

_MASK64 = (1 << 64) - 1


class RngStream:
    """One deterministic stream of uniforms/normals per Monte Carlo sample.

    Scalar and vector draws of the same kind are interchangeable:
    ``normals(n)`` yields exactly the values n successive ``normal()`` calls
    would, so callers may batch draws without changing the stream.
    """

    __slots__ = ("seed", "stream_id", "_gen")

    def __init__(self, seed, stream_id=0):
        self.seed = int(seed) & _MASK64
        self.stream_id = int(stream_id) & _MASK64
        key = (self.seed << 64) | self.stream_id
        self._gen = np.random.Generator(np.random.Philox(key=key))

    def uniform(self):
        """One draw from U[0, 1)."""
        return self._gen.random()

    def uniforms(self, n):
        return self._gen.random(n)

    def normal(self):
        """One standard normal draw."""
        return self._gen.standard_normal()

    def normals(self, n):
        return self._gen.standard_normal(n)

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"


def gaussian_increment(stream, dt, m):
    """Draw the m Brownian increments of one step: i.i.d. Normal(0, dt).

    Raises ParameterError unless dt > 0.
    """
    if not dt > 0.0:
        raise ParameterError(f"dt must be positive, got {dt}")
    return stream.normals(m) * np.sqrt(dt)


class BrownianRecord:
    """Partition times with the Brownian increments and running sums.

    Single-writer: append steps with :func:`record_step`, then ``freeze()``.
    A frozen record is immutable and safe to share between workers.

    Attributes
    ----------
    times : array, shape (N+1,); starts at 0, strictly increasing, ends at T
        once the record is complete.
    increments : array, shape (N, m); increments[n] = W(times[n+1]) - W(times[n]).
    cumulative : array, shape (N+1, m); prefix sums with cumulative[0] = 0.
    """

    __slots__ = ("T", "m", "_times", "_increments", "_cumulative", "_frozen")

    def __init__(self, T, m):
        if not T > 0.0:
            raise ParameterError(f"horizon T must be positive, got {T}")
        if m < 0:
            raise ParameterError(f"m must be nonnegative, got {m}")
        self.T = float(T)
        self.m = int(m)
        self._times = [0.0]
        self._increments = []
        self._cumulative = [np.zeros(self.m)]
        self._frozen = False

    def __len__(self):
        return len(self._times)

    @property
    def times(self):
        if self._frozen:
            return self._times
        return np.asarray(self._times)

    @property
    def increments(self):
        if self._frozen:
            return self._increments
        return np.asarray(self._increments).reshape(len(self._times) - 1, self.m)

    @property
    def cumulative(self):
        if self._frozen:
            return self._cumulative
        return np.asarray(self._cumulative)

    @property
    def frozen(self):
        return self._frozen

    def freeze(self):
        """Convert internal storage to read-only arrays and seal the record."""
        if self._frozen:
            return self
        times = np.asarray(self._times)
        increments = np.asarray(self._increments).reshape(len(times) - 1, self.m)
        cumulative = np.asarray(self._cumulative)
        for arr in (times, increments, cumulative):
            arr.setflags(write=False)
        self._times, self._increments, self._cumulative = times, increments, cumulative
        self._frozen = True
        return self

    @classmethod
    def from_arrays(cls, T, times, increments):
        """Build a frozen record from complete arrays (engine fast path)."""
        times = np.asarray(times, dtype=float)
        increments = np.asarray(increments, dtype=float)
        if increments.ndim == 1:
            increments = increments[:, None]
        rec = cls(T, increments.shape[1])
        if times[0] != 0.0 or np.any(np.diff(times) <= 0.0):
            raise OrderingError("times must start at 0 and increase strictly")
        if times[-1] > T * (1.0 + HORIZON_RTOL) + T * HORIZON_RTOL:
            raise OrderingError(f"final time {times[-1]} overshoots horizon {T}")
        cumulative = np.vstack([np.zeros((1, rec.m)), np.cumsum(increments, axis=0)])
        for arr in (times, increments, cumulative):
            arr.setflags(write=False)
        rec._times, rec._increments, rec._cumulative = times, increments, cumulative
        rec._frozen = True
        return rec


def record_step(record, dt, dW):
    """Append one step of duration dt with Brownian increment dW.

    Returns the record to allow chaining. Raises OrderingError if the step
    would not advance time or overshoots T beyond the horizon tolerance.
    """
    if record._frozen:
        raise OrderingError("record is frozen")
    if not dt > 0.0:
        raise OrderingError(f"step must advance time, got dt={dt}")
    t_new = record._times[-1] + dt
    tol = HORIZON_RTOL * record.T
    if t_new > record.T + tol:
        raise OrderingError(
            f"step to t={t_new} overshoots horizon T={record.T} beyond tolerance"
        )
    dW = np.asarray(dW, dtype=float).reshape(record.m)
    record._times.append(min(t_new, record.T))
    record._increments.append(dW)
    record._cumulative.append(record._cumulative[-1] + dW)
    return record
