"""Sampling grid and complex-envelope representation.

All fields in the package live on a :class:`SignalGrid`: ``num_samples``
uniformly spaced samples at ``sample_rate``, periodic over the window
``duration = num_samples / sample_rate``.

Frequency convention
--------------------
Spectra use the standard DFT bin ordering (``scipy.fft.fftfreq``).  Bin ``k``
corresponds to the physical detuning ``f_k = fftfreq(N, 1/fs)[k]`` from the
(implicit) optical carrier, i.e. bins ``0 .. N/2-1`` are non-negative
detunings and bins ``N/2 .. N-1`` are negative detunings; the Nyquist bin
``N/2`` maps to ``-fs/2``.  The transform pair is unitary::

    X_k = 1/sqrt(N) * sum_i x_i exp(-j 2 pi k i / N)
    x_i = 1/sqrt(N) * sum_k X_k exp(+j 2 pi k i / N)

so a field ``exp(j 2 pi f t)`` has positive detuning ``f``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.fft as sfft

__all__ = [
    "SignalGrid",
    "ComplexEnvelope",
    "GridMismatchError",
    "to_spectrum",
    "to_time",
    "inner_product",
    "energy",
    "frequency_shift",
]

# worker count handed to scipy.fft; per-row results are identical for any value
_FFT_WORKERS = 1


def set_fft_workers(workers: int) -> None:
    global _FFT_WORKERS
    _FFT_WORKERS = max(1, int(workers))


def fft(x: np.ndarray) -> np.ndarray:
    """Unitary forward DFT along the last axis."""
    return sfft.fft(x, axis=-1, norm="ortho", workers=_FFT_WORKERS)


def ifft(x: np.ndarray) -> np.ndarray:
    """Unitary inverse DFT along the last axis."""
    return sfft.ifft(x, axis=-1, norm="ortho", workers=_FFT_WORKERS)


class GridMismatchError(ValueError):
    """Two objects that must share a grid do not."""


@dataclass(frozen=True)
class SignalGrid:
    """Uniform, periodic time/frequency sampling grid."""

    num_samples: int
    sample_rate: float
    center_frequency_offset: float = 0.0

    def __post_init__(self):
        n = self.num_samples
        if not isinstance(n, (int, np.integer)) or isinstance(n, bool):
            raise TypeError("num_samples must be an integer")
        if n < 2 or (n & (n - 1)) != 0:
            raise ValueError(f"num_samples must be a power of two >= 2, got {n}")
        if not np.isfinite(self.sample_rate) or self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        object.__setattr__(self, "num_samples", int(n))
        object.__setattr__(self, "sample_rate", float(self.sample_rate))
        object.__setattr__(self, "center_frequency_offset", float(self.center_frequency_offset))

    @property
    def duration(self) -> float:
        return self.num_samples / self.sample_rate

    @property
    def dt(self) -> float:
        return 1.0 / self.sample_rate

    @property
    def frequency_spacing(self) -> float:
        return self.sample_rate / self.num_samples

    @property
    def nyquist(self) -> float:
        return self.sample_rate / 2

    def time_axis(self) -> np.ndarray:
        return np.arange(self.num_samples) / self.sample_rate

    def frequency_axis(self) -> np.ndarray:
        """Detuning (Hz) of every DFT bin, in DFT order."""
        return sfft.fftfreq(self.num_samples, d=1.0 / self.sample_rate)

    def angular_frequency_axis(self) -> np.ndarray:
        return 2 * np.pi * self.frequency_axis()

    def bin_of(self, detuning_hz: float) -> int:
        """Index of the DFT bin closest to ``detuning_hz``."""
        return int(np.round(detuning_hz / self.frequency_spacing)) % self.num_samples

    def to_dict(self) -> dict:
        return {
            "num_samples": self.num_samples,
            "sample_rate": self.sample_rate,
            "center_frequency_offset": self.center_frequency_offset,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SignalGrid":
        return cls(int(d["num_samples"]), float(d["sample_rate"]),
                   float(d.get("center_frequency_offset", 0.0)))


@dataclass(frozen=True)
class ComplexEnvelope:
    """Sampled complex baseband field on a grid.

    ``domain`` records whether ``samples`` hold time samples or unitary DFT
    bins.  The sample array is copied and frozen at construction.
    """

    grid: SignalGrid
    samples: np.ndarray = field(repr=False)
    domain: str = "time"

    def __post_init__(self):
        s = np.array(self.samples, dtype=np.complex128)
        if s.ndim != 1 or s.shape[0] != self.grid.num_samples:
            raise ValueError(
                f"expected {self.grid.num_samples} samples, got shape {s.shape}")
        if not np.all(np.isfinite(s)):
            raise ValueError("envelope samples must be finite")
        if self.domain not in ("time", "frequency"):
            raise ValueError(f"unknown domain {self.domain!r}")
        s.flags.writeable = False
        object.__setattr__(self, "samples", s)

    @property
    def energy(self) -> float:
        return energy(self)

    def normalized(self) -> "ComplexEnvelope":
        e = self.energy
        if e == 0:
            raise ValueError("cannot normalize a zero-energy envelope")
        return ComplexEnvelope(self.grid, self.samples / np.sqrt(e), self.domain)

    def scaled(self, factor: complex) -> "ComplexEnvelope":
        return ComplexEnvelope(self.grid, self.samples * factor, self.domain)

    def __add__(self, other: "ComplexEnvelope") -> "ComplexEnvelope":
        _check_same(self, other)
        return ComplexEnvelope(self.grid, self.samples + other.samples, self.domain)


def _check_same(a: ComplexEnvelope, b: ComplexEnvelope) -> None:
    if a.grid != b.grid:
        raise GridMismatchError(f"grid mismatch: {a.grid} vs {b.grid}")
    if a.domain != b.domain:
        raise GridMismatchError(f"domain mismatch: {a.domain} vs {b.domain}")


def to_spectrum(env: ComplexEnvelope) -> ComplexEnvelope:
    """Unitary DFT of a time-domain envelope (energy preserving)."""
    if env.domain != "time":
        raise ValueError("to_spectrum expects a time-domain envelope")
    return ComplexEnvelope(env.grid, fft(env.samples), "frequency")


def to_time(spec: ComplexEnvelope) -> ComplexEnvelope:
    """Exact inverse of :func:`to_spectrum`."""
    if spec.domain != "frequency":
        raise ValueError("to_time expects a frequency-domain envelope")
    return ComplexEnvelope(spec.grid, ifft(spec.samples), "time")


def inner_product(a: ComplexEnvelope, b: ComplexEnvelope) -> complex:
    """``sum_i a_i * conj(b_i)``."""
    _check_same(a, b)
    return complex(np.vdot(b.samples, a.samples))


def energy(env: ComplexEnvelope) -> float:
    s = env.samples
    return float(np.vdot(s, s).real)


def frequency_shift(env: ComplexEnvelope, shift_hz: float) -> ComplexEnvelope:
    """Multiply a time-domain envelope by ``exp(j 2 pi shift t)``.

    Raises ``ValueError`` if the shift would alias (``|shift| >= fs/2``).
    """
    if env.domain != "time":
        raise ValueError("frequency_shift expects a time-domain envelope")
    if abs(shift_hz) >= env.grid.nyquist:
        raise ValueError(
            f"shift {shift_hz:g} Hz aliases on a grid with Nyquist {env.grid.nyquist:g} Hz")
    if shift_hz == 0:
        return env
    return ComplexEnvelope(env.grid, env.samples * tone(env.grid, shift_hz))


def tone(grid: SignalGrid, freq_hz: float) -> np.ndarray:
    """Samples of ``exp(j 2 pi f t)`` on the grid.

    The phase argument is reduced modulo one cycle in exact integer steps when
    ``f`` sits on a bin, so bin-aligned tones are orthogonal to machine precision.
    """
    n = np.arange(grid.num_samples)
    cycles = freq_hz / grid.frequency_spacing
    k = np.round(cycles)
    if abs(cycles - k) < 1e-9:
        # bin-aligned: (k * n) mod N is exact in integers
        return np.exp(2j * np.pi * ((int(k) * n) % grid.num_samples) / grid.num_samples)
    return np.exp(2j * np.pi * freq_hz * n / grid.sample_rate)
