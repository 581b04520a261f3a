"""Input seeds and target waveforms.

Targets are synthesized in the frequency domain from a circular symbol
sequence, so the symbol period does not need to be an integer number of
samples.  Random data comes from :func:`timelens.rng.rng`.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

from .envelope import ComplexEnvelope, SignalGrid, fft, frequency_shift, ifft, tone
from .rng import rng

# Gray labels b1b0 -> symbol; index is the 2-bit integer 2*b1 + b0
QPSK_GRAY = np.array([1 + 1j, -1 + 1j, 1 - 1j, -1 - 1j]) / np.sqrt(2)


@dataclass(frozen=True)
class ModulationSpec:
    format: Literal["OOK", "QPSK"]
    baud_rate: float
    rrc_rolloff: float = 0.01
    num_symbols: int = 512
    data_seed: int = 0
    amplitude_normalization: bool = True
    max_zero_run: int | None = None

    def __post_init__(self):
        fmt = str(self.format).upper()
        if fmt not in ("OOK", "QPSK"):
            raise ValueError(f"unsupported format {self.format!r}")
        object.__setattr__(self, "format", fmt)
        if self.baud_rate <= 0:
            raise ValueError("baud_rate must be positive")
        if not 0.0 <= self.rrc_rolloff <= 1.0:
            raise ValueError("rrc_rolloff must lie in [0, 1]")
        if self.num_symbols < 1:
            raise ValueError("num_symbols must be positive")
        if self.max_zero_run is not None and self.max_zero_run < 1:
            raise ValueError("max_zero_run must be >= 1")

    @property
    def occupied_bandwidth(self) -> float:
        return self.baud_rate * (1 + self.rrc_rolloff)

    def check_grid(self, grid: SignalGrid, offset_hz: float = 0.0) -> None:
        if self.occupied_bandwidth >= grid.sample_rate:
            raise ValueError("baud*(1+rolloff) exceeds the grid sample rate")
        if abs(offset_hz) + self.occupied_bandwidth / 2 >= grid.nyquist:
            raise ValueError(
                f"channel at {offset_hz:g} Hz with bandwidth {self.occupied_bandwidth:g} Hz "
                "does not fit below Nyquist")
        span = self.num_symbols * grid.sample_rate / self.baud_rate
        if span > grid.num_samples * (1 + 1e-12):
            raise ValueError(
                f"{self.num_symbols} symbols need {span:.1f} samples, grid has {grid.num_samples}")

    def to_dict(self) -> dict:
        return {"format": self.format, "baud_rate": self.baud_rate,
                "rrc_rolloff": self.rrc_rolloff, "num_symbols": self.num_symbols,
                "data_seed": self.data_seed,
                "amplitude_normalization": self.amplitude_normalization,
                "max_zero_run": self.max_zero_run}


@dataclass(frozen=True)
class CombSpec:
    num_lines: int
    line_spacing_hz: float
    weights: tuple[float, ...] | None = field(default=None)

    def __post_init__(self):
        if self.num_lines < 1:
            raise ValueError("num_lines must be >= 1")
        if self.num_lines > 1 and self.line_spacing_hz <= 0:
            raise ValueError("line spacing must be positive")
        if self.weights is not None and len(self.weights) != self.num_lines:
            raise ValueError("one weight per line required")

    @property
    def offsets(self) -> list[float]:
        n = self.num_lines
        return [(i - (n - 1) / 2) * self.line_spacing_hz for i in range(n)]


def rrc_filter_response(rolloff: float, baud: float, grid: SignalGrid) -> np.ndarray:
    """Root-raised-cosine magnitude response on the grid's DFT bins.

    Unit passband.  For ``rolloff == 0`` the brick-wall edge bins get
    ``1/sqrt(2)`` (the limit of the raised cosine at its band edge), which keeps
    matched pairs exactly Nyquist.
    """
    if not 0.0 <= rolloff <= 1.0:
        raise ValueError("rolloff must lie in [0, 1]")
    if baud * (1 + rolloff) / 2 >= grid.nyquist:
        raise ValueError("RRC bandwidth exceeds Nyquist")
    f = np.abs(grid.frequency_axis())
    f1 = (1 - rolloff) * baud / 2
    f2 = (1 + rolloff) * baud / 2
    h = np.zeros_like(f)
    if rolloff == 0:
        h[f < f1] = 1.0
        h[np.isclose(f, f1, rtol=0, atol=1e-9 * baud)] = np.sqrt(0.5)
        return h
    h[f <= f1] = 1.0
    roll = (f > f1) & (f < f2)
    h[roll] = np.sqrt(0.5 * (1 + np.cos(np.pi / (rolloff * baud) * (f[roll] - f1))))
    return h


def draw_symbols(spec: ModulationSpec) -> np.ndarray:
    """Random symbols for ``spec`` from the stream ``rng(data_seed, "symbols/<fmt>")``."""
    stream = rng(spec.data_seed, f"symbols/{spec.format.lower()}")
    if spec.format == "OOK":
        syms = stream.bits(spec.num_symbols, 1).astype(float)
        if spec.max_zero_run is not None:
            syms = _limit_zero_run(syms, spec.max_zero_run)
        return syms.astype(complex)
    return QPSK_GRAY[stream.bits(spec.num_symbols, 2)]


def _limit_zero_run(bits: np.ndarray, max_run: int) -> np.ndarray:
    # circular sequence: start counting after the last one
    out = bits.copy()
    if not out.any():
        out[0] = 1
    start = int(np.flatnonzero(out)[-1]) + 1
    run = 0
    n = len(out)
    for j in range(n):
        i = (start + j) % n
        if out[i] == 0:
            run += 1
            if run > max_run:
                out[i] = 1
                run = 0
        else:
            run = 0
    return out


def symbol_spectrum(symbols: np.ndarray, baud: float, grid: SignalGrid) -> np.ndarray:
    """DTFT of the impulse train ``sum_n a_n delta(t - n/baud)`` at the grid bins.

    Returned in the package's unitary normalization (samples of the impulse
    train, not yet pulse-shaped).
    """
    S = len(symbols)
    f = grid.frequency_axis()
    periodic = np.isclose(S * grid.sample_rate / baud, grid.num_samples, rtol=1e-12, atol=0)
    if periodic:
        # symbol pattern spans the window exactly: DTFT is the S-point DFT folded
        k = np.round(f / grid.frequency_spacing).astype(np.int64)
        return np.fft.fft(symbols)[k % S]
    n = np.arange(S)
    out = np.empty(grid.num_samples, dtype=complex)
    for lo in range(0, grid.num_samples, 1024):
        fk = f[lo:lo + 1024, None]
        out[lo:lo + 1024] = np.exp(-2j * np.pi * fk * n[None, :] / baud) @ symbols
    return out


def synthesize_target(spec: ModulationSpec, grid: SignalGrid, offset_hz: float = 0.0,
                      symbols: np.ndarray | None = None) -> tuple[ComplexEnvelope, np.ndarray]:
    """RRC-shaped OOK/QPSK envelope at carrier offset ``offset_hz``.

    ``symbols`` overrides the random draw (e.g. a forced all-ones pattern).
    Returns the envelope (unit energy unless normalization is disabled) and the
    ground-truth symbols.
    """
    spec.check_grid(grid, offset_hz)
    if symbols is None:
        symbols = draw_symbols(spec)
    symbols = np.asarray(symbols, dtype=complex)
    if symbols.shape != (spec.num_symbols,):
        raise ValueError("symbol override must have num_symbols entries")
    spectrum = symbol_spectrum(symbols, spec.baud_rate, grid)
    spectrum = spectrum * rrc_filter_response(spec.rrc_rolloff, spec.baud_rate, grid)
    env = ComplexEnvelope(grid, ifft(spectrum))
    if offset_hz:
        env = frequency_shift(env, offset_hz)
    if spec.amplitude_normalization:
        env = env.normalized()
    return env, symbols


def synthesize_comb_input(spec: CombSpec, grid: SignalGrid) -> list[ComplexEnvelope]:
    """Unit-energy CW lines centred on zero detuning."""
    offsets = spec.offsets
    if offsets and max(abs(o) for o in offsets) >= grid.nyquist:
        raise ValueError("comb span exceeds Nyquist")
    lines = []
    for off in offsets:
        x = tone(grid, off) / np.sqrt(grid.num_samples)
        lines.append(ComplexEnvelope(grid, x))
    return lines


def combine_lines(lines: Sequence[ComplexEnvelope], weights=None) -> ComplexEnvelope:
    """Single multi-line field (unit energy) from per-line envelopes."""
    if weights is None:
        weights = np.ones(len(lines))
    total = sum(np.sqrt(w) * ln.samples for w, ln in zip(weights, lines))
    return ComplexEnvelope(lines[0].grid, total).normalized()


def matched_filter_symbols(env: ComplexEnvelope, spec: ModulationSpec,
                           offset_hz: float = 0.0, delay_samples: float = 0.0) -> np.ndarray:
    """Matched-filter ``env`` and sample it at the symbol instants ``n / baud``.

    Sampling uses the band-limited interpolant, so fractional samples per
    symbol are exact.  The result is scaled so a noiseless synthesized target
    returns its symbols up to one common complex factor.
    """
    grid = env.grid
    x = env.samples
    if offset_hz:
        x = x * tone(grid, -offset_hz)
    X = fft(x) * rrc_filter_response(spec.rrc_rolloff, spec.baud_rate, grid)
    f = grid.frequency_axis()
    t_n = np.arange(spec.num_symbols) / spec.baud_rate + delay_samples / grid.sample_rate
    out = np.empty(spec.num_symbols, dtype=complex)
    for lo in range(0, spec.num_symbols, 256):
        tt = t_n[lo:lo + 256, None]
        out[lo:lo + 256] = np.exp(2j * np.pi * f[None, :] * tt) @ X
    return out / np.sqrt(grid.num_samples)
