"""Waveform quality metrics and the receiver-side processing chain.

Correlation is the complex-field correlation maximized over circular lag and
global phase.  The receiver chain mirrors the measurement processing:
frequency-offset removal, a slow block phase aligner and, for QPSK, a
fourth-power carrier phase estimator.  There is deliberately no equalizer.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .envelope import ComplexEnvelope, GridMismatchError, fft, ifft, tone
from .rng import rng

log = logging.getLogger(__name__)

DEFAULT_BLOCK_LEN = 2000


class ZeroEnergyError(ValueError):
    pass


@dataclass(frozen=True)
class ImpairmentSpec:
    """Post-hoc channel impairments.

    The acousto-optic frequency shift ``aom_base_shift_hz +
    stage_index * aom_per_stage_shift_hz`` is applied only when
    ``stage_index`` is set, so ``ImpairmentSpec()`` is the identity.
    """

    aom_base_shift_hz: float = 350e6
    aom_per_stage_shift_hz: float = 200e6
    stage_index: int | None = None
    awgn_snr_db: float | None = None
    residual_lo_offset_hz: float | None = None
    slow_phase_drift: float | None = None

    def __post_init__(self):
        if self.stage_index is not None and self.stage_index < 0:
            raise ValueError("stage_index must be non-negative")

    @property
    def aom_shift_hz(self) -> float:
        if self.stage_index is None:
            return 0.0
        return self.aom_base_shift_hz + self.stage_index * self.aom_per_stage_shift_hz

    @property
    def total_shift_hz(self) -> float:
        return self.aom_shift_hz + (self.residual_lo_offset_hz or 0.0)

    def to_dict(self) -> dict:
        return {"aom_base_shift_hz": self.aom_base_shift_hz,
                "aom_per_stage_shift_hz": self.aom_per_stage_shift_hz,
                "stage_index": self.stage_index, "awgn_snr_db": self.awgn_snr_db,
                "residual_lo_offset_hz": self.residual_lo_offset_hz,
                "slow_phase_drift": self.slow_phase_drift}

    @classmethod
    def from_dict(cls, d: dict | None) -> "ImpairmentSpec":
        return cls(**(d or {}))


@dataclass
class QualityReport:
    correlation: float
    best_lag: int
    best_phase: float
    evm_percent: float | None = None
    constellation: list[complex] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"correlation": self.correlation, "best_lag": self.best_lag,
                "best_phase": self.best_phase, "evm_percent": self.evm_percent,
                "num_constellation_points": len(self.constellation)}


class OffsetEstimate(NamedTuple):
    offset_hz: float
    low_confidence: bool


class CpeResult(NamedTuple):
    envelope: ComplexEnvelope
    phases: np.ndarray
    ambiguous: bool


def _same_grid(a: ComplexEnvelope, b: ComplexEnvelope) -> None:
    if a.grid != b.grid:
        raise GridMismatchError("envelopes must share one grid")


# -- correlation ---------------------------------------------------------------

def circular_xcorr(measured: np.ndarray, reference: np.ndarray) -> np.ndarray:
    """``c[L] = sum_i m[i + L] conj(r[i])`` for every circular lag L."""
    return np.fft.ifft(np.fft.fft(measured) * np.fft.fft(reference).conj())


def waveform_correlation(measured: ComplexEnvelope, reference: ComplexEnvelope) -> QualityReport:
    """Peak normalized cross-correlation over circular lags.

    ``best_lag`` is the shift L (signed, |L| <= N/2) such that
    ``measured[i + L]`` lines up with ``reference[i]``; ``best_phase`` is the
    rotation that, applied to the shifted measurement, aligns it with the
    reference.
    """
    _same_grid(measured, reference)
    m, r = measured.samples, reference.samples
    nm, nr = np.linalg.norm(m), np.linalg.norm(r)
    if nm == 0 or nr == 0:
        raise ZeroEnergyError("correlation of a zero-energy waveform")
    c = circular_xcorr(m, r)
    lag = int(np.argmax(np.abs(c)))
    corr = float(min(abs(c[lag]) / (nm * nr), 1.0))
    n = len(m)
    signed = lag - n if lag > n // 2 else lag
    return QualityReport(corr, signed, float(-np.angle(c[lag])))


def align(measured: ComplexEnvelope, report: QualityReport) -> ComplexEnvelope:
    """Apply the lag and phase found by :func:`waveform_correlation`."""
    x = np.roll(measured.samples, -report.best_lag) * np.exp(1j * report.best_phase)
    return ComplexEnvelope(measured.grid, x)


def cross_correlation_matrix(channels: Sequence[ComplexEnvelope]) -> np.ndarray:
    if len(channels) < 2:
        raise ValueError("need at least two channels")
    n = len(channels)
    m = np.eye(n)
    for i in range(n):
        for j in range(i + 1, n):
            v = waveform_correlation(channels[i], channels[j]).correlation
            m[i, j] = m[j, i] = v
    return m


def evm_percent(received: np.ndarray, ideal: np.ndarray) -> tuple[float, np.ndarray]:
    """RMS EVM after a least-squares complex gain; returns (EVM %, scaled points)."""
    received = np.asarray(received, dtype=complex)
    ideal = np.asarray(ideal, dtype=complex)
    g = np.vdot(received, ideal) / np.vdot(received, received)
    pts = received * g
    err = np.sqrt(np.mean(np.abs(pts - ideal) ** 2) / np.mean(np.abs(ideal) ** 2))
    return float(100 * err), pts


def extract_channel(env: ComplexEnvelope, offset_hz: float, bandwidth_hz: float) -> ComplexEnvelope:
    """Down-convert the channel at ``offset_hz`` and brick-wall filter it to ``bandwidth_hz``."""
    x = env.samples * tone(env.grid, -offset_hz) if offset_hz else env.samples
    f = env.grid.frequency_axis()
    X = fft(x) * (np.abs(f) <= bandwidth_hz / 2)
    return ComplexEnvelope(env.grid, ifft(X))


def carrier_suppression_db(env: ComplexEnvelope) -> float:
    """Power in the zero-detuning bin relative to total power (dB)."""
    X = fft(env.samples)
    p = np.abs(X) ** 2
    return float(10 * np.log10(max(p[0], 1e-300) / p.sum()))


def random_correlation_baseline(make_waveform, trials: int = 30) -> tuple[float, float]:
    """Monte-Carlo mean and std of the correlation between independent waveforms.

    ``make_waveform(seed)`` must return a ComplexEnvelope; pairs use seeds
    ``(2t, 2t + 1)``.
    """
    vals = [waveform_correlation(make_waveform(2 * t), make_waveform(2 * t + 1)).correlation
            for t in range(trials)]
    return float(np.mean(vals)), float(np.std(vals, ddof=1) if trials > 1 else 0.0)


# -- impairments ---------------------------------------------------------------

def inject_impairments(env: ComplexEnvelope, spec: ImpairmentSpec, seed: int = 0) -> ComplexEnvelope:
    grid = env.grid
    x = env.samples
    shift = spec.total_shift_hz
    if abs(shift) >= grid.nyquist:
        raise ValueError("impairment frequency shift aliases")
    t = grid.time_axis()
    phase = np.zeros(grid.num_samples)
    if shift:
        phase = phase + 2 * np.pi * shift * t
    if spec.slow_phase_drift:
        phase = phase + spec.slow_phase_drift * t
    if phase.any():
        x = x * np.exp(1j * phase)
    if spec.awgn_snr_db is not None:
        e_sig = float(np.vdot(x, x).real)
        e_noise = e_sig / 10 ** (spec.awgn_snr_db / 10)
        noise = rng(seed, "impairments/awgn").complex_normal(grid.num_samples)
        x = x + noise * np.sqrt(e_noise / grid.num_samples)
    return ComplexEnvelope(grid, x)


# -- receiver chain --------------------------------------------------------------

def _weighted_line_fit(t: np.ndarray, phase: np.ndarray, w: np.ndarray) -> tuple[float, float]:
    W = w.sum()
    tm = (w * t).sum() / W
    pm = (w * phase).sum() / W
    slope = (w * (t - tm) * (phase - pm)).sum() / (w * (t - tm) ** 2).sum()
    resid = np.sqrt((w * (phase - pm - slope * (t - tm)) ** 2).sum() / W)
    return float(slope), float(resid)


def estimate_frequency_offset(env: ComplexEnvelope, power: int = 1,
                              block_len: int | None = None,
                              symbol_rate_hz: float | None = None) -> OffsetEstimate:
    """Frequency offset (Hz) from a linear fit to the phase evolution.

    The signal is raised to ``power`` (1 for CW-like signals, 2 to strip the
    sign flips of real OOK fields, 4 to strip QPSK modulation).  A coarse
    estimate is taken from the strongest spectral line, removed, and the
    residual is the least-squares slope of the unwrapped phase of
    block-summed samples (amplitude weighted).  By default the record is
    split into 256, 32 or 8 blocks for powers 1, 2 and 4: the fourth power
    amplifies noise most, so it needs the longest integration per block.

    On short records the clock tones at ``power * offset +- symbol_rate``
    can outgrow the carrier line.  Passing ``symbol_rate_hz`` confines the
    coarse search to within half a symbol rate of ``power`` times the
    spectral centroid, which rejects those tones.
    """
    if power not in (1, 2, 4):
        raise ValueError("power must be 1, 2 or 4")
    grid = env.grid
    t = grid.time_axis()
    zp = env.samples**power
    if not np.any(zp):
        raise ZeroEnergyError("cannot estimate the offset of a zero-energy signal")
    # coarse: strongest line of the (power-law) spectrum
    f = np.fft.fftfreq(grid.num_samples, grid.dt)
    line = np.abs(np.fft.fft(zp))
    if symbol_rate_hz and power > 1:
        psd = np.abs(np.fft.fft(env.samples)) ** 2
        centroid = float((f * psd).sum() / psd.sum())
        line = np.where(np.abs(f - power * centroid) < symbol_rate_hz / 2, line, 0.0)
    coarse = float(f[int(np.argmax(line))])
    z = zp * tone(grid, -coarse)
    if block_len is None:
        block_len = max(1, grid.num_samples // {1: 256, 2: 32, 4: 8}[power])
    nb = grid.num_samples // block_len
    zb = z[:nb * block_len].reshape(nb, block_len).sum(axis=1)
    tb = t[:nb * block_len].reshape(nb, block_len).mean(axis=1)
    w = np.abs(zb)
    # unwrap through sample-to-sample increments, robust to near-zero samples
    inc = np.angle(zb[1:] * zb[:-1].conj())
    ph = np.concatenate([[np.angle(zb[0])], np.angle(zb[0]) + np.cumsum(inc)])
    slope, resid = _weighted_line_fit(tb, ph, w)
    est = (coarse + slope / (2 * np.pi)) / power
    low = bool(resid > 1.0 or np.max(np.abs(inc)) > 0.9 * np.pi)
    if low:
        log.warning("frequency offset estimate is low confidence (phase residual %.2f rad)", resid)
    return OffsetEstimate(float(est), low)


def block_phase_align(env: ComplexEnvelope, reference: ComplexEnvelope,
                      block_len: int = DEFAULT_BLOCK_LEN) -> ComplexEnvelope:
    """Rotate each block of ``env`` by ``arg <reference_block, env_block>``.

    Blocks with zero overlap are left unrotated (logged).
    """
    _same_grid(env, reference)
    if block_len < 1:
        raise ValueError("block_len must be >= 1")
    x = env.samples.copy()
    r = reference.samples
    for lo in range(0, len(x), block_len):
        sl = slice(lo, lo + block_len)
        ov = np.vdot(x[sl], r[sl])
        if ov == 0:
            log.warning("zero-energy block at sample %d left unrotated", lo)
            continue
        x[sl] *= np.exp(1j * np.angle(ov))
    return ComplexEnvelope(env.grid, x)


def viterbi_viterbi_cpe(env: ComplexEnvelope, block_len: int = 64,
                        reference: ComplexEnvelope | None = None) -> CpeResult:
    """Fourth-power carrier phase estimation for Gray QPSK ``(+-1 +-j)/sqrt(2)``.

    Per block ``theta = arg(-sum s^4) / 4`` (the constellation's fourth power
    is -1), unwrapped across blocks with period pi/2, then removed.  The
    remaining pi/2 ambiguity is resolved against ``reference`` when given;
    otherwise the result is flagged ambiguous.
    """
    x = env.samples
    n = len(x)
    nb = max(1, int(np.ceil(n / block_len)))
    theta = np.empty(nb)
    for b in range(nb):
        blk = x[b * block_len:(b + 1) * block_len]
        theta[b] = np.angle(-np.sum(blk**4)) / 4
    theta = np.unwrap(theta, period=np.pi / 2)
    per_sample = np.repeat(theta, block_len)[:n]
    y = x * np.exp(-1j * per_sample)
    ambiguous = True
    if reference is not None:
        _same_grid(env, reference)
        scores = [np.vdot(reference.samples, y * 1j**q).real for q in range(4)]
        q = int(np.argmax(scores))
        y = y * 1j**q
        per_sample = per_sample - q * np.pi / 2
        theta = theta - q * np.pi / 2
        ambiguous = False
    return CpeResult(ComplexEnvelope(env.grid, y), theta, ambiguous)


@dataclass(frozen=True)
class DspConfig:
    """Receiver chain settings."""

    block_len: int = DEFAULT_BLOCK_LEN
    frequency_offset: str = "estimate"  # "estimate" | "known" | "none"
    offset_power: int = 1
    cpe: bool = False
    cpe_block_len: int = DEFAULT_BLOCK_LEN
    symbol_rate_hz: float | None = None

    def to_dict(self) -> dict:
        return {"block_len": self.block_len, "frequency_offset": self.frequency_offset,
                "offset_power": self.offset_power, "cpe": self.cpe,
                "cpe_block_len": self.cpe_block_len, "symbol_rate_hz": self.symbol_rate_hz}

    @classmethod
    def from_dict(cls, d: dict | None) -> "DspConfig":
        return cls(**(d or {}))


def receiver_chain(received: ComplexEnvelope, reference: ComplexEnvelope,
                   cfg: DspConfig = DspConfig(), known_offset_hz: float = 0.0) -> ComplexEnvelope:
    """Offset removal, optional fourth-power CPE, then block phase alignment."""
    x = received
    if cfg.frequency_offset == "known":
        off = known_offset_hz
    elif cfg.frequency_offset == "estimate":
        off = estimate_frequency_offset(x, power=cfg.offset_power,
                                        symbol_rate_hz=cfg.symbol_rate_hz).offset_hz
    elif cfg.frequency_offset == "none":
        off = 0.0
    else:
        raise ValueError(f"unknown frequency_offset mode {cfg.frequency_offset!r}")
    if off:
        x = ComplexEnvelope(x.grid, x.samples * tone(x.grid, -off))
    if cfg.cpe:
        x = viterbi_viterbi_cpe(x, cfg.cpe_block_len, reference).envelope
    return block_phase_align(x, reference, cfg.block_len)
