"""Wavefront-matching design of the per-stage phase masks.

The input fields are propagated forward and the targets backward through
the cascade.  At stage k the overlap field is

    o_k(t) = sum_i f_i(t) * conj(b_i(t)) * exp(j Phi_k(t))

where ``f_i`` arrives from the input side (before mask k) and ``b_i`` from
the output side (after mask k).  The mask is updated by

    dPhi_k(t) = -arg[o_k(t) exp(-j phi_k)],   phi_k = arg(sum_t o_k(t))

which aligns every sample of ``o_k`` with its mean phase and can only
increase ``|sum_t o_k(t)|``.  Because the cascade is unitary, that sum equals
the channel-diagonal trace of the output overlap matrix at every stage.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

from .envelope import ComplexEnvelope, GridMismatchError, SignalGrid
from .propagation import (CascadeDesign, PhaseMask, backward_planes, filter_backward,
                          filter_forward, forward_planes)
from .rng import rng

log = logging.getLogger(__name__)

SweepOrder = Literal["ascending", "descending", "alternating"]


class DegenerateOverlapError(ArithmeticError):
    """The overlap field is identically zero; no mean phase exists."""


@dataclass(frozen=True)
class ConstraintSet:
    """Hardware limits on the drive waveform.

    ``max_swing_radians`` is the peak-to-peak phase; the DAC levels span
    ``[-swing/2, +swing/2]``.  When only ``dac_bits`` is given the swing
    defaults to 2*pi.
    """

    drive_bandwidth_hz: float | None = None
    dac_bits: int | None = None
    max_swing_radians: float | None = None

    def __post_init__(self):
        if self.drive_bandwidth_hz is not None and self.drive_bandwidth_hz <= 0:
            raise ValueError("drive bandwidth must be positive")
        if self.dac_bits is not None and self.dac_bits < 1:
            raise ValueError("dac_bits must be >= 1")
        if self.max_swing_radians is not None and self.max_swing_radians <= 0:
            raise ValueError("max swing must be positive")

    @property
    def empty(self) -> bool:
        return (self.drive_bandwidth_hz is None and self.dac_bits is None
                and self.max_swing_radians is None)

    @property
    def swing(self) -> float | None:
        if self.max_swing_radians is not None:
            return self.max_swing_radians
        return 2 * np.pi if self.dac_bits is not None else None

    def levels(self) -> np.ndarray | None:
        if self.dac_bits is None:
            return None
        s = self.swing
        return np.linspace(-s / 2, s / 2, 2**self.dac_bits)

    def to_dict(self) -> dict:
        return {"drive_bandwidth_hz": self.drive_bandwidth_hz, "dac_bits": self.dac_bits,
                "max_swing_radians": self.max_swing_radians}

    @classmethod
    def from_dict(cls, d: dict | None) -> "ConstraintSet":
        d = d or {}
        return cls(d.get("drive_bandwidth_hz"), d.get("dac_bits"), d.get("max_swing_radians"))


@dataclass(frozen=True)
class OptimizerConfig:
    max_iterations: int = 1000
    convergence_tolerance: float = 1e-6
    sweep_order: SweepOrder = "alternating"
    constraints: ConstraintSet = field(default_factory=ConstraintSet)
    record_history: bool = True
    step_size: float = 1.0
    init_amplitude: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.convergence_tolerance <= 0:
            raise ValueError("convergence_tolerance must be positive")
        if self.sweep_order not in ("ascending", "descending", "alternating"):
            raise ValueError(f"unknown sweep order {self.sweep_order!r}")
        if not 0 < self.step_size <= 1:
            raise ValueError("step_size must lie in (0, 1]")
        if self.init_amplitude < 0:
            raise ValueError("init_amplitude must be non-negative")


@dataclass(frozen=True)
class ChannelPair:
    """Forward seeds and backward targets, normalized to unit energy."""

    inputs: tuple[ComplexEnvelope, ...]
    targets: tuple[ComplexEnvelope, ...]

    def __post_init__(self):
        ins = tuple(e.normalized() for e in self.inputs)
        tgs = tuple(e.normalized() for e in self.targets)
        if len(ins) < 1 or len(ins) != len(tgs):
            raise ValueError("need matching, non-empty input and target lists")
        grid = ins[0].grid
        if any(e.grid != grid for e in ins + tgs):
            raise GridMismatchError("all channel fields must share one grid")
        object.__setattr__(self, "inputs", ins)
        object.__setattr__(self, "targets", tgs)

    @property
    def n(self) -> int:
        return len(self.inputs)

    @property
    def grid(self) -> SignalGrid:
        return self.inputs[0].grid


@dataclass
class OverlapReport:
    """Per-stage overlap matrices and optimization history.

    ``stage_overlaps[k][i, j] = sum_t f_i b_j^* exp(j Phi_k)`` with the final
    masks.  ``history`` holds ``|Tr O| / n`` after every iteration (sweep).
    """

    stage_overlaps: np.ndarray
    history: list[float]
    converged: bool
    iterations: int
    best_iteration: int

    @property
    def final_trace_magnitude(self) -> float:
        return float(abs(np.trace(self.stage_overlaps[-1])) / self.stage_overlaps.shape[1])

    @property
    def output_overlap(self) -> np.ndarray:
        return self.stage_overlaps[-1]


# -- single-stage primitives -------------------------------------------------

def stage_overlap(forward_k: ComplexEnvelope, backward_k: ComplexEnvelope,
                  mask: PhaseMask) -> tuple[ComplexEnvelope, complex]:
    if not (forward_k.grid == backward_k.grid == mask.grid):
        raise GridMismatchError("stage_overlap arguments must share one grid")
    o = forward_k.samples * backward_k.samples.conj() * np.exp(1j * mask.phase)
    return ComplexEnvelope(forward_k.grid, o), complex(o.sum())


def _phase_update(o: np.ndarray) -> np.ndarray:
    if not np.any(o):
        raise DegenerateOverlapError("overlap field is identically zero")
    ref = np.angle(o.sum())
    d = -np.angle(o * np.exp(-1j * ref))
    d[d <= -np.pi] = np.pi
    return d


def phase_update(o_k: ComplexEnvelope) -> PhaseMask:
    """Mask correction ``dPhi`` in (-pi, pi] from an overlap field."""
    return PhaseMask(o_k.grid, _phase_update(o_k.samples))


def _band_limit_count(grid: SignalGrid, bandwidth_hz: float | None) -> int | None:
    if bandwidth_hz is None:
        return None
    k = int(np.floor(bandwidth_hz / grid.frequency_spacing * (1 + 1e-12)))
    if 2 * k + 1 >= grid.num_samples:
        warnings.warn(f"drive bandwidth {bandwidth_hz:g} Hz is at or above Nyquist; "
                      "band limit ignored", RuntimeWarning, stacklevel=3)
        return None
    return k


def _project(phase: np.ndarray, constraints: ConstraintSet, grid: SignalGrid,
             kmax: int | None) -> np.ndarray:
    swing = constraints.swing
    levels = constraints.levels()

    def clip_quantize(v):
        if swing is not None:
            v = np.clip(v, -swing / 2, swing / 2)
        if levels is not None:
            step = swing / (len(levels) - 1)
            idx = np.clip(np.round((v + swing / 2) / step), 0, len(levels) - 1)
            v = levels[idx.astype(int)]
        return v

    if kmax is None:
        return clip_quantize(phase)
    # band-limited drive: the 2K+1 Fourier coefficients are equivalent to 2K+1
    # equispaced DAC samples; constrain those and reconstruct band-limited
    n = grid.num_samples
    m = 2 * kmax + 1
    spec = np.fft.fft(phase)
    coef = np.concatenate([spec[:kmax + 1], spec[n - kmax:]]) if kmax else spec[:1]
    dac = np.fft.ifft(coef).real * (m / n)
    if swing is not None or levels is not None:
        dac = clip_quantize(dac)
    coef = np.fft.fft(dac) * (n / m)
    full = np.zeros(n, dtype=complex)
    full[:kmax + 1] = coef[:kmax + 1]
    if kmax:
        full[n - kmax:] = coef[m - kmax:]
    return np.fft.ifft(full).real


def apply_constraints(mask: PhaseMask, constraints: ConstraintSet,
                      grid: SignalGrid | None = None) -> PhaseMask:
    """Project a mask onto the drive-hardware constraint set.

    Steps, each skipped when unset: (1) brick-wall low-pass of the phase
    waveform at ``drive_bandwidth_hz``; (2) clip to +-swing/2; (3) snap to the
    nearest of ``2**dac_bits`` uniform levels.  With a band limit, steps 2-3
    act on the equivalent DAC samples (one per retained Fourier degree of
    freedom) and the waveform is rebuilt band-limited from them, which keeps
    the projection idempotent.  Without a band limit they act per sample.
    """
    grid = grid or mask.grid
    if mask.grid != grid:
        raise GridMismatchError("mask grid differs from the given grid")
    if constraints.empty:
        return mask
    kmax = _band_limit_count(grid, constraints.drive_bandwidth_hz)
    return PhaseMask(grid, _project(mask.phase, constraints, grid, kmax))


# -- the optimizer -----------------------------------------------------------

class _Problem:
    """Array-level state for one optimization job."""

    def __init__(self, F: np.ndarray, B: np.ndarray, design: CascadeDesign,
                 cfg: OptimizerConfig):
        self.F = F
        self.B = B
        self.n = F.shape[0]
        self.design = design
        self.cfg = cfg
        self.grid = design.grid
        self.transfers = design.transfers()
        self.N = design.num_stages
        self.kmax = (_band_limit_count(self.grid, cfg.constraints.drive_bandwidth_hz)
                     if not cfg.constraints.empty else None)

    def constrain(self, phase: np.ndarray) -> np.ndarray:
        if self.cfg.constraints.empty:
            return phase
        return _project(phase, self.cfg.constraints, self.grid, self.kmax)

    def update(self, masks, k, f_k, b_k) -> None:
        o = np.einsum("ij,ij->j", f_k, b_k.conj()) * np.exp(1j * masks[k])
        masks[k] = self.constrain(masks[k] + self.cfg.step_size * _phase_update(o))

    def sweep_ascending(self, masks) -> np.ndarray:
        bk = backward_planes(self.B, masks, self.transfers)
        f = self.F
        for k in range(self.N):
            self.update(masks, k, f, bk[k])
            f = filter_forward(f * np.exp(1j * masks[k]), self.transfers[k])
        return f

    def sweep_descending(self, masks) -> np.ndarray:
        fk = forward_planes(self.F, masks, self.transfers)
        b = self.B
        for k in range(self.N - 1, -1, -1):
            b = filter_backward(b, self.transfers[k])
            self.update(masks, k, fk[k], b)
            b = b * np.exp(-1j * masks[k])
        return None

    def output(self, masks) -> np.ndarray:
        return forward_planes(self.F, masks, self.transfers)[-1]

    def objective(self, masks) -> float:
        out = self.output(masks)
        return float(abs(np.einsum("ij,ij->", out, self.B.conj())) / self.n)

    def overlaps(self, masks) -> np.ndarray:
        """(N, n, n) matrices O_kij evaluated at every stage plane."""
        fk = forward_planes(self.F, masks, self.transfers)
        bk = backward_planes(self.B, masks, self.transfers)
        out = np.empty((self.N, self.n, self.n), dtype=complex)
        for k in range(self.N):
            fm = fk[k] * np.exp(1j * masks[k])
            out[k] = fm @ bk[k].conj().T
        return out


def _initial_masks(design: CascadeDesign, cfg: OptimizerConfig) -> np.ndarray:
    masks = np.array(design.masks, dtype=float)
    if cfg.init_amplitude > 0:
        stream = rng(cfg.seed, "optimizer/init")
        masks = masks + cfg.init_amplitude * (2 * stream.uniform(masks.size) - 1).reshape(masks.shape)
    return masks


def _run(prob: _Problem, masks: np.ndarray) -> tuple[np.ndarray, OverlapReport]:
    cfg = prob.cfg
    if not cfg.constraints.empty:
        masks = np.array([prob.constrain(m) for m in masks])
    obj = prob.objective(masks)
    history = []
    best, best_masks, best_it = obj, masks.copy(), 0
    converged = False
    it = 0
    for it in range(1, cfg.max_iterations + 1):
        if cfg.sweep_order == "ascending" or (cfg.sweep_order == "alternating" and it % 2 == 1):
            prob.sweep_ascending(masks)
        else:
            prob.sweep_descending(masks)
        new = prob.objective(masks)
        if cfg.record_history:
            history.append(new)
        if new > best:
            best, best_masks, best_it = new, masks.copy(), it
        if new - obj < cfg.convergence_tolerance * max(obj, 1e-300):
            converged = True
            obj = new
            break
        obj = new
    log.debug("wavefront matching stopped after %d sweeps, objective %.9f", it, best)
    report = OverlapReport(prob.overlaps(best_masks), history, converged, it, best_it)
    return best_masks, report


def optimize_single(input: ComplexEnvelope, target: ComplexEnvelope,
                    design: CascadeDesign, cfg: OptimizerConfig | None = None
                    ) -> tuple[CascadeDesign, OverlapReport]:
    """Design the masks of ``design`` so it maps ``input`` onto ``target``.

    Returns the design with the best masks found and the overlap report.
    Non-convergence within ``max_iterations`` is reported via
    ``report.converged`` rather than raised.
    """
    cfg = cfg or OptimizerConfig()
    pair = ChannelPair((input,), (target,))
    if pair.grid != design.grid:
        raise GridMismatchError("fields and design use different grids")
    prob = _Problem(pair.inputs[0].samples[None, :], pair.targets[0].samples[None, :],
                    design, cfg)
    masks, report = _run(prob, _initial_masks(design, cfg))
    return design.with_masks(masks), report


def optimize_multi(channels: ChannelPair, design: CascadeDesign,
                   cfg: OptimizerConfig | None = None) -> tuple[CascadeDesign, OverlapReport]:
    """Joint design for n >= 2 channels, maximizing |Tr O|.

    Each mask update uses the channel-diagonal overlap sum; the full n x n
    matrices are reported.
    """
    cfg = cfg or OptimizerConfig()
    if channels.n < 2:
        raise ValueError("optimize_multi needs at least two channels")
    if channels.grid != design.grid:
        raise GridMismatchError("fields and design use different grids")
    F = np.stack([e.samples for e in channels.inputs])
    B = np.stack([e.samples for e in channels.targets])
    prob = _Problem(F, B, design, cfg)
    masks, report = _run(prob, _initial_masks(design, cfg))
    return design.with_masks(masks), report


def optimize(inputs: Sequence[ComplexEnvelope], targets: Sequence[ComplexEnvelope],
             design: CascadeDesign, cfg: OptimizerConfig | None = None
             ) -> tuple[CascadeDesign, OverlapReport]:
    """Dispatch to the single- or multi-channel optimizer."""
    if len(inputs) == 1:
        return optimize_single(inputs[0], targets[0], design, cfg)
    return optimize_multi(ChannelPair(tuple(inputs), tuple(targets)), design, cfg)
