"""Generalized time-lens stages and the cascade built from them.

A stage is a temporal phase mask followed by a dispersive all-pass filter.
Forward propagation applies stages 1..N (mask, then filter); backward
propagation undoes them in reverse order.  Every operation is unitary.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

from .envelope import ComplexEnvelope, GridMismatchError, SignalGrid, fft, ifft

SPEED_OF_LIGHT = 299_792_458.0

Direction = Literal["forward", "backward"]


@dataclass(frozen=True)
class PhaseMask:
    """Temporal phase (rad) per time sample; stored unwrapped."""

    grid: SignalGrid
    phase: np.ndarray = field(repr=False)

    def __post_init__(self):
        p = np.array(self.phase, dtype=float)
        if p.shape != (self.grid.num_samples,):
            raise ValueError(f"mask needs {self.grid.num_samples} samples, got {p.shape}")
        if not np.all(np.isfinite(p)):
            raise ValueError("phase mask contains non-finite values")
        p.flags.writeable = False
        object.__setattr__(self, "phase", p)

    @classmethod
    def zeros(cls, grid: SignalGrid) -> "PhaseMask":
        return cls(grid, np.zeros(grid.num_samples))


@dataclass(frozen=True)
class SpectralFilter:
    """Dispersive all-pass filter ``H(w) = exp(j phi(w))``.

    For ``kind="quadratic_dispersion"`` the spectral phase is
    ``phi(W) = D lambda0^2 / (4 pi c) * W^2`` with ``W`` the angular detuning
    from the grid centre and ``D`` the dispersion parameter (s/m).  With the
    package's ``exp(+j W t)`` synthesis convention a component at detuning
    ``df`` is delayed by ``tau = -D lambda0^2 / c * df``, so a negative D
    (normal dispersion, as in a dispersion-compensating FBG) delays the
    blue side.

    ``kind="tabulated"`` takes ``phase_table``: one spectral phase (rad) per
    DFT bin, in DFT order.
    """

    kind: Literal["quadratic_dispersion", "tabulated"] = "quadratic_dispersion"
    dispersion_ps_per_nm: float = 0.0
    reference_wavelength_nm: float = 1550.0
    phase_table: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in ("quadratic_dispersion", "tabulated"):
            raise ValueError(f"unknown filter kind {self.kind!r}")
        if self.kind == "tabulated":
            if self.phase_table is None:
                raise ValueError("tabulated filter requires phase_table")
            tab = np.array(self.phase_table, dtype=float)
            if tab.ndim != 1 or not np.all(np.isfinite(tab)):
                raise ValueError("phase_table must be a finite 1-D array")
            tab.flags.writeable = False
            object.__setattr__(self, "phase_table", tab)
        if self.reference_wavelength_nm <= 0:
            raise ValueError("reference wavelength must be positive")

    @property
    def beta(self) -> float:
        """Coefficient of W^2 in the spectral phase (s^2)."""
        d_si = self.dispersion_ps_per_nm * 1e-12 / 1e-9
        lam = self.reference_wavelength_nm * 1e-9
        return d_si * lam**2 / (4 * np.pi * SPEED_OF_LIGHT)

    def spectral_phase(self, grid: SignalGrid) -> np.ndarray:
        if self.kind == "tabulated":
            if self.phase_table.shape[0] != grid.num_samples:
                raise GridMismatchError(
                    f"phase table has {self.phase_table.shape[0]} bins, "
                    f"grid has {grid.num_samples}")
            return self.phase_table
        omega = grid.angular_frequency_axis()
        return self.beta * omega**2

    def group_delay(self, detuning_hz) -> np.ndarray:
        """Analytic group delay (s) of the quadratic filter at ``detuning_hz``."""
        return -2 * self.beta * 2 * np.pi * np.asarray(detuning_hz, dtype=float)

    def transfer(self, grid: SignalGrid) -> np.ndarray:
        return np.exp(1j * self.spectral_phase(grid))

    @property
    def is_identity(self) -> bool:
        if self.kind == "tabulated":
            return not np.any(self.phase_table)
        return self.dispersion_ps_per_nm == 0

    def to_dict(self) -> dict:
        d = {"kind": self.kind,
             "dispersion_ps_per_nm": self.dispersion_ps_per_nm,
             "reference_wavelength_nm": self.reference_wavelength_nm}
        return d


@dataclass(frozen=True)
class StagePlan:
    mask: PhaseMask
    filter: SpectralFilter


@dataclass(frozen=True)
class CascadeDesign:
    """N stages sharing one grid, plus the channel carrier offsets.

    With ``trailing_filter=False`` the filter of the last stage is skipped so
    the cascade ends on a mask.
    """

    grid: SignalGrid
    stages: tuple[StagePlan, ...]
    channel_offsets_hz: tuple[float, ...] = (0.0,)
    trailing_filter: bool = True

    def __post_init__(self):
        object.__setattr__(self, "stages", tuple(self.stages))
        object.__setattr__(self, "channel_offsets_hz",
                           tuple(float(o) for o in self.channel_offsets_hz))
        if len(self.stages) < 1:
            raise ValueError("a cascade needs at least one stage")
        if not self.channel_offsets_hz:
            raise ValueError("a cascade needs at least one channel")
        for k, st in enumerate(self.stages):
            if st.mask.grid != self.grid:
                raise GridMismatchError(f"stage {k} mask grid differs from cascade grid")
        if len(set(self.channel_offsets_hz)) != len(self.channel_offsets_hz):
            raise ValueError("channel offsets must be distinct")
        if any(abs(o) >= self.grid.nyquist for o in self.channel_offsets_hz):
            raise ValueError("channel offset beyond Nyquist")

    @property
    def num_stages(self) -> int:
        return len(self.stages)

    @property
    def masks(self) -> np.ndarray:
        return np.stack([st.mask.phase for st in self.stages])

    @classmethod
    def uniform(cls, grid: SignalGrid, num_stages: int, filt: SpectralFilter,
                channel_offsets_hz: Sequence[float] = (0.0,),
                trailing_filter: bool = True,
                masks: np.ndarray | None = None) -> "CascadeDesign":
        """Cascade with the same filter at every stage (zero masks by default)."""
        if masks is None:
            masks = np.zeros((num_stages, grid.num_samples))
        stages = [StagePlan(PhaseMask(grid, m), filt) for m in masks]
        return cls(grid, tuple(stages), tuple(channel_offsets_hz), trailing_filter)

    def with_masks(self, masks: np.ndarray) -> "CascadeDesign":
        stages = tuple(StagePlan(PhaseMask(self.grid, m), st.filter)
                       for m, st in zip(masks, self.stages))
        return CascadeDesign(self.grid, stages, self.channel_offsets_hz, self.trailing_filter)

    def transfers(self) -> list[np.ndarray | None]:
        """Per-stage filter transfer functions; ``None`` marks an identity filter."""
        out = []
        for k, st in enumerate(self.stages):
            last = k == self.num_stages - 1
            if (last and not self.trailing_filter) or st.filter.is_identity:
                out.append(None)
            else:
                out.append(st.filter.transfer(self.grid))
        return out


@dataclass
class StageTrace:
    """Per stage: (field before mask, after mask, after filter)."""

    stages: list[tuple[ComplexEnvelope, ComplexEnvelope, ComplexEnvelope]]

    def __len__(self):
        return len(self.stages)


def _check_grid(env: ComplexEnvelope, grid: SignalGrid) -> None:
    if env.grid != grid:
        raise GridMismatchError(f"envelope grid {env.grid} != {grid}")
    if env.domain != "time":
        raise ValueError("propagation expects time-domain envelopes")


def apply_mask(env: ComplexEnvelope, mask: PhaseMask,
               direction: Direction = "forward") -> ComplexEnvelope:
    _check_grid(env, mask.grid)
    sign = _sign(direction)
    return ComplexEnvelope(env.grid, env.samples * np.exp(sign * 1j * mask.phase))


def apply_filter(env: ComplexEnvelope, filt: SpectralFilter,
                 direction: Direction = "forward") -> ComplexEnvelope:
    if env.domain != "time":
        raise ValueError("propagation expects time-domain envelopes")
    h = filt.transfer(env.grid)
    if _sign(direction) < 0:
        h = h.conj()
    return ComplexEnvelope(env.grid, ifft(fft(env.samples) * h))


def _sign(direction: str) -> int:
    if direction == "forward":
        return 1
    if direction == "backward":
        return -1
    raise ValueError(f"direction must be 'forward' or 'backward', got {direction!r}")


# Array-level kernels shared with the optimizer.  ``x`` may be (N,) or (n, N).

def filter_forward(x: np.ndarray, h: np.ndarray | None) -> np.ndarray:
    return x if h is None else ifft(fft(x) * h)


def filter_backward(x: np.ndarray, h: np.ndarray | None) -> np.ndarray:
    return x if h is None else ifft(fft(x) * h.conj())


def forward_planes(x: np.ndarray, masks: np.ndarray, transfers) -> list[np.ndarray]:
    """Fields arriving at each stage (before its mask), plus the output.

    Returns N+1 arrays: entry k is the field before mask k, entry N the output.
    """
    planes = [x]
    for phase, h in zip(masks, transfers):
        x = filter_forward(x * np.exp(1j * phase), h)
        planes.append(x)
    return planes


def backward_planes(y: np.ndarray, masks: np.ndarray, transfers) -> list[np.ndarray]:
    """Output-side fields at each stage just after its mask (filter undone).

    Returns N arrays; entry k is the backward field at the plane where the
    forward field has just had mask k applied.
    """
    out = [None] * len(masks)
    for k in range(len(masks) - 1, -1, -1):
        y = filter_backward(y, transfers[k])
        out[k] = y
        y = y * np.exp(-1j * masks[k])
    return out


def propagate_forward(input: ComplexEnvelope, design: CascadeDesign,
                      keep_trace: bool = True) -> tuple[ComplexEnvelope, StageTrace | None]:
    """Apply stages 1..N (mask then filter) to ``input``."""
    _check_grid(input, design.grid)
    grid = design.grid
    x = input.samples
    trace = []
    for st, h in zip(design.stages, design.transfers()):
        after_mask = x * np.exp(1j * st.mask.phase)
        after_filter = filter_forward(after_mask, h)
        if keep_trace:
            trace.append(tuple(ComplexEnvelope(grid, v) for v in (x, after_mask, after_filter)))
        x = after_filter
    return ComplexEnvelope(grid, x), (StageTrace(trace) if keep_trace else None)


def propagate_backward(target: ComplexEnvelope, design: CascadeDesign,
                       keep_trace: bool = True) -> tuple[ComplexEnvelope, StageTrace | None]:
    """Undo stages N..1 (inverse filter, then inverse mask).

    The returned trace is indexed like the forward trace: entry k holds the
    backward field at the before-mask, after-mask and after-filter planes of
    stage k.
    """
    _check_grid(target, design.grid)
    grid = design.grid
    y = target.samples
    trace = [None] * design.num_stages
    transfers = design.transfers()
    for k in range(design.num_stages - 1, -1, -1):
        after_filter = y
        after_mask = filter_backward(after_filter, transfers[k])
        before_mask = after_mask * np.exp(-1j * design.stages[k].mask.phase)
        if keep_trace:
            trace[k] = tuple(ComplexEnvelope(grid, v)
                             for v in (before_mask, after_mask, after_filter))
        y = before_mask
    return ComplexEnvelope(grid, y), (StageTrace(trace) if keep_trace else None)
