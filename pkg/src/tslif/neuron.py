"""Discrete-time spiking neuron dynamics: vanilla LIF, a generic two-compartment
model, and the dual-compartment variant with direct somatic current injection.

Single-compartment (LIF):

    v[t] = a * v[t-1] + c[t] - v_th * s[t-1]
    s[t] = H(v[t] - v_th)            H(x) = 1 for x >= 0, else 0

Generic two-compartment (only the soma spikes):

    v_d[t] = a1 * v_d[t-1] + b1 * v_s[t-1] + c[t]
    v_s[t] = a2 * v_s[t-1] + b2 * v_d[t] - v_th * s_s[t-1]

Dual-compartment with somatic shortcut, dendritic spiking and adaptive resets
(the "temporal segment" neuron this package is named after):

    v_d[t] = a1 * v_d[t-1] + b1 * v_s[t-1] + (1 - a1) * c[t] - g1 * s_d[t-1]
    v_s[t] = a2 * v_s[t-1] + b2 * v_d[t]   + (1 - a2) * c[t] - g2 * s_s[t-1]
    s_mix[t] = kappa * s_d[t] + (1 - kappa) * s_s[t]

Note that v_s[t] uses the freshly updated v_d[t] (same step), and the reset
terms subtract the previous step's spike of the same compartment. All state is
float64 and updates are written in a fixed association order so that two
implementations of the same recursion produce bit-identical traces.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ContractError
from .series import SeriesFrame, as_frame

TRACE_FIELDS = ("v_d", "v_s", "s_d", "s_s", "s_mix")


@dataclass(frozen=True)
class LifParams:
    """Single-compartment parameters: decay factor and firing threshold."""

    alpha: float
    v_th: float = 1.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.alpha < 1.0:
            raise ContractError(f"LifParams.alpha must be in [0, 1), got {self.alpha}")
        if not self.v_th > 0.0:
            raise ContractError(f"LifParams.v_th must be positive, got {self.v_th}")


@dataclass(frozen=True)
class NeuronParams:
    """Coefficient set for one dual-compartment population.

    ``kappa`` may be a scalar (broadcast to all channels) or a per-channel
    vector with entries in [0, 1].
    """

    alpha1: float
    alpha2: float
    beta1: float
    beta2: float
    gamma1: float = 0.0
    gamma2: float = 0.0
    v_th: float = 1.0
    kappa: float | np.ndarray = 0.5

    def __post_init__(self) -> None:
        if not 0.0 <= self.alpha1 <= 1.0:
            raise ContractError(f"alpha1 must be in [0, 1], got {self.alpha1}")
        if not 0.0 <= self.alpha2 <= 1.0:
            raise ContractError(f"alpha2 must be in [0, 1], got {self.alpha2}")
        if not self.v_th > 0.0:
            raise ContractError(f"v_th must be positive, got {self.v_th}")
        if self.gamma1 < 0.0 or self.gamma2 < 0.0:
            raise ContractError(f"reset magnitudes must be >= 0, got {self.gamma1}, {self.gamma2}")
        kappa = np.asarray(self.kappa, dtype=np.float64)
        if np.any(kappa < 0.0) or np.any(kappa > 1.0):
            raise ContractError("kappa must lie in [0, 1] for every channel")
        object.__setattr__(self, "kappa", kappa if kappa.ndim else float(kappa))


@dataclass
class CompartmentState:
    """Per-neuron membrane potentials and last emitted spikes."""

    v_d: np.ndarray
    v_s: np.ndarray
    s_d: np.ndarray
    s_s: np.ndarray

    def __post_init__(self) -> None:
        self.v_d = np.asarray(self.v_d, dtype=np.float64)
        self.v_s = np.asarray(self.v_s, dtype=np.float64)
        self.s_d = np.asarray(self.s_d, dtype=np.float64)
        self.s_s = np.asarray(self.s_s, dtype=np.float64)
        n = self.v_d.shape
        if not (self.v_s.shape == n and self.s_d.shape == n and self.s_s.shape == n):
            raise ContractError(
                "state vectors must share one shape, got "
                f"{self.v_d.shape}/{self.v_s.shape}/{self.s_d.shape}/{self.s_s.shape}"
            )
        _require_binary(self.s_d, "s_d")
        _require_binary(self.s_s, "s_s")

    @classmethod
    def zeros(cls, n: int) -> "CompartmentState":
        z = np.zeros(n, dtype=np.float64)
        return cls(z, z.copy(), z.copy(), z.copy())

    @property
    def size(self) -> int:
        return int(self.v_d.size)


@dataclass(frozen=True)
class StepOutput:
    """Post-step state plus the mixed spike output."""

    state: CompartmentState
    s_mix: np.ndarray


@dataclass(frozen=True)
class PopulationTrace:
    """Recorded per-step traces; unrecorded fields are None."""

    v_d: SeriesFrame | None
    v_s: SeriesFrame | None
    s_d: SeriesFrame | None
    s_s: SeriesFrame | None
    s_mix: SeriesFrame | None


def _require_binary(s: np.ndarray, name: str) -> None:
    if not np.all((s == 0.0) | (s == 1.0)):
        raise ContractError(f"{name} must contain only 0/1 values")


def _require_same_shape(op: str, **vectors: np.ndarray) -> None:
    shapes = {name: np.shape(v) for name, v in vectors.items()}
    if len(set(shapes.values())) > 1:
        raise ContractError(f"{op}: mismatched shapes {shapes}")


def heaviside(x: np.ndarray) -> np.ndarray:
    """Unit step with H(0) = 1."""
    return (np.asarray(x) >= 0.0).astype(np.float64)


def lif_step(
    params: LifParams,
    v_prev: np.ndarray,
    s_prev: np.ndarray,
    c: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """One membrane update: decay, integrate, reset by last spike, threshold."""
    v_prev = np.asarray(v_prev, dtype=np.float64)
    s_prev = np.asarray(s_prev, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    _require_same_shape("lif_step", v_prev=v_prev, s_prev=s_prev, c=c)
    _require_binary(s_prev, "s_prev")
    v = params.alpha * v_prev + c - params.v_th * s_prev
    s = heaviside(v - params.v_th)
    return v, s


def lif_unrolled(
    params: LifParams,
    currents: np.ndarray,
    steps: int,
    spiking: bool = True,
) -> np.ndarray:
    """Membrane trajectory v[1..steps] from zero initial state.

    With ``spiking=False`` the threshold is treated as infinite and the result
    is the exponentially weighted sum of past input currents.
    """
    currents = np.atleast_1d(np.asarray(currents, dtype=np.float64))
    if steps > currents.shape[0]:
        raise ContractError(
            f"lif_unrolled: requested {steps} steps but only {currents.shape[0]} inputs"
        )
    v = np.zeros(currents.shape[1:], dtype=np.float64)
    s = np.zeros_like(v)
    out = np.empty((steps,) + v.shape, dtype=np.float64)
    for t in range(steps):
        v = params.alpha * v + currents[t] - params.v_th * s
        s = heaviside(v - params.v_th) if spiking else s
        out[t] = v
    return out


def two_compartment_step(
    alpha1: float,
    alpha2: float,
    beta1: float,
    beta2: float,
    v_th: float,
    state: CompartmentState,
    c: np.ndarray,
) -> CompartmentState:
    """Generic coupled update where only the soma spikes and resets."""
    c = np.asarray(c, dtype=np.float64)
    _require_same_shape("two_compartment_step", v_d=state.v_d, c=c)
    v_d = alpha1 * state.v_d + beta1 * state.v_s + c
    v_s = alpha2 * state.v_s + beta2 * v_d - v_th * state.s_s
    s_s = heaviside(v_s - v_th)
    return CompartmentState(v_d, v_s, np.zeros_like(s_s), s_s)


def tslif_step(
    params: NeuronParams,
    state: CompartmentState,
    c: np.ndarray,
    spiking: bool = True,
) -> StepOutput:
    """One dual-compartment update; the soma sees the already-updated dendrite.

    ``spiking=False`` freezes both spike outputs at zero (infinite threshold),
    exposing the underlying linear system.
    """
    c = np.asarray(c, dtype=np.float64)
    _require_same_shape("tslif_step", v_d=state.v_d, c=c)
    v_d = params.alpha1 * state.v_d + params.beta1 * state.v_s \
        + (1.0 - params.alpha1) * c - params.gamma1 * state.s_d
    v_s = params.alpha2 * state.v_s + params.beta2 * v_d \
        + (1.0 - params.alpha2) * c - params.gamma2 * state.s_s
    if spiking:
        s_d = heaviside(v_d - params.v_th)
        s_s = heaviside(v_s - params.v_th)
    else:
        s_d = np.zeros_like(v_d)
        s_s = np.zeros_like(v_s)
    s_mix = params.kappa * s_d + (1.0 - params.kappa) * s_s
    return StepOutput(CompartmentState(v_d, v_s, s_d, s_s), s_mix)


def simulate_population(
    params: NeuronParams,
    currents: SeriesFrame | np.ndarray,
    record: Sequence[str] = TRACE_FIELDS,
    spiking: bool = True,
    initial_state: CompartmentState | None = None,
) -> PopulationTrace:
    """Run the dual-compartment recursion over a whole input frame.

    One population channel per input channel; the state starts at zero unless
    ``initial_state`` is given. Deterministic: identical inputs produce
    bit-identical traces.
    """
    frame = as_frame(currents)
    if frame.n_steps == 0:
        raise ContractError("simulate_population: empty input")
    unknown = set(record) - set(TRACE_FIELDS)
    if unknown:
        raise ContractError(f"simulate_population: unknown record fields {sorted(unknown)}")
    n = frame.n_channels
    state = initial_state if initial_state is not None else CompartmentState.zeros(n)
    if state.size != n:
        raise ContractError(
            f"simulate_population: state size {state.size} != channel count {n}"
        )
    rows: dict[str, np.ndarray] = {
        f: np.empty((frame.n_steps, n), dtype=np.float64) for f in record
    }
    for t in range(frame.n_steps):
        out = tslif_step(params, state, frame.values[t], spiking=spiking)
        state = out.state
        values = {
            "v_d": state.v_d, "v_s": state.v_s,
            "s_d": state.s_d, "s_s": state.s_s, "s_mix": out.s_mix,
        }
        for f in record:
            rows[f][t] = values[f]
    frames = {
        f: frame.with_values(rows[f]) if f in rows else None for f in TRACE_FIELDS
    }
    return PopulationTrace(**frames)


def write_trace_csv(trace: PopulationTrace, path: str) -> None:
    """Dump a fully recorded trace as rows of (step, channel, signals)."""
    frames = [getattr(trace, f) for f in TRACE_FIELDS]
    if any(fr is None for fr in frames):
        raise ContractError("write_trace_csv: trace must record all fields")
    ref = frames[0]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("t", "channel") + TRACE_FIELDS)
        for t in range(ref.n_steps):
            for j, name in enumerate(ref.channels):
                writer.writerow(
                    [t, name] + [repr(float(fr.values[t, j])) for fr in frames]
                )


def lif_as_dual_params(lif: LifParams) -> NeuronParams:
    """Embed a vanilla LIF into the dual-compartment form.

    With both couplings zero and the dendritic reset set to the threshold, the
    dendrite reproduces the LIF recursion exactly, provided the input current
    is pre-scaled by 1 / (1 - alpha).
    """
    if lif.alpha >= 1.0:
        raise ContractError("lif_as_dual_params: alpha must be < 1")
    return NeuronParams(
        alpha1=lif.alpha, alpha2=lif.alpha,
        beta1=0.0, beta2=0.0,
        gamma1=lif.v_th, gamma2=lif.v_th,
        v_th=lif.v_th, kappa=1.0,
    )


def lif_input_scale(lif: LifParams) -> float:
    """Current pre-scale factor used with :func:`lif_as_dual_params`."""
    return 1.0 / (1.0 - lif.alpha)


def constant_input(value: float, steps: int, channels: int = 1) -> SeriesFrame:
    """Convenience: a constant-current frame."""
    return SeriesFrame(np.full((steps, channels), float(value)))


def impulse_input(steps: int, channels: int = 1, amplitude: float = 1.0) -> SeriesFrame:
    """Convenience: unit impulse at the first step."""
    values = np.zeros((steps, channels), dtype=np.float64)
    values[0, :] = amplitude
    return SeriesFrame(values)


__all__ = [
    "LifParams", "NeuronParams", "CompartmentState", "StepOutput",
    "PopulationTrace", "TRACE_FIELDS", "heaviside",
    "lif_step", "lif_unrolled", "two_compartment_step", "tslif_step",
    "simulate_population", "write_trace_csv",
    "lif_as_dual_params", "lif_input_scale",
    "constant_input", "impulse_input",
]
