"""Desk-scale experiments and metrics.

Covers the mixed-frequency decomposition demo, voltage power spectra, the
delayed spiking XOR benchmark, synthetic-sinusoid forecasting, relative-error
metrics, the accumulate-vs-multiply energy model, and missing-data masking.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .dataio import WindowSet
from .errors import ContractError
from .layers import (
    DEFAULT_NEURON_TEMPLATE,
    LayerStack,
    mlp_backbone,
    recurrent_backbone,
)
from .neuron import (
    CompartmentState,
    NeuronParams,
    simulate_population,
    two_compartment_step,
)
from .series import SeriesFrame, as_frame

PICOJOULE_PER_MAC = 4.6
PICOJOULE_PER_AC = 0.9


# ---------------------------------------------------------------------------
# Stimulus and spectra
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MixedStimulus:
    """Two-tone current: slow component plus a faster, larger one."""

    amp_low: float = 3.0
    freq_low: float = 0.5
    amp_high: float = 5.0
    freq_high: float = 4.0
    sample_rate: float = 100.0
    duration: float = 10.0

    def __post_init__(self) -> None:
        if self.duration <= 0.0:
            raise ContractError(f"duration must be positive, got {self.duration}")
        if self.sample_rate <= 2.0 * self.freq_high:
            raise ContractError(
                f"sample rate {self.sample_rate} violates the Nyquist bound for "
                f"{self.freq_high} Hz"
            )

    @property
    def n_samples(self) -> int:
        return int(round(self.sample_rate * self.duration))


def generate_stimulus(stimulus: MixedStimulus = MixedStimulus()) -> SeriesFrame:
    t = np.arange(stimulus.n_samples) / stimulus.sample_rate
    current = (
        stimulus.amp_low * np.sin(2.0 * np.pi * stimulus.freq_low * t)
        + stimulus.amp_high * np.sin(2.0 * np.pi * stimulus.freq_high * t)
    )
    return SeriesFrame(current, ("current",))


def fft_radix2(x: np.ndarray) -> np.ndarray:
    """Iterative decimation-in-time transform; length must be a power of two."""
    x = np.asarray(x, dtype=np.complex128).copy()
    n = x.shape[0]
    if n < 1 or n & (n - 1):
        raise ContractError(f"fft_radix2: length must be a power of two, got {n}")
    j = 0
    for i in range(1, n):
        bit = n >> 1
        while j & bit:
            j ^= bit
            bit >>= 1
        j |= bit
        if i < j:
            x[i], x[j] = x[j], x[i]
    size = 2
    while size <= n:
        half = size // 2
        twiddle = np.exp(-2j * np.pi * np.arange(half) / size)
        blocks = x.reshape(n // size, size)
        a = blocks[:, :half].copy()
        b = blocks[:, half:] * twiddle
        blocks[:, :half] = a + b
        blocks[:, half:] = a - b
        size *= 2
    return x


def next_power_of_two(n: int) -> int:
    p = 1
    while p < n:
        p *= 2
    return p


def power_spectrum(trace: SeriesFrame | np.ndarray, sample_rate: float) -> SeriesFrame:
    """One-sided power per frequency bin, averaged across channels.

    The signal is zero-padded to a power of two N; power is |X|^2 / N^2 with
    folded negative frequencies, so the bins sum to sum(x^2) / N.
    """
    frame = as_frame(trace)
    if frame.n_steps == 0:
        raise ContractError("power_spectrum: empty trace")
    if frame.n_steps < 8:
        raise ContractError(f"power_spectrum: need at least 8 samples, got {frame.n_steps}")
    n = next_power_of_two(frame.n_steps)
    n_bins = n // 2 + 1
    power = np.zeros(n_bins)
    for ch in range(frame.n_channels):
        padded = np.zeros(n)
        padded[:frame.n_steps] = frame.values[:, ch]
        spectrum = np.abs(fft_radix2(padded)) ** 2 / (n * n)
        folded = spectrum[:n_bins].copy()
        folded[1:n // 2] += spectrum[n // 2 + 1:][::-1]
        power += folded
    power /= frame.n_channels
    freqs = np.arange(n_bins) * (sample_rate / n)
    return SeriesFrame(np.column_stack([freqs, power]), ("frequency", "power"))


def dominant_frequency(spectrum: SeriesFrame, include_dc: bool = False) -> float:
    freqs = spectrum.channel("frequency")
    power = spectrum.channel("power")
    start = 0 if include_dc else 1
    return float(freqs[start + int(np.argmax(power[start:]))])


# ---------------------------------------------------------------------------
# Mixed-frequency decomposition demo
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CompartmentReport:
    dendrite_hz: float | None
    soma_hz: float | None
    diverged: bool


@dataclass(frozen=True)
class DecompositionReport:
    dual: CompartmentReport
    coupled_reference: CompartmentReport
    sample_rate: float
    resolution_hz: float


def _dominant_pair(
    v_d: np.ndarray, v_s: np.ndarray, sample_rate: float
) -> CompartmentReport:
    if not (np.all(np.isfinite(v_d)) and np.all(np.isfinite(v_s))):
        return CompartmentReport(None, None, diverged=True)
    f_d = dominant_frequency(power_spectrum(v_d, sample_rate))
    f_s = dominant_frequency(power_spectrum(v_s, sample_rate))
    return CompartmentReport(f_d, f_s, diverged=False)


def decomposition_demo(
    params_dual: NeuronParams,
    params_coupled: tuple[float, float, float, float, float],
    stimulus: MixedStimulus = MixedStimulus(),
) -> DecompositionReport:
    """Dominant voltage frequency per compartment for both neuron models.

    ``params_coupled`` is (alpha1, alpha2, beta1, beta2, v_th) for the
    generic two-compartment reference model. Numeric blow-ups are reported
    via the ``diverged`` flag rather than raised.
    """
    frame = generate_stimulus(stimulus)
    trace = simulate_population(params_dual, frame, record=("v_d", "v_s"))
    dual = _dominant_pair(
        trace.v_d.values[:, 0], trace.v_s.values[:, 0], stimulus.sample_rate
    )
    a1, a2, b1, b2, v_th = params_coupled
    state = CompartmentState.zeros(1)
    v_d_trace = np.empty(frame.n_steps)
    v_s_trace = np.empty(frame.n_steps)
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(frame.n_steps):
            state = two_compartment_step(a1, a2, b1, b2, v_th, state, frame.values[t])
            v_d_trace[t] = state.v_d[0]
            v_s_trace[t] = state.v_s[0]
    coupled = _dominant_pair(v_d_trace, v_s_trace, stimulus.sample_rate)
    n = next_power_of_two(frame.n_steps)
    return DecompositionReport(
        dual=dual,
        coupled_reference=coupled,
        sample_rate=stimulus.sample_rate,
        resolution_hz=stimulus.sample_rate / n,
    )


# ---------------------------------------------------------------------------
# Forecast metrics
# ---------------------------------------------------------------------------

def _as_samples(x: np.ndarray, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None, None]
    elif arr.ndim == 2:
        arr = arr[:, None, :]
    if arr.ndim != 3:
        raise ContractError(f"{name}: expected up to 3 dims (sample, horizon, channel)")
    return arr


def rse(pred: np.ndarray, truth: np.ndarray) -> float:
    """Root relative squared error against the per-cell mean over samples."""
    pred = _as_samples(pred, "rse.pred")
    truth = _as_samples(truth, "rse.truth")
    if pred.shape != truth.shape:
        raise ContractError(f"rse: shapes {pred.shape} and {truth.shape} differ")
    baseline = truth.mean(axis=0, keepdims=True)
    denom = float(((truth - baseline) ** 2).sum())
    if denom == 0.0:
        raise ContractError("rse: truth is constant across samples everywhere")
    num = float(((truth - pred) ** 2).sum())
    return float(np.sqrt(num / denom))


def r2(pred: np.ndarray, truth: np.ndarray, return_excluded: bool = False):
    """Mean per-cell coefficient of determination.

    Cells whose truth is constant across samples have an undefined term and
    are excluded from the mean; the exclusion count is available via
    ``return_excluded``.
    """
    pred = _as_samples(pred, "r2.pred")
    truth = _as_samples(truth, "r2.truth")
    if pred.shape != truth.shape:
        raise ContractError(f"r2: shapes {pred.shape} and {truth.shape} differ")
    baseline = truth.mean(axis=0, keepdims=True)
    denom = (truth - baseline) ** 2
    defined = denom > 0.0
    excluded = int(denom.size - defined.sum())
    if not np.any(defined):
        raise ContractError("r2: every term has constant truth; nothing to average")
    terms = 1.0 - (truth - pred)[defined] ** 2 / denom[defined]
    score = float(terms.mean())
    return (score, excluded) if return_excluded else score


# ---------------------------------------------------------------------------
# Energy model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LayerCost:
    name: str
    flops: float
    firing_rate: float = 0.0

    def __post_init__(self) -> None:
        if self.flops < 0:
            raise ContractError(f"layer {self.name!r}: flops must be >= 0")
        if not 0.0 <= self.firing_rate <= 1.0:
            raise ContractError(f"layer {self.name!r}: firing rate must lie in [0, 1]")


@dataclass(frozen=True)
class EnergyModel:
    layers: tuple[LayerCost, ...]
    timesteps: int = 1
    e_mac_pj: float = PICOJOULE_PER_MAC
    e_ac_pj: float = PICOJOULE_PER_AC

    def __post_init__(self) -> None:
        if self.timesteps < 1:
            raise ContractError(f"timesteps must be >= 1, got {self.timesteps}")
        if not self.layers:
            raise ContractError("energy model needs at least one layer")


@dataclass(frozen=True)
class EnergyEstimate:
    total_mj: float
    per_layer: tuple[tuple[str, float], ...]
    total_ops: float


def energy_estimate(model: EnergyModel, is_snn: bool) -> EnergyEstimate:
    """Accumulate-only spiking cost vs multiply-accumulate dense cost.

    Spiking layers perform timesteps * firing_rate * flops accumulate
    operations; dense layers pay the full multiply-accumulate price per flop.
    Totals are reported in millijoules (1 pJ = 1e-9 mJ).
    """
    rows = []
    total_pj = 0.0
    total_ops = 0.0
    for layer in model.layers:
        if is_snn:
            ops = model.timesteps * layer.firing_rate * layer.flops
            energy_pj = model.e_ac_pj * ops
        else:
            ops = layer.flops
            energy_pj = model.e_mac_pj * ops
        rows.append((layer.name, energy_pj * 1e-9))
        total_pj += energy_pj
        total_ops += ops
    return EnergyEstimate(total_pj * 1e-9, tuple(rows), total_ops)


# ---------------------------------------------------------------------------
# Missing-data masking
# ---------------------------------------------------------------------------

def mask_missing(
    x: SeriesFrame | np.ndarray,
    ratio: float,
    seed: int,
    fill: float = 0.0,
) -> SeriesFrame | np.ndarray:
    """Set an exact round(ratio * size) count of random cells to ``fill``.

    Deterministic per seed; returns the same container type it was given.
    """
    if not 0.0 <= ratio < 1.0:
        raise ContractError(f"mask ratio must lie in [0, 1), got {ratio}")
    values = x.values if isinstance(x, SeriesFrame) else np.asarray(x, dtype=np.float64)
    masked = values.copy()
    count = int(round(ratio * masked.size))
    if count:
        rng = np.random.default_rng(seed)
        flat_idx = rng.choice(masked.size, size=count, replace=False)
        masked.ravel()[flat_idx] = fill
    if isinstance(x, SeriesFrame):
        return x.with_values(masked)
    return masked


# ---------------------------------------------------------------------------
# Delayed spiking XOR
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class XorConfig:
    """Episode layout: rate-coded bit, noisy delay, rate-coded bit."""

    n_features: int = 20
    hidden: int = 20
    block_len: int = 10
    rate_one: float = 0.8
    rate_zero: float = 0.2
    noise_rate: float = 0.05
    train_episodes: int = 240
    test_episodes: int = 400
    epochs: int = 40
    batch_size: int = 30
    learning_rate: float = 0.02


def make_xor_episodes(
    n: int, delay: int, rng: np.random.Generator, cfg: XorConfig = XorConfig()
) -> tuple[np.ndarray, np.ndarray]:
    """Spike tensors (n, 2*block+delay, features) and XOR labels (n,)."""
    if delay < 0:
        raise ContractError(f"delay must be >= 0, got {delay}")
    bits = rng.integers(0, 2, size=(n, 2))
    labels = np.bitwise_xor(bits[:, 0], bits[:, 1]).astype(np.float64)
    total = 2 * cfg.block_len + delay
    probs = np.full((n, total, cfg.n_features), cfg.noise_rate)
    block_rate = np.where(bits == 1, cfg.rate_one, cfg.rate_zero)
    probs[:, :cfg.block_len, :] = block_rate[:, 0, None, None]
    probs[:, cfg.block_len + delay:, :] = block_rate[:, 1, None, None]
    spikes = (rng.random((n, total, cfg.n_features)) < probs).astype(np.float64)
    return spikes, labels


def _fit_classifier(
    stack: LayerStack,
    inputs: np.ndarray,
    labels: np.ndarray,
    cfg: XorConfig,
    rng: np.random.Generator,
) -> None:
    params = list(stack.params.values())
    opt = ad.Adam(params, lr=cfg.learning_rate)
    n = inputs.shape[0]
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            pred = stack.forward(inputs[batch])
            loss = ad.mse(pred, labels[batch][:, None])
            ad.backward(loss, params=params)
            opt.step()


def classification_accuracy(stack: LayerStack, inputs: np.ndarray, labels: np.ndarray) -> float:
    pred = stack.forward(inputs).value[:, 0]
    return float(((pred > 0.5).astype(np.float64) == labels).mean())


@dataclass(frozen=True)
class XorCellResult:
    delay: int
    seed: int
    neuron: str
    accuracy: float
    diverged: bool = False


def run_xor_cell(
    delay: int,
    seed: int,
    neuron: str,
    cfg: XorConfig = XorConfig(),
) -> XorCellResult:
    """Train and evaluate one (delay, seed, activation) benchmark cell."""
    rng = np.random.default_rng(np.random.SeedSequence(
        entropy=(hash_kind(neuron), delay, seed)
    ))
    train_x, train_y = make_xor_episodes(cfg.train_episodes, delay, rng, cfg)
    test_x, test_y = make_xor_episodes(cfg.test_episodes, delay, rng, cfg)
    stack = mlp_backbone(
        (cfg.n_features, cfg.hidden, 1), activation=neuron, rng=rng,
    )
    try:
        _fit_classifier(stack, train_x, train_y, cfg, rng)
        accuracy = classification_accuracy(stack, test_x, test_y)
        if not np.isfinite(accuracy):
            return XorCellResult(delay, seed, neuron, 0.0, diverged=True)
    except FloatingPointError:
        return XorCellResult(delay, seed, neuron, 0.0, diverged=True)
    return XorCellResult(delay, seed, neuron, accuracy)


def hash_kind(neuron: str) -> int:
    kinds = {"relu": 0, "lif": 1, "tslif": 2}
    if neuron not in kinds:
        raise ContractError(f"unknown neuron kind {neuron!r}")
    return kinds[neuron]


def _run_xor_cell_args(args: tuple) -> XorCellResult:
    return run_xor_cell(*args)


def xor_benchmark(
    delays: list[int],
    seeds: list[int],
    neurons: list[str] = ("lif", "tslif"),
    cfg: XorConfig = XorConfig(),
    jobs: int = 1,
) -> list[XorCellResult]:
    """Accuracy per (delay, seed, activation); cells are independent."""
    cells = [(d, s, n, cfg) for d in delays for s in seeds for n in neurons]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_xor_cell_args, cells))
    else:
        results = [run_xor_cell(*cell) for cell in cells]
    return results


def mean_accuracy(results: list[XorCellResult], delay: int, neuron: str) -> float:
    values = [r.accuracy for r in results if r.delay == delay and r.neuron == neuron]
    if not values:
        raise ContractError(f"no benchmark cells for delay={delay}, neuron={neuron}")
    return float(np.mean(values))


# ---------------------------------------------------------------------------
# Synthetic-sinusoid forecasting
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ForecastConfig:
    context: int = 24
    horizon: int = 8
    hidden: int = 48
    epochs: int = 60
    batch_size: int = 32
    learning_rate: float = 0.01
    backbone: str = "mlp"  # or "recurrent"
    activation: str = "tslif"
    neuron: NeuronParams = DEFAULT_NEURON_TEMPLATE


def make_synthetic_series(
    n_steps: int,
    seed: int = 0,
    noise: float = 0.0,
    periods: tuple[float, float] = (24.0, 8.0),
    amplitudes: tuple[float, float] = (1.0, 0.4),
) -> SeriesFrame:
    """Two-tone sinusoid, optionally with additive Gaussian noise."""
    t = np.arange(n_steps, dtype=np.float64)
    values = (
        amplitudes[0] * np.sin(2 * np.pi * t / periods[0])
        + amplitudes[1] * np.sin(2 * np.pi * t / periods[1] + 1.0)
    )
    if noise > 0.0:
        values = values + noise * np.random.default_rng(seed).normal(size=n_steps)
    return SeriesFrame(values, ("signal",))


def build_forecaster(cfg: ForecastConfig, n_channels: int, rng: np.random.Generator) -> LayerStack:
    sizes = (n_channels, cfg.hidden, cfg.horizon * n_channels)
    builder = recurrent_backbone if cfg.backbone == "recurrent" else mlp_backbone
    return builder(sizes, neuron=cfg.neuron, activation=cfg.activation, rng=rng)


def forecast(stack: LayerStack, inputs: np.ndarray) -> np.ndarray:
    """(m, T, C) windows -> (m, L, C) predictions."""
    m, _, channels = inputs.shape
    flat = stack.forward(inputs).value
    return flat.reshape(m, -1, channels)


def train_forecaster(
    train: WindowSet,
    cfg: ForecastConfig = ForecastConfig(),
    seed: int = 0,
) -> tuple[LayerStack, list[float]]:
    """Fit a spiking forecaster; returns the stack and per-epoch train loss."""
    rng = np.random.default_rng(np.random.SeedSequence(entropy=(seed, 2**31)))
    channels = train.inputs.shape[2]
    stack = build_forecaster(cfg, channels, rng)
    params = list(stack.params.values())
    opt = ad.Adam(params, lr=cfg.learning_rate)
    flat_targets = train.targets.reshape(train.n_samples, -1)
    history: list[float] = []
    for _ in range(cfg.epochs):
        order = rng.permutation(train.n_samples)
        epoch_loss = 0.0
        n_batches = 0
        for start in range(0, train.n_samples, cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            loss = ad.mse(stack.forward(train.inputs[batch]), flat_targets[batch])
            ad.backward(loss, params=params)
            opt.step()
            epoch_loss += float(loss.value)
            n_batches += 1
        history.append(epoch_loss / n_batches)
    return stack, history


def evaluate_forecaster(
    stack: LayerStack,
    windows: WindowSet,
    missing_ratio: float = 0.0,
    seed: int = 0,
) -> dict[str, float]:
    """R^2 / RSE on (optionally input-masked) windows."""
    inputs = windows.inputs
    if missing_ratio > 0.0:
        inputs = mask_missing(inputs, missing_ratio, seed)
    pred = forecast(stack, inputs)
    return {
        "r2": r2(pred, windows.targets),
        "rse": rse(pred, windows.targets),
        "missing_ratio": missing_ratio,
    }


__all__ = [
    "MixedStimulus", "generate_stimulus",
    "fft_radix2", "next_power_of_two", "power_spectrum", "dominant_frequency",
    "CompartmentReport", "DecompositionReport", "decomposition_demo",
    "rse", "r2",
    "LayerCost", "EnergyModel", "EnergyEstimate", "energy_estimate",
    "PICOJOULE_PER_MAC", "PICOJOULE_PER_AC",
    "mask_missing",
    "XorConfig", "XorCellResult", "make_xor_episodes", "run_xor_cell",
    "xor_benchmark", "mean_accuracy", "classification_accuracy", "hash_kind",
    "ForecastConfig", "make_synthetic_series", "build_forecaster",
    "forecast", "train_forecaster", "evaluate_forecaster",
]
