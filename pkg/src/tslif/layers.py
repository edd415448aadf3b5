"""Composable spiking layers on the autodiff tape.

The differentiable dual-compartment cell mirrors the exact update order of
:mod:`tslif.neuron`, so forward values agree bit-for-bit with the plain
simulator while the backward pass substitutes surrogate derivatives at the
spike nodes. Constrained neuron coefficients are stored as unconstrained raw
leaves: decays and mixing weights pass through a logistic squash, reset
magnitudes through softplus, couplings stay raw.

Backbones follow a fixed pattern: a dense projection per time step, an
activation block (dual-compartment, single-compartment, or stateless relu),
firing-rate decoding (mean over time), and a final linear map. The recurrent
variant adds a hidden-to-hidden projection of the previous step's spikes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Node, SurrogateSpec
from .errors import ContractError
from .neuron import NeuronParams
from .series import SeriesFrame, as_frame

CHECKPOINT_MAGIC = b"TSLIF1"


def uniform_init(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class DenseLayer:
    """Affine map x @ W + b with gradient on both tensors."""

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, name: str):
        self.n_in = n_in
        self.n_out = n_out
        self.name = name
        self.w = ad.leaf(uniform_init(rng, (n_in, n_out), n_in), name=f"{name}.w")
        self.b = ad.leaf(np.zeros(n_out), name=f"{name}.b")

    def forward(self, x: Node) -> Node:
        return ad.add(ad.matmul(x, self.w), self.b)

    def parameters(self) -> dict[str, Node]:
        return {self.w.name: self.w, self.b.name: self.b}

    def config(self) -> dict:
        return {"kind": "dense", "in": self.n_in, "out": self.n_out, "name": self.name}


class _TsLifRun:
    """State of one dual-compartment forward pass (one tape)."""

    def __init__(self, cell: "TsLifCell", spiking: bool):
        self.cell = cell
        self.spiking = spiking
        coeff = cell.coefficient_nodes()
        self.a1, self.a2 = coeff["alpha1"], coeff["alpha2"]
        self.b1, self.b2 = coeff["beta1"], coeff["beta2"]
        self.g1, self.g2 = coeff["gamma1"], coeff["gamma2"]
        self.kappa = coeff["kappa"]
        one = ad.constant(1.0)
        self.one_minus_a1 = ad.sub(one, self.a1)
        self.one_minus_a2 = ad.sub(one, self.a2)
        self.one_minus_kappa = ad.sub(one, self.kappa)
        self.v_d: Node | None = None
        self.v_s: Node | None = None
        self.s_d: Node | None = None
        self.s_s: Node | None = None

    def step(self, c: Node) -> Node:
        """Advance one step; returns mixed spikes (or v_d when not spiking)."""
        if self.v_d is None:
            zeros = ad.constant(np.zeros_like(c.value))
            self.v_d = self.v_s = self.s_d = self.s_s = zeros
        self.v_d = ad.sub(
            ad.add(ad.add(ad.mul(self.a1, self.v_d), ad.mul(self.b1, self.v_s)),
                   ad.mul(self.one_minus_a1, c)),
            ad.mul(self.g1, self.s_d),
        )
        self.v_s = ad.sub(
            ad.add(ad.add(ad.mul(self.a2, self.v_s), ad.mul(self.b2, self.v_d)),
                   ad.mul(self.one_minus_a2, c)),
            ad.mul(self.g2, self.s_s),
        )
        if not self.spiking:
            return self.v_d
        self.s_d = ad.spike(ad.sub(self.v_d, self.cell.v_th), self.cell.spec)
        self.s_s = ad.spike(ad.sub(self.v_s, self.cell.v_th), self.cell.spec)
        return ad.add(ad.mul(self.kappa, self.s_d), ad.mul(self.one_minus_kappa, self.s_s))


class TsLifCell:
    """Learnable dual-compartment activation over a spike-train sequence."""

    raw_names = ("raw_alpha1", "raw_alpha2", "beta1", "beta2",
                 "raw_gamma1", "raw_gamma2", "raw_kappa")

    def __init__(
        self,
        n: int,
        template: NeuronParams,
        spec: SurrogateSpec = ad.DEFAULT_SURROGATE,
        name: str = "act",
    ):
        self.n = n
        self.v_th = template.v_th
        self.spec = spec
        self.name = name
        kappa = np.broadcast_to(np.asarray(template.kappa, dtype=np.float64), (n,))

        def full(value: float) -> np.ndarray:
            return np.full(n, float(value))

        self.raw_alpha1 = ad.leaf(full(ad.logit(template.alpha1)), name=f"{name}.raw_alpha1")
        self.raw_alpha2 = ad.leaf(full(ad.logit(template.alpha2)), name=f"{name}.raw_alpha2")
        self.beta1 = ad.leaf(full(template.beta1), name=f"{name}.beta1")
        self.beta2 = ad.leaf(full(template.beta2), name=f"{name}.beta2")
        self.raw_gamma1 = ad.leaf(full(ad.softplus_inverse(max(template.gamma1, 1e-6))),
                                  name=f"{name}.raw_gamma1")
        self.raw_gamma2 = ad.leaf(full(ad.softplus_inverse(max(template.gamma2, 1e-6))),
                                  name=f"{name}.raw_gamma2")
        self.raw_kappa = ad.leaf(np.array([ad.logit(min(max(k, 1e-6), 1 - 1e-6)) for k in kappa]),
                                 name=f"{name}.raw_kappa")

    def coefficient_nodes(self) -> dict[str, Node]:
        """Squashed coefficients as tape nodes (fresh per forward pass)."""
        return {
            "alpha1": ad.sigmoid(self.raw_alpha1),
            "alpha2": ad.sigmoid(self.raw_alpha2),
            "beta1": self.beta1,
            "beta2": self.beta2,
            "gamma1": ad.softplus(self.raw_gamma1),
            "gamma2": ad.softplus(self.raw_gamma2),
            "kappa": ad.sigmoid(self.raw_kappa),
        }

    def coefficient_values(self) -> dict[str, np.ndarray]:
        return {k: v.value for k, v in self.coefficient_nodes().items()}

    def start(self, spiking: bool = True) -> _TsLifRun:
        return _TsLifRun(self, spiking)

    def forward_sequence(self, xs: list[Node], spiking: bool = True) -> list[Node]:
        """Run the recursion over per-step input currents; returns mixed spikes.

        With ``spiking=False`` the threshold is treated as infinite: spike
        outputs stay at zero and the returned sequence is the (differentiable)
        dendritic potential trace instead of the mixed spikes.
        """
        run = self.start(spiking=spiking)
        return [run.step(c) for c in xs]

    def parameters(self) -> dict[str, Node]:
        return {getattr(self, n).name: getattr(self, n) for n in self.raw_names}

    def config(self) -> dict:
        return {
            "kind": "tslif", "n": self.n, "v_th": self.v_th, "name": self.name,
            "surrogate": {"kind": self.spec.kind, "width": self.spec.width},
        }


class _LifRun:
    def __init__(self, cell: "LifCell", spiking: bool):
        self.cell = cell
        self.spiking = spiking
        self.alpha = ad.sigmoid(cell.raw_alpha)
        self.v: Node | None = None
        self.s: Node | None = None

    def step(self, c: Node) -> Node:
        if self.v is None:
            zeros = ad.constant(np.zeros_like(c.value))
            self.v = self.s = zeros
        self.v = ad.sub(ad.add(ad.mul(self.alpha, self.v), c), ad.scale(self.s, self.cell.v_th))
        if not self.spiking:
            return self.v
        self.s = ad.spike(ad.sub(self.v, self.cell.v_th), self.cell.spec)
        return self.s


class LifCell:
    """Learnable single-compartment activation (decay, fixed-threshold reset)."""

    def __init__(
        self,
        n: int,
        alpha: float = 0.9,
        v_th: float = 1.0,
        spec: SurrogateSpec = ad.DEFAULT_SURROGATE,
        name: str = "act",
    ):
        self.n = n
        self.v_th = v_th
        self.spec = spec
        self.name = name
        self.raw_alpha = ad.leaf(np.full(n, ad.logit(alpha)), name=f"{name}.raw_alpha")

    def start(self, spiking: bool = True) -> _LifRun:
        return _LifRun(self, spiking)

    def forward_sequence(self, xs: list[Node], spiking: bool = True) -> list[Node]:
        run = self.start(spiking=spiking)
        return [run.step(c) for c in xs]

    def parameters(self) -> dict[str, Node]:
        return {self.raw_alpha.name: self.raw_alpha}

    def config(self) -> dict:
        return {
            "kind": "lif", "n": self.n, "v_th": self.v_th, "name": self.name,
            "surrogate": {"kind": self.spec.kind, "width": self.spec.width},
        }


class _ReluRun:
    def __init__(self, spiking: bool):
        del spiking  # stateless baseline has no threshold dynamics

    def step(self, c: Node) -> Node:
        return ad.relu(c)


class ReluBlock:
    """Stateless rectifier; the non-spiking baseline activation."""

    def __init__(self, n: int, name: str = "act"):
        self.n = n
        self.name = name

    def start(self, spiking: bool = True) -> _ReluRun:
        return _ReluRun(spiking)

    def forward_sequence(self, xs: list[Node], spiking: bool = True) -> list[Node]:
        run = self.start(spiking)
        return [run.step(c) for c in xs]

    def parameters(self) -> dict[str, Node]:
        return {}

    def config(self) -> dict:
        return {"kind": "relu", "n": self.n, "name": self.name}


ACTIVATION_KINDS = ("tslif", "lif", "relu")


def make_activation(
    kind: str,
    n: int,
    neuron: NeuronParams,
    spec: SurrogateSpec,
    name: str = "act",
):
    if kind == "tslif":
        return TsLifCell(n, neuron, spec, name=name)
    if kind == "lif":
        return LifCell(n, alpha=0.9, v_th=neuron.v_th, spec=spec, name=name)
    if kind == "relu":
        return ReluBlock(n, name=name)
    raise ContractError(f"unknown activation kind {kind!r}; expected one of {ACTIVATION_KINDS}")


DEFAULT_NEURON_TEMPLATE = NeuronParams(
    alpha1=0.9, alpha2=0.1, beta1=0.0, beta2=-0.5,
    gamma1=0.1, gamma2=0.1, v_th=1.0, kappa=0.5,
)


def tslif_layer_forward(cell: TsLifCell, inputs, spiking: bool = True) -> list[Node]:
    """Sequence forward through a dual-compartment cell.

    ``inputs`` is either a list of per-step nodes or an array shaped
    (time, channels); forward values equal the plain simulator's mixed-spike
    trace for the same coefficients.
    """
    if isinstance(inputs, np.ndarray):
        inputs = [ad.constant(inputs[t]) for t in range(inputs.shape[0])]
    return cell.forward_sequence(inputs, spiking=spiking)


@dataclass
class LayerStack:
    """An ordered set of layers plus the registry of learnable tensors."""

    kind: str  # "mlp" | "recurrent"
    dense_in: DenseLayer
    activation: TsLifCell | LifCell | ReluBlock
    dense_out: DenseLayer
    w_rec: Node | None = None
    params: dict[str, Node] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.params:
            registry: dict[str, Node] = {}
            registry.update(self.dense_in.parameters())
            if self.w_rec is not None:
                registry[self.w_rec.name] = self.w_rec
            registry.update(self.activation.parameters())
            registry.update(self.dense_out.parameters())
            self.params = registry

    @property
    def in_features(self) -> int:
        return self.dense_in.n_in

    @property
    def out_features(self) -> int:
        return self.dense_out.n_out

    def parameter_count(self) -> int:
        return sum(p.value.size for p in self.params.values())

    def forward(self, x: np.ndarray, spiking: bool = True) -> Node:
        """Map a (batch, time, features) array to (batch, out_features).

        A 2-D input (time, features) is treated as batch size one and the
        output squeezed back to (out_features,).
        """
        x = np.asarray(x, dtype=np.float64)
        squeeze = x.ndim == 2
        if squeeze:
            x = x[None, :, :]
        if x.ndim != 3 or x.shape[2] != self.in_features:
            raise ContractError(
                f"forward: expected (batch, time, {self.in_features}) input, got {x.shape}"
            )
        n_steps = x.shape[1]
        run = self.activation.start(spiking=spiking)
        prev: Node | None = None
        rate: Node | None = None
        for t in range(n_steps):
            drive = self.dense_in.forward(ad.constant(x[:, t, :]))
            if self.w_rec is not None:
                if prev is None:
                    prev = ad.constant(np.zeros((x.shape[0], self.activation.n)))
                drive = ad.add(drive, ad.matmul(prev, self.w_rec))
            out = run.step(drive)
            prev = out
            rate = out if rate is None else ad.add(rate, out)
        rate = ad.scale(rate, 1.0 / n_steps)
        result = self.dense_out.forward(rate)
        if squeeze:
            result = _row(result, 0)
        return result

    def layer_configs(self) -> list[dict]:
        configs = [self.dense_in.config()]
        if self.w_rec is not None:
            configs.append({"kind": "recurrent_weights", "n": self.activation.n,
                            "name": self.w_rec.name})
        configs.append(self.activation.config())
        configs.append(self.dense_out.config())
        return configs


def mlp_backbone(
    sizes: tuple[int, int, int],
    neuron: NeuronParams = DEFAULT_NEURON_TEMPLATE,
    activation: str = "tslif",
    spec: SurrogateSpec = ad.DEFAULT_SURROGATE,
    rng: np.random.Generator | None = None,
) -> LayerStack:
    """Dense -> activation -> rate decode -> dense readout."""
    n_in, n_hidden, n_out = sizes
    if min(sizes) < 1:
        raise ContractError(f"mlp_backbone: sizes must be positive, got {sizes}")
    rng = rng if rng is not None else np.random.default_rng(0)
    return LayerStack(
        kind="mlp",
        dense_in=DenseLayer(n_in, n_hidden, rng, name="l0"),
        activation=make_activation(activation, n_hidden, neuron, spec),
        dense_out=DenseLayer(n_hidden, n_out, rng, name="l1"),
    )


def recurrent_backbone(
    sizes: tuple[int, int, int],
    neuron: NeuronParams = DEFAULT_NEURON_TEMPLATE,
    activation: str = "tslif",
    spec: SurrogateSpec = ad.DEFAULT_SURROGATE,
    rng: np.random.Generator | None = None,
) -> LayerStack:
    """Like the feedforward stack plus spike feedback into the hidden drive."""
    n_in, n_hidden, n_out = sizes
    if min(sizes) < 1:
        raise ContractError(f"recurrent_backbone: sizes must be positive, got {sizes}")
    rng = rng if rng is not None else np.random.default_rng(0)
    dense_in = DenseLayer(n_in, n_hidden, rng, name="l0")
    w_rec = ad.leaf(uniform_init(rng, (n_hidden, n_hidden), n_hidden), name="rec.w")
    return LayerStack(
        kind="recurrent",
        dense_in=dense_in,
        activation=make_activation(activation, n_hidden, neuron, spec),
        dense_out=DenseLayer(n_hidden, n_out, rng, name="l1"),
        w_rec=w_rec,
    )


@dataclass(frozen=True)
class SpikeEncoderConfig:
    """Convolutional spike encoder settings.

    One time step of the incoming series is split into ``segments`` sub-steps;
    each segment owns its own kernel bank, so the encoder emits a
    (segments, time, out_channels) spike tensor.
    """

    in_channels: int
    out_channels: int
    kernel_size: int
    segments: int = 1
    momentum: float = 0.1
    var_floor: float = 1e-5

    def __post_init__(self) -> None:
        if self.kernel_size < 1 or self.segments < 1 or self.out_channels < 1:
            raise ContractError(f"invalid encoder config {self}")
        if not 0.0 < self.momentum <= 1.0:
            raise ContractError(f"momentum must be in (0, 1], got {self.momentum}")


class SpikeEncoder:
    """Conv1d (same padding) -> per-channel normalization -> spiking cell."""

    def __init__(
        self,
        config: SpikeEncoderConfig,
        neuron: NeuronParams = DEFAULT_NEURON_TEMPLATE,
        spec: SurrogateSpec = ad.DEFAULT_SURROGATE,
        rng: np.random.Generator | None = None,
        name: str = "enc",
    ):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.config = config
        self.name = name
        cfg = config
        fan_in = cfg.kernel_size * cfg.in_channels
        self.kernels = [
            ad.leaf(uniform_init(rng, (cfg.kernel_size, cfg.in_channels, cfg.out_channels), fan_in),
                    name=f"{name}.seg{s}.w")
            for s in range(cfg.segments)
        ]
        self.biases = [
            ad.leaf(np.zeros(cfg.out_channels), name=f"{name}.seg{s}.b")
            for s in range(cfg.segments)
        ]
        self.gain = ad.leaf(np.ones(cfg.out_channels), name=f"{name}.norm.gain")
        self.shift = ad.leaf(np.zeros(cfg.out_channels), name=f"{name}.norm.shift")
        self.running_mean = np.zeros(cfg.out_channels)
        self.running_var = np.ones(cfg.out_channels)
        self.cell = TsLifCell(cfg.out_channels, neuron, spec, name=f"{name}.cell")

    def _convolve(self, x: np.ndarray, segment: int) -> Node:
        cfg = self.config
        n_steps = x.shape[0]
        pad_left = (cfg.kernel_size - 1) // 2
        padded = np.zeros((n_steps + cfg.kernel_size - 1, cfg.in_channels))
        padded[pad_left:pad_left + n_steps] = x
        out: Node | None = None
        for d in range(cfg.kernel_size):
            tap = ad.matmul(ad.constant(padded[d:d + n_steps]),
                            _kernel_tap(self.kernels[segment], d))
            out = tap if out is None else ad.add(out, tap)
        return ad.add(out, self.biases[segment])

    def _normalize(self, y: Node, training: bool) -> Node:
        # running statistics are data on the tape; only gain/shift get gradients
        if training:
            mean = y.value.mean(axis=0)
            var = y.value.var(axis=0)
            m = self.config.momentum
            self.running_mean = (1.0 - m) * self.running_mean + m * mean
            self.running_var = (1.0 - m) * self.running_var + m * var
        else:
            mean = self.running_mean
            var = self.running_var
        denom = np.sqrt(np.maximum(var, self.config.var_floor))
        centered = ad.sub(y, ad.constant(mean))
        scaled = ad.mul(centered, ad.constant(1.0 / denom))
        return ad.add(ad.mul(scaled, self.gain), self.shift)

    def forward(self, x: SeriesFrame | np.ndarray, training: bool = False) -> list[list[Node]]:
        """Per-segment lists of per-step mixed-spike nodes."""
        frame = as_frame(x)
        cfg = self.config
        if frame.n_channels != cfg.in_channels:
            raise ContractError(
                f"encoder expects {cfg.in_channels} channels, got {frame.n_channels}"
            )
        if frame.n_steps < cfg.kernel_size:
            raise ContractError(
                f"input length {frame.n_steps} shorter than kernel {cfg.kernel_size}"
            )
        segments: list[list[Node]] = []
        for s in range(cfg.segments):
            normalized = self._normalize(self._convolve(frame.values, s), training)
            steps = [_row(normalized, t) for t in range(frame.n_steps)]
            segments.append(self.cell.forward_sequence(steps, spiking=True))
        return segments

    def parameters(self) -> dict[str, Node]:
        registry: dict[str, Node] = {}
        for k, b in zip(self.kernels, self.biases):
            registry[k.name] = k
            registry[b.name] = b
        registry[self.gain.name] = self.gain
        registry[self.shift.name] = self.shift
        registry.update(self.cell.parameters())
        return registry


def _kernel_tap(kernel: Node, d: int) -> Node:
    """Slice one kernel offset (in_channels, out_channels) with gradient."""
    def vjp(g: np.ndarray) -> np.ndarray:
        full = np.zeros_like(kernel.value)
        full[d] = g
        return full
    return Node(kernel.value[d], parents=(kernel,), vjps=(vjp,))


def _row(node: Node, t: int) -> Node:
    def vjp(g: np.ndarray) -> np.ndarray:
        full = np.zeros_like(node.value)
        full[t] = g
        return full
    return Node(node.value[t], parents=(node,), vjps=(vjp,))


def encode(
    encoder: SpikeEncoder,
    x: SeriesFrame | np.ndarray,
    training: bool = False,
) -> np.ndarray:
    """Evaluate the encoder; returns the (segments, time, channels) spike values."""
    segments = encoder.forward(x, training=training)
    return np.stack([np.stack([s.value for s in seg]) for seg in segments])


def save_checkpoint(stack: LayerStack, prefix: str) -> tuple[str, str]:
    """Write ``prefix.json`` (manifest) and ``prefix.bin`` (flat doubles).

    The binary starts with the magic string, followed by every registry
    tensor's raw little-endian float64 data in registry order; the manifest
    carries layer configs and a (name, shape, offset) index, offsets in bytes
    from the start of the binary file.
    """
    manifest_path, bin_path = prefix + ".json", prefix + ".bin"
    tensors = []
    offset = len(CHECKPOINT_MAGIC)
    blobs = []
    for name, node in stack.params.items():
        data = np.ascontiguousarray(node.value, dtype="<f8").tobytes()
        tensors.append({"name": name, "shape": list(node.value.shape), "offset": offset})
        blobs.append(data)
        offset += len(data)
    manifest = {
        "format": CHECKPOINT_MAGIC.decode(),
        "kind": stack.kind,
        "layers": stack.layer_configs(),
        "tensors": tensors,
    }
    with open(manifest_path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(bin_path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        for blob in blobs:
            fh.write(blob)
    return manifest_path, bin_path


def load_checkpoint(prefix: str) -> LayerStack:
    """Rebuild a backbone stack from its manifest and tensor blob."""
    with open(prefix + ".json") as fh:
        manifest = json.load(fh)
    if manifest.get("format") != CHECKPOINT_MAGIC.decode():
        raise ContractError(f"unrecognized checkpoint format {manifest.get('format')!r}")
    with open(prefix + ".bin", "rb") as fh:
        raw = fh.read()
    if not raw.startswith(CHECKPOINT_MAGIC):
        raise ContractError("checkpoint binary lacks the expected magic header")
    dense_cfgs = [cfg for cfg in manifest["layers"] if cfg["kind"] == "dense"]
    act_cfg = next(cfg for cfg in manifest["layers"] if cfg["kind"] in ACTIVATION_KINDS)
    spec = ad.DEFAULT_SURROGATE
    if "surrogate" in act_cfg:
        spec = SurrogateSpec(act_cfg["surrogate"]["kind"], act_cfg["surrogate"]["width"])
    builder = recurrent_backbone if manifest["kind"] == "recurrent" else mlp_backbone
    stack = builder(
        (dense_cfgs[0]["in"], dense_cfgs[0]["out"], dense_cfgs[1]["out"]),
        activation=act_cfg["kind"],
        spec=spec,
        rng=np.random.default_rng(0),
    )
    for entry in manifest["tensors"]:
        name, shape, offset = entry["name"], tuple(entry["shape"]), entry["offset"]
        count = int(np.prod(shape)) if shape else 1
        values = np.frombuffer(raw, dtype="<f8", count=count, offset=offset).reshape(shape)
        if name not in stack.params:
            raise ContractError(f"checkpoint tensor {name!r} has no slot in the rebuilt stack")
        if stack.params[name].value.shape != values.shape:
            raise ContractError(
                f"checkpoint tensor {name!r} shape {values.shape} != expected "
                f"{stack.params[name].value.shape}"
            )
        stack.params[name].value = values.astype(np.float64)
    return stack


__all__ = [
    "DenseLayer", "TsLifCell", "LifCell", "ReluBlock", "LayerStack",
    "ACTIVATION_KINDS", "DEFAULT_NEURON_TEMPLATE", "make_activation",
    "tslif_layer_forward", "mlp_backbone", "recurrent_backbone",
    "SpikeEncoderConfig", "SpikeEncoder", "encode",
    "CHECKPOINT_MAGIC", "save_checkpoint", "load_checkpoint",
    "uniform_init",
]
