"""Network description: layer shapes, bit-packed bipolar weights, spikes.

The canonical network is the 1024-1024-10 dense stack the hardware was
sized for. Its first layer is the pixel front end: 1,024 neurons with a
single private synapse each, wired index-to-index to the flattened
32x32 input frame. With that one-input first layer the synapse total is

    1*1024 + 1024*1024 + 1024*10 = 1,059,840.

Weights are bipolar (+1/-1) and stored one bit per synapse (bit 1 means
+1), packed little-endian bit order, row-major by post-synaptic neuron.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Iterable, Sequence

import numpy as np

from .fixedpoint import DecayCode, qfixed_from_real

if TYPE_CHECKING:
    from .golden import NeuronParams, ResetMode

HARDWARE_NEURONS = 1024
MAC_LANES = 4
SELECTOR_GROUP = 16
INPUT_PIXELS = 1024            # flattened 32x32 single-channel frame

CANONICAL_DIMS = ((1, 1024), (1024, 1024), (1024, 10))
CANONICAL_SYNAPSES = 1_059_840


class ConfigurationError(ValueError):
    """Invalid network/image/hardware configuration."""


def total_synapses(layer_dims: Sequence[tuple[int, int]]) -> int:
    return sum(fi * fo for fi, fo in layer_dims)


def _packed_bytes(bits: int) -> int:
    return (bits + 7) // 8


@dataclass(frozen=True)
class LayerWeights:
    """One layer's view into a WeightStore."""

    fan_in: int
    fan_out: int
    packed: np.ndarray  # uint8, ceil(fan_in*fan_out/8) bytes

    def matrix(self) -> np.ndarray:
        """Unpacked weights as an int8 (fan_out, fan_in) matrix of +-1."""
        bits = np.unpackbits(self.packed, count=self.fan_in * self.fan_out,
                             bitorder="little")
        return (bits.reshape(self.fan_out, self.fan_in).astype(np.int8) * 2) - 1


@dataclass(frozen=True)
class WeightStore:
    """Bit-packed bipolar weights for a stack of dense layers.

    Bit 1 maps to +1, bit 0 to -1. Within each layer the bits run
    row-major by post-synaptic neuron (neuron j's fan_in bits are
    consecutive), little-endian bit order within bytes, and each layer's
    packing is zero-padded to a byte boundary.
    """

    layer_dims: tuple[tuple[int, int], ...]
    bits: np.ndarray  # uint8, concatenated per-layer packed payloads

    def __post_init__(self) -> None:
        dims = tuple((int(fi), int(fo)) for fi, fo in self.layer_dims)
        object.__setattr__(self, "layer_dims", dims)
        for fi, fo in dims:
            if fi <= 0 or fo <= 0:
                raise ConfigurationError(f"degenerate layer dims ({fi}, {fo})")
        expected = sum(_packed_bytes(fi * fo) for fi, fo in dims)
        if self.bits.dtype != np.uint8 or self.bits.ndim != 1:
            raise ConfigurationError("weight payload must be a flat uint8 array")
        if len(self.bits) != expected:
            raise ConfigurationError(
                f"weight payload is {len(self.bits)} bytes, expected {expected}")

    @property
    def total_synapses(self) -> int:
        return total_synapses(self.layer_dims)

    @property
    def num_layers(self) -> int:
        return len(self.layer_dims)

    def layer_payload_slices(self) -> list[slice]:
        out, base = [], 0
        for fi, fo in self.layer_dims:
            n = _packed_bytes(fi * fo)
            out.append(slice(base, base + n))
            base += n
        return out

    def layer(self, index: int) -> LayerWeights:
        fi, fo = self.layer_dims[index]
        sl = self.layer_payload_slices()[index]
        return LayerWeights(fi, fo, self.bits[sl])

    @classmethod
    def from_matrices(cls, matrices: Iterable[np.ndarray]) -> "WeightStore":
        """Pack int matrices of +-1 (shape fan_out x fan_in) into a store."""
        dims, chunks = [], []
        for m in matrices:
            m = np.asarray(m)
            if m.ndim != 2 or not np.all(np.abs(m) == 1):
                raise ConfigurationError("weight matrices must be 2-D with +-1 entries")
            fo, fi = m.shape
            dims.append((fi, fo))
            bits = (m.reshape(-1) > 0).astype(np.uint8)
            chunks.append(np.packbits(bits, bitorder="little"))
        return cls(tuple(dims), np.concatenate(chunks) if chunks else
                   np.zeros(0, dtype=np.uint8))

    @classmethod
    def random(cls, layer_dims: Sequence[tuple[int, int]], seed: int) -> "WeightStore":
        """Deterministic pseudo-random bipolar weights for a given seed."""
        rng = np.random.default_rng(seed)
        dims = tuple((int(fi), int(fo)) for fi, fo in layer_dims)
        chunks = []
        for fi, fo in dims:
            if fi <= 0 or fo <= 0:
                raise ConfigurationError(f"degenerate layer dims ({fi}, {fo})")
            bits = rng.integers(0, 2, size=fi * fo, dtype=np.uint8)
            chunks.append(np.packbits(bits, bitorder="little"))
        return cls(dims, np.concatenate(chunks))


@dataclass(frozen=True)
class SpikeVector:
    """Bit-packed spike outputs of one layer at one timestep."""

    length: int
    packed: np.ndarray  # uint8, ceil(length/8) bytes, little-endian bits

    def __post_init__(self) -> None:
        if len(self.packed) != _packed_bytes(self.length):
            raise ConfigurationError("spike payload does not match length")

    @classmethod
    def from_bools(cls, flags: np.ndarray) -> "SpikeVector":
        flags = np.asarray(flags).astype(np.uint8)
        return cls(len(flags), np.packbits(flags, bitorder="little"))

    @classmethod
    def zeros(cls, length: int) -> "SpikeVector":
        return cls(length, np.zeros(_packed_bytes(length), dtype=np.uint8))

    def to_bools(self) -> np.ndarray:
        return np.unpackbits(self.packed, count=self.length,
                             bitorder="little").astype(bool)

    def popcount(self) -> int:
        return int(np.unpackbits(self.packed, count=self.length,
                                 bitorder="little").sum())


@dataclass(frozen=True)
class NetworkConfig:
    """Layer shapes plus per-layer neuron parameters for the 3-layer stack."""

    layer_dims: tuple[tuple[int, int], ...]
    layer_params: tuple["NeuronParams", ...]

    def __post_init__(self) -> None:
        dims = tuple((int(fi), int(fo)) for fi, fo in self.layer_dims)
        object.__setattr__(self, "layer_dims", dims)
        if len(dims) != 3:
            raise ConfigurationError("the core runs exactly three dense layers")
        if len(self.layer_params) != len(dims):
            raise ConfigurationError("need one parameter set per layer")
        for fi, fo in dims:
            if fi <= 0 or fo <= 0:
                raise ConfigurationError(f"degenerate layer dims ({fi}, {fo})")
        if dims[0][0] != 1:
            raise ConfigurationError("first layer neurons take exactly one input")
        for prev, cur in zip(dims, dims[1:]):
            if cur[0] != prev[1]:
                raise ConfigurationError(
                    f"layer fan_in {cur[0]} does not match previous fan_out {prev[1]}")

    @property
    def input_width(self) -> int:
        return self.layer_dims[0][1]

    @property
    def num_classes(self) -> int:
        return self.layer_dims[-1][1]

    @property
    def total_synapses(self) -> int:
        return total_synapses(self.layer_dims)

    @classmethod
    def canonical(
        cls,
        reset_mode: "ResetMode | None" = None,
        thr_high: float = 8.0,
        thr_low: float = 2.0,
        beta: DecayCode | None = None,
    ) -> "NetworkConfig":
        """The 1024-1024-10 hardware network with default neuron parameters."""
        from .golden import NeuronParams, ResetMode as _RM

        mode = reset_mode if reset_mode is not None else _RM.TO_ZERO
        code = beta if beta is not None else DecayCode.from_shifts((1, 2, 4))
        params = NeuronParams(
            u_thr_high=qfixed_from_real(thr_high),
            u_thr_low=qfixed_from_real(thr_low),
            beta=code,
            reset_mode=mode,
        )
        return cls(CANONICAL_DIMS, (params, params, params))


def validate_image(image: np.ndarray, width: int = INPUT_PIXELS) -> np.ndarray:
    image = np.asarray(image)
    if image.dtype != np.uint8 or image.ndim != 1 or len(image) != width:
        raise ConfigurationError(
            f"input frame must be {width} unsigned bytes, got "
            f"{image.dtype} array of shape {image.shape}")
    return image
