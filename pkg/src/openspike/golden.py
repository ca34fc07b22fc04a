"""Golden functional model of the hysteresis (Schmitt-trigger) LIF network.

This is the bit-exact reference the cycle-accurate core model is
verified against. Every neuron keeps a Q7.8 membrane potential `u` and a
one-bit inhibition latch. Each timestep:

    u'  = decay(u) + synaptic_sum - reset_term
    z   = (u' > u_thr_high) and latch was clear
    latch' = clear only when z = 0 and u' < u_thr_low

where decay(u) is the shift-and-add product with the layer's decay code.
The latch is the stored Schmitt-trigger state: the spike decision reads
the latch as left by the previous step, then the latch is rewritten from
the fresh spike and potential. A spike therefore always sets the latch,
and the neuron cannot fire again until its potential has dropped below
the low threshold.

Two reset behaviors are supported. TO_ZERO mirrors the arithmetic unit
in the modeled core: a neuron that spiked has its stored potential
cleared, so the next step decays zero. SUBTRACT_HIGH subtracts the high
threshold (undeacayed) on the step after the spike, the classic
subtractive LIF formulation; it is kept for reference behavior tests.

The first network layer is the pixel front end: each neuron receives its
own raw 8-bit pixel as the input value, through its single bipolar
weight, identically at every timestep (direct encoding). Hidden/output
layers receive {0,1} spikes. Synaptic sums accumulate in integer count
units; one count converts to 1.0 potential units (raw 256), saturating
at the Q7.8 bounds.

State flows in, state flows out: nothing here mutates its arguments.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace

import numpy as np

from .fixedpoint import (
    DecayCode,
    QFixed,
    counts_to_raw_array,
    decay_shift_add,
    decay_shift_add_array,
    sat_add,
    sat_add_array,
    sat_sub,
    sat_sub_array,
)
from .network import (
    ConfigurationError,
    LayerWeights,
    NetworkConfig,
    SpikeVector,
    WeightStore,
    validate_image,
)


class ResetMode(enum.Enum):
    TO_ZERO = "zero"
    SUBTRACT_HIGH = "subtract"


@dataclass(frozen=True, slots=True)
class NeuronParams:
    """Per-layer neuron parameters: thresholds, decay code, reset behavior."""

    u_thr_high: QFixed
    u_thr_low: QFixed
    beta: DecayCode
    reset_mode: ResetMode

    def __post_init__(self) -> None:
        if self.u_thr_low.raw > self.u_thr_high.raw:
            raise ConfigurationError("u_thr_low must not exceed u_thr_high")
        if self.u_thr_high.raw <= 0:
            raise ConfigurationError("u_thr_high must be positive")


@dataclass(frozen=True, slots=True)
class NeuronState:
    """Membrane potential plus the Schmitt-trigger inhibition latch."""

    u: QFixed = QFixed(0)
    inhibited: bool = False


def schmitt_step(
    u: QFixed, inhibited_prev: bool, params: NeuronParams
) -> tuple[bool, bool]:
    """Spike decision and next latch value for one neuron.

    Returns (z, inhibited_next). The spike fires only on a high-threshold
    crossing with the latch clear; the latch then clears only once the
    potential has fallen below the low threshold with no spike.
    """
    z = (u.raw > params.u_thr_high.raw) and not inhibited_prev
    inhibited_next = not ((not z) and u.raw < params.u_thr_low.raw)
    return z, inhibited_next


def membrane_update(
    state: NeuronState,
    synaptic_sum: QFixed,
    z_prev: bool,
    params: NeuronParams,
) -> NeuronState:
    """Decay, integrate and reset one neuron's potential.

    `z_prev` is the neuron's own spike output from the previous timestep;
    it selects the reset path. The inhibition latch is untouched here
    (schmitt_step owns it).
    """
    if params.reset_mode is ResetMode.TO_ZERO:
        base = QFixed(0) if z_prev else state.u
        u_new = sat_add(decay_shift_add(base, params.beta), synaptic_sum)
    else:
        u_new = sat_add(decay_shift_add(state.u, params.beta), synaptic_sum)
        if z_prev:
            u_new = sat_sub(u_new, params.u_thr_high)
    return replace(state, u=u_new)


# ---------------------------------------------------------------------------
# Array kernel shared by the whole-network fast path. Semantics are the
# scalar ops element-wise; tests pin the agreement.
# ---------------------------------------------------------------------------

def layer_step_arrays(
    counts: np.ndarray,
    u_raw: np.ndarray,
    inhibited: np.ndarray,
    z_prev: np.ndarray,
    params: NeuronParams,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One timestep for a whole layer on raw-value arrays.

    counts: integer synaptic accumulator per neuron (spike/pixel units).
    Returns (z, u_raw_next, inhibited_next) as bool/int32/bool arrays.
    """
    syn = counts_to_raw_array(counts)
    if params.reset_mode is ResetMode.TO_ZERO:
        base = np.where(z_prev, np.int32(0), u_raw.astype(np.int32))
        u_new = sat_add_array(decay_shift_add_array(base, params.beta), syn)
    else:
        u_new = sat_add_array(decay_shift_add_array(u_raw, params.beta), syn)
        u_new = np.where(
            z_prev,
            sat_sub_array(u_new, np.int32(params.u_thr_high.raw)),
            u_new,
        ).astype(np.int32)
    z = (u_new > params.u_thr_high.raw) & ~inhibited
    inhibited_next = ~(~z & (u_new < params.u_thr_low.raw))
    return z, u_new, inhibited_next


def _synaptic_counts(
    spikes_in: SpikeVector | np.ndarray,
    layer: LayerWeights,
) -> np.ndarray:
    """Integer synaptic sums for every post-neuron of one layer.

    A SpikeVector of length fan_in drives the dense matrix. A raw uint8
    pixel array drives the one-input front end: it must be fan_out pixels
    long with fan_in == 1, each neuron seeing only its own pixel.
    """
    w = layer.matrix()
    if isinstance(spikes_in, SpikeVector):
        if spikes_in.length != layer.fan_in:
            raise ConfigurationError(
                f"spike vector length {spikes_in.length} != fan_in {layer.fan_in}")
        x = spikes_in.to_bools().astype(np.int32)
        return w.astype(np.int32) @ x
    pixels = np.asarray(spikes_in)
    if layer.fan_in != 1 or len(pixels) != layer.fan_out:
        raise ConfigurationError(
            "pixel input requires a one-input layer with one pixel per neuron")
    return pixels.astype(np.int32) * w.reshape(-1).astype(np.int32)


def dense_layer_forward(
    spikes_in: SpikeVector | np.ndarray,
    layer: LayerWeights,
    states: list[NeuronState],
    params: NeuronParams,
    prev_spikes: SpikeVector | None = None,
) -> tuple[SpikeVector, list[NeuronState]]:
    """Advance one dense layer by one timestep.

    `prev_spikes` carries the layer's own output from the previous
    timestep (the per-neuron reset trigger); omitted means no neuron
    spiked last step.
    """
    if len(states) != layer.fan_out:
        raise ConfigurationError(
            f"got {len(states)} neuron states for fan_out {layer.fan_out}")
    counts = _synaptic_counts(spikes_in, layer)
    u_raw = np.array([s.u.raw for s in states], dtype=np.int32)
    inhibited = np.array([s.inhibited for s in states], dtype=bool)
    if prev_spikes is None:
        z_prev = np.zeros(layer.fan_out, dtype=bool)
    else:
        if prev_spikes.length != layer.fan_out:
            raise ConfigurationError("prev_spikes length != fan_out")
        z_prev = prev_spikes.to_bools()
    z, u_new, inh_new = layer_step_arrays(counts, u_raw, inhibited, z_prev, params)
    new_states = [
        NeuronState(u=QFixed(int(u)), inhibited=bool(i))
        for u, i in zip(u_new, inh_new)
    ]
    return SpikeVector.from_bools(z), new_states


@dataclass
class _LayerBank:
    u_raw: np.ndarray
    inhibited: np.ndarray
    z_prev: np.ndarray

    @classmethod
    def zeros(cls, width: int) -> "_LayerBank":
        return cls(
            u_raw=np.zeros(width, dtype=np.int32),
            inhibited=np.zeros(width, dtype=bool),
            z_prev=np.zeros(width, dtype=bool),
        )


def network_forward(
    image: np.ndarray,
    config: NetworkConfig,
    weights: WeightStore,
    timesteps: int,
    record_spikes: bool = False,
) -> np.ndarray | tuple[np.ndarray, list[list[np.ndarray]]]:
    """Run the full network for `timesteps` steps on one input frame.

    Returns accumulated output-layer spike counts per class (int64).
    With record_spikes=True also returns, per timestep, the list of
    boolean spike arrays each layer produced (used by trace-conservation
    checks).
    """
    if timesteps < 1:
        raise ConfigurationError("timestep count must be >= 1")
    if weights.layer_dims != config.layer_dims:
        raise ConfigurationError("weight store shape does not match config")
    image = validate_image(image, config.input_width)

    matrices = [weights.layer(i).matrix().astype(np.int32)
                for i in range(weights.num_layers)]
    banks = [_LayerBank.zeros(fo) for _, fo in config.layer_dims]
    counts_out = np.zeros(config.num_classes, dtype=np.int64)
    history: list[list[np.ndarray]] = []

    pixel_counts = image.astype(np.int32) * matrices[0].reshape(-1)
    for _ in range(timesteps):
        step_spikes: list[np.ndarray] = []
        x = None
        for li, params in enumerate(config.layer_params):
            bank = banks[li]
            if li == 0:
                counts = pixel_counts
            else:
                counts = matrices[li] @ x.astype(np.int32)
            z, u_new, inh_new = layer_step_arrays(
                counts, bank.u_raw, bank.inhibited, bank.z_prev, params)
            bank.u_raw, bank.inhibited, bank.z_prev = u_new, inh_new, z
            step_spikes.append(z)
            x = z
        counts_out += step_spikes[-1]
        if record_spikes:
            history.append(step_spikes)

    if record_spikes:
        return counts_out, history
    return counts_out


def predict(spike_counts: np.ndarray) -> int:
    """Class decision: argmax of counts, ties broken by lowest index."""
    return int(np.argmax(spike_counts))
