"""Cycle-accurate model of the accelerator core.

The core owns 1,024 hardware neurons, each a MAC unit plus a potential
adder, and processes the network one layer per control state:

  input state (3 cycles)
      cycle 0 saves the previous pass's output-layer results (up to 16
      neurons per save cycle, and there are only 10), cycle 1 is the
      single MAC accumulation the one-input front end needs (pixels come
      from the pre-staged input cache), cycle 2 initializes the state.
  hidden state (256 cycles for the canonical network)
      every MAC unit walks its 1,024 inputs four lanes per cycle. While
      the MACs run, the neuron selector finalizes the *previous* layer
      16 neurons per cycle (64 cycles): the arithmetic unit decays the
      stored potential, the adder folds in the held accumulator value,
      the Schmitt trigger emits spikes, and the fresh spike bits are
      written to spike memory where the MACs pick them up at their
      slower 4-bit rate.
  output state (256 cycles)
      only 10 MAC units are active; the selector finalizes the hidden
      layer, and the input cache for the next pass is re-staged from the
      frame bank in 8 cycles of 16 bytes.

A pass (one network timestep) is therefore 3 + 256 + 256 = 515 cycles,
and the output spikes of pass t materialize in the save cycle of pass
t+1; a one-cycle flush after the last pass collects the final spikes.

Within a tick the engines run in a fixed order: memory responses land,
the selector group finalizes and publishes its spike bits, MAC units
accumulate (seeing same-cycle spike writes, the dual-port write-first
behavior), the cache loader moves its 16 bytes, and the FSM advances.

The spike/potential arithmetic is the same array kernel the functional
reference uses, so any divergence between the two models is a
scheduling or data-movement bug, which is exactly what the equivalence
suite is for.
"""

from __future__ import annotations

import enum
import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .golden import layer_step_arrays, predict
from .memmap import (
    CACHE_BYTES,
    CACHE_LOAD_BYTES_PER_CYCLE,
    CACHE_LOAD_CYCLES,
    INPUT_FRAME_BYTES,
    MemorySystem,
)
from .network import (
    HARDWARE_NEURONS,
    MAC_LANES,
    SELECTOR_GROUP,
    ConfigurationError,
    NetworkConfig,
    validate_image,
)

_SPIKE_SLOT_BYTES = 128

# 4-bit nibble -> 4 lane flags, little-endian bit order
_NIBBLE_LUT = np.array(
    [[(n >> b) & 1 for b in range(4)] for n in range(16)], dtype=bool)


class SimulationFault(RuntimeError):
    """The core stopped making progress (internal model failure)."""


class FsmState(enum.Enum):
    INPUT_LAYER = "input_layer"
    HIDDEN_LAYER = "hidden_layer"
    OUTPUT_LAYER = "output_layer"


_STATE_ORDER = (FsmState.INPUT_LAYER, FsmState.HIDDEN_LAYER, FsmState.OUTPUT_LAYER)


@dataclass
class ControlFsm:
    state: FsmState = FsmState.INPUT_LAYER
    cycle_in_state: int = 0


@dataclass
class MacUnitArray:
    """The 1,024 MAC accumulators (signed 16-bit in hardware, int32 here)."""

    accumulators: np.ndarray
    lane_count: int = MAC_LANES

    @property
    def count(self) -> int:
        return len(self.accumulators)


@dataclass
class PotentialAdderArray:
    """Holds one layer's accumulated counts between its MAC pass and its
    finalize sweep in the following state."""

    held: np.ndarray
    held_layer: int | None = None

    @property
    def count(self) -> int:
        return len(self.held)


@dataclass
class NeuronSelector:
    cursor: int = 0
    group_size: int = SELECTOR_GROUP


@dataclass
class SpikeProcessor:
    """Spike emission state and the input staging cache.

    `latches` are the per-neuron Schmitt inhibition bits, `z_prev` the
    per-neuron spike outputs of the previous pass (the reset triggers).
    The staging cache holds the frame slice re-loaded every output
    state; its structural capacity is 128 bytes.
    """

    latches: list[np.ndarray]
    z_prev: list[np.ndarray]
    staged_frame: np.ndarray | None = None
    cache_bytes_loaded: int = 0
    cache_capacity: int = CACHE_BYTES


@dataclass
class TraceCounters:
    selector_groups: int = 0
    adder_activations: int = 0
    mau_ops: int = 0
    schmitt_evals: int = 0
    spike_emissions: list[int] = field(default_factory=lambda: [0, 0, 0])
    mac_unit_cycles: int = 0
    weight_bits: list[int] = field(default_factory=lambda: [0, 0, 0])
    cache_load_bytes: int = 0

    def to_dict(self) -> dict:
        return {
            "selector_groups": self.selector_groups,
            "adder_activations": self.adder_activations,
            "mau_ops": self.mau_ops,
            "schmitt_evals": self.schmitt_evals,
            "spike_emissions": list(self.spike_emissions),
            "mac_unit_cycles": self.mac_unit_cycles,
            "weight_bits": list(self.weight_bits),
            "cache_load_bytes": self.cache_load_bytes,
        }


@dataclass
class CycleTrace:
    """Accumulated activity of a run; events kept only when requested."""

    record_events: bool = False
    counters: TraceCounters = field(default_factory=TraceCounters)
    pass_state_cycles: list[dict[str, int]] = field(default_factory=list)
    current_state_cycles: dict[str, int] = field(default_factory=dict)
    flush_cycles: int = 0
    events: list[tuple] = field(default_factory=list)

    def emit(self, cycle: int, kind: str, *payload) -> tuple | None:
        if not self.record_events:
            return None
        ev = (cycle, kind, payload)
        self.events.append(ev)
        return ev

    def per_timestep_state_cycles(self) -> dict[str, int]:
        if not self.pass_state_cycles:
            raise ConfigurationError("trace holds no completed timestep")
        first = self.pass_state_cycles[0]
        if any(p != first for p in self.pass_state_cycles):
            raise ConfigurationError("timesteps disagree on state cycle counts")
        return dict(first)

    def to_dict(self) -> dict:
        return {
            "counters": self.counters.to_dict(),
            "pass_state_cycles": [dict(p) for p in self.pass_state_cycles],
            "flush_cycles": self.flush_cycles,
            "events": [list((c, k, list(p))) for c, k, p in self.events],
        }

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


@dataclass
class CoreState:
    config: NetworkConfig
    fsm: ControlFsm
    macs: MacUnitArray
    adders: PotentialAdderArray
    selector: NeuronSelector
    spikes: SpikeProcessor
    potentials: list[np.ndarray]
    spike_counts: np.ndarray
    cycle: int = 0
    timestep: int = 0
    pending_output_save: bool = False
    trace: CycleTrace = field(default_factory=CycleTrace)
    state_budgets: dict[FsmState, int] = field(default_factory=dict)
    sweep_cycles: dict[FsmState, int] = field(default_factory=dict)

    def snapshot(self) -> str:
        """Digest of the architectural state, for idempotence/equality checks."""
        h = hashlib.sha256()
        h.update(self.fsm.state.value.encode())
        h.update(np.int64([self.fsm.cycle_in_state, self.cycle, self.timestep,
                           int(self.pending_output_save)]).tobytes())
        h.update(self.macs.accumulators.tobytes())
        h.update(self.adders.held.tobytes())
        h.update(np.int64([-1 if self.adders.held_layer is None
                           else self.adders.held_layer]).tobytes())
        for bank in self.potentials:
            h.update(bank.tobytes())
        for arr in self.spikes.latches + self.spikes.z_prev:
            h.update(np.packbits(arr).tobytes())
        h.update(self.spike_counts.tobytes())
        return h.hexdigest()


def _ceil_div(a: int, b: int) -> int:
    return -(-a // b)


def reset(config: NetworkConfig) -> CoreState:
    """Allocate and zero the full machine state for a network."""
    for fan_in, fan_out in config.layer_dims:
        if fan_out > HARDWARE_NEURONS:
            raise ConfigurationError(
                f"layer fan_out {fan_out} exceeds the {HARDWARE_NEURONS} hardware neurons")
        if fan_in > HARDWARE_NEURONS:
            raise ConfigurationError(
                f"layer fan_in {fan_in} exceeds the {HARDWARE_NEURONS} hardware neurons")
    dims = config.layer_dims
    save_cycles = _ceil_div(dims[2][1], SELECTOR_GROUP)  # 1 for 10 outputs
    budgets = {
        FsmState.INPUT_LAYER: save_cycles + 2,  # save + accumulate + init
        FsmState.HIDDEN_LAYER: max(_ceil_div(dims[1][0], MAC_LANES),
                                   _ceil_div(dims[0][1], SELECTOR_GROUP)),
        FsmState.OUTPUT_LAYER: max(_ceil_div(dims[2][0], MAC_LANES),
                                   _ceil_div(dims[1][1], SELECTOR_GROUP),
                                   CACHE_LOAD_CYCLES),
    }
    sweeps = {
        FsmState.INPUT_LAYER: save_cycles,
        FsmState.HIDDEN_LAYER: _ceil_div(dims[0][1], SELECTOR_GROUP),
        FsmState.OUTPUT_LAYER: _ceil_div(dims[1][1], SELECTOR_GROUP),
    }
    return CoreState(
        config=config,
        fsm=ControlFsm(),
        macs=MacUnitArray(np.zeros(HARDWARE_NEURONS, dtype=np.int32)),
        adders=PotentialAdderArray(np.zeros(HARDWARE_NEURONS, dtype=np.int32)),
        selector=NeuronSelector(),
        spikes=SpikeProcessor(
            latches=[np.zeros(fo, dtype=bool) for _, fo in dims],
            z_prev=[np.zeros(fo, dtype=bool) for _, fo in dims],
        ),
        potentials=[np.zeros(fo, dtype=np.int32) for _, fo in dims],
        spike_counts=np.zeros(config.num_classes, dtype=np.int64),
        state_budgets=budgets,
        sweep_cycles=sweeps,
    )


def _slot_byte(layer: int) -> int:
    return layer * _SPIKE_SLOT_BYTES


def _finalize_group(core: CoreState, mem: MemorySystem, layer: int,
                    group: int) -> None:
    """Selector/MAU/adder/Schmitt work for one 16-neuron group."""
    fan_out = core.config.layer_dims[layer][1]
    a = group * SELECTOR_GROUP
    b = min(a + SELECTOR_GROUP, fan_out)
    if a >= b:
        return
    params = core.config.layer_params[layer]
    counts = core.adders.held[a:b]
    z, u_new, inh_new = layer_step_arrays(
        counts,
        core.potentials[layer][a:b],
        core.spikes.latches[layer][a:b],
        core.spikes.z_prev[layer][a:b],
        params,
    )
    core.potentials[layer][a:b] = u_new
    core.spikes.latches[layer][a:b] = inh_new
    core.spikes.z_prev[layer][a:b] = z

    packed = np.packbits(z.astype(np.uint8), bitorder="little")
    byte_off = _slot_byte(layer) + group * (SELECTOR_GROUP // 8)
    mem.spike_image[byte_off:byte_off + len(packed)] = packed
    mem.write_spike_word(byte_off)
    mem.count_state_sweep(b - a)

    n = b - a
    emitted = int(z.sum())
    c = core.trace.counters
    c.selector_groups += 1
    c.adder_activations += n
    c.mau_ops += n
    c.schmitt_evals += n
    c.spike_emissions[layer] += emitted
    core.trace.emit(core.cycle, "selector", layer, group, n)
    core.trace.emit(core.cycle, "schmitt", layer, n, emitted)

    if layer == len(core.config.layer_dims) - 1:
        core.spike_counts += z


def _mac_cycle(core: CoreState, mem: MemorySystem, layer: int, c: int) -> None:
    """One 4-lane accumulation beat for every active MAC of a layer."""
    fan_in, fan_out = core.config.layer_dims[layer]
    lanes = min(MAC_LANES, fan_in - c * MAC_LANES)
    src_byte = _slot_byte(layer - 1) + (c * MAC_LANES) // 8
    nibble = (int(mem.spike_image[src_byte]) >> (4 * (c & 1))) & 0xF
    mem.read_spike_word(src_byte)
    mem.fetch_weights(layer, c)

    flags = _NIBBLE_LUT[nibble][:lanes]
    if flags.any():
        wt = mem.layer_matrix_t(layer)
        rows = wt[c * MAC_LANES:c * MAC_LANES + lanes]
        core.macs.accumulators[:fan_out] += rows[flags].sum(axis=0, dtype=np.int32)

    tc = core.trace.counters
    tc.mac_unit_cycles += fan_out
    tc.weight_bits[layer] += fan_out * lanes
    core.trace.emit(core.cycle, "mac", layer, fan_out, lanes, fan_out * lanes)


def _input_accumulate(core: CoreState, mem: MemorySystem) -> None:
    """The front end's single accumulation cycle: one pixel per neuron."""
    if core.spikes.staged_frame is None:
        raise SimulationFault("input cache was never staged")
    fan_out = core.config.layer_dims[0][1]
    diag = mem.layer_matrix_t(0).reshape(-1)[:fan_out]
    counts = core.spikes.staged_frame.astype(np.int32) * diag
    core.macs.accumulators[:fan_out] = counts
    mem.fetch_weights(0, 0)
    tc = core.trace.counters
    tc.mac_unit_cycles += fan_out
    tc.weight_bits[0] += fan_out
    core.trace.emit(core.cycle, "mac", 0, fan_out, 1, fan_out)


def _cache_load_cycle(core: CoreState, mem: MemorySystem, c: int) -> None:
    mem.read_input_words(c * CACHE_LOAD_BYTES_PER_CYCLE, CACHE_LOAD_BYTES_PER_CYCLE)
    core.spikes.cache_bytes_loaded += CACHE_LOAD_BYTES_PER_CYCLE
    core.trace.counters.cache_load_bytes += CACHE_LOAD_BYTES_PER_CYCLE
    core.trace.emit(core.cycle, "cache_load", CACHE_LOAD_BYTES_PER_CYCLE)
    if core.spikes.cache_bytes_loaded >= CACHE_BYTES:
        core.spikes.staged_frame = mem.frame(0)


def _transfer_to_adders(core: CoreState, layer: int) -> None:
    fan_out = core.config.layer_dims[layer][1]
    core.adders.held[:] = 0
    core.adders.held[:fan_out] = core.macs.accumulators[:fan_out]
    core.adders.held_layer = layer
    core.macs.accumulators[:] = 0
    core.trace.emit(core.cycle, "adder_load", layer, fan_out)


def tick(core: CoreState, mem: MemorySystem) -> tuple[CoreState, list[tuple]]:
    """Advance the core by exactly one clock cycle.

    Returns the (mutated) core and the trace events of this cycle.
    """
    mem.begin_cycle(core.cycle)
    events_start = len(core.trace.events)
    state = core.fsm.state
    c = core.fsm.cycle_in_state
    trace = core.trace
    trace.current_state_cycles[state.value] = (
        trace.current_state_cycles.get(state.value, 0) + 1)

    if state is FsmState.INPUT_LAYER:
        save_cycles = core.sweep_cycles[FsmState.INPUT_LAYER]
        if c < save_cycles:
            if core.pending_output_save:
                if core.adders.held_layer != 2:
                    raise SimulationFault("output save without held output sums")
                _finalize_group(core, mem, layer=2, group=c)
                core.selector.cursor = c + 1
                if c == save_cycles - 1:
                    core.pending_output_save = False
        elif c == save_cycles:
            _input_accumulate(core, mem)
        else:
            _transfer_to_adders(core, layer=0)
            core.selector.cursor = 0
    elif state is FsmState.HIDDEN_LAYER:
        if c < core.sweep_cycles[FsmState.HIDDEN_LAYER]:
            _finalize_group(core, mem, layer=0, group=c)
            core.selector.cursor = c + 1
        if c < _ceil_div(core.config.layer_dims[1][0], MAC_LANES):
            _mac_cycle(core, mem, layer=1, c=c)
    elif state is FsmState.OUTPUT_LAYER:
        if c < core.sweep_cycles[FsmState.OUTPUT_LAYER]:
            _finalize_group(core, mem, layer=1, group=c)
            core.selector.cursor = c + 1
        if c < _ceil_div(core.config.layer_dims[2][0], MAC_LANES):
            _mac_cycle(core, mem, layer=2, c=c)
        if c < CACHE_LOAD_CYCLES:
            _cache_load_cycle(core, mem, c)

    # FSM advance
    core.fsm.cycle_in_state += 1
    if core.fsm.cycle_in_state >= core.state_budgets[state]:
        if state is FsmState.HIDDEN_LAYER:
            _transfer_to_adders(core, layer=1)
        elif state is FsmState.OUTPUT_LAYER:
            _transfer_to_adders(core, layer=2)
            core.pending_output_save = True
            core.timestep += 1
            trace.pass_state_cycles.append(dict(trace.current_state_cycles))
            trace.current_state_cycles = {}
        next_state = _STATE_ORDER[(_STATE_ORDER.index(state) + 1) % 3]
        core.fsm.state = next_state
        core.fsm.cycle_in_state = 0
        core.selector.cursor = 0
        if next_state is FsmState.OUTPUT_LAYER:
            core.spikes.cache_bytes_loaded = 0
        trace.emit(core.cycle, "fsm", next_state.value)

    core.cycle += 1
    return core, trace.events[events_start:]


@dataclass
class CycleReport:
    """Per-pass activity summary (one network timestep)."""

    state_cycles: dict[str, int]
    sweep_cycles: dict[str, int]
    cache_load_cycles: int
    mac_active_units: dict[str, int]
    weight_bits: list[int]
    spike_emissions: list[int]
    selector_groups: int
    adder_activations: int
    schmitt_evals: int
    fault_count: int

    def to_dict(self) -> dict:
        return {
            "state_cycles": dict(self.state_cycles),
            "sweep_cycles": dict(self.sweep_cycles),
            "cache_load_cycles": self.cache_load_cycles,
            "mac_active_units": dict(self.mac_active_units),
            "weight_bits": list(self.weight_bits),
            "spike_emissions": list(self.spike_emissions),
            "selector_groups": self.selector_groups,
            "adder_activations": self.adder_activations,
            "schmitt_evals": self.schmitt_evals,
            "fault_count": self.fault_count,
        }


def run_timestep(core: CoreState, mem: MemorySystem,
                 max_cycles: int | None = None) -> CycleReport:
    """Tick until one full input->hidden->output pass completes."""
    if mem.weight_image is None:
        raise ConfigurationError("load weights into the memory system first")
    budget = sum(core.state_budgets.values())
    if max_cycles is None:
        max_cycles = budget + 8
    start_pass = core.timestep
    start_counts = core.trace.counters.to_dict()
    start_faults = len(mem.faults)
    ticks = 0
    while core.timestep == start_pass:
        tick(core, mem)
        ticks += 1
        if ticks > max_cycles:
            raise SimulationFault(
                f"no pass completion within {max_cycles} cycles")
    end_counts = core.trace.counters.to_dict()
    dims = core.config.layer_dims
    return CycleReport(
        state_cycles=dict(core.trace.pass_state_cycles[-1]),
        sweep_cycles={
            "hidden_layer": core.sweep_cycles[FsmState.HIDDEN_LAYER],
            "output_layer": core.sweep_cycles[FsmState.OUTPUT_LAYER],
        },
        cache_load_cycles=CACHE_LOAD_CYCLES,
        mac_active_units={
            "input_layer": dims[0][1],
            "hidden_layer": dims[1][1],
            "output_layer": dims[2][1],
        },
        weight_bits=[e - s for e, s in zip(end_counts["weight_bits"],
                                           start_counts["weight_bits"])],
        spike_emissions=[e - s for e, s in zip(end_counts["spike_emissions"],
                                               start_counts["spike_emissions"])],
        selector_groups=(end_counts["selector_groups"]
                         - start_counts["selector_groups"]),
        adder_activations=(end_counts["adder_activations"]
                           - start_counts["adder_activations"]),
        schmitt_evals=end_counts["schmitt_evals"] - start_counts["schmitt_evals"],
        fault_count=len(mem.faults) - start_faults,
    )


@dataclass
class InferenceResult:
    spike_counts: np.ndarray
    prediction: int
    timestep_reports: list[CycleReport]
    total_cycles: int
    trace: CycleTrace
    faults: list

    def to_dict(self) -> dict:
        return {
            "spike_counts": [int(v) for v in self.spike_counts],
            "prediction": self.prediction,
            "total_cycles": self.total_cycles,
            "timesteps": len(self.timestep_reports),
            "per_timestep": (self.timestep_reports[0].to_dict()
                             if self.timestep_reports else None),
            "fault_count": len(self.faults),
        }


def stage_input_cache(core: CoreState, mem: MemorySystem, slot: int = 0) -> None:
    """Host-side initialization of the input staging cache (zero cycles)."""
    core.spikes.staged_frame = mem.frame(slot)
    core.spikes.cache_bytes_loaded = CACHE_BYTES


def run_inference(core: CoreState, mem: MemorySystem, image: np.ndarray,
                  timesteps: int) -> InferenceResult:
    """Run `timesteps` passes plus the one-cycle flush of the final spikes.

    Requires a freshly reset core; weights must already be loaded.
    """
    if timesteps < 1:
        raise ConfigurationError("timestep count must be >= 1")
    if core.cycle != 0:
        raise ConfigurationError("run_inference needs a freshly reset core")
    image = validate_image(image, core.config.input_width)
    mem.load_frame(image, slot=0)
    # Host initialization stages the first frame; later passes re-stage it
    # through the 8-cycle cache load in the output state.
    stage_input_cache(core, mem, slot=0)

    reports = [run_timestep(core, mem) for _ in range(timesteps)]

    # Flush: the save cycles of the next pass collect the last output spikes.
    for _ in range(core.sweep_cycles[FsmState.INPUT_LAYER]):
        tick(core, mem)
        core.trace.flush_cycles += 1
    core.trace.current_state_cycles = {}

    counts = core.spike_counts.copy()
    return InferenceResult(
        spike_counts=counts,
        prediction=predict(counts),
        timestep_reports=reports,
        total_cycles=core.cycle,
        trace=core.trace,
        faults=list(mem.faults),
    )
