"""Memory system model: macro inventory, address map, ports, file formats.

The storage fabric is built from dual-port 2 kB SRAM macros running at
twice the core clock; an access takes two SRAM cycles, so the core sees
one access per port per macro per core cycle, 64 bits per access.

Regions are laid out in a fixed order at macro-aligned bases:

    weights | potentials | decay | thresholds | spikes | inputs

For the canonical 1024-1024-10 network this reconstruction allocates
exactly 77 macros (157,696 bytes = 154 kB): 65 weight macros, one macro
each for potentials (1,024 x 2 B), decay codes (1 B reserved per
neuron), threshold/latch state and spike vectors, and 8 macros (16 kB)
of input frames (up to 16 frames of 1,024 pixel bytes).

Weight words are not stored row-major. The datapath fetches, every MAC
cycle, the 4 weight bits of every active neuron at once (4,096 bits per
hidden-layer cycle), so the weight image is arranged in per-cycle
blocks (neuron-major within the block) and striped across the weight
macros in round-robin word pairs. Each cycle's demand then touches 32
distinct macros at two words each, which the dual ports cover with no
conflict; the map exposes the fetch pattern so this can be checked
exhaustively.

This module also owns the on-disk formats: the "OSPK" packed weight
file and raw/PGM input frames.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .network import ConfigurationError, NetworkConfig, WeightStore

MACRO_BYTES = 2048
MACRO_WORD_BYTES = 8          # 64-bit access width per port
MACRO_WORDS = MACRO_BYTES // MACRO_WORD_BYTES
MACRO_PORTS = 2
PORT_A = 0
PORT_B = 1
SRAM_CYCLES_PER_ACCESS = 2
SRAM_CLOCK_RATIO = 2          # SRAM clock = 2x core clock
ACCESS_LATENCY_CORE_CYCLES = SRAM_CYCLES_PER_ACCESS // SRAM_CLOCK_RATIO  # = 1

MAC_LANES = 4
SPIKE_SLOT_BYTES = 128        # one 1,024-bit spike vector per layer slot
INPUT_FRAME_BYTES = 1024
INPUT_REGION_BYTES = 16384    # 16 kB frame bank, 16 frames
CACHE_BYTES = 128             # input staging cache in the spike processor
CACHE_LOAD_CYCLES = 8
CACHE_LOAD_BYTES_PER_CYCLE = CACHE_BYTES // CACHE_LOAD_CYCLES  # 16

WEIGHT_FILE_MAGIC = b"OSPK"
WEIGHT_FILE_VERSION = 1
_MAX_LAYER_BITS = 1 << 31     # reject absurd headers before allocating


@dataclass(frozen=True, slots=True)
class SramMacro:
    """Fixed parameters of one compiled SRAM block."""

    capacity_bytes: int = MACRO_BYTES
    ports: int = MACRO_PORTS
    access_latency_sram_cycles: int = SRAM_CYCLES_PER_ACCESS
    clock_ratio: int = SRAM_CLOCK_RATIO

    @property
    def core_cycles_per_access(self) -> int:
        return self.access_latency_sram_cycles // self.clock_ratio


@dataclass(frozen=True, slots=True)
class MemoryRegion:
    name: str
    base: int              # byte address, macro aligned
    size: int              # bytes actually assigned to the purpose
    macro_base: int
    macro_count: int

    def contains(self, offset: int) -> bool:
        return 0 <= offset < self.size


@dataclass(frozen=True)
class _LayerWeightLayout:
    fan_in: int
    fan_out: int
    image_offset: int            # byte offset of the layer image in the region
    block_bytes: tuple[int, ...]  # per MAC cycle
    block_offsets: tuple[int, ...]

    @property
    def num_blocks(self) -> int:
        return len(self.block_bytes)


def _layer_blocks(fan_in: int, fan_out: int) -> tuple[int, ...]:
    """Per-cycle block byte sizes: fan_out neurons x up-to-4 lanes, packed."""
    sizes = []
    consumed = 0
    while consumed < fan_in:
        lanes = min(MAC_LANES, fan_in - consumed)
        sizes.append((fan_out * lanes + 7) // 8)
        consumed += lanes
    return tuple(sizes)


def _align_word(n: int) -> int:
    return (n + MACRO_WORD_BYTES - 1) // MACRO_WORD_BYTES * MACRO_WORD_BYTES


@dataclass(frozen=True)
class MemoryMap:
    regions: dict[str, MemoryRegion]
    macro_count: int
    weight_layouts: tuple[_LayerWeightLayout, ...]

    def region(self, name: str) -> MemoryRegion:
        try:
            return self.regions[name]
        except KeyError:
            raise ConfigurationError(f"unknown memory region {name!r}") from None

    @property
    def total_region_bytes(self) -> int:
        return sum(r.size for r in self.regions.values())

    @property
    def total_allocated_bytes(self) -> int:
        return self.macro_count * MACRO_BYTES

    def macro_of(self, region_name: str, offset: int) -> int:
        """Macro index holding a byte of a region (weights use striping)."""
        region = self.region(region_name)
        if not region.contains(offset):
            raise ConfigurationError(
                f"offset {offset} outside region {region_name!r} of {region.size} bytes")
        if region_name == "weights":
            return region.macro_base + self.weight_word_slot(offset // MACRO_WORD_BYTES)
        return region.macro_base + offset // MACRO_BYTES

    def weight_word_slot(self, word: int) -> int:
        """Striping rule: region word index -> weight macro slot.

        Words are distributed round-robin in pairs so that any run of
        2n consecutive words lands on n distinct macros, two words each.
        """
        return (word >> 1) % self.regions["weights"].macro_count

    def weight_fetch_words(self, layer: int, cycle: int) -> list[tuple[int, int]]:
        """(macro, region word) pairs one MAC cycle of one layer reads."""
        layout = self.weight_layouts[layer]
        if not 0 <= cycle < layout.num_blocks:
            raise ConfigurationError(
                f"cycle {cycle} outside layer {layer} with {layout.num_blocks} blocks")
        start = layout.image_offset + layout.block_offsets[cycle]
        end = start + layout.block_bytes[cycle]
        first_word = start // MACRO_WORD_BYTES
        last_word = (end - 1) // MACRO_WORD_BYTES
        base = self.region("weights").macro_base
        return [(base + self.weight_word_slot(w), w)
                for w in range(first_word, last_word + 1)]


def build_memory_map(config: NetworkConfig) -> MemoryMap:
    """Deterministic region/address assignment for a network."""
    layouts = []
    offset = 0
    for fan_in, fan_out in config.layer_dims:
        blocks = _layer_blocks(fan_in, fan_out)
        block_offsets = tuple(int(n) for n in
                              np.concatenate(([0], np.cumsum(blocks)[:-1])))
        layouts.append(_LayerWeightLayout(
            fan_in, fan_out, offset, blocks, block_offsets))
        offset = _align_word(offset + sum(blocks))
    weight_bytes = (layouts[-1].image_offset
                    + sum(layouts[-1].block_bytes)) if layouts else 0

    sizes = {
        "weights": weight_bytes,
        "potentials": 1024 * 2,
        "decay": 1024 * 1,
        "thresholds": 2048,
        "spikes": 2048,
        "inputs": INPUT_REGION_BYTES,
    }
    regions: dict[str, MemoryRegion] = {}
    base = 0
    macro_base = 0
    for name, size in sizes.items():
        macros = (size + MACRO_BYTES - 1) // MACRO_BYTES
        regions[name] = MemoryRegion(name, base, size, macro_base, macros)
        base += macros * MACRO_BYTES
        macro_base += macros
    return MemoryMap(regions, macro_base, tuple(layouts))


# ---------------------------------------------------------------------------
# Faults and tickets
# ---------------------------------------------------------------------------

class MemoryAccessError(Exception):
    """Illegal direct access through the port-checked interface."""


class OutOfRangeError(MemoryAccessError):
    pass


class PortContentionError(MemoryAccessError):
    pass


@dataclass(frozen=True, slots=True)
class AccessTicket:
    region: str
    macro: int
    port: int
    issued_cycle: int
    ready_cycle: int


@dataclass(frozen=True, slots=True)
class FaultEvent:
    cycle: int
    kind: str
    detail: str


@dataclass
class _RegionCounters:
    read_words: int = 0
    write_words: int = 0


def _interleave_layer(store: WeightStore, layer_idx: int,
                      layout: _LayerWeightLayout) -> np.ndarray:
    """Rearrange a layer's row-major bits into the per-cycle block image."""
    lw = store.layer(layer_idx)
    bits = np.unpackbits(lw.packed, count=lw.fan_in * lw.fan_out,
                         bitorder="little").reshape(lw.fan_out, lw.fan_in)
    chunks = []
    consumed = 0
    for block_bytes in layout.block_bytes:
        lanes = min(MAC_LANES, lw.fan_in - consumed)
        block_bits = bits[:, consumed:consumed + lanes].reshape(-1)
        chunks.append(np.packbits(block_bits, bitorder="little"))
        consumed += lanes
    image = np.zeros(layout.block_offsets[-1] + layout.block_bytes[-1],
                     dtype=np.uint8)
    for off, nbytes, chunk in zip(layout.block_offsets, layout.block_bytes, chunks):
        image[off:off + nbytes] = chunk
    return image


def deinterleave_weights(image: np.ndarray, layouts,
                         layer_dims) -> WeightStore:
    """Inverse of the load-time rearrangement; used to cross-check it."""
    chunks = []
    for layout, (fan_in, fan_out) in zip(layouts, layer_dims):
        bits = np.zeros((fan_out, fan_in), dtype=np.uint8)
        consumed = 0
        for off, nbytes in zip(layout.block_offsets, layout.block_bytes):
            lanes = min(MAC_LANES, fan_in - consumed)
            block = image[layout.image_offset + off:
                          layout.image_offset + off + nbytes]
            unpacked = np.unpackbits(block, count=fan_out * lanes,
                                     bitorder="little")
            bits[:, consumed:consumed + lanes] = unpacked.reshape(fan_out, lanes)
            consumed += lanes
        chunks.append(np.packbits(bits.reshape(-1), bitorder="little"))
    return WeightStore(tuple(layer_dims), np.concatenate(chunks))


class MemorySystem:
    """Access-tracking memory model bound to one core instance.

    The port contract is enforced per (macro, port, core cycle): the
    direct `access` API raises on contention, while the bulk interface
    used by the datapath records a fault event and continues, so a
    misconfigured run reports itself instead of silently corrupting.

    Accounting for the per-neuron state regions (potentials, decay,
    thresholds) is counter-only: the published macro inventory gives
    those regions a single macro each, which could not physically
    sustain the 16-neuron-per-cycle sweep, so their word traffic is
    tallied without per-cycle port assignment. The enforced contract
    covers the weight, spike, and input-frame streams.
    """

    def __init__(self, memory_map: MemoryMap):
        self.map = memory_map
        self.cycle = 0
        self._port_ledger: dict[tuple[int, int], int] = {}
        self._macro_use: dict[int, int] = {}
        self.counters: dict[str, _RegionCounters] = {
            name: _RegionCounters() for name in memory_map.regions}
        self.faults: list[FaultEvent] = []
        self.weight_image: np.ndarray | None = None
        self.weight_store: WeightStore | None = None
        self.spike_image = np.zeros(memory_map.region("spikes").size, dtype=np.uint8)
        self.input_image = np.zeros(memory_map.region("inputs").size, dtype=np.uint8)
        self._fetch_patterns: list[list[tuple[int, int]]] = []
        self._matrices_t: list[np.ndarray] = []

    # -- loading -----------------------------------------------------------

    def load_weights(self, store: WeightStore) -> None:
        if tuple(store.layer_dims) != tuple(
                (l.fan_in, l.fan_out) for l in self.map.weight_layouts):
            raise ConfigurationError("weight store does not match the memory map")
        region = self.map.region("weights")
        image = np.zeros(region.size, dtype=np.uint8)
        for idx, layout in enumerate(self.map.weight_layouts):
            chunk = _interleave_layer(store, idx, layout)
            image[layout.image_offset:layout.image_offset + len(chunk)] = chunk
        self.weight_image = image
        self.weight_store = store
        self._validate_striping_capacity()
        self._fetch_patterns = [
            [self.map.weight_fetch_words(li, c) for c in range(layout.num_blocks)]
            for li, layout in enumerate(self.map.weight_layouts)
        ]
        # The datapath's view of the weights, decoded once from the SRAM
        # image (not from the store) and kept transposed for lane slicing.
        decoded = deinterleave_weights(
            image, self.map.weight_layouts,
            tuple((l.fan_in, l.fan_out) for l in self.map.weight_layouts))
        self._matrices_t = [
            np.ascontiguousarray(decoded.layer(i).matrix().T, dtype=np.int32)
            for i in range(decoded.num_layers)
        ]

    def _validate_striping_capacity(self) -> None:
        region = self.map.region("weights")
        total_words = (region.size + MACRO_WORD_BYTES - 1) // MACRO_WORD_BYTES
        per_macro = np.zeros(region.macro_count, dtype=np.int64)
        slots = (np.arange(total_words) >> 1) % region.macro_count
        np.add.at(per_macro, slots, 1)
        if per_macro.max(initial=0) > MACRO_WORDS:
            raise ConfigurationError("weight striping overflows a macro")

    def load_frame(self, pixels: np.ndarray, slot: int = 0) -> None:
        if not 0 <= slot < INPUT_REGION_BYTES // INPUT_FRAME_BYTES:
            raise ConfigurationError(f"frame slot {slot} out of range")
        pixels = np.asarray(pixels, dtype=np.uint8)
        if pixels.shape != (INPUT_FRAME_BYTES,):
            raise ConfigurationError("input frame must be 1,024 bytes")
        self.input_image[slot * INPUT_FRAME_BYTES:(slot + 1) * INPUT_FRAME_BYTES] = pixels

    # -- the port-checked access path --------------------------------------

    def begin_cycle(self, cycle: int) -> None:
        self.cycle = cycle
        self._port_ledger.clear()
        self._macro_use.clear()

    def access(self, region_name: str, offset: int, port: int,
               write: bool = False) -> AccessTicket:
        """One word access on an explicit port; raises on misuse."""
        if port not in (PORT_A, PORT_B):
            raise MemoryAccessError(f"no such port {port}")
        macro = self.map.macro_of(region_name, offset)
        key = (macro, port)
        if self._port_ledger.get(key, 0) >= 1:
            raise PortContentionError(
                f"macro {macro} port {port} already used in cycle {self.cycle}")
        self._port_ledger[key] = 1
        self._count(region_name, 1, write)
        return AccessTicket(region_name, macro, port,
                            self.cycle, self.cycle + ACCESS_LATENCY_CORE_CYCLES)

    # -- bulk datapath traffic ----------------------------------------------

    def _count(self, region_name: str, words: int, write: bool) -> None:
        c = self.counters[region_name]
        if write:
            c.write_words += words
        else:
            c.read_words += words

    def _charge_macro_words(self, region_name: str,
                            macro_words: list[tuple[int, int]],
                            write: bool) -> None:
        """Charge word accesses with automatic port assignment.

        More than two words on one macro in one cycle exceeds the dual
        ports: recorded as a bandwidth fault, never silently dropped.
        """
        self._count(region_name, len(macro_words), write)
        for macro, _word in macro_words:
            used = self._macro_use.get(macro, 0) + 1
            self._macro_use[macro] = used
            if used == MACRO_PORTS + 1:
                self.faults.append(FaultEvent(
                    self.cycle, "bandwidth",
                    f"macro {macro} needs >{MACRO_PORTS} accesses in one cycle"))

    def fetch_weights(self, layer: int, cycle_in_layer: int) -> None:
        self._charge_macro_words(
            "weights", self._fetch_patterns[layer][cycle_in_layer], write=False)

    def read_spike_word(self, byte_offset: int) -> None:
        macro = self.map.macro_of("spikes", byte_offset)
        self._charge_macro_words("spikes", [(macro, byte_offset // MACRO_WORD_BYTES)],
                                 write=False)

    def write_spike_word(self, byte_offset: int) -> None:
        macro = self.map.macro_of("spikes", byte_offset)
        self._charge_macro_words("spikes", [(macro, byte_offset // MACRO_WORD_BYTES)],
                                 write=True)

    def read_input_words(self, byte_offset: int, nbytes: int) -> None:
        first = byte_offset // MACRO_WORD_BYTES
        last = (byte_offset + nbytes - 1) // MACRO_WORD_BYTES
        base = self.map.region("inputs").macro_base
        words = [(base + (w * MACRO_WORD_BYTES) // MACRO_BYTES, w)
                 for w in range(first, last + 1)]
        self._charge_macro_words("inputs", words, write=False)

    def count_state_sweep(self, neurons: int) -> None:
        """Counter-only traffic for one finalize group: u read+write, decay read."""
        words = (neurons * 2 + MACRO_WORD_BYTES - 1) // MACRO_WORD_BYTES
        self._count("potentials", words, write=False)
        self._count("potentials", words, write=True)
        self._count("decay", (neurons + MACRO_WORD_BYTES - 1) // MACRO_WORD_BYTES,
                    write=False)

    # -- functional views ---------------------------------------------------

    def weight_matrix(self, layer: int) -> np.ndarray:
        """Signed +-1 matrix for one layer, decoded from the SRAM image."""
        if not self._matrices_t:
            raise ConfigurationError("no weights loaded")
        return self._matrices_t[layer].T.astype(np.int8)

    def layer_matrix_t(self, layer: int) -> np.ndarray:
        """Transposed (fan_in, fan_out) int32 weight matrix for the datapath."""
        if not self._matrices_t:
            raise ConfigurationError("no weights loaded")
        return self._matrices_t[layer]

    def frame(self, slot: int = 0) -> np.ndarray:
        return self.input_image[slot * INPUT_FRAME_BYTES:
                                (slot + 1) * INPUT_FRAME_BYTES].copy()


def mem_access(memory: MemorySystem, region: str, offset: int,
               port: int, write: bool = False) -> AccessTicket:
    """Module-level alias of the port-checked single-access operation."""
    return memory.access(region, offset, port, write)


# ---------------------------------------------------------------------------
# Weight file format
# ---------------------------------------------------------------------------

class WeightFileError(ValueError):
    """Malformed weight file."""


class BadMagicError(WeightFileError):
    pass


class UnsupportedVersionError(WeightFileError):
    pass


class DimensionError(WeightFileError):
    pass


class TruncatedPayloadError(WeightFileError):
    pass


class TrailingDataError(WeightFileError):
    pass


_HEADER = struct.Struct("<4sHH")
_LAYER_DIMS = struct.Struct("<II")


def serialize_weight_file(store: WeightStore) -> bytes:
    """Encode a store: magic, version, dims, then per-layer packed bits.

    All header integers are little-endian; payload bits are little-endian
    within bytes, row-major by post-neuron, zero-padded per layer.
    """
    parts = [_HEADER.pack(WEIGHT_FILE_MAGIC, WEIGHT_FILE_VERSION,
                          store.num_layers)]
    for fan_in, fan_out in store.layer_dims:
        parts.append(_LAYER_DIMS.pack(fan_in, fan_out))
    parts.append(store.bits.tobytes())
    return b"".join(parts)


def load_weight_file(data: bytes) -> WeightStore:
    if len(data) < _HEADER.size:
        raise TruncatedPayloadError("file shorter than the fixed header")
    magic, version, layer_count = _HEADER.unpack_from(data, 0)
    if magic != WEIGHT_FILE_MAGIC:
        raise BadMagicError(f"bad magic {magic!r}")
    if version != WEIGHT_FILE_VERSION:
        raise UnsupportedVersionError(f"unsupported format version {version}")
    if layer_count == 0:
        raise DimensionError("file declares zero layers")
    pos = _HEADER.size
    dims = []
    for _ in range(layer_count):
        if pos + _LAYER_DIMS.size > len(data):
            raise TruncatedPayloadError("dimension table cut short")
        fan_in, fan_out = _LAYER_DIMS.unpack_from(data, pos)
        pos += _LAYER_DIMS.size
        if fan_in == 0 or fan_out == 0:
            raise DimensionError(f"degenerate layer dims ({fan_in}, {fan_out})")
        if fan_in * fan_out > _MAX_LAYER_BITS:
            raise DimensionError(
                f"layer dims ({fan_in}, {fan_out}) overflow supported size")
        dims.append((fan_in, fan_out))
    payload_bytes = sum((fi * fo + 7) // 8 for fi, fo in dims)
    if len(data) - pos < payload_bytes:
        raise TruncatedPayloadError(
            f"payload is {len(data) - pos} bytes, need {payload_bytes}")
    if len(data) - pos > payload_bytes:
        raise TrailingDataError(
            f"{len(data) - pos - payload_bytes} unexpected bytes after payload")
    bits = np.frombuffer(data, dtype=np.uint8, count=payload_bytes,
                         offset=pos).copy()
    return WeightStore(tuple(dims), bits)


# ---------------------------------------------------------------------------
# Input frame files: raw 1,024-byte arrays or 8-bit binary PGM
# ---------------------------------------------------------------------------

class ImageFormatError(ValueError):
    """Unreadable or wrongly shaped input frame file."""


def _parse_pgm(data: bytes) -> np.ndarray:
    tokens: list[int] = []
    pos = 2  # past "P5"
    while len(tokens) < 3:
        if pos >= len(data):
            raise ImageFormatError("PGM header cut short")
        ch = data[pos:pos + 1]
        if ch == b"#":
            nl = data.find(b"\n", pos)
            pos = len(data) if nl < 0 else nl + 1
        elif ch.isspace():
            pos += 1
        else:
            end = pos
            while end < len(data) and not data[end:end + 1].isspace():
                end += 1
            try:
                tokens.append(int(data[pos:end]))
            except ValueError:
                raise ImageFormatError("non-numeric PGM header field") from None
            pos = end
    pos += 1  # single whitespace after maxval
    width, height, maxval = tokens
    if maxval > 255:
        raise ImageFormatError("only 8-bit PGM is supported")
    if width * height != INPUT_FRAME_BYTES:
        raise ImageFormatError(
            f"PGM has {width}x{height} pixels, need {INPUT_FRAME_BYTES} total")
    if len(data) - pos < width * height:
        raise ImageFormatError("PGM pixel data cut short")
    return np.frombuffer(data, dtype=np.uint8, count=width * height,
                         offset=pos).copy()


def load_image_bytes(data: bytes) -> np.ndarray:
    """Decode a frame file: binary PGM or a raw 1,024-byte pixel dump."""
    if data[:2] == b"P5":
        return _parse_pgm(data)
    if len(data) != INPUT_FRAME_BYTES:
        raise ImageFormatError(
            f"raw frame must be exactly {INPUT_FRAME_BYTES} bytes, got {len(data)}")
    return np.frombuffer(data, dtype=np.uint8).copy()
