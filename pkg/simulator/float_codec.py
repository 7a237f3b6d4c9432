"""Bit-exact float32 framing for gradient payloads.

Each gradient scalar is sent as its 32-bit IEEE-754 pattern, most significant
bit first (sign, 8 exponent bits, 23 fraction bits). The receiver can clear
the exponent MSB of every word, which caps every decoded magnitude below 2
whatever the channel did to the word.
"""

from dataclasses import dataclass
from functools import lru_cache
import logging
import math

import numpy as np

from .exceptions import ConfigError, PayloadError
from .flcore import GradientTensor

logger = logging.getLogger(__name__)

WORD_BITS = 32
EXPONENT_MSB_INDEX = 1
CLAMP_MASK = np.uint32(0xFFFFFFFF ^ (1 << (WORD_BITS - 1 - EXPONENT_MSB_INDEX)))
DEFAULT_INTERLEAVER_DEPTH = 32


@dataclass(frozen=True)
class BitFrame:
    bits: np.ndarray
    payload_len_bits: int
    pad_bits: int = 0

    def __post_init__(self):
        bits = np.ascontiguousarray(self.bits, dtype=np.uint8).ravel()
        if bits.size != self.payload_len_bits + self.pad_bits:
            raise PayloadError(
                f"Frame holds {bits.size} bits but declares "
                f"{self.payload_len_bits} payload + {self.pad_bits} pad bits."
            )
        if bits.size and bits.max() > 1:
            raise PayloadError("Frame bits must be 0 or 1.")
        object.__setattr__(self, "bits", bits)

    def __len__(self):
        return int(self.bits.size)

    @property
    def payload(self) -> np.ndarray:
        return self.bits[: self.payload_len_bits]


@dataclass(frozen=True)
class InterleaverSpec:
    depth: int = DEFAULT_INTERLEAVER_DEPTH
    frame_len: int = 0

    def __post_init__(self):
        if int(self.depth) < 1:
            raise ConfigError(f"Interleaver depth must be at least 1, got {self.depth}.")
        if int(self.frame_len) < 0:
            raise ConfigError("Interleaver frame length cannot be negative.")

    @classmethod
    def for_frame(cls, frame: BitFrame, depth: int = DEFAULT_INTERLEAVER_DEPTH):
        return cls(depth=depth, frame_len=len(frame))


def encode(gradients) -> BitFrame:
    raw = gradients.values if isinstance(gradients, GradientTensor) else gradients
    with np.errstate(over="ignore"):
        values = np.asarray(raw, dtype=np.float32).ravel()
    if not np.all(np.isfinite(values)):
        bad = int(np.count_nonzero(~np.isfinite(values)))
        raise PayloadError(f"Cannot encode {bad} non-finite gradient value(s).")
    words = values.view(np.uint32).astype(">u4")
    bits = np.unpackbits(words.view(np.uint8))
    return BitFrame(bits=bits, payload_len_bits=int(bits.size))


def _payload_words(frame: BitFrame) -> np.ndarray:
    payload = frame.payload
    if payload.size % WORD_BITS:
        raise PayloadError(
            f"Payload of {payload.size} bits is not a whole number of {WORD_BITS}-bit words."
        )
    return np.packbits(payload).view(">u4").astype(np.uint32)


def clamp_words(words: np.ndarray) -> np.ndarray:
    return np.asarray(words, dtype=np.uint32) & CLAMP_MASK


def decode_with_clamp(frame: BitFrame) -> GradientTensor:
    words = clamp_words(_payload_words(frame))
    return GradientTensor(values=words.view(np.float32))


def decode_naive(frame: BitFrame) -> GradientTensor:
    return GradientTensor(values=_payload_words(frame).view(np.float32))


def pad_frame(frame: BitFrame, bits_per_symbol: int) -> BitFrame:
    pad = (-frame.payload_len_bits) % int(bits_per_symbol)
    bits = np.concatenate([frame.payload, np.zeros(pad, dtype=np.uint8)])
    return BitFrame(bits=bits, payload_len_bits=frame.payload_len_bits, pad_bits=pad)


def strip_padding(frame: BitFrame) -> BitFrame:
    if not frame.pad_bits:
        return frame
    return BitFrame(bits=frame.payload.copy(), payload_len_bits=frame.payload_len_bits)


@lru_cache(maxsize=64)
def _read_order(depth: int, length: int) -> np.ndarray:
    # Write row-wise into `depth` rows, read column-wise; trailing cells of a
    # short last column are skipped.
    columns = max(1, math.ceil(length / depth))
    index = np.arange(length)
    keys = (index % depth) * columns + index // depth
    order = np.argsort(keys, kind="stable")
    order.setflags(write=False)
    return order


def _check_spec(frame: BitFrame, spec: InterleaverSpec):
    if spec.frame_len != len(frame):
        raise PayloadError(
            f"Interleaver built for {spec.frame_len} bits, frame has {len(frame)}."
        )


def interleave(frame: BitFrame, spec: InterleaverSpec) -> BitFrame:
    _check_spec(frame, spec)
    order = _read_order(int(spec.depth), len(frame))
    return BitFrame(
        bits=frame.bits[order],
        payload_len_bits=frame.payload_len_bits,
        pad_bits=frame.pad_bits,
    )


def deinterleave(frame: BitFrame, spec: InterleaverSpec) -> BitFrame:
    _check_spec(frame, spec)
    order = _read_order(int(spec.depth), len(frame))
    bits = np.empty_like(frame.bits)
    bits[order] = frame.bits
    return BitFrame(
        bits=bits,
        payload_len_bits=frame.payload_len_bits,
        pad_bits=frame.pad_bits,
    )


def word_bits(word: int) -> str:
    return format(int(word) & 0xFFFFFFFF, "032b")


def roundtrip_report(value: float) -> dict:
    """Bit patterns of one value before and after the receiver clamp."""
    frame = encode(np.array([value], dtype=np.float32))
    word = int(_payload_words(frame)[0])
    clamped = int(clamp_words(np.array([word], dtype=np.uint32))[0])
    pattern = word_bits(word)
    clamped_pattern = word_bits(clamped)
    return {
        "value": float(np.float32(value)),
        "bits": pattern,
        "hex": f"0x{word:08X}",
        "fields": f"{pattern[0]} {pattern[1:9]} {pattern[9:]}",
        "clamped_bits": clamped_pattern,
        "clamped_hex": f"0x{clamped:08X}",
        "clamped_value": float(decode_with_clamp(frame).values[0]),
        "naive_value": float(decode_naive(frame).values[0]),
    }
