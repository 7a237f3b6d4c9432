"""Uplink strategies and their airtime accounting.

ecrt         coded blocks, a block whose raw errors exceed the correction
             capability is resent under fresh fading until it gets through
naive        uncoded, errors are delivered as-is
approximate  uncoded with a row-column interleaver, decoded with the clamp
ideal        error-free and uncoded, a reference with no channel at all
"""

from dataclasses import dataclass
from fractions import Fraction
import logging
import math

import numpy as np
from scipy.special import erfc
from scipy.stats import binom

from .channel import ChannelConfig, transmit
from .exceptions import ConfigError, LinkFailure
from .float_codec import (
    BitFrame,
    DEFAULT_INTERLEAVER_DEPTH,
    InterleaverSpec,
    decode_naive,
    decode_with_clamp,
    deinterleave,
    interleave,
    pad_frame,
)
from .modem import Constellation, demodulate, modulate
from .seeding import STREAM_ECRT, derive_rng

logger = logging.getLogger(__name__)

KINDS = ("ecrt", "naive", "approximate", "ideal")


@dataclass(frozen=True)
class LinkStrategy:
    kind: str = "approximate"
    code_rate: Fraction = Fraction(1, 2)
    codeword_len: int = 648
    correct_capability: int = 7
    max_retries: int = 100
    interleaver_depth: int = DEFAULT_INTERLEAVER_DEPTH

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"Unknown link strategy '{self.kind}'.")
        rate = Fraction(self.code_rate).limit_denominator(10_000)
        object.__setattr__(self, "code_rate", rate)
        if not 0 < rate <= 1:
            raise ConfigError(f"Code rate must be in (0, 1], got {rate}.")
        if self.codeword_len < 1:
            raise ConfigError("Codeword length must be positive.")
        if (self.codeword_len * rate).denominator != 1:
            raise ConfigError(
                f"Codeword length {self.codeword_len} x rate {rate} is not a whole number of bits."
            )
        if self.correct_capability < 0:
            raise ConfigError("Correction capability cannot be negative.")
        if self.max_retries < 0:
            raise ConfigError("max_retries cannot be negative.")
        if self.interleaver_depth < 1:
            raise ConfigError("Interleaver depth must be at least 1.")

    @property
    def info_len(self) -> int:
        return int(self.codeword_len * self.code_rate)


@dataclass(frozen=True)
class TransmissionOutcome:
    delivered: BitFrame
    raw_bit_errors: int
    residual_bit_errors: int
    symbols_used: int
    retransmissions: int = 0


def _uncoded_pass(frame: BitFrame, constellation, cfg, rng):
    padded = pad_frame(frame, constellation.bits_per_symbol)
    stream = modulate(padded, constellation)
    received, trace = transmit(stream, cfg, rng)
    bits = demodulate(received, trace.symbol_gains(len(received)), constellation)
    delivered = bits[: frame.payload_len_bits].copy()
    return delivered, len(stream)


def send_naive(frame, constellation, cfg, rng, *, interleaver: InterleaverSpec | None = None):
    sent = interleave(frame, interleaver) if interleaver else frame
    bits, symbols = _uncoded_pass(sent, constellation, cfg, rng)
    delivered = BitFrame(bits=bits, payload_len_bits=frame.payload_len_bits)
    if interleaver:
        delivered = deinterleave(delivered, interleaver)
    errors = int(np.count_nonzero(delivered.bits != frame.payload))
    return TransmissionOutcome(
        delivered=delivered,
        raw_bit_errors=errors,
        residual_bit_errors=errors,
        symbols_used=symbols,
    )


def send_approximate(frame, constellation, cfg, interleaver, rng):
    if interleaver is None:
        interleaver = InterleaverSpec.for_frame(frame)
    return send_naive(frame, constellation, cfg, rng, interleaver=interleaver)


def send_ideal(frame: BitFrame, constellation: Constellation):
    symbols = math.ceil(frame.payload_len_bits / constellation.bits_per_symbol)
    delivered = BitFrame(bits=frame.payload.copy(), payload_len_bits=frame.payload_len_bits)
    return TransmissionOutcome(
        delivered=delivered, raw_bit_errors=0, residual_bit_errors=0, symbols_used=symbols
    )


def send_ecrt(frame, constellation, cfg: ChannelConfig, strategy: LinkStrategy, rng):
    """Coded transmission with whole-codeword retransmission.

    Decoding is modelled by counting raw errors per codeword against the
    correction capability. Codewords that fail an attempt are resent together,
    each with its own fading block.
    """
    info_len = strategy.info_len
    payload = frame.payload
    n_blocks = math.ceil(payload.size / info_len)
    delivered = BitFrame(bits=payload.copy(), payload_len_bits=frame.payload_len_bits)
    if n_blocks == 0:
        return TransmissionOutcome(delivered, 0, 0, 0)

    bps = constellation.bits_per_symbol
    padded_len = strategy.codeword_len + (-strategy.codeword_len) % bps
    symbols_per_codeword = padded_len // bps
    info = np.zeros(n_blocks * info_len, dtype=np.uint8)
    info[: payload.size] = payload
    codewords = np.zeros((n_blocks, padded_len), dtype=np.uint8)
    codewords[:, :info_len] = info.reshape(n_blocks, info_len)
    codewords[:, info_len:strategy.codeword_len] = rng.integers(
        0, 2, size=(n_blocks, strategy.codeword_len - info_len), dtype=np.uint8
    )

    pending = np.arange(n_blocks)
    raw_errors = symbols_used = retransmissions = 0
    attempt = 0
    while pending.size:
        if attempt > strategy.max_retries:
            block = int(pending[0])
            logger.error(
                "Codeword %d still above %d errors after %d attempts.",
                block,
                strategy.correct_capability,
                attempt,
            )
            raise LinkFailure(
                f"Codeword {block} failed {attempt} attempts.", block_index=block, attempts=attempt
            )
        sent = codewords[pending].ravel()
        stream = modulate(BitFrame(bits=sent, payload_len_bits=sent.size), constellation)
        received, trace = transmit(stream, cfg, rng, block_len=symbols_per_codeword)
        bits = demodulate(received, trace.symbol_gains(len(received)), constellation)
        wrong = bits.reshape(pending.size, padded_len) != codewords[pending]
        errors = wrong[:, : strategy.codeword_len].sum(axis=1)

        raw_errors += int(errors.sum())
        symbols_used += len(stream)
        if attempt:
            retransmissions += int(pending.size)
        pending = pending[errors > strategy.correct_capability]
        attempt += 1

    if retransmissions:
        logger.debug("ECRT resent %d of %d codewords.", retransmissions, n_blocks)
    return TransmissionOutcome(
        delivered=delivered,
        raw_bit_errors=raw_errors,
        residual_bit_errors=0,
        symbols_used=symbols_used,
        retransmissions=retransmissions,
    )


def send(frame, constellation, cfg, strategy: LinkStrategy, rng) -> TransmissionOutcome:
    if strategy.kind == "ecrt":
        return send_ecrt(frame, constellation, cfg, strategy, rng)
    if strategy.kind == "naive":
        return send_naive(frame, constellation, cfg, rng)
    if strategy.kind == "approximate":
        spec = InterleaverSpec.for_frame(frame, depth=strategy.interleaver_depth)
        return send_approximate(frame, constellation, cfg, spec, rng)
    return send_ideal(frame, constellation)


def decoder_for(kind: str):
    return decode_with_clamp if kind == "approximate" else decode_naive


def airtime_ratio(ecrt: TransmissionOutcome, approx: TransmissionOutcome) -> float:
    if approx.symbols_used == 0:
        raise ConfigError("Reference transmission used no symbols.")
    return ecrt.symbols_used / approx.symbols_used


def expected_ecrt_attempts(
    constellation, cfg: ChannelConfig, strategy: LinkStrategy, *, n_codewords=2000, seed=0
) -> float:
    """Mean attempts per codeword, measured by sending random payloads."""
    rng = derive_rng(seed, STREAM_ECRT)
    bits = rng.integers(0, 2, size=n_codewords * strategy.info_len, dtype=np.uint8)
    outcome = send_ecrt(BitFrame(bits=bits, payload_len_bits=bits.size), constellation, cfg, strategy, rng)
    return (n_codewords + outcome.retransmissions) / n_codewords


def expected_ecrt_attempts_qpsk(snr_db: float, strategy: LinkStrategy, *, n_draws=200_000, seed=0) -> float:
    """1 / E_h[P(errors <= t | h)] for Gray QPSK under per-codeword Rayleigh fading."""
    rng = derive_rng(seed, STREAM_ECRT, 1)
    fade = rng.exponential(1.0, size=n_draws)
    snr = 10.0 ** (snr_db / 10.0)
    bit_error = 0.5 * erfc(np.sqrt(snr * fade / 2.0))
    success = binom.cdf(strategy.correct_capability, strategy.codeword_len, bit_error).mean()
    return float("inf") if success == 0 else float(1.0 / success)
