"""Gray-coded square QAM with coherent maximum-likelihood detection."""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
import logging
import math

import numpy as np

from .channel import ChannelConfig, transmit
from .exceptions import ChannelError, ConfigError, PayloadError
from .float_codec import BitFrame
from .seeding import STREAM_BER, derive_rng

logger = logging.getLogger(__name__)

MODULATIONS = {"qpsk": 4, "qam16": 16, "qam256": 256}
DETECT_CHUNK_CELLS = 1 << 20
STABLE_BER_BITS = 100_000


@dataclass(frozen=True)
class Constellation:
    """Points indexed by label value; label bits are MSB first.

    The high half of a label Gray-codes the in-phase level, the low half the
    quadrature level. Average symbol energy is 1.
    """

    name: str
    order: int
    bits_per_symbol: int
    points: np.ndarray
    label_bits: np.ndarray
    i_level: np.ndarray
    q_level: np.ndarray

    @property
    def side(self) -> int:
        return int(math.isqrt(self.order))

    def symbol_index(self, label: int) -> int:
        """Grid position r * side + c with c the in-phase and r the quadrature level."""
        return int(self.q_level[label]) * self.side + int(self.i_level[label])

    def label_at(self, symbol_index: int) -> int:
        row, column = divmod(int(symbol_index), self.side)
        matches = np.flatnonzero((self.q_level == row) & (self.i_level == column))
        return int(matches[0])

    def label_string(self, label: int) -> str:
        return "".join(str(b) for b in self.label_bits[label])


@dataclass(frozen=True)
class SymbolStream:
    symbols: np.ndarray
    source_len_bits: int
    bits_per_symbol: int

    def __len__(self):
        return int(self.symbols.size)


@dataclass(frozen=True)
class ErrorCountRow:
    symbol: int
    label: str
    neighbors: tuple
    msb_errors: int
    lsb_errors: int


@dataclass(frozen=True)
class BerPoint:
    modulation: str
    snr_db: float
    ber: float
    closed_form: float | None = None


def build_constellation(modulation) -> Constellation:
    if isinstance(modulation, str):
        name = modulation.lower()
        if name not in MODULATIONS:
            raise ConfigError(f"Unknown modulation '{modulation}'.")
        order = MODULATIONS[name]
    else:
        order = int(modulation)
        names = {value: key for key, value in MODULATIONS.items()}
        if order not in names:
            raise ConfigError(f"Unsupported constellation order {order}.")
        name = names[order]

    side = math.isqrt(order)
    half_bits = int(math.log2(side))
    levels = np.arange(side)
    amplitude = (side - 1 - 2 * levels).astype(np.float64)
    level_of_gray = np.empty(side, dtype=int)
    level_of_gray[levels ^ (levels >> 1)] = levels

    labels = np.arange(order)
    i_level = level_of_gray[labels >> half_bits]
    q_level = level_of_gray[labels & (side - 1)]
    energy = 2.0 * (side * side - 1) / 3.0
    points = (amplitude[i_level] + 1j * amplitude[q_level]) / math.sqrt(energy)
    shifts = np.arange(2 * half_bits - 1, -1, -1)
    label_bits = ((labels[:, None] >> shifts) & 1).astype(np.uint8)
    return Constellation(
        name=name,
        order=order,
        bits_per_symbol=2 * half_bits,
        points=points,
        label_bits=label_bits,
        i_level=i_level,
        q_level=q_level,
    )


def modulate(frame: BitFrame, constellation: Constellation) -> SymbolStream:
    bps = constellation.bits_per_symbol
    if len(frame) % bps:
        raise PayloadError(f"Frame of {len(frame)} bits is not padded to {bps} bits per symbol.")
    groups = frame.bits.reshape(-1, bps).astype(np.int64)
    labels = groups @ (1 << np.arange(bps - 1, -1, -1))
    return SymbolStream(
        symbols=constellation.points[labels],
        source_len_bits=frame.payload_len_bits,
        bits_per_symbol=bps,
    )


def ml_detect(received: complex, gain: complex, constellation: Constellation) -> np.ndarray:
    """Label bits of the nearest scaled point; ties go to the lower label."""
    if gain == 0:
        raise ChannelError("Cannot detect through a zero channel gain.")
    distances = np.abs(received - gain * constellation.points) ** 2
    return constellation.label_bits[int(np.argmin(distances))]


def detect_labels(received, gains, constellation: Constellation) -> np.ndarray:
    received = np.asarray(received, dtype=np.complex128).ravel()
    gains = np.broadcast_to(np.asarray(gains, dtype=np.complex128), received.shape)
    if np.any(gains == 0):
        raise ChannelError("Cannot detect through a zero channel gain.")
    points = constellation.points
    energy = np.abs(points) ** 2
    # |y - g s|^2 minus the constant |y|^2.
    matched = np.conj(gains) * received
    power = np.abs(gains) ** 2
    labels = np.empty(received.size, dtype=np.int64)
    chunk = max(1, DETECT_CHUNK_CELLS // constellation.order)
    for start in range(0, received.size, chunk):
        stop = start + chunk
        score = power[start:stop, None] * energy[None, :] - 2.0 * (
            matched[start:stop, None].real * points.real[None, :]
            + matched[start:stop, None].imag * points.imag[None, :]
        )
        labels[start:stop] = np.argmin(score, axis=1)
    return labels


def demodulate(stream: SymbolStream, gains, constellation: Constellation) -> np.ndarray:
    labels = detect_labels(stream.symbols, gains, constellation)
    return constellation.label_bits[labels].ravel()


def msb_lsb_error_table(constellation: Constellation, neighbor_radius: int = 1) -> list:
    """Bit flips of the first and last label bit toward each grid neighbour."""
    side = constellation.side
    rows = []
    for symbol in range(constellation.order):
        row, column = divmod(symbol, side)
        label = constellation.label_at(symbol)
        neighbors = []
        for other in range(constellation.order):
            other_row, other_column = divmod(other, side)
            distance = max(abs(other_row - row), abs(other_column - column))
            if 0 < distance <= neighbor_radius:
                neighbors.append(other)
        own = constellation.label_bits[label]
        msb = lsb = 0
        for other in neighbors:
            bits = constellation.label_bits[constellation.label_at(other)]
            msb += int(bits[0] != own[0])
            lsb += int(bits[-1] != own[-1])
        rows.append(
            ErrorCountRow(
                symbol=symbol,
                label=constellation.label_string(label),
                neighbors=tuple(neighbors),
                msb_errors=msb,
                lsb_errors=lsb,
            )
        )
    return rows


def theoretical_ber_qpsk_rayleigh(snr_db: float) -> float:
    per_bit = 10.0 ** (snr_db / 10.0) / 2.0
    return 0.5 * (1.0 - math.sqrt(per_bit / (1.0 + per_bit)))


def _ber_point(constellation, cfg, n_bits, seed, index, block_len):
    rng = derive_rng(seed, STREAM_BER, index)
    bps = constellation.bits_per_symbol
    n_bits = n_bits - n_bits % bps
    bits = rng.integers(0, 2, size=n_bits, dtype=np.uint8)
    stream = modulate(BitFrame(bits=bits, payload_len_bits=n_bits), constellation)
    received, trace = transmit(stream, cfg, rng, block_len=block_len)
    detected = demodulate(received, trace.symbol_gains(len(received)), constellation)
    ber = float(np.count_nonzero(detected != bits)) / n_bits
    closed = theoretical_ber_qpsk_rayleigh(cfg.snr_db) if constellation.order == 4 else None
    return BerPoint(modulation=constellation.name, snr_db=cfg.snr_db, ber=ber, closed_form=closed)


def ber_sweep(
    constellation: Constellation,
    snr_db_list,
    n_bits: int,
    seed: int,
    *,
    channel_cfg: ChannelConfig | None = None,
    block_len: int = 1,
    workers: int = 1,
) -> list:
    """Monte-Carlo bit error rate per SNR point.

    block_len is in symbols; the default of one gives independent fading per
    symbol, which is what the closed-form Rayleigh curve describes.
    """
    snr_db_list = list(snr_db_list)
    if not snr_db_list:
        raise ConfigError("BER sweep needs at least one SNR point.")
    bps = constellation.bits_per_symbol
    if n_bits < bps:
        raise ConfigError(f"BER sweep needs at least {bps} bits.")
    if n_bits < STABLE_BER_BITS:
        logger.warning("BER estimate from %d bits will be noisy.", n_bits)
    base = channel_cfg or ChannelConfig()
    configs = [base.with_snr(snr) for snr in snr_db_list]

    def run(indexed):
        index, cfg = indexed
        return _ber_point(constellation, cfg, n_bits, seed, index, block_len)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            points = list(pool.map(run, enumerate(configs)))
    else:
        points = [run(item) for item in enumerate(configs)]
    for point in points:
        logger.debug("%s at %.1f dB: BER %.3e", point.modulation, point.snr_db, point.ber)
    return points


def bit_position_error_rates(
    constellation: Constellation,
    snr_db: float,
    n_symbols: int,
    seed: int,
    *,
    channel_cfg: ChannelConfig | None = None,
) -> np.ndarray:
    """Error rate of each label bit position under per-symbol fading."""
    cfg = (channel_cfg or ChannelConfig()).with_snr(snr_db)
    rng = derive_rng(seed, STREAM_BER, constellation.order)
    labels = rng.integers(0, constellation.order, size=int(n_symbols))
    stream = SymbolStream(
        symbols=constellation.points[labels],
        source_len_bits=labels.size * constellation.bits_per_symbol,
        bits_per_symbol=constellation.bits_per_symbol,
    )
    received, trace = transmit(stream, cfg, rng, block_len=1)
    detected = detect_labels(received.symbols, trace.symbol_gains(labels.size), constellation)
    errors = constellation.label_bits[detected] != constellation.label_bits[labels]
    return errors.mean(axis=0)


def grid_index(constellation: Constellation, label: int) -> tuple:
    """(row, column) of a label on the grid; row is the quadrature level."""
    return int(constellation.q_level[label]), int(constellation.i_level[label])
