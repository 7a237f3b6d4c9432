"""Block-fading Rayleigh channel with path loss and complex Gaussian noise.

Received symbol: y = c * s + n, with c = sqrt(p * d**-alpha) * h,
h ~ CN(0, 1) held constant over a block and n ~ CN(0, sigma2) drawn per
symbol. sigma2 is set so that the average received SNR equals the configured
value: sigma2 = p * d**-alpha / snr_linear.
"""

from dataclasses import dataclass, replace
import logging
import math

import numpy as np

from .exceptions import ChannelError, ConfigError

logger = logging.getLogger(__name__)


def db_to_linear(value_db: float) -> float:
    return 10.0 ** (float(value_db) / 10.0)


@dataclass(frozen=True)
class ChannelConfig:
    alpha: float = 3.0
    distance_m: float = 10.0
    tx_power: float = 1.0
    snr_db: float = 10.0
    block_len_bits: int = 648

    def __post_init__(self):
        if not self.alpha > 0:
            raise ConfigError("Path-loss exponent must be positive.")
        if not self.distance_m > 0:
            raise ConfigError("Distance must be positive.")
        if not self.tx_power > 0:
            raise ConfigError("Transmit power must be positive.")
        if not math.isfinite(self.snr_db):
            raise ConfigError("SNR must be a finite number of dB.")
        if int(self.block_len_bits) < 1:
            raise ConfigError("Fading blocks must span at least one bit.")

    @property
    def snr_linear(self) -> float:
        return db_to_linear(self.snr_db)

    @property
    def received_power(self) -> float:
        return self.tx_power * self.distance_m ** (-self.alpha)

    @property
    def path_gain(self) -> float:
        return math.sqrt(self.received_power)

    @property
    def noise_variance(self) -> float:
        return self.received_power / self.snr_linear

    def block_len(self, bits_per_symbol: int) -> int:
        return max(1, math.ceil(int(self.block_len_bits) / int(bits_per_symbol)))

    def with_snr(self, snr_db: float):
        return replace(self, snr_db=float(snr_db))


@dataclass(frozen=True)
class ChannelRealization:
    h: complex
    c: complex
    sigma2: float


@dataclass(frozen=True)
class FadingTrace:
    """Per-block fading coefficients of one transmission."""

    h: np.ndarray
    path_gain: float
    sigma2: float
    block_len: int

    def __len__(self):
        return int(self.h.size)

    def __getitem__(self, index) -> ChannelRealization:
        h = complex(self.h[index])
        return ChannelRealization(h=h, c=self.path_gain * h, sigma2=self.sigma2)

    @property
    def c(self) -> np.ndarray:
        return self.path_gain * self.h

    def symbol_gains(self, n_symbols: int) -> np.ndarray:
        return np.repeat(self.c, self.block_len)[:n_symbols]


def draw_realization(cfg: ChannelConfig, rng: np.random.Generator) -> ChannelRealization:
    h = complex(rng.standard_normal(), rng.standard_normal()) / math.sqrt(2)
    return ChannelRealization(h=h, c=cfg.path_gain * h, sigma2=cfg.noise_variance)


def transmit(stream, cfg: ChannelConfig, rng: np.random.Generator, *, block_len=None):
    """Send a symbol stream; returns the received stream and its fading trace.

    All fading coefficients are drawn before any noise sample so a trace is
    reproducible from the generator state alone.
    """
    symbols = np.asarray(stream.symbols, dtype=np.complex128)
    n_symbols = symbols.size
    if n_symbols == 0:
        raise ChannelError("Cannot transmit an empty symbol stream.")
    block_len = int(block_len or cfg.block_len(stream.bits_per_symbol))
    if block_len < 1:
        raise ChannelError("Fading blocks must span at least one symbol.")

    n_blocks = math.ceil(n_symbols / block_len)
    fading = rng.standard_normal((n_blocks, 2))
    h = (fading[:, 0] + 1j * fading[:, 1]) / math.sqrt(2)
    trace = FadingTrace(h=h, path_gain=cfg.path_gain, sigma2=cfg.noise_variance, block_len=block_len)

    noise = rng.standard_normal((n_symbols, 2))
    noise = math.sqrt(trace.sigma2 / 2) * (noise[:, 0] + 1j * noise[:, 1])
    received = trace.symbol_gains(n_symbols) * symbols + noise
    return replace(stream, symbols=received), trace
