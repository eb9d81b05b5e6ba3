"""Symbol alphabets and bit mapping for the RF source (QPSK) and the A-BD (BPSK).

The RF source uses Gray-mapped QPSK with symbols (+-1 +-1j)/sqrt(2); the
backscatter device uses BPSK symbols +-1.  The bit-to-quadrant labelling is
fixed here once so that every detector and every test is deterministic: the
first bit selects the sign of the real part, the second bit the sign of the
imaginary part, and bit 0 maps to +.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_SQRT2 = np.sqrt(2.0)


@dataclass(frozen=True)
class Alphabet:
    """An ordered constellation of unit-energy points.

    Index i carries the bit tuple given by ``bits_of(i)``; the ordering is
    part of the contract because nearest-symbol ties resolve to the lowest
    index.
    """

    name: str
    symbols: np.ndarray  # complex, shape (2**bits_per_symbol,)
    bits_per_symbol: int

    def __post_init__(self):
        symbols = np.asarray(self.symbols, dtype=np.complex128)
        object.__setattr__(self, "symbols", symbols)
        if symbols.ndim != 1 or symbols.size != 2 ** self.bits_per_symbol:
            raise ValueError("alphabet size must equal 2**bits_per_symbol")
        if np.any(np.abs(np.abs(symbols) - 1.0) > 1e-12):
            raise ValueError("alphabet symbols must have unit energy")

    @property
    def size(self) -> int:
        return self.symbols.size

    def bits_of(self, index) -> np.ndarray:
        """Bit rows for symbol indices; MSB first, shape (..., bits_per_symbol)."""
        index = np.asarray(index)
        shifts = np.arange(self.bits_per_symbol - 1, -1, -1)
        return (index[..., None] >> shifts) & 1

    def index_of(self, bits) -> np.ndarray:
        """Symbol indices for bit rows of shape (..., bits_per_symbol)."""
        bits = np.asarray(bits)
        if bits.shape[-1] != self.bits_per_symbol:
            raise ValueError("bit rows must have length bits_per_symbol")
        weights = 1 << np.arange(self.bits_per_symbol - 1, -1, -1)
        return (bits * weights).sum(axis=-1)

    def modulate(self, bits) -> np.ndarray:
        """Map bit rows (..., bits_per_symbol) to symbols (...,)."""
        return self.symbols[self.index_of(bits)]


QPSK = Alphabet(
    name="qpsk",
    symbols=np.array([1 + 1j, 1 - 1j, -1 + 1j, -1 - 1j]) / _SQRT2,
    bits_per_symbol=2,
)

BPSK = Alphabet(
    name="bpsk",
    symbols=np.array([1 + 0j, -1 + 0j]),
    bits_per_symbol=1,
)


def map_qpsk(bits) -> complex:
    """Map a bit pair to a QPSK symbol; (0,0) -> (1+1j)/sqrt(2)."""
    b0, b1 = bits
    if b0 not in (0, 1) or b1 not in (0, 1):
        raise ValueError("bits must be 0 or 1")
    return complex(QPSK.symbols[(int(b0) << 1) | int(b1)])


def map_bpsk(bit) -> float:
    """Map one bit to a BPSK symbol; 0 -> +1, 1 -> -1."""
    if bit not in (0, 1):
        raise ValueError("bit must be 0 or 1")
    return float(np.real(BPSK.symbols[int(bit)]))


def demap_nearest(z, alphabet: Alphabet):
    """Quantize ``z`` to the closest alphabet point (squared Euclidean distance).

    Returns ``(symbol, bits)``.  Ties resolve to the lowest symbol index.
    Raises on non-finite input, which signals a corrupted sample upstream.
    """
    z = complex(z)
    if not np.isfinite(z):
        raise ValueError("cannot demap non-finite sample")
    idx = int(np.argmin(np.abs(alphabet.symbols - z) ** 2))
    return complex(alphabet.symbols[idx]), tuple(int(b) for b in alphabet.bits_of(idx))


def demap_bpsk(symbol) -> int:
    """Inverse of :func:`map_bpsk` for exact +-1 inputs."""
    _, bits = demap_nearest(symbol, BPSK)
    return bits[0]


def quantize_indices(z, alphabet: Alphabet) -> np.ndarray:
    """Vectorized nearest-symbol indices for an array of samples.

    QPSK and BPSK take a sign-based shortcut that reproduces the generic
    argmin including its lowest-index tie rule; anything else falls back to
    an explicit distance scan over the constellation.
    """
    z = np.asarray(z, dtype=np.complex128)
    if alphabet is QPSK:
        return ((z.real < 0).astype(np.int64) << 1) | (z.imag < 0)
    if alphabet is BPSK:
        return (z.real < 0).astype(np.int64)
    d = np.abs(z[..., None] - alphabet.symbols) ** 2
    return np.argmin(d, axis=-1)


@dataclass(frozen=True)
class Frame:
    """One A-BD symbol interval: K source symbols plus the covering A-BD symbol."""

    s: np.ndarray        # K source symbols
    c: complex           # A-BD symbol
    s_bits: np.ndarray   # shape (K, source bits per symbol)
    c_bits: np.ndarray   # shape (1,)

    @property
    def K(self) -> int:
        return self.s.shape[0]


def random_frame(rng: np.random.Generator, K: int,
                 source: Alphabet = QPSK, abd: Alphabet = BPSK) -> Frame:
    """Draw uniform bits and map them to a frame of K source symbols and one c."""
    s_bits = rng.integers(0, 2, size=(K, source.bits_per_symbol))
    c_bits = rng.integers(0, 2, size=(1,))
    s = source.modulate(s_bits)
    c = complex(abd.symbols[abd.index_of(c_bits[..., None])[0]])
    return Frame(s=s, c=c, s_bits=s_bits, c_bits=c_bits)
