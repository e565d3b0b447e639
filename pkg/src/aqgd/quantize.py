"""Range-parameterized quantizers and bit-exact frame packing.

Two quantizer families are provided: a per-component uniform scalar
quantizer over [-R, R] and a codebook quantizer built from a covering of
the unit ball.  Both are deterministic: identical inputs produce
bit-identical frames, and the decoder reconstructs the encoder's output
exactly from the frame plus the shared (R, spec) parameters.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import Overflow


@dataclass(frozen=True)
class CodeFrame:
    """A payload of ``bit_len`` bits, packed MSB-first into bytes."""

    payload: bytes
    bit_len: int

    def to_bytes(self) -> bytes:
        """Length-prefixed wire form: 4-byte LE bit count, then payload."""
        return struct.pack("<I", self.bit_len) + self.payload

    @classmethod
    def from_bytes(cls, raw: bytes) -> "CodeFrame":
        if len(raw) < 4:
            raise ValueError("truncated frame header")
        (bit_len,) = struct.unpack("<I", raw[:4])
        payload = raw[4:]
        if len(payload) != (bit_len + 7) // 8:
            raise ValueError("payload length does not match bit count")
        return cls(payload=payload, bit_len=bit_len)


def pack_bits(indices, b: int) -> CodeFrame:
    """Pack integers into ``b`` bits each, big-endian within each component."""
    if b < 1:
        raise ValueError("b must be >= 1")
    idx = np.asarray(indices, dtype=np.int64)
    if idx.ndim != 1:
        raise ValueError("indices must be a flat sequence")
    if idx.size and (idx.min() < 0 or idx.max() >= (1 << b)):
        raise ValueError(f"indices do not fit in {b} bits")
    shifts = np.arange(b - 1, -1, -1, dtype=np.int64)
    bits = ((idx[:, None] >> shifts) & 1).astype(np.uint8).ravel()
    payload = np.packbits(bits).tobytes()  # packbits zero-pads the final byte
    return CodeFrame(payload=payload, bit_len=b * idx.size)


def unpack_bits(frame: CodeFrame, b: int, count: int) -> list[int]:
    """Inverse of :func:`pack_bits`; requires the exact bit length."""
    return _unpack_array(frame, b, count).tolist()


@dataclass(frozen=True)
class QuantizerSpec:
    """Parameters of a range-scaled quantizer map.

    ``family`` is "scalar" (per-component, ``b`` bits each) or "net"
    (codebook over the unit ball).  ``gamma`` is the worst-case relative
    error: sqrt(d)/2**b for the scalar family, the covering radius for
    the net family.
    """

    family: str
    d: int
    gamma: float
    b: int = 0
    codebook: np.ndarray | None = field(default=None, repr=False)

    @property
    def frame_bits(self) -> int:
        if self.family == "scalar":
            return self.d * self.b
        return max(1, math.ceil(math.log2(len(self.codebook))))


def scalar_spec(d: int, b: int) -> QuantizerSpec:
    if d < 1 or b < 1:
        raise ValueError("d and b must be >= 1")
    return QuantizerSpec(family="scalar", d=d, b=b, gamma=math.sqrt(d) / 2.0**b)


def scalar_encode(x, R: float, b: int) -> tuple[CodeFrame, np.ndarray]:
    """Quantize each component of x to the center of its bin in [-R, R].

    [-R, R] is split into 2**b equal bins, half-open [lo, hi) with the
    final bin closed; boundary values map to the upper bin.  Requires
    ||x|| <= R.  R = 0 yields the zero vector and an all-zero frame of
    nominal length.
    """
    x = np.asarray(x, dtype=float)
    d = x.size
    if R < 0 or not math.isfinite(R):
        raise ValueError("R must be finite and nonnegative")
    if math.sqrt(float(x @ x)) > R:
        raise Overflow(f"||x|| = {np.linalg.norm(x):.6g} exceeds range R = {R:.6g}")
    if R == 0.0:
        frame = pack_bits(np.zeros(d, dtype=np.int64), b)
        return frame, np.zeros(d)
    nbins = 1 << b
    width = 2.0 * R / nbins
    idx = np.floor((x + R) / width).astype(np.int64)
    np.minimum(idx, nbins - 1, out=idx)  # x_i == R lands in the closed final bin
    xhat = -R + (idx + 0.5) * width
    return pack_bits(idx, b), xhat


def _unpack_array(frame: CodeFrame, b: int, count: int) -> np.ndarray:
    if frame.bit_len != b * count:
        raise ValueError(
            f"frame holds {frame.bit_len} bits, expected {b * count}"
        )
    bits = np.unpackbits(np.frombuffer(frame.payload, dtype=np.uint8),
                         count=b * count).astype(np.int64)
    weights = 1 << np.arange(b - 1, -1, -1, dtype=np.int64)
    return bits.reshape(count, b) @ weights


def scalar_decode(frame: CodeFrame, R: float, b: int, d: int) -> np.ndarray:
    """Reconstruct the encoder's output bit-identically from the frame."""
    idx = _unpack_array(frame, b, d)
    if R == 0.0:
        return np.zeros(d)
    nbins = 1 << b
    width = 2.0 * R / nbins
    return -R + (idx + 0.5) * width


def _sample_ball(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    """n points uniform in the closed unit ball."""
    g = rng.standard_normal((n, d))
    g /= np.maximum(np.linalg.norm(g, axis=1, keepdims=True), 1e-300)
    radii = rng.random(n) ** (1.0 / d)
    return g * radii[:, None]


def _uncovered(points: np.ndarray, centers: np.ndarray, gamma: float) -> np.ndarray:
    """Min distance from each point to the center set, as a coverage mask."""
    d2 = np.sum(points**2, axis=1)[:, None] - 2.0 * points @ centers.T
    d2 = d2 + np.sum(centers**2, axis=1)[None, :]
    return np.sqrt(np.maximum(d2.min(axis=1), 0.0)) > gamma


def build_net(
    d: int,
    gamma: float,
    cap: int = 200_000,
    seed: int = 20240817,
    confirm_batches: int = 3,
    confirm_size: int = 100_000,
) -> QuantizerSpec:
    """Greedy maximal gamma-packing of the unit ball (hence a gamma-cover).

    Points are pairwise more than gamma apart, which bounds the codebook
    size by (2/gamma + 1)**d; the covering property is verified by
    rejection sampling at build time.  Intended for d <= 6.
    """
    if not (0.0 < gamma < 1.0):
        raise ValueError("gamma must lie in (0, 1)")
    bound = (2.0 / gamma + 1.0) ** d
    if bound > cap:
        raise ValueError(
            f"codebook bound (2/gamma+1)^d = {bound:.3g} exceeds cap {cap}"
        )
    rng = np.random.default_rng(seed)
    centers = [np.zeros(d)]

    def grow(batch: np.ndarray) -> int:
        """Farthest-point insertion of every batch point left uncovered."""
        added = 0
        C = np.array(centers)
        dmin = np.full(len(batch), np.inf)
        for c in C:
            dmin = np.minimum(dmin, np.linalg.norm(batch - c, axis=1))
        while True:
            i = int(np.argmax(dmin))
            if dmin[i] <= gamma:
                return added
            centers.append(batch[i].copy())
            added += 1
            dmin = np.minimum(dmin, np.linalg.norm(batch - batch[i], axis=1))

    # growth phase: mix interior and boundary candidates
    for _ in range(64):
        batch = _sample_ball(rng, 4096, d)
        sphere = rng.standard_normal((1024, d))
        sphere /= np.maximum(np.linalg.norm(sphere, axis=1, keepdims=True), 1e-300)
        if grow(np.vstack([batch, sphere])) == 0:
            break
    # confirmation phase: consecutive clean rejection-sampling batches
    clean = 0
    while clean < confirm_batches:
        batch = _sample_ball(rng, confirm_size, d)
        mask = _uncovered(batch, np.array(centers), gamma)
        if not mask.any():
            clean += 1
            continue
        clean = 0
        grow(batch[mask])
    return QuantizerSpec(
        family="net", d=d, gamma=gamma, codebook=np.array(centers)
    )


def net_quantize(x, R: float, spec: QuantizerSpec) -> tuple[CodeFrame, np.ndarray]:
    """Snap x to R times its nearest codebook point; transmit the index."""
    if spec.family != "net":
        raise ValueError("spec is not a net quantizer")
    x = np.asarray(x, dtype=float)
    nbits = spec.frame_bits
    if R < 0 or not np.isfinite(R):
        raise ValueError("R must be finite and nonnegative")
    if float(np.linalg.norm(x)) > R:
        raise Overflow(f"||x|| = {np.linalg.norm(x):.6g} exceeds range R = {R:.6g}")
    if R == 0.0:
        return pack_bits([0], nbits), np.zeros(spec.d)
    y = x / R
    dist = np.linalg.norm(spec.codebook - y, axis=1)
    idx = int(np.argmin(dist))  # ties resolve to the lowest index
    xhat = R * spec.codebook[idx]
    return pack_bits([idx], nbits), xhat


def net_decode(frame: CodeFrame, R: float, spec: QuantizerSpec) -> np.ndarray:
    """Reconstruct a net-quantized vector from its codebook index."""
    (idx,) = unpack_bits(frame, spec.frame_bits, 1)
    if R == 0.0:
        return np.zeros(spec.d)
    return R * spec.codebook[idx]


def encode(spec: QuantizerSpec, x, R: float) -> tuple[CodeFrame, np.ndarray]:
    """Family dispatch used by the optimizer loop."""
    if spec.family == "scalar":
        return scalar_encode(x, R, spec.b)
    return net_quantize(x, R, spec)


def decode(spec: QuantizerSpec, frame: CodeFrame, R: float) -> np.ndarray:
    if spec.family == "scalar":
        return scalar_decode(frame, R, spec.b, spec.d)
    return net_decode(frame, R, spec)
