"""Binary and text file formats shared across the toolkit.

All binary formats start with a 4-byte ASCII magic, followed by unsigned
32-bit little-endian dimension fields and little-endian IEEE floats:

UFM1 (feature matrix)
    "UFM1" | rows u32 | cols u32 | rows*cols float32, row-major

MLP1 (feed-forward network)
    "MLP1" | activation u32 (0=relu, 1=tanh, 2=sigmoid) | n_dims u32 |
    dims u32*n_dims (input, hidden..., output) |
    per layer: weights float64 (out*in, row-major), biases float64 (out)

UBM1 (diagonal-covariance GMM)
    "UBM1" | components u32 | dim u32 | weights f64*C | means f64*C*F |
    variances f64*C*F

TVM1 (total-variability matrix)
    "TVM1" | components u32 | feature dim u32 | latent dim u32 |
    f64*C*F*D (component-major, row-major blocks)

LDA1 (linear discriminant projection)
    "LDA1" | in dim u32 | out dim u32 | mean f64*Din | matrix f64*Din*Dout

PLD1 (two-covariance PLDA)
    "PLD1" | dim u32 | mean f64*D | between f64*D*D | within f64*D*D

Vector archives and score/trial files are line-oriented text, defined by
the writer/reader pairs at the bottom of this module.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np


class FormatError(ValueError):
    """Malformed file content; `offset` is the byte position of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


def _read_exact(f, n: int, offset: int, what: str) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise FormatError(f"truncated {what}: wanted {n} bytes, got {len(data)}", offset)
    return data


def _read_u32(f, offset: int, what: str) -> tuple[int, int]:
    data = _read_exact(f, 4, offset, what)
    return struct.unpack("<I", data)[0], offset + 4


def _read_magic(f, magic: bytes) -> int:
    head = f.read(4)
    if head != magic:
        raise FormatError(f"bad magic {head!r}, expected {magic.decode()!r}", 0)
    return 4


def _read_f64_array(f, shape: tuple[int, ...], offset: int, what: str) -> tuple[np.ndarray, int]:
    count = int(np.prod(shape))
    data = _read_exact(f, 8 * count, offset, what)
    arr = np.frombuffer(data, dtype="<f8").reshape(shape).copy()
    return arr, offset + 8 * count


def _write_f64_array(f, arr: np.ndarray) -> None:
    f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


# ---------------------------------------------------------------------------
# UFM1 feature matrices


def save_features(path, matrix: np.ndarray) -> None:
    """Write a T x F feature matrix as a UFM1 file (float32 payload)."""
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
        raise ValueError(f"feature matrix must be 2-D with positive shape, got {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("feature matrix contains non-finite values")
    with open(path, "wb") as f:
        f.write(b"UFM1")
        f.write(struct.pack("<II", m.shape[0], m.shape[1]))
        f.write(m.astype("<f4").tobytes())


def load_features(path) -> np.ndarray:
    """Read a UFM1 file back into a float64 T x F matrix."""
    with open(path, "rb") as f:
        offset = _read_magic(f, b"UFM1")
        rows, offset = _read_u32(f, offset, "row count")
        cols, offset = _read_u32(f, offset, "column count")
        if rows == 0:
            raise FormatError("zero rows", 4)
        if cols == 0:
            raise FormatError("zero cols", 8)
        payload = _read_exact(f, 4 * rows * cols, offset, "feature payload")
        m = np.frombuffer(payload, dtype="<f4").reshape(rows, cols).astype(np.float64)
        if not np.all(np.isfinite(m)):
            raise FormatError("non-finite feature values", offset)
        return m


# ---------------------------------------------------------------------------
# MLP1 networks

ACTIVATION_TAGS = {"relu": 0, "tanh": 1, "sigmoid": 2}
_TAG_TO_ACTIVATION = {v: k for k, v in ACTIVATION_TAGS.items()}


def save_mlp(path, dims: list[int], activation: str, weights, biases) -> None:
    if activation not in ACTIVATION_TAGS:
        raise ValueError(f"unknown activation {activation!r}")
    with open(path, "wb") as f:
        f.write(b"MLP1")
        f.write(struct.pack("<II", ACTIVATION_TAGS[activation], len(dims)))
        f.write(struct.pack(f"<{len(dims)}I", *dims))
        for w, b in zip(weights, biases):
            _write_f64_array(f, w)
            _write_f64_array(f, b)


def load_mlp(path) -> tuple[list[int], str, list[np.ndarray], list[np.ndarray]]:
    with open(path, "rb") as f:
        offset = _read_magic(f, b"MLP1")
        tag, offset = _read_u32(f, offset, "activation tag")
        if tag not in _TAG_TO_ACTIVATION:
            raise FormatError(f"unknown activation tag {tag}", 4)
        n_dims, offset = _read_u32(f, offset, "dimension count")
        if n_dims < 2:
            raise FormatError("network needs at least input and output dims", 8)
        dims = []
        for i in range(n_dims):
            d, offset = _read_u32(f, offset, f"dimension {i}")
            if d == 0:
                raise FormatError(f"zero dimension at layer {i}", offset - 4)
            dims.append(d)
        weights, biases = [], []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            w, offset = _read_f64_array(f, (fan_out, fan_in), offset, "weight matrix")
            b, offset = _read_f64_array(f, (fan_out,), offset, "bias vector")
            weights.append(w)
            biases.append(b)
        return dims, _TAG_TO_ACTIVATION[tag], weights, biases


# ---------------------------------------------------------------------------
# UBM1 / TVM1 generative models


def save_ubm(path, weights: np.ndarray, means: np.ndarray, variances: np.ndarray) -> None:
    c, dim = means.shape
    with open(path, "wb") as f:
        f.write(b"UBM1")
        f.write(struct.pack("<II", c, dim))
        _write_f64_array(f, weights)
        _write_f64_array(f, means)
        _write_f64_array(f, variances)


def load_ubm(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    with open(path, "rb") as f:
        offset = _read_magic(f, b"UBM1")
        c, offset = _read_u32(f, offset, "component count")
        dim, offset = _read_u32(f, offset, "feature dim")
        if c == 0 or dim == 0:
            raise FormatError("zero components or feature dim", 4)
        weights, offset = _read_f64_array(f, (c,), offset, "weights")
        means, offset = _read_f64_array(f, (c, dim), offset, "means")
        variances, offset = _read_f64_array(f, (c, dim), offset, "variances")
        return weights, means, variances


def save_total_variability(path, matrix: np.ndarray) -> None:
    c, dim, latent = matrix.shape
    with open(path, "wb") as f:
        f.write(b"TVM1")
        f.write(struct.pack("<III", c, dim, latent))
        _write_f64_array(f, matrix)


def load_total_variability(path) -> np.ndarray:
    with open(path, "rb") as f:
        offset = _read_magic(f, b"TVM1")
        c, offset = _read_u32(f, offset, "component count")
        dim, offset = _read_u32(f, offset, "feature dim")
        latent, offset = _read_u32(f, offset, "latent dim")
        if c == 0 or dim == 0 or latent == 0:
            raise FormatError("zero dimension in header", 4)
        matrix, offset = _read_f64_array(f, (c, dim, latent), offset, "matrix payload")
        return matrix


# ---------------------------------------------------------------------------
# LDA1 / PLD1 backend models


def save_lda(path, mean: np.ndarray, matrix: np.ndarray) -> None:
    d_in, d_out = matrix.shape
    with open(path, "wb") as f:
        f.write(b"LDA1")
        f.write(struct.pack("<II", d_in, d_out))
        _write_f64_array(f, mean)
        _write_f64_array(f, matrix)


def load_lda(path) -> tuple[np.ndarray, np.ndarray]:
    with open(path, "rb") as f:
        offset = _read_magic(f, b"LDA1")
        d_in, offset = _read_u32(f, offset, "input dim")
        d_out, offset = _read_u32(f, offset, "output dim")
        if d_in == 0 or d_out == 0:
            raise FormatError("zero dimension in header", 4)
        mean, offset = _read_f64_array(f, (d_in,), offset, "mean")
        matrix, offset = _read_f64_array(f, (d_in, d_out), offset, "projection matrix")
        return mean, matrix


def save_plda(path, mean: np.ndarray, between: np.ndarray, within: np.ndarray) -> None:
    d = mean.shape[0]
    with open(path, "wb") as f:
        f.write(b"PLD1")
        f.write(struct.pack("<I", d))
        _write_f64_array(f, mean)
        _write_f64_array(f, between)
        _write_f64_array(f, within)


def load_plda(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    with open(path, "rb") as f:
        offset = _read_magic(f, b"PLD1")
        d, offset = _read_u32(f, offset, "dim")
        if d == 0:
            raise FormatError("zero dim", 4)
        mean, offset = _read_f64_array(f, (d,), offset, "mean")
        between, offset = _read_f64_array(f, (d, d), offset, "between covariance")
        within, offset = _read_f64_array(f, (d, d), offset, "within covariance")
        return mean, between, within


# ---------------------------------------------------------------------------
# Vector archives: "utterance_id<TAB>v1 v2 ... vD", 17 significant digits


def write_vector_archive(path, vectors: dict[str, np.ndarray]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for utt_id, vec in vectors.items():
            values = " ".join(f"{x:.17g}" for x in np.asarray(vec, dtype=np.float64))
            f.write(f"{utt_id}\t{values}\n")


def read_vector_archive(path) -> dict[str, np.ndarray]:
    vectors: dict[str, np.ndarray] = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            try:
                utt_id, values = line.split("\t")
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: expected 'id<TAB>values'") from exc
            vectors[utt_id] = np.array([float(x) for x in values.split()], dtype=np.float64)
    return vectors


def resolve(base: Path | str, relative: str) -> Path:
    """Resolve a manifest-relative path against the manifest's directory."""
    rel = Path(relative)
    return rel if rel.is_absolute() else Path(base) / rel
