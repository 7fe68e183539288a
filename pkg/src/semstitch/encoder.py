"""Patch encoders and the external-encoder wire protocol.

Built-in encoders (all emit unit-L2 float32 vectors):

* ``baseline`` — grayscale patch standardized per patch (zero mean, unit
  std), then an 8x8 grid of per-cell means of intensity, x-gradient, and
  y-gradient; K = 3 * g^2 = 192.  Cheap, deterministic, offset-invariant.
* ``ncc`` — 4x-downsampled zero-mean grayscale pixels; the cosine of two
  such vectors is their normalized cross-correlation.
* ``oracle`` — test-only positional code of the frame's ground-truth
  boundary anchor in source-slide coordinates, plus seeded Gaussian noise.
  Separates pipeline correctness from embedding quality.
* ``external`` — patches are shipped to a bridge executable through the
  SSPB/SSFV file formats below; used for foundation-model embeddings.

Wire formats (little-endian):

* ``patches.bin``  — magic ``SSPB``, u32 count, u32 height, u32 width,
  u32 channels, then count*h*w*c raw u8 samples (row-major, interleaved).
  An empty batch writes zeros for the three dimension fields.
* ``features.bin`` — magic ``SSFV``, u32 count, u32 K, then count*K IEEE
  754 32-bit floats, row-major.

Bridge contract: ``<cmd> <request-path> <response-path>``, exit 0 on
success.
"""

from __future__ import annotations

import shlex
import struct
import subprocess
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import BridgeError, ProtocolError
from .patchex import Patch, frame_anchor

SSPB_MAGIC = b"SSPB"
SSFV_MAGIC = b"SSFV"
_SSPB_HEADER = struct.Struct("<4sIIII")
_SSFV_HEADER = struct.Struct("<4sII")

BASELINE_GRID = 8
BASELINE_K = 3 * BASELINE_GRID * BASELINE_GRID
ORACLE_K = 8
_EPS = 1e-6


@dataclass
class EncoderSpec:
    """Which encoder to run and its parameters.

    ``kind`` is one of ``baseline``, ``ncc``, ``oracle``, ``external``.
    ``parameters`` is kind-specific: the oracle needs ``pose`` (fragment ->
    source transform), ``sigma``, ``seed``, ``salt`` and ``range_px``;
    external needs ``command`` (argv list or shell string).
    """

    kind: str
    K: int
    parameters: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.kind not in ("baseline", "ncc", "oracle", "external"):
            raise ValueError(f"unknown encoder kind {self.kind!r}")
        if self.K < 4:
            raise ValueError("K must be >= 4")

    @classmethod
    def baseline(cls) -> "EncoderSpec":
        return cls("baseline", BASELINE_K)

    @classmethod
    def ncc(cls, patch_size: int = 224) -> "EncoderSpec":
        return cls("ncc", (patch_size // 4) ** 2)

    @classmethod
    def oracle(cls, pose, sigma: float = 0.0, seed: int = 0, salt: int = 0,
               range_px: float = 4096.0) -> "EncoderSpec":
        return cls(
            "oracle",
            ORACLE_K,
            {"pose": pose, "sigma": float(sigma), "seed": int(seed),
             "salt": int(salt), "range_px": float(range_px)},
        )

    @classmethod
    def external(cls, command, K: int) -> "EncoderSpec":
        return cls("external", K, {"command": command})


def _gray_f64(pixels: np.ndarray) -> np.ndarray:
    if pixels.ndim == 2:
        return pixels.astype(np.float64)
    return pixels.astype(np.float64) @ np.array([0.299, 0.587, 0.114])


def _unit_or_e1(v: np.ndarray, k: int) -> np.ndarray:
    norm = float(np.linalg.norm(v))
    if norm < 1e-12:
        out = np.zeros(k, dtype=np.float32)
        out[0] = 1.0
        return out
    return (v / norm).astype(np.float32)


def _cell_means(plane: np.ndarray, g: int) -> np.ndarray:
    rows = np.array_split(plane, g, axis=0)
    return np.array([[cell.mean() for cell in np.array_split(r, g, axis=1)] for r in rows])


def _encode_baseline(pixels: np.ndarray, g: int = BASELINE_GRID) -> np.ndarray:
    gray = _gray_f64(pixels)
    z = (gray - gray.mean()) / (gray.std() + _EPS)
    gy, gx = np.gradient(z)
    feats = np.concatenate(
        [_cell_means(z, g).ravel(), _cell_means(gx, g).ravel(), _cell_means(gy, g).ravel()]
    )
    return _unit_or_e1(feats, 3 * g * g)


def _encode_ncc(pixels: np.ndarray) -> np.ndarray:
    gray = _gray_f64(pixels)
    h, w = gray.shape
    hh, ww = h // 4, w // 4
    down = gray[: hh * 4, : ww * 4].reshape(hh, 4, ww, 4).mean(axis=(1, 3))
    flat = down.ravel()
    return _unit_or_e1(flat - flat.mean(), flat.size)


def positional_code(point: np.ndarray, range_px: float) -> np.ndarray:
    """Unit 8-vector whose cosine decreases with distance up to ``range_px``.

    Two sinusoid scales per axis; for two codes at distance r the cosine is
    the mean of four axis cosines, strictly decreasing while r < range_px.
    """
    lam1 = range_px / np.pi
    lam2 = 2.0 * lam1
    x, y = float(point[0]), float(point[1])
    code = np.array(
        [
            np.sin(x / lam1), np.cos(x / lam1), np.sin(y / lam1), np.cos(y / lam1),
            np.sin(x / lam2), np.cos(x / lam2), np.sin(y / lam2), np.cos(y / lam2),
        ]
    )
    return (code / 2.0).astype(np.float32)


def oracle_vector(
    source_point: np.ndarray, sigma: float, seed: int, salt: int, range_px: float
) -> np.ndarray:
    """Positional code plus seeded noise; deterministic per (seed, salt, point)."""
    code = positional_code(source_point, range_px).astype(np.float64)
    if sigma > 0:
        xq = int(np.floor(source_point[0] * 8.0)) + (1 << 24)
        yq = int(np.floor(source_point[1] * 8.0)) + (1 << 24)
        rng = np.random.default_rng(np.random.SeedSequence([seed, salt, xq, yq]))
        code = code + sigma * rng.standard_normal(ORACLE_K)
    return _unit_or_e1(code, ORACLE_K)


def encode_pixels(spec: EncoderSpec, pixels: np.ndarray) -> np.ndarray:
    """Encode raw patch pixels with a content-based encoder (baseline/ncc)."""
    if spec.kind == "baseline":
        vec = _encode_baseline(pixels, spec.parameters.get("grid", BASELINE_GRID))
    elif spec.kind == "ncc":
        vec = _encode_ncc(pixels)
    else:
        raise ValueError(f"encode_pixels does not support kind {spec.kind!r}")
    if vec.size != spec.K:
        raise ValueError(f"spec.K={spec.K} but encoder produced {vec.size} values")
    return vec


def encode(spec: EncoderSpec, patch: Patch) -> np.ndarray:
    """Unit-L2 float32 feature vector of length ``spec.K`` for one patch."""
    if spec.kind in ("baseline", "ncc"):
        return encode_pixels(spec, patch.pixels)
    if spec.kind == "oracle":
        p = spec.parameters
        src = p["pose"].apply(frame_anchor(patch.frame))
        return oracle_vector(src, p.get("sigma", 0.0), p.get("seed", 0),
                             p.get("salt", 0), p.get("range_px", 4096.0))
    raise ValueError("external encoders must go through encode_batch_external")


def patches_to_array(patches: list[Patch]) -> np.ndarray:
    """Stack patch pixels as (n, h, w, c) uint8; grayscale gets c = 1."""
    if not patches:
        return np.zeros((0, 0, 0, 0), dtype=np.uint8)
    arrs = []
    for p in patches:
        px = p.pixels if p.pixels.ndim == 3 else p.pixels[:, :, None]
        arrs.append(px)
    shapes = {a.shape for a in arrs}
    if len(shapes) != 1:
        raise ValueError(f"patches in a batch must share one shape, got {shapes}")
    return np.stack(arrs)


def write_patches_file(path: str | Path, batch: np.ndarray) -> None:
    """Write an SSPB request from a (n, h, w, c) uint8 array."""
    batch = np.ascontiguousarray(batch, dtype=np.uint8)
    if batch.ndim != 4:
        raise ValueError("batch must be (n, h, w, c)")
    n, h, w, c = batch.shape
    with open(path, "wb") as fh:
        fh.write(_SSPB_HEADER.pack(SSPB_MAGIC, n, h, w, c))
        fh.write(batch.tobytes())


def read_patches_file(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < _SSPB_HEADER.size:
        raise ProtocolError("SSPB file shorter than header")
    magic, n, h, w, c = _SSPB_HEADER.unpack_from(raw)
    if magic != SSPB_MAGIC:
        raise ProtocolError(f"bad magic {magic!r}, expected SSPB")
    expected = n * h * w * c
    if n > 0 and (h == 0 or w == 0 or c == 0):
        raise ProtocolError("non-empty SSPB batch with zero dimension")
    if len(raw) - _SSPB_HEADER.size != expected:
        raise ProtocolError(
            f"SSPB payload is {len(raw) - _SSPB_HEADER.size} bytes, expected {expected}"
        )
    data = np.frombuffer(raw, dtype=np.uint8, offset=_SSPB_HEADER.size)
    return data.reshape(n, h, w, c).copy()


def write_features_file(path: str | Path, features: np.ndarray) -> None:
    """Write an SSFV response from a (n, K) float32 array."""
    features = np.ascontiguousarray(features, dtype="<f4")
    if features.ndim != 2:
        raise ValueError("features must be (n, K)")
    n, k = features.shape
    with open(path, "wb") as fh:
        fh.write(_SSFV_HEADER.pack(SSFV_MAGIC, n, k))
        fh.write(features.tobytes())


def read_features_file(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < _SSFV_HEADER.size:
        raise ProtocolError("SSFV file shorter than header")
    magic, n, k = _SSFV_HEADER.unpack_from(raw)
    if magic != SSFV_MAGIC:
        raise ProtocolError(f"bad magic {magic!r}, expected SSFV")
    expected = n * k * 4
    if len(raw) - _SSFV_HEADER.size != expected:
        raise ProtocolError(
            f"SSFV payload is {len(raw) - _SSFV_HEADER.size} bytes, expected {expected}"
        )
    data = np.frombuffer(raw, dtype="<f4", offset=_SSFV_HEADER.size)
    return data.reshape(n, k).copy()


def encode_batch_external(
    spec: EncoderSpec, patches: list[Patch], workdir: str | Path
) -> np.ndarray:
    """Round-trip a patch batch through the bridge executable.

    Writes ``patches.bin`` into ``workdir``, runs the bridge command with
    the request and response paths appended, and validates the SSFV reply
    (count, K, finite values).  Workdirs must not be shared concurrently.
    """
    if spec.kind != "external":
        raise ValueError("encode_batch_external requires an external spec")
    command = spec.parameters.get("command")
    if not command:
        raise ValueError("external spec needs parameters['command']")
    argv = shlex.split(command) if isinstance(command, str) else list(command)

    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    request = workdir / "patches.bin"
    response = workdir / "features.bin"
    if response.exists():
        response.unlink()
    write_patches_file(request, patches_to_array(patches))

    proc = subprocess.run(
        argv + [str(request), str(response)],
        capture_output=True,
        timeout=spec.parameters.get("timeout"),
    )
    if proc.returncode != 0:
        tail = proc.stderr.decode(errors="replace")[-500:]
        raise BridgeError(f"bridge exited with {proc.returncode}: {tail}")
    features = read_features_file(response)
    if features.shape[0] != len(patches):
        raise ProtocolError(
            f"bridge returned {features.shape[0]} rows for {len(patches)} patches"
        )
    if len(patches) > 0 and features.shape[1] != spec.K:
        raise ProtocolError(f"bridge returned K={features.shape[1]}, expected {spec.K}")
    if not np.isfinite(features).all():
        raise ProtocolError("bridge returned non-finite values")
    return features


def encode_batch(
    spec: EncoderSpec, patches: list[Patch], workdir: str | Path | None = None
) -> np.ndarray:
    """Encode a list of patches; dispatches to the bridge for external specs."""
    if spec.kind == "external":
        if workdir is None:
            raise ValueError("external encoding needs a workdir")
        return encode_batch_external(spec, patches, workdir)
    if not patches:
        return np.zeros((0, spec.K), dtype=np.float32)
    return np.stack([encode(spec, p) for p in patches])
