"""Image and label-map containers with PNM/PNG file I/O.

Pixel values live in [0, 1] as float64.  Quantization to 8 bits happens only
when writing files.  Flat vectors used by the operators are row-major, so
flat index ``i`` is pixel ``(i // width, i % width)``.
"""

from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])


class ImageFormatError(ValueError):
    """Raised for malformed or unsupported image files."""


@dataclass(frozen=True)
class Image:
    """Scalar or RGB field sampled on a pixel lattice.

    ``data`` has shape ``(height, width, channels)`` with channels 1 or 3.
    """

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim == 2:
            data = data[:, :, None]
        if data.ndim != 3 or data.shape[2] not in (1, 3):
            raise ValueError(f"image data must be (h, w, 1|3), got {data.shape}")
        if data.shape[0] < 1 or data.shape[1] < 1:
            raise ValueError("image must have at least one pixel")
        if not np.all(np.isfinite(data)) or data.min() < 0.0 or data.max() > 1.0:
            raise ValueError("image values must be finite and lie in [0, 1]")
        data = np.ascontiguousarray(data)
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @classmethod
    def from_flat(cls, values, width: int, height: int, channels: int = 1) -> "Image":
        values = np.asarray(values, dtype=np.float64)
        if values.size != width * height * channels:
            raise ValueError("data length must equal width * height * channels")
        return cls(values.reshape(height, width, channels))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def n(self) -> int:
        return self.width * self.height

    @property
    def flat(self) -> np.ndarray:
        """Row-major values, interleaved by channel."""
        return self.data.reshape(-1)

    @property
    def plane(self) -> np.ndarray:
        """The ``(height, width)`` array of a grayscale image."""
        if self.channels != 1:
            raise ValueError("plane is only defined for grayscale images")
        return self.data[:, :, 0]

    def pixels(self) -> np.ndarray:
        """``(n, channels)`` matrix, one row per pixel."""
        return self.data.reshape(-1, self.channels)


@dataclass(frozen=True)
class LabelMap:
    """Per-pixel segment ids, contiguous ``0..k-1``."""

    labels: np.ndarray

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 2:
            raise ValueError("labels must be a 2-D (height, width) array")
        if labels.size and labels.min() < 0:
            raise ValueError("labels must be non-negative")
        labels = relabel_contiguous(labels)
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)

    @classmethod
    def from_flat(cls, labels, width: int, height: int) -> "LabelMap":
        return cls(np.asarray(labels).reshape(height, width))

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @property
    def num_segments(self) -> int:
        return int(self.labels.max()) + 1

    @property
    def flat(self) -> np.ndarray:
        return self.labels.reshape(-1)

    def mask(self, segment: int) -> np.ndarray:
        return self.labels == segment


def relabel_contiguous(labels: np.ndarray) -> np.ndarray:
    """Map ids to ``0..k-1`` in order of first appearance (row-major)."""
    flat = np.asarray(labels).reshape(-1)
    _, first, inverse = np.unique(flat, return_index=True, return_inverse=True)
    order = np.argsort(np.argsort(first))
    return order[inverse].reshape(np.shape(labels)).astype(np.int64)


def to_grayscale(img: Image) -> Image:
    if img.channels == 1:
        return img
    return Image(img.data @ LUMA_WEIGHTS)


def resize_nearest(img: Image, new_w: int, new_h: int) -> Image:
    if new_w < 1 or new_h < 1:
        raise ValueError(f"target size must be positive, got {new_w}x{new_h}")
    rows = (np.arange(new_h) * img.height) // new_h
    cols = (np.arange(new_w) * img.width) // new_w
    return Image(img.data[rows][:, cols])


def quantize(img: Image) -> Image:
    """Round-trip through 8 bits, as saving and loading would."""
    return Image(_to_bytes(img.data) / 255.0)


def _to_bytes(data: np.ndarray) -> np.ndarray:
    return np.rint(np.clip(data, 0.0, 1.0) * 255.0).astype(np.uint8)


# -- PNM ---------------------------------------------------------------------

_PNM_CHANNELS = {b"P2": 1, b"P3": 3, b"P5": 1, b"P6": 3}


def _pnm_tokens(buf: bytes, start: int, count: int):
    """Read ``count`` whitespace-separated header tokens, skipping comments.

    Returns the tokens with their byte offsets and the offset just past the
    last token.
    """
    tokens = []
    pos = start
    size = len(buf)
    while len(tokens) < count:
        while pos < size and buf[pos : pos + 1].isspace():
            pos += 1
        if pos < size and buf[pos : pos + 1] == b"#":
            while pos < size and buf[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        if pos >= size:
            raise ImageFormatError(f"truncated PNM header at byte {pos}")
        begin = pos
        while pos < size and not buf[pos : pos + 1].isspace() and buf[pos : pos + 1] != b"#":
            pos += 1
        tokens.append((buf[begin:pos], begin))
    return tokens, pos


def _header_int(token: bytes, offset: int, field: str) -> int:
    try:
        value = int(token)
    except ValueError:
        raise ImageFormatError(f"PNM {field} {token!r} is not an integer (byte {offset})") from None
    if value < 1:
        raise ImageFormatError(f"PNM {field} must be positive, got {value} (byte {offset})")
    return value


def _read_pnm(buf: bytes) -> Image:
    magic = buf[:2]
    channels = _PNM_CHANNELS[magic]
    (w_tok, h_tok, m_tok), pos = _pnm_tokens(buf, 2, 3)
    width = _header_int(*w_tok, "width")
    height = _header_int(*h_tok, "height")
    maxval = _header_int(*m_tok, "maxval")
    if maxval > 65535:
        raise ImageFormatError(f"PNM maxval {maxval} out of range (byte {m_tok[1]})")
    count = width * height * channels

    if magic in (b"P2", b"P3"):
        body = buf[pos:]
        # comments are legal between samples in plain PNM
        lines = [line.split(b"#", 1)[0] for line in body.splitlines()]
        fields = b" ".join(lines).split()
        if len(fields) < count:
            raise ImageFormatError(
                f"PNM raster truncated: expected {count} samples, found {len(fields)} after byte {pos}"
            )
        try:
            raw = np.array([int(f) for f in fields[:count]], dtype=np.int64)
        except ValueError:
            raise ImageFormatError(f"non-integer sample in plain PNM raster after byte {pos}") from None
    else:
        pos += 1  # single whitespace byte after maxval
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        need = count * dtype.itemsize
        if len(buf) - pos < need:
            raise ImageFormatError(
                f"PNM raster truncated at byte {len(buf)}: expected {need} bytes from byte {pos}"
            )
        raw = np.frombuffer(buf, dtype=dtype, count=count, offset=pos).astype(np.int64)
    if raw.max(initial=0) > maxval:
        raise ImageFormatError(f"PNM sample exceeds maxval {maxval}")
    return Image((raw / maxval).reshape(height, width, channels))


def _read_png(path: Path) -> Image:
    try:
        with PILImage.open(path) as pil:
            mode = pil.mode
            if mode in ("I;16", "I;16B", "I", "F"):
                raise ImageFormatError(f"unsupported PNG bit depth (mode {mode}); only 8-bit is supported")
            if mode in ("L", "1"):
                arr = np.asarray(pil.convert("L"))
            else:
                arr = np.asarray(pil.convert("RGB"))
    except (OSError, SyntaxError) as exc:
        raise ImageFormatError(f"cannot decode PNG {path}: {exc}") from exc
    return Image(arr / 255.0)


def load_image(path) -> Image:
    """Read a PGM/PPM (plain or binary) or 8-bit PNG into ``[0, 1]``."""
    path = Path(path)
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:8] == b"\x89PNG\r\n\x1a\n":
        return _read_png(path)
    if buf[:2] in _PNM_CHANNELS:
        return _read_pnm(buf)
    raise ImageFormatError(f"unrecognized image signature {buf[:8]!r} at byte 0 of {path}")


def _atomic_write(path: Path, payload: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def encode_pnm(arr: np.ndarray, plain: bool = False) -> bytes:
    """Encode a uint8 ``(h, w)`` or ``(h, w, 3)`` array as PGM/PPM."""
    arr = np.asarray(arr, dtype=np.uint8)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    color = arr.ndim == 3
    h, w = arr.shape[:2]
    magic = {(False, False): b"P5", (True, False): b"P6", (False, True): b"P2", (True, True): b"P3"}
    header = magic[(color, plain)] + f"\n{w} {h}\n255\n".encode()
    if plain:
        rows = arr.reshape(h, -1)
        body = "\n".join(" ".join(str(v) for v in row) for row in rows).encode() + b"\n"
        return header + body
    return header + arr.tobytes()


def encode_png(arr: np.ndarray, palette: np.ndarray | None = None) -> bytes:
    import io

    arr = np.asarray(arr, dtype=np.uint8)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    if palette is not None:
        pil = PILImage.fromarray(arr, mode="P")
        pil.putpalette(palette.astype(np.uint8).reshape(-1).tolist())
    else:
        pil = PILImage.fromarray(arr, mode="RGB" if arr.ndim == 3 else "L")
    out = io.BytesIO()
    pil.save(out, format="PNG")
    return out.getvalue()


def save_image(img: Image, path) -> None:
    """Write 8-bit PNG or binary PNM depending on the file extension."""
    path = Path(path)
    arr = _to_bytes(img.data)
    ext = path.suffix.lower()
    if ext == ".png":
        payload = encode_png(arr)
    elif ext in (".pgm", ".ppm", ".pnm"):
        if ext == ".pgm" and img.channels != 1:
            raise ValueError("PGM output requires a grayscale image")
        if ext == ".ppm" and img.channels != 3:
            raise ValueError("PPM output requires an RGB image")
        payload = encode_pnm(arr)
    else:
        raise ValueError(f"unsupported output extension {ext!r}; use .png, .pgm or .ppm")
    _atomic_write(path, payload)


# -- label maps --------------------------------------------------------------


def label_palette() -> np.ndarray:
    """Fixed 256-entry RGB palette; id 0 is black, the rest are distinct."""
    palette = np.zeros((256, 3), dtype=np.uint8)
    for idx in range(1, 256):
        # golden-angle hue walk, alternating lightness bands
        hue = (idx * 0.618033988749895) % 1.0
        light = (0.45, 0.65, 0.85)[idx % 3]
        palette[idx] = _hsv_to_rgb(hue, 0.85, light)
    return palette


def _hsv_to_rgb(h: float, s: float, v: float) -> tuple[int, int, int]:
    import colorsys

    r, g, b = colorsys.hsv_to_rgb(h, s, v)
    return int(round(r * 255)), int(round(g * 255)), int(round(b * 255))


def save_labels_png(labels: LabelMap, path) -> None:
    if labels.num_segments > 256:
        raise ValueError("palette PNG supports at most 256 segments")
    _atomic_write(Path(path), encode_png(labels.labels.astype(np.uint8), palette=label_palette()))


def save_labels_pgm(labels: LabelMap, path) -> None:
    """Raw ids as a plain PGM (maxval 255)."""
    if labels.num_segments > 256:
        raise ValueError("PGM label output supports at most 256 segments")
    _atomic_write(Path(path), encode_pnm(labels.labels.astype(np.uint8), plain=True))


def load_labels(path) -> LabelMap:
    """Read a label map written by :func:`save_labels_png` or :func:`save_labels_pgm`."""
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(8)
    if head == b"\x89PNG\r\n\x1a\n":
        with PILImage.open(path) as pil:
            return LabelMap(np.asarray(pil).astype(np.int64))
    img = _read_pnm(path.read_bytes())
    return LabelMap(np.rint(img.data[:, :, 0] * 255).astype(np.int64))


def boundary_overlay(img: Image, labels: LabelMap, color=(1.0, 0.0, 0.0)) -> Image:
    """Input rendered as RGB with 1-pixel label boundaries painted in ``color``."""
    rgb = img.data if img.channels == 3 else np.repeat(img.data, 3, axis=2)
    rgb = rgb.copy()
    lab = labels.labels
    edge = np.zeros(lab.shape, dtype=bool)
    edge[:-1, :] |= lab[:-1, :] != lab[1:, :]
    edge[1:, :] |= lab[:-1, :] != lab[1:, :]
    edge[:, :-1] |= lab[:, :-1] != lab[:, 1:]
    edge[:, 1:] |= lab[:, :-1] != lab[:, 1:]
    rgb[edge] = color
    return Image(rgb)
