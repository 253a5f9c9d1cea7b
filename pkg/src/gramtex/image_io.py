"""Binary PPM (P6, maxval 255) codec and tensor conversion.

PPM is the mandatory interchange format: it round-trips bit-exactly with no
dependencies.  Tensor conversion maps byte b to b/255; export clamps to
[0, 1] and rounds half up, so 0.5 lands on byte 128.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import FormatError, ShapeError
from .tensor import Tensor


@dataclass
class ImageRGB:
    width: int
    height: int
    pixels: bytes  # 8-bit RGB triples, row-major

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ShapeError(f"image extent {self.width}x{self.height} invalid")
        if len(self.pixels) != 3 * self.width * self.height:
            raise FormatError(
                f"image payload holds {len(self.pixels)} bytes, "
                f"needs {3 * self.width * self.height}"
            )


def read_image(path):
    """Parse a binary PPM file."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:2] != b"P6":
        raise FormatError(f"{path}: not a P6 PPM (magic {blob[:2]!r})")
    fields, pos = [], 2
    while len(fields) < 3:
        if pos >= len(blob):
            raise FormatError(f"{path}: header ended early")
        c = blob[pos : pos + 1]
        if c == b"#":
            while pos < len(blob) and blob[pos : pos + 1] != b"\n":
                pos += 1
        elif c.isspace():
            pos += 1
        elif c.isdigit():
            start = pos
            while pos < len(blob) and blob[pos : pos + 1].isdigit():
                pos += 1
            fields.append(int(blob[start:pos]))
        else:
            raise FormatError(f"{path}: unexpected header byte {c!r}")
    width, height, maxval = fields
    if maxval != 255:
        raise FormatError(f"{path}: maxval {maxval} unsupported (need 255)")
    pos += 1  # single whitespace separates header from payload
    payload = blob[pos : pos + 3 * width * height]
    if len(payload) != 3 * width * height:
        raise FormatError(f"{path}: payload short ({len(payload)} of {3 * width * height} bytes)")
    return ImageRGB(width, height, payload)


def write_image(img, path):
    header = f"P6\n{img.width} {img.height}\n255\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(img.pixels)


def image_to_tensor(img, dtype=np.float32):
    """ImageRGB -> Tensor [1,3,H,W] with values b/255 in [0,1]."""
    flat = np.frombuffer(img.pixels, dtype=np.uint8).astype(dtype)
    chw = flat.reshape(img.height, img.width, 3).transpose(2, 0, 1)
    return Tensor((chw / dtype(255.0))[None])


def tensor_to_image(t):
    """Tensor [1,3,H,W] -> ImageRGB, clamped to [0,1], round half up."""
    if t.ndim != 4 or t.shape[0] != 1 or t.shape[1] != 3:
        raise ShapeError(f"expected [1,3,H,W] tensor, got {tuple(t.shape)}")
    arr = np.clip(t.data[0], 0.0, 1.0)
    bytes_hw3 = np.floor(arr * 255.0 + 0.5).astype(np.uint8).transpose(1, 2, 0)
    H, W = arr.shape[1], arr.shape[2]
    return ImageRGB(W, H, bytes_hw3.tobytes())


def load_image_tensor(path, dtype=np.float32):
    return image_to_tensor(read_image(path), dtype=dtype)


def save_image_tensor(t, path):
    write_image(tensor_to_image(t), path)
