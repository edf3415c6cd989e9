"""Portable anymap (PGM/PPM) image IO.

Reads P2/P5 grayscale and P3/P6 color maps with maxval 255 or 65535,
scaling sample values to [-1, 1]; writes clamp and rescale. Chosen over
compressed formats so fixtures stay zero-dependency, bit-exact, and
diffable. Parse failures report the byte offset of the problem.
"""

from __future__ import annotations

import numpy as np

GRAY_MAGICS = (b"P2", b"P5")
COLOR_MAGICS = (b"P3", b"P6")


class PnmParseError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class _Scanner:
    """Tokenizer over the header area: whitespace-separated, # comments."""

    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def skip_space(self):
        while self.pos < len(self.data):
            c = self.data[self.pos:self.pos + 1]
            if c == b"#":
                nl = self.data.find(b"\n", self.pos)
                self.pos = len(self.data) if nl < 0 else nl + 1
            elif c.isspace():
                self.pos += 1
            else:
                return

    def token(self, what: str) -> bytes:
        self.skip_space()
        start = self.pos
        while self.pos < len(self.data) and not self.data[self.pos:self.pos + 1].isspace():
            if self.data[self.pos:self.pos + 1] == b"#":
                break
            self.pos += 1
        if self.pos == start:
            raise PnmParseError(f"truncated file while reading {what}", start)
        return self.data[start:self.pos]

    def integer(self, what: str) -> int:
        start = self.pos
        tok = self.token(what)
        try:
            return int(tok)
        except ValueError:
            raise PnmParseError(f"bad integer for {what}: {tok!r}", start) from None


def read_image(path) -> np.ndarray:
    """Read a PGM/PPM file to floats in [-1, 1].

    Returns shape (h, w) for grayscale, (h, w, 3) for color.
    """
    with open(path, "rb") as f:
        data = f.read()
    sc = _Scanner(data)
    magic = sc.token("magic")
    if magic not in GRAY_MAGICS + COLOR_MAGICS:
        raise PnmParseError(f"unsupported magic {magic!r}", 0)
    channels = 1 if magic in GRAY_MAGICS else 3
    ascii_body = magic in (b"P2", b"P3")
    w = sc.integer("width")
    h = sc.integer("height")
    maxval = sc.integer("maxval")
    if w < 1 or h < 1:
        raise PnmParseError(f"bad dimensions {w}x{h}", sc.pos)
    if maxval not in (255, 65535):
        raise PnmParseError(f"unsupported maxval {maxval}", sc.pos)
    count = w * h * channels

    if ascii_body:
        vals = np.empty(count, dtype=np.int64)
        for i in range(count):
            vals[i] = sc.integer("sample")
        if np.any(vals < 0) or np.any(vals > maxval):
            raise PnmParseError("sample out of range", sc.pos)
    else:
        # single whitespace byte separates header from binary samples
        if sc.pos >= len(data) or not data[sc.pos:sc.pos + 1].isspace():
            raise PnmParseError("missing whitespace after maxval", sc.pos)
        start = sc.pos + 1
        itemsize = 1 if maxval == 255 else 2
        need = count * itemsize
        if len(data) - start < need:
            raise PnmParseError(
                f"truncated pixel data: need {need} bytes, have {len(data) - start}",
                len(data))
        dtype = np.uint8 if maxval == 255 else np.dtype(">u2")
        vals = np.frombuffer(data, dtype=dtype, count=count, offset=start).astype(np.int64)

    arr = vals.astype(float) / maxval * 2.0 - 1.0
    shape = (h, w) if channels == 1 else (h, w, 3)
    return arr.reshape(shape)


def write_image(img, path, maxval: int = 65535, ascii_body: bool = False):
    """Write floats in [-1, 1] (clamped) as PGM/PPM.

    (h, w) arrays become PGM; (h, w, 3) become PPM. 16-bit binary output
    by default so read(write(read(p))) holds within 1/65535 per channel.
    """
    img = np.asarray(img, dtype=float)
    if img.ndim == 2:
        channels = 1
    elif img.ndim == 3 and img.shape[2] == 3:
        channels = 3
    else:
        raise ValueError(f"expected (h, w) or (h, w, 3) image, got shape {img.shape}")
    if maxval not in (255, 65535):
        raise ValueError(f"unsupported maxval {maxval}")
    h, w = img.shape[:2]
    quant = np.rint((np.clip(img, -1.0, 1.0) + 1.0) / 2.0 * maxval).astype(np.int64)

    if channels == 1:
        magic = "P2" if ascii_body else "P5"
    else:
        magic = "P3" if ascii_body else "P6"
    header = f"{magic}\n{w} {h}\n{maxval}\n".encode()
    flat = quant.ravel()
    with open(path, "wb") as f:
        f.write(header)
        if ascii_body:
            f.write("\n".join(" ".join(str(v) for v in flat[i:i + w * channels])
                              for i in range(0, flat.size, w * channels)).encode())
            f.write(b"\n")
        else:
            dtype = np.uint8 if maxval == 255 else np.dtype(">u2")
            f.write(flat.astype(dtype).tobytes())
