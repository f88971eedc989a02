"""COCO-style segmentation decoding: polygons, uncompressed RLE and compressed RLE strings.

RLE counts run over the mask in column-major order, starting with a run of zeros.
"""

from __future__ import annotations

import json

import numpy as np

from fixsearch.errors import FormatError, InvalidInputError


def rle_decode(rle):
    h, w = rle["size"]
    counts = rle["counts"]
    if isinstance(counts, (str, bytes)):
        counts = rle_string_to_counts(counts)
    flat = np.zeros(h * w, dtype=bool)
    pos, val = 0, False
    for c in counts:
        if c < 0 or pos + c > h * w:
            raise FormatError(f"RLE run of {c} overflows a {h}x{w} mask", offset=pos)
        if val:
            flat[pos:pos + c] = True
        pos += c
        val = not val
    if pos != h * w:
        raise FormatError(f"RLE covers {pos} of {h * w} pixels", offset=pos)
    return flat.reshape((w, h)).T.copy()


def rle_encode(mask):
    """Uncompressed RLE of a boolean mask."""
    m = np.asarray(mask, dtype=bool)
    flat = m.T.reshape(-1)
    counts, val, run = [], False, 0
    for v in flat:
        if v == val:
            run += 1
        else:
            counts.append(run)
            val, run = v, 1
    counts.append(run)
    return {"size": [int(m.shape[0]), int(m.shape[1])], "counts": counts}


def rle_string_to_counts(s):
    if isinstance(s, bytes):
        s = s.decode("ascii")
    counts, p = [], 0
    while p < len(s):
        x, k, more = 0, 0, True
        while more:
            if p >= len(s):
                raise FormatError("truncated compressed RLE string", offset=p)
            c = ord(s[p]) - 48
            x |= (c & 0x1F) << (5 * k)
            more = bool(c & 0x20)
            p += 1
            k += 1
            if not more and (c & 0x10):
                x |= -1 << (5 * k)
        if len(counts) > 2:
            x += counts[-2]
        counts.append(x)
    return counts


def counts_to_rle_string(counts):
    out = []
    for i, x in enumerate(counts):
        if i > 2:
            x -= counts[i - 2]
        more = True
        while more:
            c = x & 0x1F
            x >>= 5
            more = (x != -1) if (c & 0x10) else (x != 0)
            if more:
                c |= 0x20
            out.append(chr(c + 48))
    return "".join(out)


def polygon_to_mask(polygons, height, width):
    from PIL import Image, ImageDraw

    img = Image.new("1", (width, height), 0)
    draw = ImageDraw.Draw(img)
    for poly in polygons:
        if len(poly) < 6 or len(poly) % 2:
            raise FormatError(f"polygon needs >= 3 (x, y) points, got {len(poly)} numbers")
        draw.polygon([(float(poly[i]), float(poly[i + 1])) for i in range(0, len(poly), 2)], fill=1, outline=1)
    return np.array(img, dtype=bool)


def segmentation_to_mask(seg, height, width):
    if isinstance(seg, list):
        return polygon_to_mask(seg, height, width)
    if isinstance(seg, dict) and "counts" in seg:
        m = rle_decode(seg)
        if m.shape != (height, width):
            raise InvalidInputError(f"RLE size {m.shape} differs from image {height}x{width}")
        return m
    raise FormatError(f"unsupported segmentation encoding {type(seg).__name__}")


def resize_mask(mask, dims):
    """Nearest-neighbour resize to (width, height)."""
    w, h = dims
    if mask.shape == (h, w):
        return mask
    rows = np.minimum((np.arange(h) + 0.5) * mask.shape[0] / h, mask.shape[0] - 1).astype(int)
    cols = np.minimum((np.arange(w) + 0.5) * mask.shape[1] / w, mask.shape[1] - 1).astype(int)
    return mask[rows][:, cols]


def load_json(path_or_text):
    if isinstance(path_or_text, (dict, list)):
        return path_or_text
    text = path_or_text
    if not text.lstrip().startswith(("{", "[")):
        with open(path_or_text, encoding="utf-8") as fh:
            text = fh.read()
    return json.loads(text)
