"""Deterministic bird's-eye-view diagrams for the compiler's visual prompts.

Grayscale rasters: walkable floor light, obstacles dark, markers as small
filled squares. Encoded to PNG in-house (fixed zlib level, filter 0) so the
bytes, and therefore the scripted-backend digests, are stable. Marker ids are
carried by the textual label descriptions, not rasterized glyphs.
"""

from __future__ import annotations

import struct
import zlib

import numpy as np

from .navigation import ObstacleMap

FLOOR_SHADE = 200
OBSTACLE_SHADE = 60
MARKER_SHADE = 255
AGENT_SHADE = 0


def encode_png_gray(img: np.ndarray) -> bytes:
    """8-bit grayscale PNG with no filtering."""
    if img.ndim != 2 or img.dtype != np.uint8:
        raise ValueError("need a 2D uint8 image")
    h, w = img.shape

    def chunk(tag: bytes, body: bytes) -> bytes:
        return (
            struct.pack(">I", len(body)) + tag + body
            + struct.pack(">I", zlib.crc32(tag + body) & 0xFFFFFFFF)
        )

    header = struct.pack(">IIBBBBB", w, h, 8, 0, 0, 0, 0)
    raw = b"".join(b"\x00" + img[r].tobytes() for r in range(h))
    return (
        b"\x89PNG\r\n\x1a\n"
        + chunk(b"IHDR", header)
        + chunk(b"IDAT", zlib.compress(raw, 9))
        + chunk(b"IEND", b"")
    )


def render_bev(
    omap: ObstacleMap,
    markers: list[tuple[float, float]] | None = None,
    agent_xy: tuple[float, float] | None = None,
    scale: int = 1,
) -> bytes:
    """PNG of the obstacle map with optional marker and agent squares; y is
    flipped so the map reads north-up."""
    grid = np.where(omap.obstacle, OBSTACLE_SHADE, FLOOR_SHADE).astype(np.uint8)
    img = grid[::-1]  # row 0 at the top of the image
    if scale > 1:
        img = np.kron(img, np.ones((scale, scale), dtype=np.uint8))
    img = img.copy()

    def paint(xy, shade, half=2):
        r, c = omap.world_to_pixel(xy)
        rr = (omap.shape[0] - 1 - r) * scale
        cc = c * scale
        r0, r1 = max(rr - half, 0), min(rr + half + 1, img.shape[0])
        c0, c1 = max(cc - half, 0), min(cc + half + 1, img.shape[1])
        img[r0:r1, c0:c1] = shade

    for xy in markers or []:
        paint(xy, MARKER_SHADE)
    if agent_xy is not None:
        paint(agent_xy, AGENT_SHADE, half=3)
    return encode_png_gray(img)
