"""Square context crops resampled to the network input size."""
from __future__ import annotations

import cv2
import numpy as np


def context_side(w: float, h: float, margin: float = 0.5) -> float:
    """Side of the square exemplar region: the box padded by ``margin * (w + h)``."""
    pad = margin * (w + h)
    return float(np.sqrt((w + pad) * (h + pad)))


def crop_square(frame: np.ndarray, center, side: float, out_size: int,
                fill: float | None = None) -> np.ndarray:
    """Bilinear resample of the ``side x side`` square around ``center``.

    Coordinates are continuous with pixel ``i`` covering ``[i, i + 1)``.
    Area outside the frame takes ``fill`` (default: the frame mean).
    Returns ``out_size x out_size`` float32 in [0, 1].
    """
    frame = np.asarray(frame)
    src = frame.astype(np.float32)
    if fill is None:
        fill = float(src.mean())
    scale = side / out_size
    cx, cy = center
    tx = cx + (0.5 - out_size / 2) * scale - 0.5
    ty = cy + (0.5 - out_size / 2) * scale - 0.5
    m = np.array([[scale, 0.0, tx], [0.0, scale, ty]], dtype=np.float64)
    out = cv2.warpAffine(src, m, (out_size, out_size),
                         flags=cv2.INTER_LINEAR | cv2.WARP_INVERSE_MAP,
                         borderMode=cv2.BORDER_CONSTANT, borderValue=fill)
    return out / np.float32(255.0)


def box_center(box) -> tuple[float, float]:
    x, y, w, h = box
    return x + w / 2.0, y + h / 2.0
