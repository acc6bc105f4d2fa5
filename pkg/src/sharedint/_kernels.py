"""Grid distance kernels.

``bfs_distances`` runs on every agent tick and inside the maze and
no-solo checks, so it carries a numba path. Set ``SHAREDINT_DISABLE_NUMBA=1``
to force the pure-numpy path; both return identical arrays.
"""

from __future__ import annotations

import os

import numpy as np

UNREACHABLE = -1

_DISABLE = os.environ.get("SHAREDINT_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes")

try:
    if _DISABLE:
        raise ImportError
    from numba import njit
    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False


def _bfs_python(walkable, sources):
    h, w = walkable.shape
    dist = np.full((h, w), UNREACHABLE, dtype=np.int32)
    qy = np.empty(h * w, dtype=np.int64)
    qx = np.empty(h * w, dtype=np.int64)
    head = 0
    tail = 0
    for k in range(sources.shape[0]):
        y = sources[k, 0]
        x = sources[k, 1]
        if dist[y, x] == UNREACHABLE:
            dist[y, x] = 0
            qy[tail] = y
            qx[tail] = x
            tail += 1
    while head < tail:
        y = qy[head]
        x = qx[head]
        head += 1
        d = dist[y, x] + 1
        for k in range(4):
            if k == 0:
                ny, nx = y - 1, x
            elif k == 1:
                ny, nx = y, x + 1
            elif k == 2:
                ny, nx = y + 1, x
            else:
                ny, nx = y, x - 1
            if 0 <= ny < h and 0 <= nx < w and walkable[ny, nx] and dist[ny, nx] == UNREACHABLE:
                dist[ny, nx] = d
                qy[tail] = ny
                qx[tail] = nx
                tail += 1
    return dist


if HAVE_NUMBA:
    _bfs_numba = njit(cache=True, nogil=True)(_bfs_python)
else:  # pragma: no cover
    _bfs_numba = None


def bfs_distances_numpy(walkable: np.ndarray, sources: np.ndarray) -> np.ndarray:
    """Multi-source 4-neighbour BFS by frontier dilation.

    Sources are always distance 0 even when not walkable themselves; the
    search only expands into walkable cells.
    """
    walkable = np.asarray(walkable, dtype=np.bool_)
    h, w = walkable.shape
    dist = np.full((h, w), UNREACHABLE, dtype=np.int32)
    if len(sources) == 0:
        return dist
    frontier = np.zeros((h, w), dtype=np.bool_)
    frontier[sources[:, 0], sources[:, 1]] = True
    dist[frontier] = 0
    d = 0
    while frontier.any():
        d += 1
        grown = np.zeros_like(frontier)
        grown[1:, :] |= frontier[:-1, :]
        grown[:-1, :] |= frontier[1:, :]
        grown[:, 1:] |= frontier[:, :-1]
        grown[:, :-1] |= frontier[:, 1:]
        frontier = grown & walkable & (dist == UNREACHABLE)
        dist[frontier] = d
    return dist


def bfs_distances_numba(walkable: np.ndarray, sources: np.ndarray) -> np.ndarray:
    if _bfs_numba is None:  # pragma: no cover
        raise RuntimeError("numba is not available")
    return _bfs_numba(np.ascontiguousarray(walkable, dtype=np.bool_), np.ascontiguousarray(sources, dtype=np.int64))


def bfs_distances(walkable: np.ndarray, sources) -> np.ndarray:
    """Distance field (int32, -1 = unreachable) from ``sources`` given as (row, col) pairs."""
    src = np.asarray(sources, dtype=np.int64).reshape(-1, 2)
    if HAVE_NUMBA:
        return bfs_distances_numba(walkable, src)
    return bfs_distances_numpy(walkable, src)


def backend() -> str:
    return "numba" if HAVE_NUMBA else "numpy"
