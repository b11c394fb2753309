"""Small scenes shared by several test modules."""

import math

import numpy as np

from partmatch.geometry import BBox, PointSetMap
from partmatch.synth import make_layouts, room_segments, sample_walls

ROOM = 8.0


def two_room_scene(seed: int, planted_cell=(1, 1), dict_grid=(3, 3)):
    """A two-room input map and a dictionary holding a copy of its left room.

    Returns (map, dictionary, planted room extent on the dictionary).
    """
    rng = np.random.default_rng(seed)
    layouts = make_layouts(2 + dict_grid[0] * dict_grid[1], ROOM, rng)
    left, right, others = layouts[0], layouts[1], layouts[2:]
    segs = room_segments((0.0, 0.0), ROOM, {"E"}, 1.6, left)
    segs += room_segments((ROOM, 0.0), ROOM, {"W"}, 1.6, right)
    pts = sample_walls(np.array(segs), 0.1, 0.01, rng)
    # the input map lives in its own frame
    offset = rng.uniform(-20, 20, 2)
    m = PointSetMap("two_rooms", pts + offset)

    dsegs = []
    k = 0
    for i in range(dict_grid[0]):
        for j in range(dict_grid[1]):
            origin = (i * ROOM, j * ROOM)
            if (i, j) == planted_cell:
                dsegs += room_segments(origin, ROOM, {"E"}, 1.6, left)
            else:
                dsegs += room_segments(origin, ROOM, set(), 1.6, others[k])
                k += 1
    dictionary = PointSetMap("dict", sample_walls(np.array(dsegs), 0.05, 0.01, rng))
    pi, pj = planted_cell
    planted = BBox(pi * ROOM, (pi + 1) * ROOM, pj * ROOM, (pj + 1) * ROOM)
    return m, dictionary, planted


def exhaustive_as(crop, keypoint_bb, descriptor_bb, grid, rotations, step):
    """Best placement count by plain enumeration: every rotation and lattice offset, point by point."""
    occupied = {(int(i) + grid.ix0, int(j) + grid.iy0) for i, j in zip(*np.nonzero(grid.occupied))}
    kc, dc = keypoint_bb.center, descriptor_bb.center
    best = -1
    for theta in rotations:
        c, s = round(math.cos(theta), 12), round(math.sin(theta), 12)
        hw = abs(c) * keypoint_bb.width / 2 + abs(s) * keypoint_bb.height / 2
        hh = abs(s) * keypoint_bb.width / 2 + abs(c) * keypoint_bb.height / 2
        i = 0
        while True:
            if i * step + hw > descriptor_bb.width / 2 + grid.resolution + 1e-9:
                break
            i += 1
        j = 0
        while True:
            if j * step + hh > descriptor_bb.height / 2 + grid.resolution + 1e-9:
                break
            j += 1
        for a in range(-(i - 1), i):
            for b in range(-(j - 1), j):
                tx = (dc.x + a * step) - (c * kc.x - s * kc.y)
                ty = (dc.y + b * step) - (s * kc.x + c * kc.y)
                count = 0
                for x, y in crop:
                    px = (c * x - s * y) + tx
                    py = (s * x + c * y) + ty
                    if (math.floor(px / grid.resolution), math.floor(py / grid.resolution)) in occupied:
                        count += 1
                best = max(best, count)
    return best
