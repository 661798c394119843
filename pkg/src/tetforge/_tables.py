"""Lookup tables for the closed space-filling curve used by the spatial sort.

The curve is built from 48 cube isometries. ``W_*`` tables map a physical
octant (bit 0 = x, bit 1 = y, bit 2 = z) to its position along the curve,
``C_*`` tables give the child isometry id for the next recursion level.
The top level follows a closed cycle of octants (``*_M`` tables), every
deeper level follows an open sub-curve (``*_H`` tables, indexed by
``state * 8 + octant`` and ``state * 8 + position``).

Tables were generated by a constraint search over cube isometries and are
validated exhaustively by the test suite: for every depth up to 3 the curve
visits each grid cell exactly once and consecutive cells, including the
wrap-around pair, share a face.
"""

import numpy as np

# top (closed) level
W_MOORE = np.array([0, 1, 3, 2, 7, 6, 4, 5], dtype=np.uint8)
C_MOORE = np.array([5, 8, 0, 13, 3, 14, 6, 11], dtype=np.uint8)

# deeper (open) levels, 48 states x 8 entries, flattened
W_HILBERT = np.array([
    0, 1, 3, 2, 7, 6, 4, 5, 1, 0, 2, 3, 6, 7, 5, 4, 3, 2, 0, 1, 4, 5, 7, 6,
    2, 3, 1, 0, 5, 4, 6, 7, 7, 6, 4, 5, 0, 1, 3, 2, 6, 7, 5, 4, 1, 0, 2, 3,
    4, 5, 7, 6, 3, 2, 0, 1, 5, 4, 6, 7, 2, 3, 1, 0, 0, 1, 7, 6, 3, 2, 4, 5,
    1, 0, 6, 7, 2, 3, 5, 4, 7, 6, 0, 1, 4, 5, 3, 2, 6, 7, 1, 0, 5, 4, 2, 3,
    3, 2, 4, 5, 0, 1, 7, 6, 2, 3, 5, 4, 1, 0, 6, 7, 4, 5, 3, 2, 7, 6, 0, 1,
    5, 4, 2, 3, 6, 7, 1, 0, 0, 3, 1, 2, 7, 4, 6, 5, 3, 0, 2, 1, 4, 7, 5, 6,
    1, 2, 0, 3, 6, 5, 7, 4, 2, 1, 3, 0, 5, 6, 4, 7, 7, 4, 6, 5, 0, 3, 1, 2,
    4, 7, 5, 6, 3, 0, 2, 1, 6, 5, 7, 4, 1, 2, 0, 3, 5, 6, 4, 7, 2, 1, 3, 0,
    0, 3, 7, 4, 1, 2, 6, 5, 3, 0, 4, 7, 2, 1, 5, 6, 7, 4, 0, 3, 6, 5, 1, 2,
    4, 7, 3, 0, 5, 6, 2, 1, 1, 2, 6, 5, 0, 3, 7, 4, 2, 1, 5, 6, 3, 0, 4, 7,
    6, 5, 1, 2, 7, 4, 0, 3, 5, 6, 2, 1, 4, 7, 3, 0, 0, 7, 1, 6, 3, 4, 2, 5,
    7, 0, 6, 1, 4, 3, 5, 2, 1, 6, 0, 7, 2, 5, 3, 4, 6, 1, 7, 0, 5, 2, 4, 3,
    3, 4, 2, 5, 0, 7, 1, 6, 4, 3, 5, 2, 7, 0, 6, 1, 2, 5, 3, 4, 1, 6, 0, 7,
    5, 2, 4, 3, 6, 1, 7, 0, 0, 7, 3, 4, 1, 6, 2, 5, 7, 0, 4, 3, 6, 1, 5, 2,
    3, 4, 0, 7, 2, 5, 1, 6, 4, 3, 7, 0, 5, 2, 6, 1, 1, 6, 2, 5, 0, 7, 3, 4,
    6, 1, 5, 2, 7, 0, 4, 3, 2, 5, 1, 6, 3, 4, 0, 7, 5, 2, 6, 1, 4, 3, 7, 0,
], dtype=np.uint8)

C_HILBERT = np.array([
    32, 8, 0, 13, 3, 14, 14, 37, 33, 9, 1, 12, 2, 15, 15, 36, 34, 10, 2, 15,
    1, 12, 12, 39, 35, 11, 3, 14, 0, 13, 13, 38, 36, 12, 4, 9, 7, 10, 10, 33,
    37, 13, 5, 8, 6, 11, 11, 32, 38, 14, 6, 11, 5, 8, 8, 35, 39, 15, 7, 10,
    4, 9, 9, 34, 40, 0, 8, 3, 13, 6, 6, 43, 41, 1, 9, 2, 12, 7, 7, 42, 42,
    2, 10, 1, 15, 4, 4, 41, 43, 3, 11, 0, 14, 5, 5, 40, 44, 4, 12, 7, 9, 2,
    2, 47, 45, 5, 13, 6, 8, 3, 3, 46, 46, 6, 14, 5, 11, 0, 0, 45, 47, 7, 15,
    4, 10, 1, 1, 44, 8, 32, 16, 38, 19, 37, 37, 14, 9, 33, 17, 39, 18, 36,
    36, 15, 10, 34, 18, 36, 17, 39, 39, 12, 11, 35, 19, 37, 16, 38, 38, 13,
    12, 36, 20, 34, 23, 33, 33, 10, 13, 37, 21, 35, 22, 32, 32, 11, 14, 38,
    22, 32, 21, 35, 35, 8, 15, 39, 23, 33, 20, 34, 34, 9, 0, 40, 24, 46, 29,
    43, 43, 6, 1, 41, 25, 47, 28, 42, 42, 7, 2, 42, 26, 44, 31, 41, 41, 4,
    3, 43, 27, 45, 30, 40, 40, 5, 4, 44, 28, 42, 25, 47, 47, 2, 5, 45, 29,
    43, 24, 46, 46, 3, 6, 46, 30, 40, 27, 45, 45, 0, 7, 47, 31, 41, 26, 44,
    44, 1, 24, 16, 32, 19, 38, 21, 21, 27, 25, 17, 33, 18, 39, 20, 20, 26,
    26, 18, 34, 17, 36, 23, 23, 25, 27, 19, 35, 16, 37, 22, 22, 24, 28, 20,
    36, 23, 34, 17, 17, 31, 29, 21, 37, 22, 35, 16, 16, 30, 30, 22, 38, 21,
    32, 19, 19, 29, 31, 23, 39, 20, 33, 18, 18, 28, 16, 24, 40, 29, 46, 27,
    27, 21, 17, 25, 41, 28, 47, 26, 26, 20, 18, 26, 42, 31, 44, 25, 25, 23,
    19, 27, 43, 30, 45, 24, 24, 22, 20, 28, 44, 25, 42, 31, 31, 17, 21, 29,
    45, 24, 43, 30, 30, 16, 22, 30, 46, 27, 40, 29, 29, 19, 23, 31, 47, 26,
    41, 28, 28, 18,
], dtype=np.uint8)
