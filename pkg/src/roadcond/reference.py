"""Published reference numbers for the seven-class road-condition benchmark.

Confusion matrices have rows = actual class, columns = predicted class, in
``CLASS_NAMES`` order. The reported metric tables are 2-decimal values.
"""

from __future__ import annotations

import numpy as np

CLASS_NAMES = (
    "asphalt bad",
    "asphalt good",
    "asphalt regular",
    "concrete bad",
    "concrete regular",
    "unpaved bad",
    "unpaved regular",
)

# full method (segmentation + contrastive, ResNet18 backbone) exactly as printed
FULL_METHOD_MATRIX_AS_PRINTED = np.array([
    [300, 2, 14, 0, 0, 0, 0],
    [4, 1362, 3, 0, 0, 2, 0],
    [31, 34, 527, 0, 1, 0, 0],
    [4, 0, 0, 80, 4, 0, 0],
    [1, 14, 0, 11, 206, 1, 0],
    [0, 0, 0, 6, 0, 417, 1],
    [0, 0, 0, 0, 0, 19, 546],
])

# The printed "unpaved bad" row sums to 424, not its reported support of 418.
# Zeroing cell (unpaved bad, concrete bad) is the only single-cell change that
# restores every reported support and every reported metric of the column.
FULL_METHOD_MATRIX = FULL_METHOD_MATRIX_AS_PRINTED.copy()
FULL_METHOD_MATRIX[5, 3] = 0

# baseline (plain ResNet18 classifier)
BASELINE_MATRIX = np.array([
    [291, 5, 14, 2, 4, 0, 0],
    [5, 1353, 11, 0, 0, 2, 0],
    [41, 40, 511, 0, 1, 0, 0],
    [9, 0, 0, 71, 8, 0, 0],
    [4, 16, 2, 15, 193, 3, 0],
    [0, 0, 0, 6, 0, 401, 11],
    [3, 0, 5, 0, 0, 24, 533],
])

# per class (precision, recall, f1), then the macro row
REPORTED_FULL_METHOD = {
    "asphalt bad": (0.88, 0.95, 0.91),
    "asphalt good": (0.96, 0.99, 0.98),
    "asphalt regular": (0.97, 0.89, 0.93),
    "concrete bad": (0.88, 0.91, 0.89),
    "concrete regular": (0.98, 0.88, 0.93),
    "unpaved bad": (0.95, 1.00, 0.97),
    "unpaved regular": (1.00, 0.97, 0.98),
    "macro": (0.95, 0.94, 0.94),
}

REPORTED_BASELINE = {
    "asphalt bad": (0.82, 0.92, 0.87),
    "asphalt good": (0.96, 0.99, 0.97),
    "asphalt regular": (0.94, 0.86, 0.90),
    "concrete bad": (0.76, 0.81, 0.78),
    "concrete regular": (0.94, 0.83, 0.88),
    "unpaved bad": (0.93, 0.96, 0.94),
    "unpaved regular": (0.98, 0.94, 0.96),
    "macro": (0.90, 0.90, 0.90),
}

REPORTED_TEST_SUPPORTS = (316, 1371, 593, 88, 233, 418, 565)

# (train, val, test) counts per class as reported
REPORTED_SPLIT_COUNTS = {
    "train": (101, 399, 161, 28, 63, 112, 159),
    "val": (47, 208, 85, 8, 28, 63, 72),
    "test": REPORTED_TEST_SUPPORTS,
}

CLASS_TOTALS = tuple(int(sum(v)) for v in zip(*REPORTED_SPLIT_COUNTS.values()))
DATASET_SIZE = 5118
SPLIT_RATIOS = (0.2, 0.1, 0.7)
