"""Text-to-table generation with a sequential header and a set of parallel rows.

The package trains a small encoder-decoder that reads a document and emits a
table: the header is generated token by token, the body rows are generated as
an unordered set, in parallel, with bipartite matching deciding which target
row supervises which row slot.  Evaluation is order-insensitive by
construction.
"""

import os

# Pin BLAS to one thread before numpy ever loads: the numeric contracts in
# this package (bit-identical reruns, batched == per-instance arithmetic)
# assume a fixed reduction order, and the models are far too small for
# threading to pay for itself anyway.
for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")
del _var, os

__version__ = "0.1.0"

from .tables import Cell, FormatReport, Table, parse_table, serialize_table, validate

__all__ = [
    "Cell",
    "FormatReport",
    "Table",
    "parse_table",
    "serialize_table",
    "validate",
]
