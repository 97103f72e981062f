"""Clifford diffusion models.

Multivectors are length-8 float arrays in the basis order
(1, e1, e2, e3, e23, e31, e12, e123). Molecules are dicts with
``positions`` (n, 3), ``elements`` (symbols) and ``charges``.
"""

from ._core import (
    ConfigError,
    DataError,
    apply_orthogonal,
    cayley_table,
    checkpoint_info,
    evaluate,
    format_xyz,
    geometric_product,
    grade_blocks,
    grade_project,
    matched_distance_error,
    parse_xyz,
    random_orthogonal,
    reverse,
    rigid_template,
    sample,
    schedule,
    selftest,
    train,
)

__all__ = [
    "ConfigError",
    "DataError",
    "apply_orthogonal",
    "cayley_table",
    "checkpoint_info",
    "evaluate",
    "format_xyz",
    "geometric_product",
    "grade_blocks",
    "grade_project",
    "matched_distance_error",
    "parse_xyz",
    "random_orthogonal",
    "reverse",
    "rigid_template",
    "sample",
    "schedule",
    "selftest",
    "train",
]
