"""Hierarchical contrastive self-supervised learning for multivariate time
series, with importance-aware resolution selection as a drop-in replacement
for the full hierarchical objective.

Subpackages are deliberately flat: ``numerics`` (autodiff substrate),
``dataio`` (datasets), ``augment`` (views), ``encoder`` (residual conv
backbone), ``contrast`` (losses), ``iars`` (resolution scheduler),
``trainer`` (training loops), ``evalkit`` (classification evaluation),
``bench_oracles`` (independent brute-force checks) and ``cli``.
"""

from . import (  # noqa: F401
    augment,
    bench_oracles,
    contrast,
    dataio,
    encoder,
    evalkit,
    iars,
    numerics,
    trainer,
)

__version__ = "0.1.0"
