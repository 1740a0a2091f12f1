"""Coresets for uncertain point sets.

Submodules: ``model`` (instances and sampling), ``geom`` (deterministic
primitives and kernels), ``width`` (expected width engine), ``expkernel``,
``quantkernel`` and ``fpowkernel`` (the three kernel families), ``oracle``
(enumeration and Monte Carlo ground truth), ``apps`` (shape fitting) and
``cli``.
"""

__version__ = "0.1.0"
