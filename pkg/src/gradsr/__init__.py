"""Gradient-guided GAN super resolution at desk scale.

A two-branch x4 generator guided by image gradient maps, adversarial
supervision in both image and gradient space, and the training, inference,
and evaluation tooling around it.
"""

import numpy  # noqa: F401  loads BLAS so the thread pin below can find it

from ._alloc import limit_blas_threads, tune_allocator

tune_allocator()
limit_blas_threads()

__version__ = "0.1.0"
