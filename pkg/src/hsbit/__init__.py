"""Bitfield label encoding for hyperspectral segmentation of overlapping plastic flakes.

Submodules: ``numerics`` (autodiff and layers on numpy), ``encoding``,
``model`` (U-net), ``data`` (synthetic scenes, annotation, file formats),
``experiments`` (training, metrics, reports) and ``cli``.
"""

__version__ = "0.1.0"
