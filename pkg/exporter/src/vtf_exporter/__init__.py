"""Thin adapter exporting pretrained SSL speech features to VTF1 files."""

from .export import ExportSpec, export
from .vtf import write_vtf

__version__ = "0.1.0"
