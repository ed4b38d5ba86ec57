"""Salient object detection with promotion/rectification attention and a
purificatory fusion decoder."""

__version__ = "0.1.0"
