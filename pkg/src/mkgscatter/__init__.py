"""Characteristic evolution of the Maxwell-Klein-Gordon system from data on null infinity."""

__version__ = "0.1.0"
