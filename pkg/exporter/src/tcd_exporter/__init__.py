"""Trace exporter: hooks a layered host model and writes engine-replayable
archives through the engine's published file format and CLI only."""

__version__ = "0.1.0"

from .export import ExportSession, SampleSpec, export, load_session
from .host import DEFAULT_VOCAB, ToyLayeredLM

__all__ = [
    "DEFAULT_VOCAB",
    "ExportSession",
    "SampleSpec",
    "ToyLayeredLM",
    "export",
    "load_session",
]
