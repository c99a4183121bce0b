"""fa_sidecar: HTTP sidecar exposing /embed and /narrate model backends."""

__version__ = "0.1.0"
