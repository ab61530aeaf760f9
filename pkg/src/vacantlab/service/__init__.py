"""HTTP service wrapping the lab (FastAPI app in vacantlab.service.app)."""

from .app import app

__all__ = ["app"]
