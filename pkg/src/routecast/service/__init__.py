"""HTTP service wrapping the prediction pipeline.

Run it with uvicorn:

    uvicorn routecast.service:create_app --factory
"""

from .app import create_app

__all__ = ["create_app"]
