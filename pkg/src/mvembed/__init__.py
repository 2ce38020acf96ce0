"""mvembed: multi-view 3D shape embedding and retrieval toolkit."""

__version__ = "0.1.0"
