"""Knowledge tracing with learned auxiliary skill tags and exercise recommendation."""

__version__ = "0.1.0"
