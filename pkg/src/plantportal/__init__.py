"""Plant image data portal: catalog, object store, staging pipeline, gateway, and client."""

__version__ = "0.1.0"
