"""Authenticated HTTPS API tying the catalog, job engine, and object store together."""
