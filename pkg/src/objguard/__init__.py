"""Policy-driven, observable object views over an object store."""

__version__ = "0.1.0"
