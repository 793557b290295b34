"""LumaFlux desk-scale inverse tone mapping toolkit."""

__version__ = "0.1.0"
