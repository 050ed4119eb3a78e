"""Two-scale diffusion homogenization of linear kinetic transport."""

__version__ = "0.1.0"
