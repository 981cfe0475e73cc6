"""Safety-cage supervised DDPG for longitudinal vehicle following."""

__version__ = "0.1.0"
