"""Two-tier farm WiFi mesh: capacity calculus, traffic engineering and simulation."""

__version__ = "0.1.0"
