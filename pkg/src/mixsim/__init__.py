"""Data-driven mixed-traffic simulation: agents pick, every frame, the recorded
velocity sample that minimizes a weighted energy over their neighborhood."""

__version__ = "0.1.0"
