"""Multi-source traffic event detection on a lambda architecture.

Heterogeneous observations (social posts, news, loop sensors, GPS probes,
camera counts, weather) are turned into congestion labels, matched into
events, fused by a reliability-weighted vote and served through a query
engine that prefers fresh stream data over batch views and predictions.
"""

__version__ = "0.1.0"
