"""Per-session symmetric rekeying for pub/sub IoT links.

Includes the rekeying device/edge pair, a static-PSK baseline, a
deterministic broker simulator, an attack harness and the analysis
pipeline used to compare the two schemes.
"""

__version__ = "0.1.0"
