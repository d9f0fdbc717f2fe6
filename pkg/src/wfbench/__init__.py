"""Closed-world traffic-fingerprinting workbench.

Ingests packet captures (or generates seeded synthetic traffic), extracts
burst-pair and packet-size features, trains several fingerprinting attacks,
refines per-sample predictions with a site-graph hidden Markov model, and
measures the cost and effectiveness of traffic-shaping defenses.
"""

__version__ = "0.1.0"
