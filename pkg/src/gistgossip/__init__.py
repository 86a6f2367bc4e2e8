"""Gossip-based GIST node discovery and scoped epidemic signaling dissemination.

The package bundles a deterministic discrete-event network simulator, the
three-message gossip discovery protocol (Rumor / Rumor-Response / Rumor-Ack),
the bubble / balloon / hose dissemination modes, an experiment harness, an
HTTP service wrapping the harness, and a thin CLI client.
"""

__version__ = "0.1.0"
