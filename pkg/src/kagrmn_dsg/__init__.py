"""Knowledge-aware gated recurrent memory network with dual syntax graphs."""

__version__ = "0.1.0"
