"""Self-learned latent representations for proprioceptive locomotion RL."""

__version__ = "0.1.0"
