"""Hardware conditioned policies: robot generation, simulation, and DDPG+HER / PPO training."""

__version__ = "0.1.0"
