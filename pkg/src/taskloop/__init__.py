"""Backend-pluggable orchestration engine for a self-evolving RL loop:
task generation with difficulty prediction, code-execution verification,
utility-ranked limit breaking with external guidance, and clipped-surrogate
training-batch assembly."""

__version__ = "0.1.0"
