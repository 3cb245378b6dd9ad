"""Core simulation, estimation and experiment-running modules."""
