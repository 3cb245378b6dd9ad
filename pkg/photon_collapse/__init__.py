"""PhotonCollapse - Simulator for spontaneous collapse models acting on photons only."""

__version__ = "1.0.0"
__date__ = "2026-10-18"
