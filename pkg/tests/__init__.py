"""Tests for PhotonCollapse."""
