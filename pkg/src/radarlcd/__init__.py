"""Radar loop-closure detection: guidance-driven keypoints, NetVLAD place
signatures, descriptor-seeded registration and a Scan Context baseline."""

__version__ = "0.1.0"
