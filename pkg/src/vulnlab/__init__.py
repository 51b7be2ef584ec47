"""Miniature smart-contract VM, attack replays and static analyzer."""

__version__ = "0.1.0"
