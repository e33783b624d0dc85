"""Experiment orchestration: episodes, metrics, sweeps, reports, CLI."""
