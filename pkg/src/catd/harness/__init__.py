"""CLI, configuration, containers, orchestration, and report emission."""
