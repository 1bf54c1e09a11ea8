"""Configuration, experiment orchestration, metrics and the ``fedsim`` CLI."""
