"""Network-slicing simulator: agent workflow, exact rule-based allocator,
and a prompt-only baseline, with desk-scale metrics and a CLI."""

__version__ = "0.1.0"
