"""Command-line surface, configuration, serialization, rendering, and the
attention-complexity benchmark."""
