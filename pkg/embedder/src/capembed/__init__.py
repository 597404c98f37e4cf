__version__ = "0.1.0"


class EmbedError(Exception):
    """Unusable input: bad manifest, empty job, missing model directory."""
