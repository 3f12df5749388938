class LifasError(Exception):
    """Raised for bad user input: unreadable files, invalid configs, impossible splits."""
