"""Errors shared by the file-format loaders."""


class ParseError(Exception):
    """Malformed input; carries the 1-based line number."""

    def __init__(self, line, message):
        super().__init__(f"line {line}: {message}")
        self.line = line


class UnsupportedFormat(Exception):
    """Recognized file family, unsupported variant (e.g. binary PLY)."""


class VersionError(Exception):
    """Policy file failed schema, version, or shape validation."""
