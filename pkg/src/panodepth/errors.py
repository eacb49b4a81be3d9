"""Exception types shared across the package.

The CLI maps these onto process exit codes (see cli.py): configuration
problems exit 2, IO/bundle problems exit 3, numerical/degenerate input
problems exit 4.
"""


class PanodepthError(Exception):
    """Base class for all package errors."""


class ConfigError(PanodepthError):
    """Invalid configuration value or combination."""


class InvalidInputError(PanodepthError):
    """Structurally invalid input: out-of-range pixel, zero vector,
    non-finite logits, shape mismatch."""


class DegenerateInputError(PanodepthError):
    """Input is well-formed but numerically degenerate: all-invalid mask,
    zero valid pixels, non-positive alignment median, too few tokens."""


class BundleError(PanodepthError):
    """Malformed or incomplete reconstruction bundle on disk."""
