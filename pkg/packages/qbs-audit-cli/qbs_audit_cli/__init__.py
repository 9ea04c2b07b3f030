"""qbs-audit-cli: command-line entry point for the QBS audit toolkit."""

__version__ = "0.1.0"
