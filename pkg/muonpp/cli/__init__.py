"""
Command-line front end: ``muonpp COMMAND [--key value ...]``.
"""

from muonpp.cli.config import COMMANDS, RunConfig, parse_config
from muonpp.cli.runner import CommandDispatcher, dispatch

__version__ = "1.0.0"
__all__ = ["COMMANDS", "CommandDispatcher", "RunConfig", "dispatch", "parse_config"]
