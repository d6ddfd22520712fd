"""
treedecomp - User Interface Module

This module contains the rich console reporter used by the command line
interface to summarize runs.
"""

from .console import ConsoleReporter

__all__ = [
    "ConsoleReporter",
]
