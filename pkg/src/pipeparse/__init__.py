"""Compiler and cycle-accurate simulator for pipelined streaming packet parsers."""

__version__ = "0.1.0"
