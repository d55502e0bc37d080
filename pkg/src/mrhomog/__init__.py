"""Periodic homogenization toolkit for suspensions of rigid magnetizable particles."""

__version__ = "0.1.0"
