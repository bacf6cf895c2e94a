"""Certified reduced basis methods for least-squares finite element discretizations."""

__version__ = "0.1.0"
