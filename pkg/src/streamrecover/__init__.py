"""Streamline recovery planning and closed-loop speed search for quadrotor teams.

Kept import-free so the command line can configure thread pools before numpy loads.
"""

__version__ = "0.1.0"
