"""Click graph workflows.

Click model training and evaluation on session logs, packaged as a
Speedwagon plugin with a matching command line tool.
"""

from . import plugin

__all__ = ['plugin']
