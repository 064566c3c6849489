"""End-to-end contact affordance learning in a 2-D manipulation world."""

__version__ = "0.1.0"
