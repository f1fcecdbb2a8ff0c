"""
FaultFlow - geometric fault detection and identification for control-affine systems
"""

__version__ = "1.0.0"
