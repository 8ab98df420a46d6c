"""
dualseq - per-visit risk classification from a clinician sequence and a patient sequence
"""

__version__ = "0.1.0"
