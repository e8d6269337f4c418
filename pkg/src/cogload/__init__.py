"""Offline mental-workload estimation from EEG, ECG and GSR recordings."""
__version__ = "0.1.0"
