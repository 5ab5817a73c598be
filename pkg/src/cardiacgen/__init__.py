"""Two-stage conditional generation of synthetic ECG with HRV control."""

__version__ = "0.1.0"
