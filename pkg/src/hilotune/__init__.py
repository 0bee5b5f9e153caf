"""Human-in-the-loop tuning of assist-as-needed impedance controllers."""

__version__ = "0.1.0"
