"""RNN surrogate modelling and log-barrier input optimization for building HVAC control."""

__version__ = "0.1.0"
