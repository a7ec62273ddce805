"""pRFT rational-consensus simulator."""

__version__ = '0.1.0'
