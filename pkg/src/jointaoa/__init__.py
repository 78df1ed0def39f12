"""Joint source-number and angle-of-arrival estimation with a layered
random k-labelset ensemble of neural-network classifiers."""

__version__ = "0.1.0"
