"""wavecast: conditional dilated-convolution forecasting for time series.

The package trains small stacks of dilated causal convolutions (optionally
conditioned on related series) for one-step-ahead and iterated forecasting,
and ships naive and autoregressive baselines plus the metrics used to compare
them. See the README for the CLI entry points.
"""

__version__ = "0.1.0"
