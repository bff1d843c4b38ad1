"""MSCRED: multi-scale convolutional recurrent encoder-decoder for
multivariate time series anomaly detection and diagnosis."""

from ._mscred import *  # noqa: F401,F403
