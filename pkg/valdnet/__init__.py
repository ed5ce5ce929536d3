"""ValdNet: violence detection from an RGB stream and an optical-flow stream, each encoded by a small
EfficientNet-style backbone, summed per frame and refined by a bidirectional LSTM or GRU.
"""

__version__ = "0.1.0"
