"""Multi-horizon limit-order-book forecasting on a small numpy autodiff engine."""

__version__ = "0.1.0"
