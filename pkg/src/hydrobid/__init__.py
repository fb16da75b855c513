"""Strategic hydro bidding in sequential day-ahead, intraday and FCR-N markets."""

__version__ = "0.1.0"
