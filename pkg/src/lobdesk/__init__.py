"""lobdesk: a one-level limit order book laboratory.

Queue-reactive order flow prior, backward dynamic-programming solvers for
market-making and futures-hedged quoting, broker execution trackers
(participation-of-volume and VWAP), and a shared-book multi-agent
simulator that replays all of them against each other.
"""

__version__ = "0.1.0"
