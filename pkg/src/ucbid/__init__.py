"""ucbid: stochastic unit commitment and market bidding for small portfolios."""

__version__ = "0.1.0"
