"""Model order reduction for linear systems driven by fractional Brownian motion."""
