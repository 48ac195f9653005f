"""Hybrid tree/neural self-supervised autoencoder for tabular data.

Two encoders (a batch-normalized MLP and an ensemble of soft oblivious
decision trees) read stochastically gated views of each input and feed one
shared decoder. Joint training couples the branches through reconstruction,
cross-reconstruction alignment, and latent similarity losses; downstream
prediction keeps only the neural branch. Analysis utilities cover frequency
spectra of the gated views, gating diagnostics, and cross-method result
tables.
"""

__version__ = "0.1.0"
