"""Encoder, decoder and the network that ties them together."""
