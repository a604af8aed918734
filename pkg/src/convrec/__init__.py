"""Conversational recommender: a bimodal VAE over interactions and keyphrases
with a gated critique blender, plus evaluation, simulation, serving and CLI
layers around it."""

__version__ = "0.1.0"
