"""SPH-Net: patch embedding, ViT-style and Transformer encoders and a
regression head for next-day close prediction, in numpy."""

__version__ = "0.1.0"
