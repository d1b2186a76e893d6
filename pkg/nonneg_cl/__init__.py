# Non-negative contrastive learning on exact latent-class models.

__version__ = '0.1.0'
