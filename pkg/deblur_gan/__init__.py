"""Motion deblurring with a conditional GAN: networks, losses, training, evaluation."""

__version__ = "0.1.0"
