# Shared helpers for the deblur GAN workbench
