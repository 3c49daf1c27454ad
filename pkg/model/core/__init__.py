"""
Convolutional network engine: specs, parameters, training and gradient checks.
"""
