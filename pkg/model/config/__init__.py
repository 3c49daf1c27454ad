"""
Run, training, search and fitness configuration.
"""
