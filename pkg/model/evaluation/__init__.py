"""
Compression accounting, filter images and evolution plots.
"""
