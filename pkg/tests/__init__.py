"""
Test package for the filter compression library.
"""
