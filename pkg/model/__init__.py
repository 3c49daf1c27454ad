"""
Filter-level CNN compression by evolutionary search.
"""
