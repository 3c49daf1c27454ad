"""
Error estimators used by fitness evaluation.
"""
