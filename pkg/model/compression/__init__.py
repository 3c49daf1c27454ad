"""
Filter masks, fitness, the genetic search and the pruning baselines.
"""
