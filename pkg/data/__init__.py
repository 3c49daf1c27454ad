"""
Datasets, IDX loading, train/eval/fine-tune splits and checkpoint files.
"""
