"""Training, evaluation and interpretation"""
