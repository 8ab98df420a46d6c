"""Dual recurrent classifier, baselines, pretraining and checkpoints"""
