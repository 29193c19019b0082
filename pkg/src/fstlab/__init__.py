"""Desk-scale laboratory for teacher-student self-training with lookahead
(future-self) teacher updates, on synthetic semi-supervised and
domain-shifted tasks."""

__version__ = "0.1.0"
