"""Content-based email reply prediction.

Builds email and user representations from mailbox content, derives
similarity features between them, trains classifiers on the result and
evaluates everything with AUROC on temporally split data.
"""

__version__ = "0.1.0"
