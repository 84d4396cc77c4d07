"""dialact: joint NLU and system-action prediction for multi-turn dialogues.

A from-scratch recurrent toolkit (LSTM, exact manual backpropagation, Adam)
plus corpus tooling, a synthetic dialogue generator, evaluation metrics with
threshold tuning, and a CLI covering the joint / pipeline / oracle training
setups.
"""

__version__ = "0.1.0"
