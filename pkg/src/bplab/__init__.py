"""Branch probability estimation toolkit.

A small compiler-style IR with CFG analyses, the classic static branch
heuristics, per-branch feature extraction, a from-scratch feed-forward
estimator trained on profile-derived labels, and the evaluation metrics to
compare the two, plus a synthetic profiled corpus generator to drive it all
at desk scale.
"""

__version__ = "0.1.0"
