"""Cross-domain recommendation matching pipeline.

Two-stage contrastive training of GraphSAGE-style embeddings over a pair of
bipartite interaction graphs, with a stop-gradient barrier protecting the
source domain and a centrality-based curriculum over negative samples.
"""

__version__ = "0.1.0"
