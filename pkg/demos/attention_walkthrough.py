"""Step through one hierarchical-attention pass on three two-node graphs.

Prints the node scores S1 (6x6), the graph attention S_G (6x3) and the
node attention S_N (6x6), then checks the fused routine against a
written-out version of the same arithmetic.

    python3 demos/attention_walkthrough.py
"""
import numpy as np

from eventformer.attention import block_sum, graph_attention, hierarchical_attention, membership, node_scores
from eventformer.numeric import softmax

np.set_printoptions(precision=3, suppress=True)

graph_of = np.array([0, 0, 1, 1, 2, 2])
member = membership(graph_of)
rng = np.random.default_rng(0)
q, k, v = (rng.standard_normal((6, 4)) for _ in range(3))

s1 = node_scores(q, k, 4).data
print("S1 = softmax(Q K^T / sqrt(d))\n", s1)

sums = block_sum(s1, member).data
print("\nper-graph row sums of S1\n", sums)

s_g = graph_attention(sums).data
print("\nS_G = softmax over graphs\n", s_g)

s_n = softmax(s1 * (s_g @ member.T)).data
print("\nS_N = softmax(S1 * broadcast S_G)\n", s_n)

f, trace = hierarchical_attention(q, k, v, member)
print("\nmax |fused - step by step| =", np.abs(f.data - s_n @ v).max())
print("rows of S_G and S_N sum to one:", np.allclose(s_g.sum(1), 1), np.allclose(s_n.sum(1), 1))
