"""The bfloat16 margin-quantization artifact and its fp32 fix.

bfloat16 has an 8-bit significand, so near logit magnitudes of 1-8 the
representable spacing is 2^-7 to 2^-4.  Margins (logit differences)
inherit this coarse grid and collapse onto a handful of distinct values,
hiding the continuous geometry.  Recomputing logits from the (unrounded)
hidden states at float32 restores the fine-grained margins.
"""

import numpy as np

from marginlab import emulate_bf16, recompute_fp32_logits, unique_value_count
from marginlab.margins import top2_stats

rng = np.random.default_rng(7)

# Representable spacing around 1.0
print("bf16 rounding near 1.0:")
for x in (1.0, 1.0 + 2**-8, 1.0 + 1.5 * 2**-8, 1.0 + 2**-7):
    print(f"  {x:.10f} -> {emulate_bf16(x):.10f}")

# A deployment-like pipeline: hidden states -> logits in the 1-8 range
n, d, v = 10_000, 32, 64
hidden = rng.uniform(0.15, 0.85, size=(n, d))
unembedding = rng.uniform(0.0, 0.55, size=(v, d))

fp32_logits = recompute_fp32_logits(hidden, unembedding)
bf16_logits = emulate_bf16(fp32_logits)

_, _, m_fp32 = top2_stats(fp32_logits)
_, _, m_bf16 = top2_stats(bf16_logits)

c_fp32 = unique_value_count(m_fp32.astype(np.float32))
c_bf16 = unique_value_count(m_bf16.astype(np.float32))
print(f"\n{n} positions, logits in [{fp32_logits.min():.2f}, {fp32_logits.max():.2f}]:")
print(f"  unique margins at fp32:          {c_fp32}")
print(f"  unique margins after bf16 round: {c_bf16} "
      f"({c_bf16 / c_fp32:.2%} of the fp32 count)")
print("\nThe hidden states are not the bottleneck: projecting them at fp32")
print("recovers the full margin resolution, so the collapse is purely an")
print("artifact of rounding the final projection.")

# Reference from a published 4B-parameter audit (documentation only):
# 256K positions collapse to 223 unique margins in bf16; fp32
# recomputation restores 238,399 unique values.
