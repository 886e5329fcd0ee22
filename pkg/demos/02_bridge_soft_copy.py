#!/usr/bin/env python3
"""How the bridge builds decoder inputs and guesses output length.

Decoder input row j is a softmax-weighted mixture of encoder states with
weights exp(-|j - i| / tau): small tau copies the nearest source state,
large tau blends broadly. Output length is a classified offset from the
source length in a fixed band.
"""

import numpy as np

from pnat.bridge import soft_copy_weights

for tau in (0.25, 1.0, 4.0):
    w = soft_copy_weights(n_src=6, m_tgt=6, tau=tau)
    print(f"tau = {tau:4.2f}   row 2 of the copy weights:")
    print("   ", np.round(w[2], 3))
print()
print("Rows always sum to one:", soft_copy_weights(5, 7, 1.3).sum(axis=1).round(9))

print()
print("Length mismatch simply stretches the weight geometry:")
w = soft_copy_weights(n_src=4, m_tgt=8, tau=1.0)
for j in range(8):
    bar = "".join("#" if x > 0.25 else ("+" if x > 0.1 else ".") for x in w[j])
    print(f"  target slot {j}: {bar}   (peak at source {int(np.argmax(w[j]))})")
