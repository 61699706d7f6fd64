"""Walk through one asynchronous secure aggregation by hand.

Three clients mask their updates, the untrusted server adds the masked
vectors, and the trusted party releases the mask sum only once its threshold
is met. A replayed submission is refused.

    python3 demos/secure_sum.py
"""

import numpy as np

from asyncfl.secagg import (
    GroupConfig,
    SecureAggregationServer,
    ThresholdNotMet,
    TrustedParty,
    client_submit,
    decode,
    encode,
)

rng = np.random.default_rng(7)
group = GroupConfig(vector_length=6, modulus_bits=32, scaling_factor=2.0**12, threshold=3)
updates = [rng.normal(size=group.vector_length) for _ in range(3)]

tsa = TrustedParty(group, 6, rng_seed=("demo", 0))
offers = tsa.publish_offers()
server = SecureAggregationServer(tsa)

submissions = []
for i, u in enumerate(updates):
    sub = client_submit(encode(u, group), offers[i], tsa.verify_key, group, rng_seed=("demo-client", i))
    submissions.append(sub)
    print(f"client {i} masked vector: {sub.masked.masked_vector[:3]} ...")
    server.receive(sub)
    if server.count < group.threshold:
        try:
            server.finish()
        except ThresholdNotMet:
            print(f"  {server.count} of {group.threshold} contributions: release refused")

print("replaying client 0 accepted?", server.receive(submissions[0]), server.rejected)

total = decode(server.finish(), group)
print("secure sum:", np.round(total, 4))
print("plain sum: ", np.round(np.sum(updates, axis=0), 4))
print("max error: ", float(np.max(np.abs(total - np.sum(updates, axis=0)))),
      "bound:", len(updates) / (2 * group.scaling_factor))
print(f"bytes at the trusted boundary: in={tsa.boundary.bytes_in} out={tsa.boundary.bytes_out}; "
      f"aggregator bytes: {server.aggregator_bytes}")
