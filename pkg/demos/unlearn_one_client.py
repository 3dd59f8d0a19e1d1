"""
Unlearning one client, step by step
===================================

Train a small federation on Gaussian blobs, remove client 3 with one local
unlearning round, then let the remaining clients train until the model is as
accurate as one retrained without client 3.
"""

import numpy as np

from fedquit import (FederationConfig, MLPArchitecture, PartitionSpec, UnlearnConfig,
                     accuracy, build_federation, fedquit_unlearn, generate_blobs,
                     init_params, recover, run_fedavg, unlearning_round)

u = 3
train = generate_blobs(3, 300, 2, 0.8, seed=0)
test = generate_blobs(3, 100, 2, 0.8, seed=1)
fed = build_federation(train, test, PartitionSpec("dirichlet", 5, 0.3, seed=0))
print("shard sizes:", [len(s) for s in fed.client_shards])

arch = MLPArchitecture((2, 16, 3))
init = init_params(arch, np.random.default_rng(0))
cfg = FederationConfig(rounds=60, batch_size=16, seed=0)

###############################################################################
# The original model sees every client; the retrained one never sees ``u``.

state, _ = run_fedavg(fed, cfg, init)
retrained, _ = run_fedavg(fed, cfg, init, exclude={u})
forget = fed.client_shards[u]
for name, p in (("original", state.params), ("retrained", retrained.params)):
    print(f"{name:10s} test {accuracy(p, test):.3f}  forget {accuracy(p, forget):.3f}")

###############################################################################
# Client ``u`` distills from the edited global model for one epoch.  The
# server installs the result; this costs one download and one upload.

student = fedquit_unlearn(state.params, forget, UnlearnConfig(lr=1e-2, seed=0))
state = unlearning_round(state, student, u)
print(f"unlearned  test {accuracy(student, test):.3f}  forget {accuracy(student, forget):.3f}"
      f"  ({state.last_round_bytes} bytes)")

###############################################################################
# Regular training resumes without ``u`` until the retrained accuracy is met.

res = recover(state, fed, cfg, {u}, accuracy(retrained.params, test), max_rounds=120)
p = res.state.params
print(f"recovered  test {accuracy(p, test):.3f}  forget {accuracy(p, forget):.3f}"
      f"  after {res.rounds} rounds (retraining took {cfg.rounds})")
