#!/usr/bin/env python3
"""Writes fixtures/iid.jsonl: 4 chains of independent draws in 50-iteration batches.

mu ~ Normal(0, 1), sigma ~ LogNormal(0, 0.25), z[3] ~ Normal(0, 1), every
draw independent; acceptance flags are Bernoulli(0.75), inside the hmc band.
"""

import json
import random
import sys

CHAINS, TUNE, DRAWS, BATCH = 4, 100, 1000, 50


def main(path):
    rng = random.Random(20240611)
    descriptor = {
        "variables": [
            {"name": "mu", "kind": "latent", "distribution": "Normal", "shape": [], "support": "real",
             "source_span": {"file": "iid.py", "line_start": 1, "line_end": 1}},
            {"name": "sigma", "kind": "latent", "distribution": "LogNormal", "shape": [], "support": "positive",
             "source_span": {"file": "iid.py", "line_start": 2, "line_end": 2}},
            {"name": "z", "kind": "latent", "distribution": "Normal", "shape": [3], "support": "real",
             "source_span": {"file": "iid.py", "line_start": 3, "line_end": 3}},
        ],
        "edges": [],
    }
    metadata = {"algorithm": "hmc", "n_chains": CHAINS, "n_tune": TUNE, "n_draws_planned": DRAWS,
                "hyperparameters": {"step_size": 0.5, "n_leapfrog": 8}, "started_at": ""}
    lines = [{"record": "run", "run_id": "", "descriptor": descriptor, "metadata": metadata}]
    r6 = lambda v: round(v, 6)
    for phase, total in (("tune", TUNE), ("sample", DRAWS)):
        for first in range(0, total, BATCH):
            for chain in range(CHAINS):
                n = min(BATCH, total - first)
                lines.append({
                    "record": "batch", "chain": chain, "phase": phase, "first_iteration": first,
                    "draws": {
                        "mu": [r6(rng.gauss(0, 1)) for _ in range(n)],
                        "sigma": [r6(rng.lognormvariate(0, 0.25)) for _ in range(n)],
                        "z": [[r6(rng.gauss(0, 1)) for _ in range(3)] for _ in range(n)],
                    },
                    "accept": [rng.random() < 0.75 for _ in range(n)],
                })
    lines.append({"record": "finish", "run_id": "", "outcome": "finished"})
    with open(path, "w", encoding="utf-8") as f:
        for obj in lines:
            f.write(json.dumps(obj, separators=(",", ":")) + "\n")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "fixtures/iid.jsonl")
