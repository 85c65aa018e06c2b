"""Identity-balanced batch construction (P identities x K instances)."""

from __future__ import annotations

from collections import defaultdict
from typing import Sequence

import numpy as np

from .errors import TooFewIdentitiesError


def pk_sample(
    labels: Sequence[int], num_ids: int, num_instances: int, seed: int, epoch: int
) -> list[list[int]]:
    """Return one epoch of batches of dataset indices.

    Every batch holds exactly ``num_ids`` distinct identities with
    ``num_instances`` images each (sampled with replacement from an identity's
    own images when it has fewer). Each identity appears at least once per
    epoch. Deterministic in (seed, epoch).
    """
    by_id = defaultdict(list)
    for idx, lab in enumerate(labels):
        by_id[int(lab)].append(idx)
    identities = sorted(by_id)
    if len(identities) < num_ids:
        raise TooFewIdentitiesError(
            f"need >= {num_ids} identities, dataset has {len(identities)}"
        )
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(3, epoch)))
    order = [identities[i] for i in rng.permutation(len(identities))]

    batches = []
    for start in range(0, len(order), num_ids):
        chunk = order[start : start + num_ids]
        if len(chunk) < num_ids:
            others = [i for i in order if i not in chunk]
            fill = rng.choice(len(others), size=num_ids - len(chunk), replace=False)
            chunk = chunk + [others[i] for i in fill]
        batch = []
        for identity in chunk:
            pool = by_id[identity]
            if len(pool) >= num_instances:
                picks = rng.choice(len(pool), size=num_instances, replace=False)
            else:
                picks = rng.choice(len(pool), size=num_instances, replace=True)
            batch.extend(pool[i] for i in picks)
        batches.append(batch)
    return batches
