import numpy as np

from muonpp.exceptions import InvalidInputError

SEED_RULE = "SeedSequence(entropy=seed, spawn_key=key).generate_state(1, uint64)"


def trial_seed(seed: int, *key: int) -> int:
    """64-bit stream key for one trial, a pure function of the master seed and the trial coordinates."""
    if seed < 0 or any(k < 0 for k in key):
        raise InvalidInputError(f"seeds and trial keys must be non-negative, got seed={seed}, key={key}")
    sequence = np.random.SeedSequence(entropy=seed, spawn_key=tuple(int(k) for k in key))
    return int(sequence.generate_state(1, dtype=np.uint64)[0])

