"""Shared helpers for the heavier test scenarios."""

import copy
import random

from dialact.generator import default_spec


def corrupt_nlu_labels(sessions, rate, seed):
    """Randomly rewrite a fraction of tag tokens and intent sets.

    Tags flip to a uniformly random different tag from the corpus inventory;
    intent sets are replaced by a single random other intent. Action labels
    are untouched, so the corruption models noisy NLU supervision only.
    """
    rng = random.Random(seed)
    sessions = copy.deepcopy(sessions)
    tag_inventory = sorted({t for s in sessions for ex in s for t in ex.tags})
    intent_inventory = sorted({i for s in sessions for ex in s for i in ex.intents})
    for session in sessions:
        for ex in session:
            for k in range(len(ex.tags)):
                if rng.random() < rate:
                    ex.tags[k] = rng.choice([t for t in tag_inventory if t != ex.tags[k]])
            if rng.random() < rate:
                ex.intents = {rng.choice([i for i in intent_inventory if i not in ex.intents])}
    return sessions


def ordering_spec():
    """Corpus spec for the noisy joint-vs-pipeline comparison: small train
    split and a high unseen-word rate so NLU errors actually propagate."""
    spec = default_spec()
    spec["splits"] = {"train_sessions": 100, "dev_sessions": 25, "test_sessions": 25}
    spec["unseen_word_rate"] = 0.25
    return spec


def small_spec(train_sessions=12, dev_sessions=4, test_sessions=4):
    spec = default_spec()
    spec["splits"] = {
        "train_sessions": train_sessions,
        "dev_sessions": dev_sessions,
        "test_sessions": test_sessions,
    }
    return spec
