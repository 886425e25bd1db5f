"""Synthetic planted-preference dataset for demos and experiments.

Every user has one preferred property; items carry exactly one property
each, and a user interacts only with the items sharing their preference.
Channel hubs connect all items and per-user profile noise edges give the
attention something to learn to ignore. Fully deterministic per seed.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

REVIEW_TEXTS = (
    "very reliable and no smell",
    "love the finish, feels premium",
    "arrived broken, disappointed with the packaging",
    "great value, love it",
    "does the job, nothing special",
)


def write_planted_dataset(
    directory,
    n_users: int = 200,
    n_items: int = 100,
    n_properties: int = 50,
    n_channels: int = 2,
    profile_noise: int = 1,
    seed: int = 0,
) -> dict[str, Path]:
    """Write triples, interactions and reviews files; returns their paths."""
    if n_items % n_properties != 0:
        raise ValueError("n_items must be a multiple of n_properties")
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)

    users = [f"user_{i:03d}" for i in range(n_users)]
    items = [f"item_{i:03d}" for i in range(n_items)]
    props = [f"prop_{i:02d}" for i in range(n_properties)]
    channels = [f"chan_{i}" for i in range(n_channels)]

    triples_path = directory / "triples.tsv"
    with open(triples_path, "w", encoding="utf-8") as handle:
        for i, item in enumerate(items):
            handle.write(f"{item}\titem\thas_property\t{props[i % n_properties]}\tproperty\n")
            handle.write(f"{item}\titem\tsold_in\t{channels[i % n_channels]}\tproperty\n")
        for u, user in enumerate(users):
            noise = rng.choice(n_properties, size=min(profile_noise, n_properties), replace=False)
            for p in sorted(int(x) for x in noise):
                handle.write(f"{user}\tuser\tprofile\t{props[p]}\tproperty\n")

    interactions_path = directory / "interactions.tsv"
    per_property = n_items // n_properties
    with open(interactions_path, "w", encoding="utf-8") as handle:
        for u, user in enumerate(users):
            preferred = u % n_properties
            for j in range(per_property):
                handle.write(f"{user}\t{items[preferred + j * n_properties]}\n")

    reviews_path = directory / "reviews.jsonl"
    with open(reviews_path, "w", encoding="utf-8") as handle:
        for u, user in enumerate(users):
            preferred = u % n_properties
            text = REVIEW_TEXTS[int(rng.integers(0, len(REVIEW_TEXTS)))]
            record = {"user": user, "item": items[preferred], "text": text}
            handle.write(json.dumps(record) + "\n")

    return {
        "triples": triples_path,
        "interactions": interactions_path,
        "reviews": reviews_path,
    }
