#!/usr/bin/env python3
"""Writes the 200x200 synthetic ratings fixture and its planted user groups.

Ratings are U V^T + small noise with U, V of rank 6; the user factors are
four well-separated group centers plus jitter.

    python3 tools/make_ratings_fixture.py tests/data
"""
import sys
from pathlib import Path

import numpy as np

N_USERS, N_ITEMS, RANK, GROUPS = 200, 200, 6, 4


def main(out_dir: Path) -> None:
    rng = np.random.default_rng(20240611)
    centers = 3.0 * rng.standard_normal((GROUPS, RANK))
    group = np.arange(N_USERS) % GROUPS
    rng.shuffle(group)
    users = centers[group] + 0.3 * rng.standard_normal((N_USERS, RANK))
    items = rng.standard_normal((N_ITEMS, RANK))
    ratings = users @ items.T + 0.01 * rng.standard_normal((N_USERS, N_ITEMS))

    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "ratings_fixture.csv", "w", newline="\n") as f:
        f.write("user_id,item_id,rating\n")
        for u in range(N_USERS):
            for i in range(N_ITEMS):
                f.write(f"u{u:03d},i{i:03d},{ratings[u, i]:.6f}\n")
    with open(out_dir / "ratings_fixture_groups.csv", "w", newline="\n") as f:
        f.write("user_id,group\n")
        for u in range(N_USERS):
            f.write(f"u{u:03d},{group[u]}\n")


if __name__ == "__main__":
    main(Path(sys.argv[1] if len(sys.argv) > 1 else "tests/data"))
