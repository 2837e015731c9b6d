#!/usr/bin/env python3
"""Writes the toy manifests with the benchmark header counts into tests/fixtures."""
import json
import pathlib
import sys

SHAPES = {
    # name: attrs, objs, seen, unseen, test-seen pairs, test-unseen pairs
    "mit_states_like": (115, 245, 1262, 400, 400, 400),
    "ut_zappos_like": (16, 12, 83, 18, 18, 18),
    "cgqa_like": (413, 674, 5592, 923, 888, 923),
}


def pairs_for(na, no, n_seen, n_unseen):
    seen, taken = [], set()

    def add(a, o):
        if (a, o) not in taken:
            taken.add((a, o))
            seen.append((a, o))

    # cover every primitive first, then walk the grid with a coprime stride
    for i in range(max(na, no)):
        add(i % na, i % no)
    step, i = 7919, 0
    while len(seen) < n_seen:
        k = (i * step) % (na * no)
        add(k // no, k % no)
        i += 1
    unseen = []
    for k in range(na * no):
        p = (k // no, k % no)
        if p not in taken:
            unseen.append(p)
            if len(unseen) == n_unseen:
                break
    return seen, unseen


def manifest(na, no, n_seen, n_unseen, t_seen, t_unseen):
    A = [f"a{i}" for i in range(na)]
    O = [f"o{i}" for i in range(no)]
    seen, unseen = pairs_for(na, no, n_seen, n_unseen)
    name = lambda p: [A[p[0]], O[p[1]]]
    sample = lambda tag, i, p: {"id": f"{tag}{i}", "label": name(p), "tensor": [[float(i % 10) / 10.0]]}
    return {
        "attributes": A,
        "objects": O,
        "seen_pairs": [name(p) for p in seen],
        "unseen_pairs": [name(p) for p in unseen],
        "payload": {"kind": "latent", "rows": 1, "cols": 1},
        "splits": {
            "train": [sample("tr", i, p) for i, p in enumerate(seen)],
            "val": [],
            "test": [sample("ts", i, p) for i, p in enumerate(seen[:t_seen])]
            + [sample("tu", i, p) for i, p in enumerate(unseen[:t_unseen])],
        },
    }


def main():
    out = pathlib.Path(sys.argv[1] if len(sys.argv) > 1 else pathlib.Path(__file__).parent.parent / "tests" / "fixtures")
    for name, shape in SHAPES.items():
        d = out / name
        d.mkdir(parents=True, exist_ok=True)
        (d / "manifest.json").write_text(json.dumps(manifest(*shape), separators=(",", ":")) + "\n")


if __name__ == "__main__":
    main()
