import random

import pytest

from fairgate.model import Dataset, Record, UtilityMatrix


def make_dataset(rows, legit_names=()):
    """rows: iterable of (score, label, group) or (score, label, group, legit)."""
    records = []
    for i, row in enumerate(rows):
        if len(row) == 3:
            score, label, group = row
            legit = {}
        else:
            score, label, group, legit = row
        records.append(
            Record(id=str(i), label=label, group=group, score=score, legit=legit)
        )
    return Dataset.from_records(records, legit_names=legit_names)


def random_instance(rng: random.Random, n_groups=2, max_records=40, score_pool=None):
    """Random scored dataset with every group and both classes present."""
    groups = ["g{}".format(i) for i in range(n_groups)]
    rows = []
    for g in groups:
        size = rng.randint(4, max(4, max_records // n_groups))
        labels = [0, 1] + [rng.randint(0, 1) for _ in range(size - 2)]
        for label in labels:
            if score_pool is not None:
                score = rng.choice(score_pool)
            else:
                score = round(rng.uniform(0.02, 0.98), 3)
            rows.append((score, label, g))
    rng.shuffle(rows)
    return make_dataset(rows)


@pytest.fixture
def accuracy():
    return UtilityMatrix.accuracy()
