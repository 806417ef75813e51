from datetime import date, timedelta

import pytest

from triplet_aa.cohort import Cohort, Sample, Triplet
from triplet_aa.synth import generate


def make_triplet(
    triplet_id="T0001",
    ca125=(10.0, 10.0, 10.0),
    peaks=((1.0,), (1.0,), (1.0,)),
    case_position=1,
    tau=1.0,
    measured=date(2001, 1, 1),
    patient=None,
):
    samples = tuple(
        Sample(
            patient_id=(patient or f"P-{triplet_id}") if i + 1 == case_position else f"C-{triplet_id}-{i}",
            ca125=float(c),
            peaks=tuple(float(x) for x in p),
            is_case=i + 1 == case_position,
        )
        for i, (c, p) in enumerate(zip(ca125, peaks))
    )
    return Triplet(triplet_id, samples, case_position, tau, measured)


@pytest.fixture
def triplet_factory():
    return make_triplet


@pytest.fixture
def ca125_cohort():
    """Five triplets where the case always has the highest CA125."""
    triplets = []
    for i in range(5):
        position = i % 3 + 1
        ca125 = [10.0, 10.0, 10.0]
        ca125[position - 1] = 100.0
        triplets.append(
            make_triplet(
                triplet_id=f"T{i + 1:04d}",
                ca125=ca125,
                case_position=position,
                tau=float(i),
                measured=date(2001, 1, 1) + timedelta(days=30 * i),
            )
        )
    return Cohort(tuple(triplets))


@pytest.fixture(scope="session")
def small_cohort():
    return generate(n_triplets=30, n_peaks=4, informative_peaks=[2, 3], seed=11)
