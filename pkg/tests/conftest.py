import numpy as np
import pytest

from bmiml import Bag, MimlDataset


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def random_bag(rng, n_instances=None, dim=3, num_classes=2, bag_id="b"):
    n = n_instances or int(rng.integers(1, 6))
    label = np.zeros(num_classes, dtype=np.uint8)
    label[rng.integers(0, num_classes)] = 1
    return Bag(rng.normal(size=(n, dim)), label, bag_id)


def random_dataset(rng, n_bags=8, dim=3, num_classes=2):
    bags = [random_bag(rng, dim=dim, num_classes=num_classes, bag_id=f"b{i}") for i in range(n_bags)]
    # make sure every class is positive somewhere
    for k in range(num_classes):
        lab = np.array(bags[k].label)
        lab[k] = 1
        bags[k] = Bag(bags[k].instances, lab, bags[k].id)
    return MimlDataset(bags, name="random")
