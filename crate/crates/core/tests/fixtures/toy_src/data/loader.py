from . import __name__ as _pkg
from .. import tree  # noqa: F401

import torch.utils.data as tud


def make_loader(dataset_cls, transform):
    # import pandas  (commented out, must not be picked up)
    return tud.DataLoader, dataset_cls, transform, _pkg
