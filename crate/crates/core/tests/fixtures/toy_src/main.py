"""Entry point for the toy project used by the manifest tests."""
import argparse
import os
import sys

import numpy as np
import torch
from torchvision import datasets, transforms

from tree import Node
from data.loader import make_loader


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--epochs", type=int, default=1)
    args = parser.parse_args()
    loader = make_loader(datasets.SVHN, transforms.ToTensor())
    print(np.zeros(3), torch.zeros(3), Node(), args, os.getcwd(), sys.argv, loader)


if __name__ == "__main__":
    main()
