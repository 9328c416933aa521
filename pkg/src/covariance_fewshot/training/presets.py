"""
Published training defaults as named presets.

Shot-keyed values (epoch budget, shrinkage strengths) are applied first; a named dataset
preset supplies the loss weights and learning rate on top.
"""

from types import MappingProxyType

EPOCHS_BY_SHOTS = MappingProxyType({1: 80, 2: 100, 4: 100, 8: 200, 16: 200})

# (gamma1, gamma2)
SHRINKAGE_BY_SHOTS = MappingProxyType(
    {
        1: (500.0, 300.0),
        2: (500.0, 300.0),
        4: (600.0, 100.0),
        8: (500.0, 100.0),
        16: (500.0, 500.0),
    }
)

# (alpha, beta, learning rate) per dataset
DATASET_PRESETS = MappingProxyType(
    {
        "dtd": (5.0, 0.5, 20.0),
        "fgvc_aircraft": (5.0, 0.01, 2.0),
        "sun397": (100.0, 0.01, 20.0),
        "caltech101": (10.0, 0.01, 0.2),
        "oxford_pets": (1.0, 0.1, 0.02),
        "food101": (1.0, 0.5, 20.0),
        "flowers102": (10.0, 0.5, 0.002),
        "ucf101": (5.0, 0.1, 20.0),
        "stanford_cars": (10.0, 0.5, 0.2),
        "imagenet": (10.0, 0.1, 2.0),
        "eurosat": (100.0, 2.0, 20.0),
    }
)

WARMUP_EPOCHS = 5
WARMUP_LR = 1e-5
BASE_LR = 0.1

SMALL_BATCH_SIZE = 32
LARGE_BATCH_SIZE = 64
LARGE_DATASETS = frozenset({"imagenet", "sun397", "food101"})

DEFAULT_HEADS = 4
DEFAULT_SEEDS = (1, 2, 3)
SENSITIVITY_GRID = (1e-2, 1e-1, 1.0, 1e1, 1e2)


def dataset_preset(name: str) -> dict[str, object]:
    """
    Config overrides of a named dataset preset.

    :param name: Preset name, case-insensitive (e.g. ``dtd``, ``eurosat``).
    :return: Nested override dictionary with loss weights, peak learning rate and batch size.
    :raises KeyError: If the preset is unknown.
    """
    key = name.strip().lower()
    alpha, beta, lr = DATASET_PRESETS[key]
    batch_size = LARGE_BATCH_SIZE if key in LARGE_DATASETS else SMALL_BATCH_SIZE
    return {"weights": {"alpha": alpha, "beta": beta}, "base_lr": lr, "batch_size": batch_size}
