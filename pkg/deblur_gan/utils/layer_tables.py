"""
Declared layer tables for the deblurring GAN.

Each row is (kernel, stride, in channels, out channels, declared parameter count),
in table order. Input rows carry no kernel and are omitted.
"""

# Generator rows
GENERATOR_LAYERS = {
    "conv2d": (7, 1, 3, 64, 9472),
    "conv2d_1": (3, 2, 64, 128, 73856),
    "conv2d_2": (3, 2, 128, 256, 295168),
    "conv2d_3": (3, 1, 256, 256, 590080),
    "conv2d_4": (3, 1, 256, 256, 590080),
    "conv2d_5": (3, 1, 256, 256, 590080),
    "conv2d_6": (3, 1, 256, 256, 590080),
    "conv2d_7": (3, 1, 256, 256, 590080),
    "conv2d_8": (3, 1, 256, 256, 590080),
    "conv2d_9": (3, 1, 256, 256, 590080),
    "conv2d_10": (3, 1, 256, 256, 590080),
    "conv2d_11": (3, 1, 256, 256, 590080),
    "conv2d_12": (3, 1, 256, 256, 590080),
    "conv2d_13": (3, 1, 256, 256, 590080),
    "conv2d_14": (3, 1, 256, 256, 590080),
    "conv2d_15": (3, 1, 256, 256, 590080),
    "conv2d_16": (3, 1, 256, 256, 590080),
    "conv2d_17": (3, 1, 256, 256, 590080),
    "conv2d_18": (3, 1, 256, 256, 590080),
    "conv2d_19": (3, 1, 256, 256, 590080),
    "conv2d_20": (3, 1, 256, 256, 590080),
    "conv2d_21": (3, 1, 256, 128, 295040),
    "conv2d_22": (3, 1, 128, 64, 73792),
    "conv2d_23": (7, 1, 64, 3, 9411),
}

# Discriminator rows
DISCRIMINATOR_LAYERS = {
    "conv2d_24": (4, 2, 3, 64, 3136),
    "conv2d_25": (4, 2, 64, 64, 65600),
    "conv2d_26": (4, 2, 64, 128, 131200),
    "conv2d_27": (4, 2, 128, 256, 524544),
    "conv2d_28": (4, 1, 256, 512, 2097664),
    "conv2d_29": (4, 1, 512, 1, 8193),
}

# Summary rows: (layer count, declared total parameters)
NETWORK_TOTALS = {
    "generator": (24, 11399171),
    "discriminator": (6, 3098370),
}

# Rounded figure quoted for the whole GAN, against which the summed summary rows are shown
GAN_TOTAL_APPROX = 14_500_000

# Discrepancies between the summary row and the per-layer rows that are known
# and documented; the audit reports them without failing.
KNOWN_TOTAL_DISCREPANCIES = {
    "discriminator": 3098370 - 2830337,
}


def get_declared_total(network: str) -> int:
    """Declared total parameter count from the summary row."""
    if network not in NETWORK_TOTALS:
        raise ValueError(
            f"Unknown network: {network}. Must be one of {list(NETWORK_TOTALS.keys())}"
        )
    return NETWORK_TOTALS[network][1]
