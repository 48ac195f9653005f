"""Bundled synthetic tabular dataset generator.

Produces a two-or-more-class classification table whose informative numeric
columns are drawn from class-dependent Gaussians with alternating mean
shifts, padded with class-independent noise columns and optional
low-cardinality categorical nuisance columns. Deterministic per seed, so
pipeline runs on it are reproducible end to end.
"""

import csv

import numpy as np

from .dataio import RawTable

TARGET_NAME = "label"

# class-conditional mean shift and spread of informative columns
SHIFT = 0.15
INFORMATIVE_STD = 0.08
# noise columns are Huber-contaminated: a tight bulk plus rare wide
# outliers, so after min-max scaling their usable variance is far below an
# informative column's and they behave as true nuisance dimensions
NOISE_STD = 0.05
NOISE_OUTLIER_STD = 0.45
NOISE_OUTLIER_FRAC = 0.01
CATEGORICAL_TOKENS = ("a", "b", "c")


def feature_names(n_informative, n_noise, n_categorical):
    """Column names in table order: informative, noise, categorical."""
    return (
        [f"inf{j}" for j in range(n_informative)]
        + [f"noise{j}" for j in range(n_noise)]
        + [f"cat{j}" for j in range(n_categorical)]
    )


def synthetic_table(n_per_class=2500, n_informative=10, n_noise=40,
                    n_categorical=0, n_classes=2, seed=0):
    """Build the dataset as a RawTable with a string class target."""
    if n_per_class < 1 or n_informative < 1 or n_classes < 2:
        raise ValueError("need n_per_class >= 1, n_informative >= 1, "
                         "n_classes >= 2")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    n = n_per_class * n_classes
    labels = np.repeat(np.arange(n_classes), n_per_class)

    # informative column j of class c is centred at 0.5 +/- SHIFT with the
    # sign alternating in j and flipping between consecutive classes
    j = np.arange(n_informative)
    signs = np.where((j[None, :] + np.arange(n_classes)[:, None]) % 2 == 0,
                     1.0, -1.0)
    means = 0.5 + SHIFT * signs
    informative = rng.normal(means[labels], INFORMATIVE_STD,
                             (n, n_informative))
    noise = rng.normal(0.5, NOISE_STD, (n, n_noise))
    spikes = rng.random((n, n_noise)) < NOISE_OUTLIER_FRAC
    noise = np.where(spikes, rng.normal(0.5, NOISE_OUTLIER_STD, (n, n_noise)),
                     noise)
    categorical = rng.choice(CATEGORICAL_TOKENS, size=(n, n_categorical))

    order = rng.permutation(n)
    informative = informative[order]
    noise = noise[order]
    categorical = categorical[order]
    labels = labels[order]

    columns = []
    for col in informative.T:
        columns.append([f"{v:.6f}" for v in col])
    for col in noise.T:
        columns.append([f"{v:.6f}" for v in col])
    for col in categorical.T:
        columns.append(list(col))
    return RawTable(
        names=feature_names(n_informative, n_noise, n_categorical),
        columns=columns,
        target_name=TARGET_NAME,
        target=[f"c{c}" for c in labels],
    )


def write_synthetic_csv(path, **kwargs):
    """Generate the dataset and write it as a CSV with a header row."""
    tab = synthetic_table(**kwargs)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(tab.names + [tab.target_name])
        for i in range(tab.n_rows):
            writer.writerow([col[i] for col in tab.columns] + [tab.target[i]])
