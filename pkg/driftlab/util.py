"""Utilities."""
import csv
import json
import os

import numpy as np


SEED_BITS = 63
JSON_INDENT = 2
FD_STEP = 1e-5


def derive_seed(*keys):
    """Derive an integer substream seed from a tuple of keys."""
    if not keys:
        raise ValueError('at least one key required')
    state = np.random.SeedSequence([int(k) for k in keys]).generate_state(2, dtype=np.uint32)
    return int((int(state[0]) << 32 | int(state[1])) & ((1 << SEED_BITS) - 1))


def make_rng(seed):
    """Counter-based generator for a seed."""
    return np.random.Generator(np.random.Philox(int(seed)))


def run_path(path, *components):
    """Resolve (and create) a directory below the output path."""
    path = os.path.abspath(os.path.expanduser(path))
    new_path = os.path.join(path, *components)
    os.makedirs(new_path, exist_ok=True)
    return new_path


def save_json(data, path):
    """Write a JSON document deterministically."""
    with open(path, 'w') as handle:
        json.dump(data, handle, indent=JSON_INDENT, sort_keys=True)
        handle.write('\n')
    return path


def load_json(path):
    """Read a JSON document."""
    with open(path, 'r') as handle:
        return json.load(handle)


def write_csv(path, header, rows):
    """Write rows (dicts) under a fixed header."""
    with open(path, 'w', newline='') as handle:
        writer = csv.DictWriter(handle, fieldnames=header, lineterminator='\n')
        writer.writeheader()
        for row in rows:
            writer.writerow({k: format_cell(row[k]) for k in header})
    return path


def read_csv(path):
    """Read a CSV file into a list of dicts, converting numeric cells."""
    with open(path, 'r', newline='') as handle:
        return [{k: parse_cell(v) for k, v in row.items()} for row in csv.DictReader(handle)]


def format_cell(value):
    """Format a CSV cell with round-trip precision."""
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return value


def parse_cell(value):
    """Parse a CSV cell into int, float or str."""
    for kind in (int, float):
        try:
            return kind(value)
        except ValueError:
            continue
    return value


def read_vectors(path):
    """Read whitespace-separated vectors, one per line.

    Blank lines separate buckets (one bucket per prompt).
    """
    buckets = [[]]
    with open(path, 'r') as handle:
        for line in handle:
            line = line.strip()
            if not line:
                if buckets[-1]:
                    buckets.append([])
                continue
            if line.startswith('#'):
                continue
            buckets[-1].append([float(v) for v in line.split()])
    return [np.array(b, dtype=float) for b in buckets if b]


def write_vectors(path, buckets):
    """Write vector buckets in the line-delimited format."""
    with open(path, 'w') as handle:
        for i, bucket in enumerate(buckets):
            if i:
                handle.write('\n')
            for vector in np.atleast_2d(bucket):
                handle.write(' '.join(repr(float(v)) for v in vector) + '\n')
    return path


def finite_difference(func, x0, step=FD_STEP):
    """Central-difference gradient of a scalar function."""
    x0 = np.asarray(x0, dtype=float)
    grad = np.zeros_like(x0)
    flat = grad.reshape(-1)
    for i in range(x0.size):
        offset = np.zeros(x0.size)
        offset[i] = step
        offset = offset.reshape(x0.shape)
        flat[i] = (func(x0 + offset) - func(x0 - offset)) / (2 * step)
    return grad


def relative_error(actual, expected, floor=1e-12):
    """Relative error in sup-norm."""
    actual = np.asarray(actual, dtype=float)
    expected = np.asarray(expected, dtype=float)
    return float(np.max(np.abs(actual - expected)) / max(np.max(np.abs(expected)), floor))


def population_std(values):
    """Population standard deviation."""
    return float(np.std(np.asarray(values, dtype=float)))
