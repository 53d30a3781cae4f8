"""Binary run checkpoints.

Layout: magic bytes, one format-version byte, then a UTF-8 JSON payload with
the generation index, the config hash, the master seed, the mode, and every
genotype serialized through the bit-exact text format. Counter-based random
streams are derived from (master seed, generation, ...) alone, so no mutable
RNG state needs saving; the generation index is the whole cursor.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from . import genome
from .genome import Genotype

MAGIC = b"NMEVOCKPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


class ResumeMismatch(CheckpointError):
    """Checkpoint belongs to a different configuration."""


@dataclass
class Checkpoint:
    generation: int  # next generation to evaluate
    population: list[Genotype]
    config_hash: str
    master_seed: int
    mode: str


def save(path, ck: Checkpoint) -> None:
    doc = {
        "generation": ck.generation,
        "config_hash": ck.config_hash,
        "master_seed": ck.master_seed,
        "mode": ck.mode,
        "population": [genome.to_text(g) for g in ck.population],
    }
    payload = json.dumps(doc).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(bytes([VERSION]))
        fh.write(payload)


def load(path) -> Checkpoint:
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(MAGIC):
        raise CheckpointError(f"{path} is not a checkpoint file")
    version = data[len(MAGIC)]
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    try:
        doc = json.loads(data[len(MAGIC) + 1:].decode("utf-8"))
        population = [genome.from_text(t) for t in doc["population"]]
        return Checkpoint(
            generation=int(doc["generation"]),
            population=population,
            config_hash=str(doc["config_hash"]),
            master_seed=int(doc["master_seed"]),
            mode=str(doc["mode"]),
        )
    except (KeyError, ValueError, TypeError, genome.GenotypeParseError) as exc:
        raise CheckpointError(f"corrupt checkpoint {path}: {exc}") from exc
