"""Shared fixtures for the slow, training-backed acceptance tests.

Everything here is session-scoped: the synthetic families and the trained
systems are built once and reused by every test that needs them.  All seeds
are fixed so the suite is deterministic end to end.
"""

from pathlib import Path

import pytest

from vqbridge.corpus import FamilySpec, Vocab, generate_family
from vqbridge.runconfig import parse_kv_file
from vqbridge.training import TrainConfig, TrainedSystem, load_system, train

REPO_ROOT = Path(__file__).resolve().parent.parent
CONFIGS = REPO_ROOT / "configs"

DATA_SEED = 11


def _generate(config_name: str, out_dir: Path) -> Path:
    spec = FamilySpec.from_config(parse_kv_file(CONFIGS / config_name))
    generate_family(spec, DATA_SEED, out_dir)
    return out_dir


@pytest.fixture(scope="session")
def accept_tmp(tmp_path_factory) -> Path:
    return tmp_path_factory.mktemp("acceptance")


@pytest.fixture(scope="session")
def related_data(accept_tmp) -> Path:
    return _generate("family_related.cfg", accept_tmp / "related_data")


@pytest.fixture(scope="session")
def unrelated_data(accept_tmp) -> Path:
    return _generate("family_unrelated.cfg", accept_tmp / "unrelated_data")


def _train_system(config: TrainConfig, data_dir: Path, out_dir: Path) -> TrainedSystem:
    result = train(config, data_dir, out_dir)
    vocab = Vocab.load(data_dir / "vocab.txt")
    return load_system(result.checkpoint, vocab)


@pytest.fixture(scope="session")
def train_config() -> TrainConfig:
    return TrainConfig.from_file(CONFIGS / "train_related.cfg")


@pytest.fixture(scope="session")
def related_system(related_data, accept_tmp, train_config) -> TrainedSystem:
    """Quantizer-trained system on the related-bridge family."""
    return _train_system(train_config, related_data, accept_tmp / "related_run")


@pytest.fixture(scope="session")
def unrelated_system(unrelated_data, accept_tmp, train_config) -> TrainedSystem:
    """Same training recipe, unrelated-bridge family."""
    return _train_system(train_config, unrelated_data, accept_tmp / "unrelated_run")


@pytest.fixture(scope="session")
def baseline_system(related_data, accept_tmp, train_config) -> TrainedSystem:
    """Continuous-context baseline: identical recipe with the quantizer's
    influence switched off (p=0 and zero-weight auxiliary losses)."""
    cfg_dict = train_config.to_dict()
    cfg_dict.update(p_quantize=0.0, alpha_codebook=0.0, alpha_commitment=0.0)
    cfg = TrainConfig.from_dict(cfg_dict)
    return _train_system(cfg, related_data, accept_tmp / "baseline_run")
