import dataclasses
from pathlib import Path

import pytest
import torch

from noise_tts.config import CorpusConfig, FrontendConfig, ModelConfig, RunConfig, TrainConfig
from noise_tts.corpus import load_utterances, prepare_corpus


@pytest.fixture
def fe():
    return FrontendConfig()


def tiny_model_config(**kw) -> ModelConfig:
    """Small widths so unit tests stay fast; architecture is unchanged."""
    base = dict(d_model=32, n_heads=2, ffn_dim=64, n_layers=1,
                ctc_layers=1, predictor_channels=32, unet_base_channels=4)
    base.update(kw)
    return dataclasses.replace(ModelConfig(), **base)


def tiny_run_config(tmp_path, **train_kw) -> RunConfig:
    train = dict(batch_size=4, extractor_steps=6, joint_steps=6, warmup_steps=4,
                 checkpoint_every=3, validate_every=3)
    train.update(train_kw)
    return RunConfig(output_dir=str(Path(tmp_path) / "run"), model=tiny_model_config(),
                     train=dataclasses.replace(TrainConfig(), **train))


@pytest.fixture(scope="session")
def toy_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("toy") / "corpus"
    cfg = CorpusConfig(n_utterances=8, validation_fraction=0.25)
    return prepare_corpus(cfg, FrontendConfig(), root, seed=3)


@pytest.fixture(scope="session")
def toy_utterances(toy_corpus):
    return load_utterances(toy_corpus)


@pytest.fixture(autouse=True)
def _seed():
    torch.manual_seed(0)


# one line per acceptance criterion, printed again in the terminal summary
ACCEPTANCE_LINES: dict[str, str] = {}


def record_acceptance(key: str, ok: bool, detail: str) -> str:
    line = f"criterion {key:>3s}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[key] = line
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    order = sorted(ACCEPTANCE_LINES, key=lambda k: (not k.isdigit(), int(k) if k.isdigit() else 0, k))
    for key in order:
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
