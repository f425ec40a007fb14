import pytest

from fadnet.elnet import ELNetConfig
from fadnet.model import ModelConfig
from fadnet.perception import MelConfig, VisualEncoderConfig
from fadnet.synthdata import generate_corpus


@pytest.fixture(scope="session")
def tiny_model_cfg():
    return ModelConfig(
        elnet=ELNetConfig(cond_dim=24, base_width=8, groups=2, time_embed_dim=16),
        visual=VisualEncoderConfig(widths=(4, 4, 4, 4), head_channels=4, output_dim=8),
        mel=MelConfig(n_mels=16),
    )


@pytest.fixture(scope="session")
def tiny_corpus():
    return generate_corpus(6, T=32, delay=4, seed=11)
