import numpy as np
import pytest

from avfusion.model import Model, ModelConfig
from avfusion.synth import ClipSample, CorpusSpec, generate_corpus


def toy_config(head="perception", **kw):
    base = dict(
        shape_dim=3, audio_dim=2, pre_hidden=4, lstm_hidden=4, d_sel=3, d_av=4, d_e=3,
        window=2, n_classes=3, head=head,
    )
    base.update(kw)
    return ModelConfig(**base)


def random_clip(rng, T=5, T_a=12, audio_dim=2, visual_dim=3, label=1, clip_id="c0"):
    return ClipSample(clip_id, rng.standard_normal((T_a, audio_dim)), rng.standard_normal((T, visual_dim)), label)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def toy_model():
    return Model.create(toy_config(), seed=7)


@pytest.fixture(scope="session")
def small_corpus():
    spec = CorpusSpec(n_classes=3, n_train=12, n_val=6, n_test=6, t_min=6, t_max=10, audio_dim=4, visual_dim=3,
                      salient_min=2, salient_max=3, jitter=2, lag=1, seed=5)
    return generate_corpus(spec)
