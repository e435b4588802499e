import pytest

from cmindex import SynthConfig, build_baseline_index, build_multi_index, generate_synthetic_corpus
from cmindex.experiment import ExperimentConfig, train_models


@pytest.fixture(scope="session")
def corpus():
    cfg = SynthConfig(groups=6, images_per_group=4, features_per_image=8, noise=0.05, illum=0.3)
    return generate_synthetic_corpus(cfg, seed=101)


@pytest.fixture(scope="session")
def trained(corpus):
    cfg = ExperimentConfig(k_sift=32, k_color=8, kmeans_iters=15, train_seed=5, he_seed=6)
    return train_models(corpus, cfg)


@pytest.fixture(scope="session")
def multi_index(corpus, trained):
    sift_book, color_book, he = trained
    return build_multi_index(corpus, (sift_book, color_book), he)


@pytest.fixture(scope="session")
def baseline_index(corpus, trained):
    sift_book, _, he = trained
    return build_baseline_index(corpus, sift_book, he)
