import json
from pathlib import Path

import pytest
from hypothesis import settings

from tryonlab.captioning import MockLMMClient, default_schema, render_main_prompt
from tryonlab.data import CaptionRecord, index_dataset, load_sample
from tryonlab.diffusion import HashTextEncoder, PatchCodec, make_schedule, make_unet_pair
from tryonlab.labels import GARMENT_CLASS, PARSE_LABELS
from tryonlab.pmg import ThresholdSegmenter, TryOnPipeline
from tryonlab.synthetic import generate_dataset

settings.register_profile("suite", deadline=None, max_examples=50)
settings.load_profile("suite")


@pytest.fixture(scope="session")
def dataset_root(tmp_path_factory) -> Path:
    root = tmp_path_factory.mktemp("synth")
    generate_dataset(root, n_train=4, n_test=3, seed=11)
    return root


@pytest.fixture(scope="session")
def train_index(dataset_root):
    return index_dataset(dataset_root, "train", "paired")


@pytest.fixture(scope="session")
def test_index(dataset_root):
    return index_dataset(dataset_root, "test", "paired")


@pytest.fixture(scope="session")
def sample0(test_index):
    return load_sample(test_index, 0)


def prompts_from_gt(dataset_root, split, stem, category="upper_body", overrides=None):
    """Render a PromptPair straight from the generator's ground truth."""
    gt = Path(dataset_root) / split / "captions-gt"
    person = CaptionRecord(stem, "person",
                           json.loads((gt / f"{stem}_person.json").read_text()), "gt")
    clothing = CaptionRecord(stem, "clothing",
                             json.loads((gt / f"{stem}_clothing.json").read_text()), "gt")
    return render_main_prompt(person, clothing,
                              default_schema("person", category),
                              default_schema("clothing", category),
                              overrides=overrides)


@pytest.fixture(scope="session")
def prompt_pair(dataset_root, test_index):
    return prompts_from_gt(dataset_root, "test", test_index.entries[0][0])


@pytest.fixture(scope="session")
def pipeline():
    """Untrained but fully wired pipeline; inference-only tests share it."""
    main, reference = make_unet_pair(seed=0)
    return TryOnPipeline(
        main=main,
        reference=reference,
        schedule=make_schedule(),
        codec=PatchCodec(),
        text_encoder=HashTextEncoder(),
        segmenter=ThresholdSegmenter(PARSE_LABELS[GARMENT_CLASS["upper_body"]]),
    )


@pytest.fixture()
def mock_client(dataset_root):
    return MockLMMClient(fixture_dir=Path(dataset_root) / "test" / "captions-gt")
