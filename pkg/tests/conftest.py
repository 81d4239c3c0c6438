import datetime as dt

import numpy as np
import pytest

from views.corpus import CaptionOrigin, CaptionRecord, Corpus, VideoSample
from views.entities import EntitySet
from views.synthetic import SyntheticConfig, generate_corpus


def make_sample(sample_id: str, date: dt.date, article: str = "",
                frames: np.ndarray | None = None, asr: str | None = None,
                bullets: tuple[str, ...] = (), split: str | None = None) -> VideoSample:
    if frames is None:
        frames = np.zeros((2, 4), dtype=np.float32)
    return VideoSample(
        id=sample_id, source="unit", publish_date=date,
        title=f"title for {sample_id}", article_text=article,
        bullet_summaries=bullets, frame_features=frames,
        asr_text=asr, split=split)


def make_corpus(n: int = 6, start: dt.date = dt.date(2015, 1, 1)) -> Corpus:
    samples = [make_sample(f"s{i:03d}", start + dt.timedelta(days=7 * i))
               for i in range(n)]
    corpus = Corpus(samples=samples)
    for i, sample in enumerate(samples):
        corpus.captions[sample.id] = CaptionRecord.from_text(
            sample.id, f"caption number {i} mentions Omar Rask .",
            CaptionOrigin.EVENT_DESCRIPTIONS)
        corpus.entities[sample.id] = EntitySet({"PERSON": ["Omar Rask"]})
    return corpus


@pytest.fixture(scope="session")
def synth_dataset():
    return generate_corpus(SyntheticConfig())


@pytest.fixture(scope="session")
def synth_dir(tmp_path_factory, synth_dataset):
    out = tmp_path_factory.mktemp("synth")
    synth_dataset.write(out)
    return out
