"""The `views` command line: corpus, builder, models, eval, experiments.

Thin wrappers around the library; every subcommand reads and writes the
same flat files the harness uses, so anything a run produced can be
redone or checked by hand. Exit codes: 0 ok, 2 validation error,
3 stage failure, 4 strict-assertion failure.
"""

from __future__ import annotations

import datetime as dt
import json
import sys
from pathlib import Path

import click
import yaml

from . import builder as builder_mod
from . import synthetic
from .captioner import (
    AblationConfig,
    CaptioningModel,
    CMConfig,
    EMPTY_BUNDLE,
    build_cm_vocab,
    generate,
    load_cm_checkpoint,
    load_vi_cache,
    save_cm_checkpoint,
    train_cm,
    vi_bundles_from_cache,
)
from .corpus import (
    Corpus,
    load_caption_file,
    load_corpus,
    load_entity_file,
    load_split,
    save_caption_file,
    save_entity_file,
    save_split,
    split_by_date,
    split_random,
)
from .errors import (
    LeakageError,
    SpecValidationError,
    StageError,
    StrictModeError,
    ViewsError,
)
from .harness import (
    load_spec,
    run_ablation_table,
    run_ke_studies,
    run_pipeline,
    run_time_generalization,
)
from .knowledge import LLMBackend, MockKB, extract_context, save_context_file
from .llm import LiveLLM, MockLLM, ReplayLLM, SerializingLLM
from .metrics import (
    EntityMatchConfig,
    GazetteerExtractor,
    LLMExtractor,
    compute_report,
    save_report,
)
from .perceiver import (
    EntityPerceiver,
    EPConfig,
    build_ep_vocab,
    decode_entities_verbose,
    load_ep_checkpoint,
    save_ep_checkpoint,
    train_ep,
)
from .seq2seq import TrainConfig


def _typed_rows(path: str | Path) -> list[tuple[str, str]]:
    rows = json.loads(Path(path).read_text(encoding="utf-8"))
    return [(row["surface"], row["type"]) for row in rows]


def _make_llm(backend: str, fixtures: str | None, cassette: str | None,
              inventory: str | None, endpoint: str | None, model: str | None):
    if backend == "mock":
        fixture_map = (json.loads(Path(fixtures).read_text(encoding="utf-8"))
                       if fixtures else {})
        rows = _typed_rows(inventory) if inventory else []
        return MockLLM(fixtures=fixture_map, inventory=rows)
    if backend == "replay":
        if not cassette:
            raise SpecValidationError("replay backend needs --cassette")
        return ReplayLLM(cassette)
    if not endpoint or not model:
        raise SpecValidationError("live backend needs --endpoint and --model")
    return SerializingLLM(LiveLLM(endpoint, model))


def _attach(corpus_path, captions=None, entities=None) -> Corpus:
    corpus = load_corpus(corpus_path)
    if captions:
        corpus.captions = load_caption_file(captions)
    if entities:
        corpus.entities = load_entity_file(entities)
    return corpus


def _train_ids(corpus: Corpus, split_path: str | None, side: str) -> list[str]:
    if split_path is None:
        return corpus.ids
    split = load_split(split_path)
    ids = {"train": split.train_ids, "dev": split.dev_ids,
           "test": split.test_ids}[side]
    return sorted(ids)


def _load_texts(path: str | Path) -> dict[str, str]:
    """Tolerant caption reader: any JSONL with sample_id and text."""
    out: dict[str, str] = {}
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            row = json.loads(line)
            out[row["sample_id"]] = row["text"]
    return out


def _read_config(path: str | None) -> dict:
    if not path:
        return {}
    data = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise SpecValidationError(f"config file {path} must hold a mapping")
    return data


@click.group()
def cli():
    """Entity-aware news video captioning toolkit."""


# ---------------------------------------------------------------- corpus

@cli.group("corpus")
def corpus_group():
    """Corpus file inspection and splitting."""


@corpus_group.command("validate")
@click.argument("path", type=click.Path(exists=True, dir_okay=False))
def corpus_validate(path):
    """Parse and validate a corpus file."""
    corpus = load_corpus(path)
    click.echo(f"OK: {len(corpus)} samples, feature dim {corpus.feature_dim}")


@corpus_group.command("split")
@click.argument("path", type=click.Path(exists=True, dir_okay=False))
@click.option("--dev", "dev_n", type=int, default=None, help="dev set size")
@click.option("--test", "test_n", type=int, default=None, help="test set size")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--cutoff", type=str, default=None,
              help="ISO date; time split instead of random")
@click.option("--out", type=click.Path(dir_okay=False), default="split.json",
              show_default=True)
def corpus_split(path, dev_n, test_n, seed, cutoff, out):
    """Write a split file, random (--dev/--test) or by date (--cutoff)."""
    corpus = load_corpus(path)
    if cutoff is not None:
        split = split_by_date(corpus, dt.date.fromisoformat(cutoff))
    else:
        if dev_n is None or test_n is None:
            raise SpecValidationError("random split needs --dev and --test")
        split = split_random(corpus, dev_n, test_n, seed)
    save_split(split, out)
    click.echo(f"wrote {out}: {len(split.train_ids)} train / "
               f"{len(split.dev_ids)} dev / {len(split.test_ids)} test")


# ---------------------------------------------------------------- build

_BACKEND_OPTIONS = [
    click.option("--backend", type=click.Choice(["mock", "replay", "live"]),
                 default="mock", show_default=True),
    click.option("--fixtures", type=click.Path(exists=True, dir_okay=False),
                 default=None, help="mock backend: prompt-to-reply JSON map"),
    click.option("--inventory", type=click.Path(exists=True, dir_okay=False),
                 default=None, help="mock backend: entity inventory JSON"),
    click.option("--cassette", type=click.Path(exists=True, dir_okay=False),
                 default=None, help="replay backend: recorded cassette"),
    click.option("--endpoint", default=None, help="live backend URL"),
    click.option("--model", default=None, help="live backend model name"),
]


def _with_backend_options(fn):
    for option in reversed(_BACKEND_OPTIONS):
        fn = option(fn)
    return fn


@cli.group("build")
def build_group():
    """Dataset building: captions, entities, quality control, review."""


@build_group.command("captions")
@click.option("--corpus", "corpus_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--workers", type=int, default=1, show_default=True)
@_with_backend_options
def build_captions_cmd(corpus_path, out, workers, backend, fixtures,
                       inventory, cassette, endpoint, model):
    """Generate event-description captions from article bullet blocks."""
    corpus = load_corpus(corpus_path)
    llm = _make_llm(backend, fixtures, cassette, inventory, endpoint, model)
    captions = builder_mod.build_captions(corpus, llm, workers=workers)
    save_caption_file(captions, out)
    click.echo(f"wrote {out}: {len(captions)} captions")


@build_group.command("entities")
@click.option("--corpus", "corpus_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--workers", type=int, default=1, show_default=True)
@_with_backend_options
def build_entities_cmd(corpus_path, out, workers, backend, fixtures,
                       inventory, cassette, endpoint, model):
    """Extract ground-truth entity sets from article bullet blocks."""
    corpus = load_corpus(corpus_path)
    llm = _make_llm(backend, fixtures, cassette, inventory, endpoint, model)
    entities = builder_mod.build_entities(corpus, llm, workers=workers)
    save_entity_file(entities, out)
    click.echo(f"wrote {out}: {len(entities)} entity sets")


@build_group.command("qc")
@click.option("--corpus", "corpus_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--captions", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--split", "split_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--include-train", is_flag=True, default=False,
              help="rate training captions too")
@click.option("--workers", type=int, default=1, show_default=True)
@click.option("--verdicts", required=True, type=click.Path(dir_okay=False))
@click.option("--queue", "queue_path", required=True,
              type=click.Path(dir_okay=False))
@click.option("--captions-out", type=click.Path(dir_okay=False), default=None,
              help="updated captions (default: overwrite --captions)")
@_with_backend_options
def build_qc_cmd(corpus_path, captions, split_path, include_train, workers,
                 verdicts, queue_path, captions_out, backend, fixtures,
                 inventory, cassette, endpoint, model):
    """Rate captions; flagged dev/test samples enter the correction queue."""
    corpus = _attach(corpus_path, captions=captions)
    split = load_split(split_path)
    llm = _make_llm(backend, fixtures, cassette, inventory, endpoint, model)
    results = builder_mod.run_qc(corpus, split, llm,
                                 include_train=include_train, workers=workers)
    builder_mod.save_verdicts(results, verdicts)
    entries = builder_mod.build_correction_queue(results, corpus)
    builder_mod.save_queue(entries, queue_path)
    save_caption_file(corpus.captions, captions_out or captions)
    flagged = sum(1 for v in results if not v.rater_pass)
    click.echo(f"rated {len(results)} captions, {flagged} flagged; "
               f"queue -> {queue_path}")


@build_group.command("review")
@click.option("--queue", "queue_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--captions", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--queue-out", type=click.Path(dir_okay=False), default=None)
@click.option("--captions-out", type=click.Path(dir_okay=False), default=None)
def build_review_cmd(queue_path, captions, queue_out, captions_out):
    """Interactive correction pass over the flagged-caption queue."""
    store = Corpus(samples=[], captions=load_caption_file(captions))
    queue = builder_mod.CorrectionQueue(builder_mod.load_queue(queue_path), store)
    pending = queue.pending()
    if not pending:
        click.echo("queue has no pending entries")
    for entry in pending:
        click.echo(f"\nsample {entry.sample_id}")
        click.echo(f"  caption: {entry.original_caption}")
        choice = click.prompt("  (e)dit / (a)ccept / (s)kip",
                              type=click.Choice(["e", "a", "s"]))
        if choice == "e":
            text = click.prompt("  corrected caption")
            queue.apply_correction(entry.sample_id, text)
        elif choice == "a":
            queue.accept_as_is(entry.sample_id)
    builder_mod.save_queue(queue.entries, queue_out or queue_path)
    save_caption_file(store.captions, captions_out or captions)
    left = len(queue.pending())
    click.echo(f"done; {left} entries still pending")


# ---------------------------------------------------------------- ep

@cli.group("ep")
def ep_group():
    """Entity perceiver: train on frames, decode entity strings."""


@ep_group.command("train")
@click.option("--config", "config_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
def ep_train_cmd(config_path):
    """Train from a YAML/JSON config (corpus, entities, checkpoint, ...)."""
    config = _read_config(config_path)
    base = Path(config_path).parent
    for key in ("corpus", "entities", "checkpoint"):
        if key not in config:
            raise SpecValidationError(f"ep train config needs {key!r}")
    corpus = _attach(base / config["corpus"], entities=base / config["entities"])
    ids = _train_ids(corpus,
                     str(base / config["split"]) if config.get("split") else None,
                     config.get("side", "train"))
    vocab = build_ep_vocab(corpus.subset(ids))
    model = EntityPerceiver(
        EPConfig(frame_dim=corpus.feature_dim, **config.get("model", {})), vocab)
    train_config = TrainConfig.desk_profile(**config.get("train", {}))
    result = train_ep(model, corpus, train_config, train_ids=ids)
    save_ep_checkpoint(base / config["checkpoint"], model)
    click.echo(f"trained {len(ids)} samples, final loss "
               f"{result.loss_curve[-1]:.4f}; wrote {config['checkpoint']}")


@ep_group.command("decode")
@click.option("--checkpoint", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--corpus", "corpus_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--beam", type=int, default=1, show_default=True)
def ep_decode_cmd(checkpoint, corpus_path, out, beam):
    """Decode an entity string for every corpus sample."""
    model = load_ep_checkpoint(checkpoint)
    corpus = load_corpus(corpus_path)
    decoded = {}
    flags = {}
    for sample_id in corpus.ids:
        result = decode_entities_verbose(model, corpus[sample_id].frame_features,
                                         beam=beam)
        decoded[sample_id] = result.entities
        flags[sample_id] = result.failed
    save_entity_file(decoded, out, flags=flags)
    failed = sum(flags.values())
    click.echo(f"wrote {out}: {len(decoded)} samples, {failed} decode failures")


# ---------------------------------------------------------------- ke

@cli.group("ke")
def ke_group():
    """Knowledge extractor: entities in, context passages out."""


@ke_group.command("extract")
@click.option("--entities", "entities_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--kb", "kb_path", default=None,
              type=click.Path(exists=True, dir_okay=False),
              help="mock backend knowledge base file")
@click.option("--structured/--flat", "structured", default=True,
              show_default=True, help="entity payload form in the prompt")
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--default-passage", default="no relevant news article was found .",
              show_default=True)
@_with_backend_options
def ke_extract_cmd(entities_path, kb_path, structured, out, default_passage,
                   backend, fixtures, inventory, cassette, endpoint, model):
    """Fetch a context passage for each entity set."""
    entity_sets = load_entity_file(entities_path)
    if backend == "mock":
        if not kb_path:
            raise SpecValidationError("mock backend needs --kb")
        kb = MockKB.from_file(kb_path, default_passage=default_passage)
    else:
        kb = LLMBackend(
            _make_llm(backend, fixtures, cassette, inventory, endpoint, model),
            name=backend)
    passages = {sample_id: extract_context(entities, kb, structured=structured)
                for sample_id, entities in entity_sets.items()}
    save_context_file(passages, out)
    click.echo(f"wrote {out}: {len(passages)} passages")


# ---------------------------------------------------------------- cm

@cli.group("cm")
def cm_group():
    """Captioning model: train with VI channels, generate captions."""


@cm_group.command("train")
@click.option("--corpus", "corpus_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--captions", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--entities", default=None,
              type=click.Path(exists=True, dir_okay=False),
              help="ground-truth entities (vocabulary coverage)")
@click.option("--vi", "vi_path", default=None,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--ablate", type=click.Choice(["full", "no-entities",
                                             "no-knowledge", "no-vi"]),
              default="full", show_default=True)
@click.option("--use-asr", is_flag=True, default=False)
@click.option("--split", "split_path", default=None,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--side", type=click.Choice(["train", "dev", "test"]),
              default="train", show_default=True)
@click.option("--config", "config_path", default=None,
              type=click.Path(exists=True, dir_okay=False),
              help="model/train overrides (YAML)")
@click.option("--out", required=True, type=click.Path(dir_okay=False))
def cm_train_cmd(corpus_path, captions, entities, vi_path, ablate, use_asr,
                 split_path, side, config_path, out):
    """Train the captioner; --ablate switches VI channels off."""
    ablation = AblationConfig.from_name(ablate, use_asr=use_asr)
    if ablation.wants_vi() and not vi_path:
        raise SpecValidationError(f"ablation {ablate!r} needs --vi")
    corpus = _attach(corpus_path, captions=captions, entities=entities)
    ids = _train_ids(corpus, split_path, side)
    config = _read_config(config_path)
    vi_records = load_vi_cache(vi_path) if vi_path else {}
    extra_texts = [r.context_text for r in vi_records.values()]
    vocab = build_cm_vocab(corpus.subset(ids), extra_texts=extra_texts)
    model = CaptioningModel(
        CMConfig(frame_dim=corpus.feature_dim, **config.get("model", {})), vocab)
    bundles = vi_bundles_from_cache(vi_records, vocab, ablation)
    train_config = TrainConfig.desk_profile(**config.get("train", {}))
    result = train_cm(model, corpus, bundles, train_config, ablation,
                      train_ids=ids)
    save_cm_checkpoint(out, model, ablation)
    click.echo(f"trained {len(ids)} samples ({ablation.name}), final loss "
               f"{result.loss_curve[-1]:.4f}; wrote {out}")


@cm_group.command("generate")
@click.option("--checkpoint", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--corpus", "corpus_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--vi", "vi_path", default=None,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--split", "split_path", default=None,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--side", type=click.Choice(["train", "dev", "test"]),
              default="test", show_default=True)
@click.option("--beam", type=int, default=1, show_default=True)
@click.option("--out", required=True, type=click.Path(dir_okay=False))
def cm_generate_cmd(checkpoint, corpus_path, vi_path, split_path, side, beam, out):
    """Generate captions with the checkpoint's trained ablation."""
    model, ablation = load_cm_checkpoint(checkpoint)
    corpus = load_corpus(corpus_path)
    ids = _train_ids(corpus, split_path, side) if split_path else corpus.ids
    if ablation.wants_vi() and not vi_path:
        raise SpecValidationError(f"checkpoint ablation {ablation.name!r} needs --vi")
    vi_records = load_vi_cache(vi_path) if vi_path else {}
    bundles = vi_bundles_from_cache(vi_records, model.vocab, ablation)
    records = {}
    for sample_id in ids:
        if ablation.wants_vi() and sample_id not in bundles:
            raise SpecValidationError(f"no VI cache row for sample {sample_id}")
        records[sample_id] = generate(
            model, corpus[sample_id].frame_features,
            bundles.get(sample_id, EMPTY_BUNDLE), beam=beam, sample_id=sample_id)
    save_caption_file(records, out)
    click.echo(f"wrote {out}: {len(records)} captions")


# ---------------------------------------------------------------- eval

@cli.command("eval")
@click.option("--pred", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--ref", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--entities-extractor", "extractor_kind",
              type=click.Choice(["gazetteer", "llm"]), default="gazetteer",
              show_default=True)
@click.option("--gazetteer", "gazetteer_path", default=None,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--aggregation", type=click.Choice(["micro", "macro"]),
              default="micro", show_default=True)
@click.option("--type-sensitive", is_flag=True, default=False)
@click.option("--report", "report_path", required=True,
              type=click.Path(dir_okay=False))
def eval_cmd(pred, ref, extractor_kind, gazetteer_path, aggregation,
             type_sensitive, report_path):
    """Score a predictions file against references; write a report JSON."""
    predictions = _load_texts(pred)
    references = _load_texts(ref)
    if set(predictions) != set(references):
        only_pred = sorted(set(predictions) - set(references))[:3]
        only_ref = sorted(set(references) - set(predictions))[:3]
        raise SpecValidationError(
            f"prediction and reference ids differ (pred-only {only_pred}, "
            f"ref-only {only_ref})")
    if extractor_kind == "gazetteer":
        if not gazetteer_path:
            raise SpecValidationError("gazetteer extractor needs --gazetteer")
        extractor = GazetteerExtractor.from_file(gazetteer_path)
    else:
        rows = _typed_rows(gazetteer_path) if gazetteer_path else []
        extractor = LLMExtractor(MockLLM(inventory=rows))
    ids = sorted(references)
    config = EntityMatchConfig(aggregation=aggregation,
                               type_sensitive=type_sensitive)
    report = compute_report([predictions[i] for i in ids],
                            [references[i] for i in ids], extractor, config)
    save_report(report, report_path)
    click.echo(json.dumps(report.to_dict(), indent=2, sort_keys=True))


# ---------------------------------------------------------------- run

@cli.group("run")
def run_group():
    """Spec-driven experiments: pipeline, ablation, studies."""


@run_group.command("pipeline")
@click.option("--spec", "spec_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
def run_pipeline_cmd(spec_path):
    """Full staged run; resumes from persisted intermediates."""
    report = run_pipeline(load_spec(spec_path))
    for key in sorted(report.cells):
        cell = report.cells[key]
        click.echo(f"{key}: CIDEr {cell.cider:.2f}, Ent F1 {cell.entity_f1:.2f}")
    click.echo(f"wall clock {report.wall_clock_seconds:.1f}s; "
               f"report -> {Path(load_spec(spec_path).out_dir) / 'report.json'}")


@run_group.command("ablation")
@click.option("--spec", "spec_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--strict", is_flag=True, default=False,
              help="nonzero exit if the expected ordering is violated")
def run_ablation_cmd(spec_path, strict):
    """Four-row design-choice table with the CIDEr ordering check."""
    table = run_ablation_table(load_spec(spec_path), strict=strict)
    click.echo(table.text, nl=False)
    if not table.ordering_ok:
        click.echo("ordering check failed: " + "; ".join(table.violations))


@run_group.command("time-generalization")
@click.option("--spec", "spec_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
def run_time_cmd(spec_path):
    """Train before the cutoff, evaluate after it."""
    table = run_time_generalization(load_spec(spec_path))
    click.echo(table.text, nl=False)


@run_group.command("ke-studies")
@click.option("--spec", "spec_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
def run_ke_cmd(spec_path):
    """Structured vs flat vs single-stage retrieval comparison."""
    report = run_ke_studies(load_spec(spec_path))
    click.echo(report.text, nl=False)
    for row in report.recall_curve:
        click.echo(f"recall {row['fraction']:.2f} -> context score "
                   f"{row['context_score']:.4f}")


# ---------------------------------------------------------------- synth

@cli.group("synth")
def synth_group():
    """Generate the shipped synthetic corpora."""


@synth_group.command("main")
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.option("--seed", type=int, default=13, show_default=True)
@click.option("--samples", type=int, default=240, show_default=True)
def synth_main_cmd(out, seed, samples):
    """Micro-corpus with collision twins for the KE study."""
    dataset = synthetic.generate_corpus(
        synthetic.SyntheticConfig(n_samples=samples, seed=seed))
    paths = dataset.write(out)
    for name, path in paths.items():
        click.echo(f"{name}: {path}")


@synth_group.command("time-split")
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.option("--seed", type=int, default=13, show_default=True)
@click.option("--samples", type=int, default=240, show_default=True)
@click.option("--post", "n_post", type=int, default=40, show_default=True)
def synth_time_cmd(out, seed, samples, n_post):
    """Corpus straddling a 2017-01-01 cutoff, post-cutoff KB included."""
    dataset = synthetic.generate_time_split_corpus(
        synthetic.SyntheticConfig(n_samples=samples, seed=seed), n_post=n_post)
    paths = dataset.write(out)
    for name, path in paths.items():
        click.echo(f"{name}: {path}")


@synth_group.command("noise")
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.option("--seed", type=int, default=5, show_default=True)
@click.option("--samples", type=int, default=48, show_default=True)
def synth_noise_cmd(out, seed, samples):
    """Control corpus whose captions ignore the VI by construction."""
    dataset = synthetic.generate_noise_corpus(n_samples=samples, seed=seed)
    paths = dataset.write(out)
    for name, path in paths.items():
        click.echo(f"{name}: {path}")


# ---------------------------------------------------------------- entry

def main(argv=None) -> int:
    try:
        cli.main(args=argv, prog_name="views", standalone_mode=False)
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.ClickException as exc:
        exc.show()
        return 2
    except click.Abort:
        click.echo("aborted", err=True)
        return 130
    except StrictModeError as exc:
        click.echo(f"error: {exc}", err=True)
        return 4
    except (StageError, LeakageError) as exc:
        click.echo(f"error: {exc}", err=True)
        return 3
    except ViewsError as exc:
        click.echo(f"error: {exc}", err=True)
        return 2
    except (ValueError, OSError, json.JSONDecodeError) as exc:
        click.echo(f"error: {exc}", err=True)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
