"""Python interface to the hmil library.

Documents are plain Python values (dicts, lists, scalars). Schemas and
extractors are JSON-compatible dicts; trained models are bundle bytes that
can be written to disk and read back by the ``hmil`` command.
"""

import json

from . import _core

__all__ = [
    "schema_of",
    "render_report",
    "suggest_extractor",
    "describe_batch",
    "train",
    "classes",
    "predict_proba",
    "evaluate",
]


def _dump(documents):
    return json.dumps(list(documents))


def schema_of(documents, max_distinct=1000, max_depth=64, threads=1):
    return json.loads(_core.schema_of(_dump(documents), max_distinct, max_depth, threads))


def render_report(schema):
    return _core.render_report(json.dumps(schema))


def suggest_extractor(schema, **options):
    return json.loads(_core.suggest_extractor(json.dumps(schema), **options))


def describe_batch(extractor, documents):
    return _core.describe_batch(json.dumps(extractor), _dump(documents))


def train(documents, labels, extractor=None, **options):
    """Trains a classifier; returns (bundle bytes, report dict).

    Without an extractor one is suggested from the documents' schema.
    """
    documents = list(documents)
    if extractor is None:
        extractor = suggest_extractor(schema_of(documents))
    bundle, report = _core.train(_dump(documents), list(labels), json.dumps(extractor), **options)
    return bundle, json.loads(report)


def classes(bundle):
    return _core.classes(bundle)


def predict_proba(bundle, documents):
    return _core.predict_proba(bundle, _dump(documents))


def evaluate(bundle, documents, labels):
    return json.loads(_core.evaluate(bundle, _dump(documents), list(labels)))
