"""Python bindings for the tagx graph explanation toolkit."""

import json as _json

from ._tagx import (
    Backend,
    BackendError,
    DataError,
    Error,
    GcnModel,
    Graph,
    Projector,
    ShapeError,
    StageError,
    cli,
    context_loss,
    contrastive_loss,
    embeddings,
    grad_check,
    load_dataset,
    load_gcn,
    make_backend,
    make_synthetic,
    make_two_cliques,
    predict_all,
    train_gcn,
    train_projector,
    tree_unique_nodes,
    tree_walk_count,
    write_dataset,
)
from . import _tagx


def explain(graph, node, gnn, projector, backend, **kwargs):
    """Explanation of one node as a dict."""
    return _json.loads(_tagx.explain(graph, node, gnn, projector, backend, **kwargs))


def evaluate(graph, gnn, projector=None, backend=None, **kwargs):
    """Benchmark report as a dict."""
    return _json.loads(_tagx.evaluate(graph, gnn, projector, backend, **kwargs))


def descriptor(backend):
    return _json.loads(backend.descriptor())
