"""Spatial graph models of whole-slide images for methylation state prediction."""

from ._methylgraph import (
    Error,
    Graph,
    IoError,
    Model,
    NumericError,
    ValidationError,
    auroc,
    average_precision,
    bootstrap_compare,
    build_graph,
    delaunay,
    gmm_binarize,
    group_labels,
    load_checkpoint,
    load_graph,
    make_model,
    ranking_loss,
    run_cli,
    save_graph,
    stratified_kfold,
)

__all__ = [
    "Error",
    "Graph",
    "IoError",
    "Model",
    "NumericError",
    "ValidationError",
    "auroc",
    "average_precision",
    "bootstrap_compare",
    "build_graph",
    "delaunay",
    "gmm_binarize",
    "group_labels",
    "load_checkpoint",
    "load_graph",
    "make_model",
    "ranking_loss",
    "run_cli",
    "save_graph",
    "stratified_kfold",
]
