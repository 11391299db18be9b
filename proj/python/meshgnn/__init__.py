"""Multi-graph neural network shape classification on anatomical meshes."""

from ._meshgnn import (
    Mesh,
    darboux_angles,
    edge_attributes,
    edges_from_faces,
    evaluate,
    fpfh,
    gcn_conv_forward,
    gen_synthetic,
    global_mean_pool,
    graph_conv_forward,
    load_off,
    node_features,
    predict,
    radius_neighbors,
    roc_auc,
    save_off,
    spline_basis,
    spline_conv_forward,
    train,
    vertex_normals,
)

__all__ = [
    "Mesh",
    "darboux_angles",
    "edge_attributes",
    "edges_from_faces",
    "evaluate",
    "fpfh",
    "gcn_conv_forward",
    "gen_synthetic",
    "global_mean_pool",
    "graph_conv_forward",
    "load_off",
    "node_features",
    "predict",
    "radius_neighbors",
    "roc_auc",
    "save_off",
    "spline_basis",
    "spline_conv_forward",
    "train",
    "vertex_normals",
]
