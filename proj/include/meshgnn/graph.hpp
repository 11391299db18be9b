#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "meshgnn/features.hpp"
#include "meshgnn/mesh.hpp"
#include "meshgnn/random.hpp"

namespace meshgnn {

/// Graph of one anatomical structure: node features, directed edges,
/// per-edge attributes, and the retained vertex positions (mm) needed to
/// recompute features after augmentation.
struct Graph {
    Eigen::MatrixXd node_features;  // n x d
    std::vector<Edge> edges;
    Eigen::MatrixXd edge_attrs;     // edges x 3
    int structure_id = 0;
    std::vector<Vec3> node_positions;

    Eigen::Index node_count() const { return node_features.rows(); }
};

/// Group fields used for stratified evaluation.
struct SampleMetadata {
    double age = 0.0;  // years
    std::string sex;
    std::string group;
};

/// One labeled observation: exactly N structure graphs, ordered by
/// structure_id, plus the source meshes retained for augmentation.
struct Sample {
    std::string sample_id;
    int label = 0;
    std::vector<Graph> graphs;
    std::vector<Mesh> meshes;
    SampleMetadata metadata;
    FeatureMode feature_mode = FeatureMode::kConstant;
    FpfhParams fpfh_params;
};

/// Disjoint union of one structure's graphs across the batch samples.
struct StructureBatch {
    Eigen::MatrixXd node_features;
    std::vector<Edge> edges;
    Eigen::MatrixXd edge_attrs;
    std::vector<std::int32_t> node_sample;  // node -> sample position, non-decreasing
    int n_graphs = 0;
};

/// Mini-batch over samples: one disjoint union per structure plus labels.
struct Batch {
    std::vector<StructureBatch> structures;
    std::vector<int> labels;

    int size() const { return static_cast<int>(labels.size()); }
};

/// Builds the structure graph of one mesh: face-derived edges, node
/// features for the mode, spherical edge attributes.
Graph build_graph(const Mesh& mesh, FeatureMode mode, int structure_id,
                  const FpfhParams& params = {});

/// Assembles a labeled sample from exactly n_structures meshes in
/// structure order. Throws when the count is wrong.
Sample assemble_sample(std::vector<Mesh> meshes, int label, SampleMetadata metadata,
                       FeatureMode mode, int n_structures, std::string sample_id,
                       const FpfhParams& params = {});

/// Concatenates samples per structure with node index offsets. All samples
/// must share structure count and feature dimensions.
Batch make_batch(const std::vector<const Sample*>& samples);
Batch make_batch(const std::vector<Sample>& samples);

/// Splits a batch back into per-sample structure graphs (inverse of
/// make_batch up to the metadata a Batch does not carry).
std::vector<std::vector<Graph>> unbatch(const Batch& batch);

/// Node-jitter augmentation: every vertex of every structure mesh moves by
/// an independent uniform offset in [-max_offset, +max_offset] per
/// coordinate, and node features plus edge attributes are recomputed from
/// the perturbed positions (constant features are unaffected by position).
/// Topology is untouched. max_offset = 0 returns the sample unchanged.
Sample augment(const Sample& sample, double max_offset_mm, Rng& rng);

}  // namespace meshgnn
