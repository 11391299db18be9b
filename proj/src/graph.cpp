#include "meshgnn/graph.hpp"

#include <stdexcept>

namespace meshgnn {

Graph build_graph(const Mesh& mesh, FeatureMode mode, int structure_id,
                  const FpfhParams& params) {
    validate_mesh(mesh);
    Graph g;
    g.structure_id = structure_id;
    g.edges = edges_from_faces(mesh);
    g.node_features = node_features(mesh, mode, params);
    g.edge_attrs = edge_attributes(mesh.vertices, g.edges);
    g.node_positions = mesh.vertices;
    return g;
}

Sample assemble_sample(std::vector<Mesh> meshes, int label, SampleMetadata metadata,
                       FeatureMode mode, int n_structures, std::string sample_id,
                       const FpfhParams& params) {
    if (static_cast<int>(meshes.size()) != n_structures)
        throw std::invalid_argument("expected " + std::to_string(n_structures) +
                                    " structure meshes, got " + std::to_string(meshes.size()));
    Sample sample;
    sample.sample_id = std::move(sample_id);
    sample.label = label;
    sample.metadata = std::move(metadata);
    sample.feature_mode = mode;
    sample.fpfh_params = params;
    sample.graphs.reserve(meshes.size());
    for (std::size_t s = 0; s < meshes.size(); ++s)
        sample.graphs.push_back(build_graph(meshes[s], mode, static_cast<int>(s), params));
    sample.meshes = std::move(meshes);
    return sample;
}

Batch make_batch(const std::vector<const Sample*>& samples) {
    if (samples.empty()) throw std::invalid_argument("empty batch");

    const std::size_t n_structures = samples.front()->graphs.size();
    const Eigen::Index feat_dim = samples.front()->graphs.empty()
                                      ? 0
                                      : samples.front()->graphs.front().node_features.cols();
    for (const Sample* s : samples) {
        if (s->graphs.size() != n_structures)
            throw std::invalid_argument("heterogeneous structure counts in batch");
        for (const Graph& g : s->graphs)
            if (g.node_features.cols() != feat_dim)
                throw std::invalid_argument("heterogeneous feature dimensions in batch");
    }

    Batch batch;
    batch.labels.reserve(samples.size());
    for (const Sample* s : samples) batch.labels.push_back(s->label);

    batch.structures.resize(n_structures);
    for (std::size_t st = 0; st < n_structures; ++st) {
        StructureBatch& u = batch.structures[st];
        u.n_graphs = static_cast<int>(samples.size());

        Eigen::Index total_nodes = 0;
        std::size_t total_edges = 0;
        for (const Sample* s : samples) {
            total_nodes += s->graphs[st].node_count();
            total_edges += s->graphs[st].edges.size();
        }

        u.node_features.resize(total_nodes, feat_dim);
        u.edge_attrs.resize(static_cast<Eigen::Index>(total_edges), 3);
        u.edges.reserve(total_edges);
        u.node_sample.reserve(static_cast<std::size_t>(total_nodes));

        Eigen::Index node_offset = 0;
        Eigen::Index edge_offset = 0;
        for (std::size_t si = 0; si < samples.size(); ++si) {
            const Graph& g = samples[si]->graphs[st];
            const Eigen::Index n = g.node_count();
            u.node_features.middleRows(node_offset, n) = g.node_features;
            for (Eigen::Index i = 0; i < n; ++i)
                u.node_sample.push_back(static_cast<std::int32_t>(si));
            for (const Edge& e : g.edges)
                u.edges.push_back({e.src + static_cast<std::int32_t>(node_offset),
                                   e.dst + static_cast<std::int32_t>(node_offset)});
            if (g.edge_attrs.rows() > 0)
                u.edge_attrs.middleRows(edge_offset, g.edge_attrs.rows()) = g.edge_attrs;
            node_offset += n;
            edge_offset += g.edge_attrs.rows();
        }
    }
    return batch;
}

Batch make_batch(const std::vector<Sample>& samples) {
    std::vector<const Sample*> ptrs;
    ptrs.reserve(samples.size());
    for (const Sample& s : samples) ptrs.push_back(&s);
    return make_batch(ptrs);
}

std::vector<std::vector<Graph>> unbatch(const Batch& batch) {
    const int n_samples = batch.size();
    std::vector<std::vector<Graph>> out(static_cast<std::size_t>(n_samples));
    for (auto& graphs : out) graphs.resize(batch.structures.size());

    for (std::size_t st = 0; st < batch.structures.size(); ++st) {
        const StructureBatch& u = batch.structures[st];

        // Assignment is non-decreasing, so each sample owns a contiguous
        // node range.
        std::vector<Eigen::Index> start(static_cast<std::size_t>(n_samples) + 1, 0);
        std::vector<Eigen::Index> count(static_cast<std::size_t>(n_samples), 0);
        for (std::int32_t s : u.node_sample) ++count[static_cast<std::size_t>(s)];
        for (int s = 0; s < n_samples; ++s)
            start[static_cast<std::size_t>(s) + 1] =
                start[static_cast<std::size_t>(s)] + count[static_cast<std::size_t>(s)];

        for (int s = 0; s < n_samples; ++s) {
            Graph& g = out[static_cast<std::size_t>(s)][st];
            g.structure_id = static_cast<int>(st);
            g.node_features =
                u.node_features.middleRows(start[static_cast<std::size_t>(s)],
                                           count[static_cast<std::size_t>(s)]);
        }

        std::vector<std::vector<Edge>> edges_per(static_cast<std::size_t>(n_samples));
        std::vector<std::vector<Eigen::Index>> attr_rows(static_cast<std::size_t>(n_samples));
        for (std::size_t e = 0; e < u.edges.size(); ++e) {
            const Edge& edge = u.edges[e];
            const std::int32_t s = u.node_sample[static_cast<std::size_t>(edge.src)];
            const Eigen::Index base = start[static_cast<std::size_t>(s)];
            edges_per[static_cast<std::size_t>(s)].push_back(
                {edge.src - static_cast<std::int32_t>(base),
                 edge.dst - static_cast<std::int32_t>(base)});
            attr_rows[static_cast<std::size_t>(s)].push_back(static_cast<Eigen::Index>(e));
        }
        for (int s = 0; s < n_samples; ++s) {
            Graph& g = out[static_cast<std::size_t>(s)][st];
            g.edges = std::move(edges_per[static_cast<std::size_t>(s)]);
            g.edge_attrs.resize(static_cast<Eigen::Index>(g.edges.size()), 3);
            for (std::size_t r = 0; r < attr_rows[static_cast<std::size_t>(s)].size(); ++r)
                g.edge_attrs.row(static_cast<Eigen::Index>(r)) =
                    u.edge_attrs.row(attr_rows[static_cast<std::size_t>(s)][r]);
        }
    }
    return out;
}

Sample augment(const Sample& sample, double max_offset_mm, Rng& rng) {
    if (max_offset_mm < 0.0) throw std::invalid_argument("max_offset must be >= 0");
    if (max_offset_mm == 0.0) return sample;

    Sample out;
    out.sample_id = sample.sample_id;
    out.label = sample.label;
    out.metadata = sample.metadata;
    out.feature_mode = sample.feature_mode;
    out.fpfh_params = sample.fpfh_params;
    out.meshes = sample.meshes;
    for (Mesh& mesh : out.meshes)
        for (Vec3& v : mesh.vertices)
            for (int c = 0; c < 3; ++c)
                v[c] += rng.uniform(-max_offset_mm, max_offset_mm);
    out.graphs.reserve(out.meshes.size());
    for (std::size_t s = 0; s < out.meshes.size(); ++s)
        out.graphs.push_back(build_graph(out.meshes[s], out.feature_mode,
                                         static_cast<int>(s), out.fpfh_params));
    return out;
}

}  // namespace meshgnn
