// Python bindings for the meshgnn core: mesh I/O, FPFH features, graph
// assembly, the conv layers, and the training/evaluation pipeline.

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "meshgnn/pipeline.hpp"

namespace py = pybind11;
using namespace meshgnn;

namespace {

Eigen::MatrixXd vertices_to_matrix(const std::vector<Vec3>& vertices) {
    Eigen::MatrixXd m(static_cast<Eigen::Index>(vertices.size()), 3);
    for (Eigen::Index i = 0; i < m.rows(); ++i) m.row(i) = vertices[static_cast<std::size_t>(i)];
    return m;
}

std::vector<Vec3> matrix_to_vertices(const Eigen::MatrixXd& m) {
    if (m.cols() != 3) throw std::invalid_argument("expected an (n, 3) array");
    std::vector<Vec3> vertices(static_cast<std::size_t>(m.rows()));
    for (Eigen::Index i = 0; i < m.rows(); ++i) vertices[static_cast<std::size_t>(i)] = m.row(i);
    return vertices;
}

Eigen::MatrixXi faces_to_matrix(const std::vector<std::array<std::int32_t, 3>>& faces) {
    Eigen::MatrixXi m(static_cast<Eigen::Index>(faces.size()), 3);
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (int k = 0; k < 3; ++k) m(i, k) = faces[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)];
    return m;
}

std::vector<std::array<std::int32_t, 3>> matrix_to_faces(const Eigen::MatrixXi& m) {
    if (m.cols() != 3) throw std::invalid_argument("expected an (n, 3) integer array");
    std::vector<std::array<std::int32_t, 3>> faces(static_cast<std::size_t>(m.rows()));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        faces[static_cast<std::size_t>(i)] = {m(i, 0), m(i, 1), m(i, 2)};
    return faces;
}

std::vector<Edge> matrix_to_edges(const Eigen::MatrixXi& m) {
    if (m.cols() != 2) throw std::invalid_argument("expected an (e, 2) integer array");
    std::vector<Edge> edges(static_cast<std::size_t>(m.rows()));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        edges[static_cast<std::size_t>(i)] = {m(i, 0), m(i, 1)};
    return edges;
}

Eigen::MatrixXi edges_to_matrix(const std::vector<Edge>& edges) {
    Eigen::MatrixXi m(static_cast<Eigen::Index>(edges.size()), 2);
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        m(i, 0) = edges[static_cast<std::size_t>(i)].src;
        m(i, 1) = edges[static_cast<std::size_t>(i)].dst;
    }
    return m;
}

py::dict metrics_to_dict(const Metrics& m) {
    py::dict d;
    d["samples"] = m.n_samples;
    d["accuracy"] = m.accuracy;
    d["auc"] = m.degenerate ? py::object(py::none()) : py::object(py::float_(m.auc));
    py::list roc;
    for (const RocPoint& p : m.roc) roc.append(py::make_tuple(p.fpr, p.tpr));
    d["roc"] = roc;
    py::dict groups;
    for (const auto& [name, sub] : m.groups) groups[py::str(name)] = metrics_to_dict(sub);
    d["groups"] = groups;
    return d;
}

}  // namespace

PYBIND11_MODULE(_meshgnn, m) {
    m.doc() = "Multi-graph neural network shape classification on meshes";

    py::class_<Mesh>(m, "Mesh")
        .def(py::init([](const Eigen::MatrixXd& vertices, const Eigen::MatrixXi& faces) {
                 Mesh mesh{matrix_to_vertices(vertices), matrix_to_faces(faces)};
                 validate_mesh(mesh);
                 return mesh;
             }),
             py::arg("vertices"), py::arg("faces"))
        .def_property_readonly("vertices",
                               [](const Mesh& mesh) { return vertices_to_matrix(mesh.vertices); })
        .def_property_readonly("faces",
                               [](const Mesh& mesh) { return faces_to_matrix(mesh.faces); })
        .def("__repr__", [](const Mesh& mesh) {
            return "Mesh(" + std::to_string(mesh.vertex_count()) + " vertices, " +
                   std::to_string(mesh.face_count()) + " faces)";
        });

    m.def("load_off", &load_off, py::arg("path"), "Read an ASCII OFF triangle mesh");
    m.def("save_off", &save_off, py::arg("mesh"), py::arg("path"),
          "Write an ASCII OFF file (9 significant digits)");

    m.def(
        "vertex_normals",
        [](const Mesh& mesh) { return vertices_to_matrix(vertex_normals(mesh)); },
        py::arg("mesh"), "Area-weighted per-vertex unit normals");

    m.def(
        "radius_neighbors",
        [](const Eigen::MatrixXd& points, double radius, int max_neighbors) {
            const NeighborIndex index =
                radius_neighbors(matrix_to_vertices(points), radius, max_neighbors);
            py::list out;
            for (const NeighborList& list : index) {
                py::list entry;
                for (const Neighbor& nb : list)
                    entry.append(py::make_tuple(nb.index, nb.distance));
                out.append(entry);
            }
            return out;
        },
        py::arg("points"), py::arg("radius"), py::arg("max_neighbors"),
        "Per point: (index, distance) pairs within `radius` (mm), nearest first");

    m.def(
        "edges_from_faces",
        [](const Mesh& mesh) { return edges_to_matrix(edges_from_faces(mesh)); },
        py::arg("mesh"), "Symmetric directed edge list from face connectivity");

    m.def(
        "darboux_angles",
        [](const Vec3& p_r, const Vec3& n_r, const Vec3& p_k,
           const Vec3& n_k) -> py::object {
            const auto angles = darboux_angles(p_r, n_r, p_k, n_k);
            if (!angles) return py::none();
            return py::make_tuple(angles->alpha, angles->phi, angles->theta);
        },
        py::arg("p_r"), py::arg("n_r"), py::arg("p_k"), py::arg("n_k"),
        "(alpha, phi, theta) of a point pair, or None for a degenerate frame");

    m.def(
        "fpfh",
        [](const Mesh& mesh, double radius, int max_neighbors, int bins) {
            return fpfh(mesh, {radius, max_neighbors, bins});
        },
        py::arg("mesh"), py::arg("radius") = 10.0, py::arg("max_neighbors") = 100,
        py::arg("bins") = 11, "Fast Point Feature Histograms, one 3*bins row per vertex");

    m.def(
        "node_features",
        [](const Mesh& mesh, const std::string& mode, double radius, int max_neighbors) {
            return node_features(mesh, feature_mode_from_string(mode),
                                 {radius, max_neighbors, 11});
        },
        py::arg("mesh"), py::arg("mode"), py::arg("radius") = 10.0,
        py::arg("max_neighbors") = 100, "Node features: constant, positional, or fpfh");

    m.def(
        "edge_attributes",
        [](const Eigen::MatrixXd& points, const Eigen::MatrixXi& edges) {
            return edge_attributes(matrix_to_vertices(points), matrix_to_edges(edges));
        },
        py::arg("points"), py::arg("edges"),
        "Normalized relative spherical coordinates (r, theta, phi) per edge");

    m.def(
        "spline_basis",
        [](const Eigen::Vector3d& u, int kernel_size, int degree) {
            return spline_basis(u, kernel_size, degree);
        },
        py::arg("u"), py::arg("kernel_size") = 5, py::arg("degree") = 1,
        "Open B-spline tensor-product basis: (kernel index, weight) pairs");

    m.def(
        "gcn_conv_forward",
        [](const Eigen::MatrixXd& x, const Eigen::MatrixXi& edges, const Eigen::MatrixXd& w,
           const Eigen::MatrixXd& b) { return gcn_conv_forward(x, matrix_to_edges(edges), w, b); },
        py::arg("x"), py::arg("edges"), py::arg("weight"), py::arg("bias"));

    m.def(
        "graph_conv_forward",
        [](const Eigen::MatrixXd& x, const Eigen::MatrixXi& edges, const Eigen::MatrixXd& w1,
           const Eigen::MatrixXd& w2, const Eigen::MatrixXd& b) {
            return graph_conv_forward(x, matrix_to_edges(edges), w1, w2, b);
        },
        py::arg("x"), py::arg("edges"), py::arg("weight_root"), py::arg("weight_nbr"),
        py::arg("bias"));

    m.def(
        "spline_conv_forward",
        [](const Eigen::MatrixXd& x, const Eigen::MatrixXi& edges,
           const Eigen::MatrixXd& edge_attrs, const Eigen::MatrixXd& weight_kernel,
           const Eigen::MatrixXd& weight_root, const Eigen::MatrixXd& bias, int kernel_size) {
            return spline_conv_forward(x, matrix_to_edges(edges), edge_attrs, weight_kernel,
                                       weight_root, bias, kernel_size);
        },
        py::arg("x"), py::arg("edges"), py::arg("edge_attrs"), py::arg("weight_kernel"),
        py::arg("weight_root"), py::arg("bias"), py::arg("kernel_size") = 5);

    m.def(
        "global_mean_pool",
        [](const Eigen::MatrixXd& x, const std::vector<std::int32_t>& assignment,
           int n_graphs) { return global_mean_pool(x, assignment, n_graphs); },
        py::arg("x"), py::arg("assignment"), py::arg("n_graphs"));

    m.def(
        "roc_auc",
        [](const std::vector<double>& scores, const std::vector<int>& labels) {
            const auto [roc, auc] = roc_auc(scores, labels);
            py::list points;
            for (const RocPoint& p : roc) points.append(py::make_tuple(p.fpr, p.tpr));
            return py::make_tuple(points, auc);
        },
        py::arg("scores"), py::arg("labels"),
        "ROC sweep points and Mann-Whitney AUC (ties count half)");

    m.def(
        "gen_synthetic",
        [](int n_samples, int n_structures, double class_effect, const std::string& pose,
           const std::string& domain_shift, std::uint64_t seed, const std::filesystem::path& out) {
            SyntheticConfig config;
            config.n_samples = n_samples;
            config.n_structures = n_structures;
            config.class_effect = class_effect;
            config.pose_mode = pose_mode_from_string(pose);
            config.domain_shift = domain_shift_from_string(domain_shift);
            config.seed = seed;
            return gen_synthetic(config, out);
        },
        py::arg("n_samples"), py::arg("n_structures") = 4, py::arg("class_effect") = 0.3,
        py::arg("pose") = "aligned", py::arg("domain_shift") = "none", py::arg("seed") = 0,
        py::arg("out") = "synthetic", "Write a synthetic dataset; returns the manifest path");

    m.def(
        "train",
        [](const std::filesystem::path& manifest, const std::filesystem::path& out,
           const std::string& conv, const std::string& features, double aug,
           std::uint64_t seed, int epochs, int batch, double lr, int hidden, int threads,
           const std::filesystem::path& cache_dir) {
            TrainConfig config;
            config.seed = seed;
            config.batch_size = batch;
            config.lr = lr;
            config.max_epochs = epochs;
            config.aug_offset = aug;
            config.feature_mode = feature_mode_from_string(features);
            config.model.conv_kind = conv_kind_from_string(conv);
            config.model.hidden = hidden;
            config.threads = threads;
            config.cache_dir = cache_dir;
            const TrainResult result = train(config, load_manifest(manifest), out);
            py::dict d;
            d["checkpoint"] = result.checkpoint_path.string();
            d["best_epoch"] = result.best_epoch;
            d["best_val_auc"] = result.best_val_auc;
            py::list log;
            for (const EpochRecord& r : result.log)
                log.append(py::make_tuple(r.epoch, r.train_loss, r.val_auc));
            d["log"] = log;
            return d;
        },
        py::arg("manifest"), py::arg("out"), py::arg("conv") = "spline",
        py::arg("features") = "fpfh", py::arg("aug") = 0.0, py::arg("seed") = 0,
        py::arg("epochs") = 50, py::arg("batch") = 128, py::arg("lr") = 0.001,
        py::arg("hidden") = 32, py::arg("threads") = 0,
        py::arg("cache_dir") = std::filesystem::path{},
        "Train on a manifest; returns checkpoint path, best epoch, and the epoch log");

    m.def(
        "evaluate",
        [](const std::filesystem::path& checkpoint, const std::filesystem::path& manifest,
           int threads) { return metrics_to_dict(evaluate(checkpoint, manifest, threads)); },
        py::arg("checkpoint"), py::arg("manifest"), py::arg("threads") = 0,
        "ROC/AUC/accuracy plus per-group breakdowns as a dict");

    m.def(
        "predict",
        [](const std::filesystem::path& checkpoint,
           const std::vector<std::filesystem::path>& meshes) {
            return predict_probabilities(load_checkpoint(checkpoint), meshes);
        },
        py::arg("checkpoint"), py::arg("meshes"),
        "Class probabilities for one sample (N mesh files in structure order)");
}
