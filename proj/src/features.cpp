#include "meshgnn/features.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace meshgnn {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kDegenerateFrameEps = 1e-12;

// Maps v in [lo, hi] to a bin in [0, bins); the upper boundary falls in the
// last bin.
int bin_of(double v, double lo, double hi, int bins) {
    const int b = static_cast<int>(std::floor((v - lo) / (hi - lo) * bins));
    return std::min(std::max(b, 0), bins - 1);
}

}  // namespace

FeatureMode feature_mode_from_string(const std::string& name) {
    if (name == "constant") return FeatureMode::kConstant;
    if (name == "positional") return FeatureMode::kPositional;
    if (name == "fpfh") return FeatureMode::kFpfh;
    throw std::invalid_argument("unknown feature mode \"" + name +
                                "\" (expected constant, positional, or fpfh)");
}

std::string to_string(FeatureMode mode) {
    switch (mode) {
        case FeatureMode::kConstant: return "constant";
        case FeatureMode::kPositional: return "positional";
        case FeatureMode::kFpfh: return "fpfh";
    }
    throw std::logic_error("invalid feature mode");
}

int feature_dim(FeatureMode mode) {
    switch (mode) {
        case FeatureMode::kConstant: return 1;
        case FeatureMode::kPositional: return 3;
        case FeatureMode::kFpfh: return 33;
    }
    throw std::logic_error("invalid feature mode");
}

std::optional<DarbouxAngles> darboux_angles(const Vec3& p_r, const Vec3& n_r,
                                            const Vec3& p_k, const Vec3& n_k) {
    Vec3 d = p_k - p_r;
    const double dist = d.norm();
    if (dist <= 0.0) throw std::invalid_argument("zero-length pair");
    Vec3 dir = d / dist;

    // Source selection: the point whose normal is closer to the connecting
    // line becomes the source. Ties keep p_r.
    Vec3 src_n = n_r;
    Vec3 dst_n = n_k;
    if (std::abs(n_r.dot(dir)) < std::abs(n_k.dot(dir))) {
        src_n = n_k;
        dst_n = n_r;
        dir = -dir;
    }

    const Vec3& u = src_n;
    Vec3 v = dir.cross(u);
    const double v_norm = v.norm();
    if (v_norm < kDegenerateFrameEps) return std::nullopt;
    v /= v_norm;
    const Vec3 w = u.cross(v);

    DarbouxAngles out;
    out.alpha = v.dot(dst_n);
    out.phi = u.dot(dir);
    out.theta = std::atan2(w.dot(dst_n), u.dot(dst_n));
    return out;
}

Eigen::VectorXd spfh(const std::vector<Vec3>& points, const std::vector<Vec3>& normals,
                     const NeighborIndex& neighbors, int query, int bins) {
    if (bins < 1) throw std::invalid_argument("bins must be >= 1");
    if (query < 0 || static_cast<std::size_t>(query) >= points.size())
        throw std::out_of_range("query vertex out of range");

    Eigen::VectorXd hist = Eigen::VectorXd::Zero(3 * bins);
    int pairs = 0;
    for (const Neighbor& nb : neighbors[static_cast<std::size_t>(query)]) {
        if (nb.distance <= 0.0) continue;  // coincident points, skip
        const auto angles = darboux_angles(points[static_cast<std::size_t>(query)],
                                           normals[static_cast<std::size_t>(query)],
                                           points[nb.index], normals[nb.index]);
        if (!angles) continue;  // degenerate frame, skip
        hist[bin_of(angles->alpha, -1.0, 1.0, bins)] += 1.0;
        hist[bins + bin_of(angles->phi, -1.0, 1.0, bins)] += 1.0;
        hist[2 * bins + bin_of(angles->theta, -kPi, kPi, bins)] += 1.0;
        ++pairs;
    }
    if (pairs > 0) hist /= static_cast<double>(pairs);
    return hist;
}

Eigen::MatrixXd fpfh(const Mesh& mesh, const FpfhParams& params) {
    const int n = static_cast<int>(mesh.vertices.size());
    const int dim = 3 * params.bins;
    Eigen::MatrixXd out(n, dim);
    if (n == 0) return out;

    const std::vector<Vec3> normals = vertex_normals(mesh);
    const NeighborIndex neighbors =
        radius_neighbors(mesh.vertices, params.radius, params.max_neighbors);

    Eigen::MatrixXd simple(n, dim);
    for (int i = 0; i < n; ++i)
        simple.row(i) = spfh(mesh.vertices, normals, neighbors, i, params.bins);

    for (int i = 0; i < n; ++i) {
        Eigen::VectorXd row = simple.row(i);
        const NeighborList& nbs = neighbors[static_cast<std::size_t>(i)];
        if (!nbs.empty()) {
            Eigen::VectorXd weighted = Eigen::VectorXd::Zero(dim);
            int counted = 0;
            for (const Neighbor& nb : nbs) {
                if (nb.distance <= 0.0) continue;  // zero-distance neighbor has no weight
                weighted += simple.row(nb.index).transpose() / nb.distance;
                ++counted;
            }
            if (counted > 0) row += weighted / static_cast<double>(counted);
        }
        out.row(i) = row;
    }
    return out;
}

Eigen::MatrixXd node_features(const Mesh& mesh, FeatureMode mode, const FpfhParams& params) {
    const auto n = static_cast<Eigen::Index>(mesh.vertices.size());
    switch (mode) {
        case FeatureMode::kConstant: return Eigen::MatrixXd::Ones(n, 1);
        case FeatureMode::kPositional: {
            Eigen::MatrixXd x(n, 3);
            for (Eigen::Index i = 0; i < n; ++i) x.row(i) = mesh.vertices[i];
            return x;
        }
        case FeatureMode::kFpfh: return fpfh(mesh, params);
    }
    throw std::logic_error("invalid feature mode");
}

Eigen::MatrixXd edge_attributes(const std::vector<Vec3>& points, const std::vector<Edge>& edges) {
    const auto n_edges = static_cast<Eigen::Index>(edges.size());
    Eigen::MatrixXd attrs(n_edges, 3);
    const auto n_points = static_cast<std::int32_t>(points.size());

    double max_len = 0.0;
    for (Eigen::Index e = 0; e < n_edges; ++e) {
        const Edge& edge = edges[static_cast<std::size_t>(e)];
        if (edge.src < 0 || edge.src >= n_points || edge.dst < 0 || edge.dst >= n_points)
            throw std::out_of_range("edge references invalid point index");
        max_len = std::max(max_len, (points[edge.dst] - points[edge.src]).norm());
    }

    for (Eigen::Index e = 0; e < n_edges; ++e) {
        const Edge& edge = edges[static_cast<std::size_t>(e)];
        const Vec3 delta = points[edge.dst] - points[edge.src];
        const double r = delta.norm();
        if (r <= 0.0) {
            attrs.row(e).setZero();
            continue;
        }
        const double polar = std::acos(std::clamp(delta.z() / r, -1.0, 1.0));
        const double azimuth = std::atan2(delta.y(), delta.x());
        attrs(e, 0) = max_len > 0.0 ? r / max_len : 0.0;
        attrs(e, 1) = polar / kPi;
        attrs(e, 2) = (azimuth + kPi) / (2.0 * kPi);
    }
    return attrs;
}

}  // namespace meshgnn
