#pragma once

#include <optional>
#include <string>

#include "meshgnn/mesh.hpp"

namespace meshgnn {

/// Node feature alternatives compared in the experiments.
enum class FeatureMode { kConstant, kPositional, kFpfh };

FeatureMode feature_mode_from_string(const std::string& name);
std::string to_string(FeatureMode mode);

/// Feature dimension per mode: constant 1, positional 3, fpfh 33.
int feature_dim(FeatureMode mode);

/// FPFH extraction parameters. Defaults are the reference settings:
/// 10 mm sampling radius, 100 neighbors, 11 bins per angle.
struct FpfhParams {
    double radius = 10.0;  // mm
    int max_neighbors = 100;
    int bins = 11;

    friend bool operator==(const FpfhParams&, const FpfhParams&) = default;
};

/// Angular variation of a point pair expressed in the source Darboux frame.
/// alpha and phi are cosines in [-1,1]; theta is radians in (-pi, pi].
struct DarbouxAngles {
    double alpha = 0.0;
    double phi = 0.0;
    double theta = 0.0;
};

/// Computes the Darboux-frame angles for a point pair. The source role goes
/// to the point whose normal makes the smaller angle with the connecting
/// line: if |n_r.d| < |n_k.d| the roles swap (ties keep p_r as source).
/// Returns nullopt when the frame is degenerate (connecting direction
/// parallel to the source normal); throws on coincident points.
std::optional<DarbouxAngles> darboux_angles(const Vec3& p_r, const Vec3& n_r,
                                            const Vec3& p_k, const Vec3& n_k);

/// Simple Point Feature Histogram of one query vertex: Darboux angles
/// against every neighbor, binned into three `bins`-wide histograms
/// (alpha, phi over [-1,1]; theta over (-pi,pi]), each normalized to sum 1
/// (all-zero when no valid pair), concatenated [alpha | phi | theta].
Eigen::VectorXd spfh(const std::vector<Vec3>& points, const std::vector<Vec3>& normals,
                     const NeighborIndex& neighbors, int query, int bins = 11);

/// Fast Point Feature Histogram matrix (n x 3*bins):
/// FPFH(p_r) = SPFH(p_r) + (1/N) * sum_k SPFH(p_k) / ||p_k - p_r||,
/// the sum ranging over the radius neighbors of p_r (distances in mm).
Eigen::MatrixXd fpfh(const Mesh& mesh, const FpfhParams& params = {});

/// Node feature matrix for the requested mode: constant n x 1 ones,
/// positional n x 3 raw coordinates (mm, no centering), or FPFH.
Eigen::MatrixXd node_features(const Mesh& mesh, FeatureMode mode,
                              const FpfhParams& params = {});

/// Per-edge normalized relative spherical coordinates, one row
/// (r_norm, theta_norm, phi_norm) in [0,1]^3 per directed edge. r is
/// normalized by the longest edge of this graph; zero-length edges emit
/// (0,0,0).
Eigen::MatrixXd edge_attributes(const std::vector<Vec3>& points,
                                const std::vector<Edge>& edges);

}  // namespace meshgnn
