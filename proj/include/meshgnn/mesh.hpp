#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace meshgnn {

using Vec3 = Eigen::Vector3d;

/// Triangle mesh. Vertex coordinates are millimetres; faces are
/// counter-clockwise vertex-index triples (CCW winding defines the
/// outward normal).
struct Mesh {
    std::vector<Vec3> vertices;
    std::vector<std::array<std::int32_t, 3>> faces;

    std::size_t vertex_count() const { return vertices.size(); }
    std::size_t face_count() const { return faces.size(); }
};

/// Directed graph edge between vertex indices.
struct Edge {
    std::int32_t src = 0;
    std::int32_t dst = 0;

    friend bool operator==(const Edge&, const Edge&) = default;
};

/// One radius-query hit: neighbor vertex index and Euclidean distance (mm).
struct Neighbor {
    std::int32_t index = 0;
    double distance = 0.0;
};

/// Per query point: neighbors sorted ascending by (distance, index),
/// excluding the query point itself, capped at max_neighbors.
using NeighborList = std::vector<Neighbor>;
using NeighborIndex = std::vector<NeighborList>;

/// Checks the Mesh invariants: face indices in range, no repeated index
/// within a face, finite coordinates. Throws std::runtime_error.
void validate_mesh(const Mesh& mesh);

/// Reads an ASCII OFF file. Strict triangle-only parser; comment (#) and
/// blank lines are ignored. Errors carry the offending line number.
Mesh load_off(const std::filesystem::path& path);

/// Writes ASCII OFF: "OFF", counts line, vertex lines with 9 significant
/// digits, face lines "3 i j k".
void save_off(const Mesh& mesh, const std::filesystem::path& path);

/// Per-vertex unit normals: normalized area-weighted sum of incident face
/// normals (face normal from CCW winding). Degenerate faces contribute
/// nothing; vertices with no non-degenerate incident face get (0,0,1).
std::vector<Vec3> vertex_normals(const Mesh& mesh);

/// Radius-bounded nearest neighbors for every point, capped at
/// max_neighbors nearest. Ties at the cap break by lower point index.
/// Backed by a uniform grid with cell size = radius.
NeighborIndex radius_neighbors(const std::vector<Vec3>& points, double radius,
                               int max_neighbors);

/// Directed edges from face connectivity: both (i,j) and (j,i) for every
/// undirected face edge, deduplicated, sorted by (src, dst).
std::vector<Edge> edges_from_faces(const Mesh& mesh);

}  // namespace meshgnn
