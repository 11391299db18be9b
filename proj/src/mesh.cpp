#include "meshgnn/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

namespace meshgnn {

namespace {

[[noreturn]] void fail(const std::filesystem::path& path, std::size_t line, const std::string& what) {
    throw std::runtime_error(path.string() + ":" + std::to_string(line) + ": " + what);
}

// Strips comments and whitespace; returns false for lines to skip.
bool significant_line(std::string& line) {
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ' || line.back() == '\t'))
        line.pop_back();
    std::size_t start = 0;
    while (start < line.size() && (line[start] == ' ' || line[start] == '\t')) ++start;
    line.erase(0, start);
    return !line.empty();
}

std::vector<std::string> tokens_of(const std::string& line) {
    std::istringstream in(line);
    std::vector<std::string> toks;
    std::string t;
    while (in >> t) toks.push_back(std::move(t));
    return toks;
}

double parse_double(const std::string& tok, const std::filesystem::path& path, std::size_t line) {
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(tok, &used);
    } catch (const std::exception&) {
        fail(path, line, "expected a number, got \"" + tok + "\"");
    }
    if (used != tok.size()) fail(path, line, "expected a number, got \"" + tok + "\"");
    return v;
}

long parse_long(const std::string& tok, const std::filesystem::path& path, std::size_t line) {
    std::size_t used = 0;
    long v = 0;
    try {
        v = std::stol(tok, &used);
    } catch (const std::exception&) {
        fail(path, line, "expected an integer, got \"" + tok + "\"");
    }
    if (used != tok.size()) fail(path, line, "expected an integer, got \"" + tok + "\"");
    return v;
}

}  // namespace

void validate_mesh(const Mesh& mesh) {
    const auto nv = static_cast<std::int32_t>(mesh.vertices.size());
    for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
        if (!mesh.vertices[i].allFinite())
            throw std::runtime_error("vertex " + std::to_string(i) + " has non-finite coordinates");
    }
    for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
        const auto& face = mesh.faces[f];
        for (int k = 0; k < 3; ++k) {
            if (face[k] < 0 || face[k] >= nv)
                throw std::runtime_error("face " + std::to_string(f) + ": out-of-range index " +
                                         std::to_string(face[k]));
        }
        if (face[0] == face[1] || face[1] == face[2] || face[0] == face[2])
            throw std::runtime_error("face " + std::to_string(f) + ": repeated vertex index");
    }
}

Mesh load_off(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());

    std::string line;
    std::size_t line_no = 0;

    auto next_line = [&](std::string& out) -> bool {
        while (std::getline(in, line)) {
            ++line_no;
            if (significant_line(line)) {
                out = line;
                return true;
            }
        }
        return false;
    };

    std::string cur;
    if (!next_line(cur)) fail(path, line_no, "missing OFF magic");
    if (cur != "OFF") fail(path, line_no, "missing OFF magic (got \"" + cur + "\")");

    if (!next_line(cur)) fail(path, line_no, "missing counts line");
    const auto counts = tokens_of(cur);
    if (counts.size() != 3) fail(path, line_no, "counts line must be \"nv nf ne\"");
    const long nv = parse_long(counts[0], path, line_no);
    const long nf = parse_long(counts[1], path, line_no);
    parse_long(counts[2], path, line_no);  // edge count, ignored
    if (nv < 0 || nf < 0) fail(path, line_no, "negative count");

    Mesh mesh;
    mesh.vertices.reserve(static_cast<std::size_t>(nv));
    for (long i = 0; i < nv; ++i) {
        if (!next_line(cur)) fail(path, line_no, "vertex count mismatch: header says " +
                                                     std::to_string(nv) + ", body ends at " +
                                                     std::to_string(i));
        const auto toks = tokens_of(cur);
        if (toks.size() != 3)
            fail(path, line_no, "vertex count mismatch: expected vertex line \"x y z\"");
        Vec3 v(parse_double(toks[0], path, line_no), parse_double(toks[1], path, line_no),
               parse_double(toks[2], path, line_no));
        if (!v.allFinite()) fail(path, line_no, "non-finite vertex coordinate");
        mesh.vertices.push_back(v);
    }

    mesh.faces.reserve(static_cast<std::size_t>(nf));
    for (long f = 0; f < nf; ++f) {
        if (!next_line(cur)) fail(path, line_no, "face count mismatch: header says " +
                                                     std::to_string(nf) + ", body ends at " +
                                                     std::to_string(f));
        const auto toks = tokens_of(cur);
        if (toks.empty()) fail(path, line_no, "empty face line");
        const long arity = parse_long(toks[0], path, line_no);
        if (arity != 3) fail(path, line_no, "non-triangular face (" + std::to_string(arity) + " vertices)");
        if (toks.size() != 4) fail(path, line_no, "face line must be \"3 i j k\"");
        std::array<std::int32_t, 3> face{};
        for (int k = 0; k < 3; ++k) {
            const long idx = parse_long(toks[k + 1], path, line_no);
            if (idx < 0 || idx >= nv)
                fail(path, line_no, "out-of-range index " + std::to_string(idx));
            face[k] = static_cast<std::int32_t>(idx);
        }
        if (face[0] == face[1] || face[1] == face[2] || face[0] == face[2])
            fail(path, line_no, "repeated vertex index in face");
        mesh.faces.push_back(face);
    }

    if (next_line(cur)) fail(path, line_no, "trailing content after last face");
    return mesh;
}

void save_off(const Mesh& mesh, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "OFF\n" << mesh.vertices.size() << ' ' << mesh.faces.size() << " 0\n";
    char buf[96];
    for (const auto& v : mesh.vertices) {
        std::snprintf(buf, sizeof buf, "%.9g %.9g %.9g\n", v.x(), v.y(), v.z());
        out << buf;
    }
    for (const auto& f : mesh.faces) out << "3 " << f[0] << ' ' << f[1] << ' ' << f[2] << '\n';
    if (!out) throw std::runtime_error("write failed for " + path.string());
}

std::vector<Vec3> vertex_normals(const Mesh& mesh) {
    std::vector<Vec3> accum(mesh.vertices.size(), Vec3::Zero());
    for (const auto& face : mesh.faces) {
        const Vec3& a = mesh.vertices[face[0]];
        const Vec3& b = mesh.vertices[face[1]];
        const Vec3& c = mesh.vertices[face[2]];
        // Cross product of winding-order edges; its norm is twice the face
        // area, so accumulating it unnormalized is the area weighting.
        const Vec3 weighted = (b - a).cross(c - a);
        if (weighted.norm() <= 0.0) continue;  // degenerate face
        accum[face[0]] += weighted;
        accum[face[1]] += weighted;
        accum[face[2]] += weighted;
    }
    for (auto& n : accum) {
        const double len = n.norm();
        n = len > 0.0 ? Vec3(n / len) : Vec3(0, 0, 1);
    }
    return accum;
}

NeighborIndex radius_neighbors(const std::vector<Vec3>& points, double radius, int max_neighbors) {
    if (!(radius > 0.0)) throw std::invalid_argument("radius must be > 0");
    if (max_neighbors < 1) throw std::invalid_argument("max_neighbors must be >= 1");

    // Uniform grid with cell size = radius; candidates live in the 27
    // surrounding cells.
    struct CellKey {
        std::int64_t x, y, z;
        bool operator==(const CellKey&) const = default;
    };
    struct CellHash {
        std::size_t operator()(const CellKey& k) const {
            std::uint64_t h = 1469598103934665603ULL;
            for (std::int64_t v : {k.x, k.y, k.z}) {
                h ^= static_cast<std::uint64_t>(v);
                h *= 1099511628211ULL;
            }
            return static_cast<std::size_t>(h);
        }
    };

    auto cell_of = [radius](const Vec3& p) {
        return CellKey{static_cast<std::int64_t>(std::floor(p.x() / radius)),
                       static_cast<std::int64_t>(std::floor(p.y() / radius)),
                       static_cast<std::int64_t>(std::floor(p.z() / radius))};
    };

    std::unordered_map<CellKey, std::vector<std::int32_t>, CellHash> grid;
    grid.reserve(points.size());
    for (std::size_t i = 0; i < points.size(); ++i)
        grid[cell_of(points[i])].push_back(static_cast<std::int32_t>(i));

    NeighborIndex result(points.size());
    NeighborList candidates;
    for (std::size_t i = 0; i < points.size(); ++i) {
        const Vec3& q = points[i];
        const CellKey c = cell_of(q);
        candidates.clear();
        for (std::int64_t dx = -1; dx <= 1; ++dx)
            for (std::int64_t dy = -1; dy <= 1; ++dy)
                for (std::int64_t dz = -1; dz <= 1; ++dz) {
                    const auto it = grid.find(CellKey{c.x + dx, c.y + dy, c.z + dz});
                    if (it == grid.end()) continue;
                    for (std::int32_t j : it->second) {
                        if (static_cast<std::size_t>(j) == i) continue;
                        const double d = (points[j] - q).norm();
                        if (d <= radius) candidates.push_back({j, d});
                    }
                }
        std::sort(candidates.begin(), candidates.end(), [](const Neighbor& a, const Neighbor& b) {
            return a.distance != b.distance ? a.distance < b.distance : a.index < b.index;
        });
        if (candidates.size() > static_cast<std::size_t>(max_neighbors))
            candidates.resize(static_cast<std::size_t>(max_neighbors));
        result[i] = candidates;
    }
    return result;
}

std::vector<Edge> edges_from_faces(const Mesh& mesh) {
    std::vector<Edge> edges;
    edges.reserve(mesh.faces.size() * 6);
    for (const auto& face : mesh.faces) {
        for (int k = 0; k < 3; ++k) {
            const std::int32_t a = face[k];
            const std::int32_t b = face[(k + 1) % 3];
            if (a == b) continue;
            edges.push_back({a, b});
            edges.push_back({b, a});
        }
    }
    std::sort(edges.begin(), edges.end(), [](const Edge& a, const Edge& b) {
        return a.src != b.src ? a.src < b.src : a.dst < b.dst;
    });
    edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
    return edges;
}

}  // namespace meshgnn
