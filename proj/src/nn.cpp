#include "meshgnn/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace meshgnn {

namespace {

Eigen::MatrixXd relu(const Eigen::MatrixXd& m) { return m.cwiseMax(0.0); }

// dL/d(pre-activation) from dL/d(activation) and the pre-activation sign.
Eigen::MatrixXd relu_backward(const Eigen::MatrixXd& pre, const Eigen::MatrixXd& d_act) {
    return (pre.array() > 0.0).cast<double>() * d_act.array();
}

void check_bias(const Eigen::MatrixXd& bias, Eigen::Index d_out, const char* where) {
    if (bias.rows() != 1 || bias.cols() != d_out)
        throw std::invalid_argument(std::string(where) + ": bias must be 1 x d_out");
}

// ---- GCN normalization ------------------------------------------------

// Coefficients of S = D^{-1/2} (A+I) D^{-1/2} for a binary adjacency built
// from the (deduplicated) directed edge list; reused across layers.
struct GcnContext {
    std::vector<Edge> edges;         // deduplicated
    std::vector<double> edge_coef;   // per edge (j->i): 1/sqrt(deg_i deg_j)
    Eigen::VectorXd self_coef;       // per node: 1/deg_i
};

GcnContext make_gcn_context(Eigen::Index n, const std::vector<Edge>& edges) {
    GcnContext ctx;
    ctx.edges = edges;
    std::sort(ctx.edges.begin(), ctx.edges.end(), [](const Edge& a, const Edge& b) {
        return a.src != b.src ? a.src < b.src : a.dst < b.dst;
    });
    ctx.edges.erase(std::unique(ctx.edges.begin(), ctx.edges.end()), ctx.edges.end());

    Eigen::VectorXd degree = Eigen::VectorXd::Ones(n);  // self-loop
    for (const Edge& e : ctx.edges) {
        if (e.src < 0 || e.src >= n || e.dst < 0 || e.dst >= n)
            throw std::out_of_range("edge index out of range");
        degree[e.dst] += 1.0;
    }

    ctx.edge_coef.reserve(ctx.edges.size());
    for (const Edge& e : ctx.edges)
        ctx.edge_coef.push_back(1.0 / std::sqrt(degree[e.dst] * degree[e.src]));
    ctx.self_coef = degree.cwiseInverse();
    return ctx;
}

// Y = S M
Eigen::MatrixXd gcn_apply(const GcnContext& ctx, const Eigen::MatrixXd& m) {
    Eigen::MatrixXd y = ctx.self_coef.asDiagonal() * m;
    for (std::size_t e = 0; e < ctx.edges.size(); ++e)
        y.row(ctx.edges[e].dst) += ctx.edge_coef[e] * m.row(ctx.edges[e].src);
    return y;
}

// Y = S^T M
Eigen::MatrixXd gcn_apply_transposed(const GcnContext& ctx, const Eigen::MatrixXd& m) {
    Eigen::MatrixXd y = ctx.self_coef.asDiagonal() * m;
    for (std::size_t e = 0; e < ctx.edges.size(); ++e)
        y.row(ctx.edges[e].src) += ctx.edge_coef[e] * m.row(ctx.edges[e].dst);
    return y;
}

// ---- spline basis ------------------------------------------------------

// Per-dimension open degree-1 knot: lower index and fractional position.
struct DimKnot {
    int lower = 0;
    double frac = 0.0;
};

DimKnot dim_knot(double v, int kernel_size) {
    if (!(v >= 0.0 && v <= 1.0)) throw std::domain_error("pseudo-coordinate outside [0,1]");
    const double pos = v * (kernel_size - 1);
    const int lower = std::min(static_cast<int>(std::floor(pos)), kernel_size - 2);
    return {lower, pos - lower};
}

// Edges bucketed by B-spline cell. All edges of a cell share the same 8
// kernel-index corners, so messages and kernel gradients become per-cell
// matrix products instead of per-edge rank-1 updates.
struct SplinePlan {
    struct Cell {
        std::array<int, 8> corner{};          // kernel indices of the cell corners
        std::vector<std::int32_t> edge_id;    // rows into the edge list
        Eigen::MatrixXd weight;               // edges x 8 corner weights
    };
    std::vector<Cell> cells;
};

SplinePlan build_spline_plan(const Eigen::MatrixXd& edge_attrs, int kernel_size) {
    if (edge_attrs.cols() != 3 && edge_attrs.rows() > 0)
        throw std::invalid_argument("edge attributes must have 3 columns");
    const int per_dim = kernel_size - 1;
    std::vector<std::vector<std::int32_t>> buckets(
        static_cast<std::size_t>(per_dim) * per_dim * per_dim);
    std::vector<std::array<DimKnot, 3>> knots(static_cast<std::size_t>(edge_attrs.rows()));
    for (Eigen::Index e = 0; e < edge_attrs.rows(); ++e) {
        auto& k = knots[static_cast<std::size_t>(e)];
        for (int d = 0; d < 3; ++d) k[d] = dim_knot(edge_attrs(e, d), kernel_size);
        const std::size_t cell = static_cast<std::size_t>(k[0].lower) +
                                 static_cast<std::size_t>(per_dim) *
                                     (static_cast<std::size_t>(k[1].lower) +
                                      static_cast<std::size_t>(per_dim) *
                                          static_cast<std::size_t>(k[2].lower));
        buckets[cell].push_back(static_cast<std::int32_t>(e));
    }

    SplinePlan plan;
    for (std::size_t cell = 0; cell < buckets.size(); ++cell) {
        if (buckets[cell].empty()) continue;
        SplinePlan::Cell c;
        const int l0 = static_cast<int>(cell) % per_dim;
        const int l1 = static_cast<int>(cell) / per_dim % per_dim;
        const int l2 = static_cast<int>(cell) / (per_dim * per_dim);
        for (int b = 0; b < 8; ++b)
            c.corner[static_cast<std::size_t>(b)] =
                (l0 + (b & 1)) + kernel_size * ((l1 + (b >> 1 & 1)) +
                                                kernel_size * (l2 + (b >> 2 & 1)));
        c.edge_id = std::move(buckets[cell]);
        c.weight.resize(static_cast<Eigen::Index>(c.edge_id.size()), 8);
        for (std::size_t i = 0; i < c.edge_id.size(); ++i) {
            const auto& k = knots[static_cast<std::size_t>(c.edge_id[i])];
            for (int b = 0; b < 8; ++b)
                c.weight(static_cast<Eigen::Index>(i), b) =
                    ((b & 1) ? k[0].frac : 1.0 - k[0].frac) *
                    ((b >> 1 & 1) ? k[1].frac : 1.0 - k[1].frac) *
                    ((b >> 2 & 1) ? k[2].frac : 1.0 - k[2].frac);
        }
        plan.cells.push_back(std::move(c));
    }
    return plan;
}

// Messages only (no root/bias): row i accumulates
// sum_{(j->i)} sum_b w_b W_{corner_b}^T x_j, cell by cell.
Eigen::MatrixXd spline_messages(const Eigen::MatrixXd& x, const std::vector<Edge>& edges,
                                const SplinePlan& plan, const Eigen::MatrixXd& weight_kernel) {
    const Eigen::Index d_in = x.cols();
    const Eigen::Index d_out = weight_kernel.cols();
    Eigen::MatrixXd y = Eigen::MatrixXd::Zero(x.rows(), d_out);
    Eigen::MatrixXd gathered, messages;
    for (const SplinePlan::Cell& cell : plan.cells) {
        const auto m = static_cast<Eigen::Index>(cell.edge_id.size());
        gathered.resize(m, d_in);
        for (Eigen::Index i = 0; i < m; ++i)
            gathered.row(i) = x.row(edges[static_cast<std::size_t>(cell.edge_id[i])].src);
        messages.setZero(m, d_out);
        for (int b = 0; b < 8; ++b)
            messages.noalias() +=
                cell.weight.col(b).asDiagonal() *
                (gathered * weight_kernel.middleRows(cell.corner[static_cast<std::size_t>(b)] * d_in, d_in));
        for (Eigen::Index i = 0; i < m; ++i)
            y.row(edges[static_cast<std::size_t>(cell.edge_id[i])].dst) += messages.row(i);
    }
    return y;
}

// Adjoint of spline_messages: accumulates the kernel gradient and the
// input gradient (d_x must be pre-sized; contributions are added).
void spline_messages_backward(const Eigen::MatrixXd& x, const std::vector<Edge>& edges,
                              const SplinePlan& plan, const Eigen::MatrixXd& weight_kernel,
                              const Eigen::MatrixXd& d_y, Eigen::MatrixXd& d_weight_kernel,
                              Eigen::MatrixXd& d_x) {
    const Eigen::Index d_in = x.cols();
    Eigen::MatrixXd gathered, d_msg, scaled, d_gathered;
    for (const SplinePlan::Cell& cell : plan.cells) {
        const auto m = static_cast<Eigen::Index>(cell.edge_id.size());
        gathered.resize(m, d_in);
        d_msg.resize(m, d_y.cols());
        for (Eigen::Index i = 0; i < m; ++i) {
            const Edge& e = edges[static_cast<std::size_t>(cell.edge_id[i])];
            gathered.row(i) = x.row(e.src);
            d_msg.row(i) = d_y.row(e.dst);
        }
        d_gathered.setZero(m, d_in);
        for (int b = 0; b < 8; ++b) {
            const Eigen::Index block = cell.corner[static_cast<std::size_t>(b)] * d_in;
            scaled.noalias() = cell.weight.col(b).asDiagonal() * d_msg;
            d_weight_kernel.middleRows(block, d_in).noalias() += gathered.transpose() * scaled;
            d_gathered.noalias() += scaled * weight_kernel.middleRows(block, d_in).transpose();
        }
        for (Eigen::Index i = 0; i < m; ++i)
            d_x.row(edges[static_cast<std::size_t>(cell.edge_id[i])].src) += d_gathered.row(i);
    }
}

// ---- canonical parameter layout -----------------------------------------

struct TensorSpec {
    std::string name;
    Eigen::Index rows;
    Eigen::Index cols;
    Eigen::Index fan_in;  // 0 for biases (zero-initialized)
};

std::vector<TensorSpec> tensor_specs(const ModelConfig& c) {
    std::vector<TensorSpec> specs;
    const Eigen::Index k3 = static_cast<Eigen::Index>(c.spline_kernel_size) *
                            c.spline_kernel_size * c.spline_kernel_size;
    for (int l = 0; l < c.conv_layers; ++l) {
        const Eigen::Index d_in = l == 0 ? c.input_dim : c.hidden;
        const Eigen::Index d_out = c.hidden;
        const std::string prefix = "conv" + std::to_string(l) + ".";
        switch (c.conv_kind) {
            case ConvKind::kGcn:
                specs.push_back({prefix + "weight", d_in, d_out, d_in});
                break;
            case ConvKind::kGraphConv:
                specs.push_back({prefix + "weight_root", d_in, d_out, d_in});
                specs.push_back({prefix + "weight_nbr", d_in, d_out, d_in});
                break;
            case ConvKind::kSpline:
                specs.push_back({prefix + "weight_kernel", k3 * d_in, d_out, d_in});
                specs.push_back({prefix + "weight_root", d_in, d_out, d_in});
                break;
        }
        specs.push_back({prefix + "bias", 1, d_out, 0});
    }
    const Eigen::Index concat_dim = static_cast<Eigen::Index>(c.n_structures) * c.hidden;
    specs.push_back({"fc_hidden.weight", concat_dim, c.hidden, concat_dim});
    specs.push_back({"fc_hidden.bias", 1, c.hidden, 0});
    specs.push_back({"fc_out.weight", c.hidden, c.n_classes, c.hidden});
    specs.push_back({"fc_out.bias", 1, c.n_classes, 0});
    return specs;
}

Eigen::MatrixXd one_hot_rows(const std::vector<int>& labels, Eigen::Index n_classes) {
    Eigen::MatrixXd y = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(labels.size()), n_classes);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= n_classes)
            throw std::out_of_range("label " + std::to_string(labels[i]) +
                                    " out of range for " + std::to_string(n_classes) + " classes");
        y(static_cast<Eigen::Index>(i), labels[i]) = 1.0;
    }
    return y;
}

}  // namespace

ConvKind conv_kind_from_string(const std::string& name) {
    if (name == "gcn") return ConvKind::kGcn;
    if (name == "graphconv") return ConvKind::kGraphConv;
    if (name == "spline") return ConvKind::kSpline;
    throw std::invalid_argument("unknown conv kind \"" + name +
                                "\" (expected gcn, graphconv, or spline)");
}

std::string to_string(ConvKind kind) {
    switch (kind) {
        case ConvKind::kGcn: return "gcn";
        case ConvKind::kGraphConv: return "graphconv";
        case ConvKind::kSpline: return "spline";
    }
    throw std::logic_error("invalid conv kind");
}

void validate_config(const ModelConfig& c) {
    if (c.hidden < 1) throw std::invalid_argument("hidden must be >= 1");
    if (c.conv_layers != 3) throw std::invalid_argument("conv_layers is fixed at 3");
    if (c.n_structures < 1) throw std::invalid_argument("n_structures must be >= 1");
    if (c.n_classes < 2) throw std::invalid_argument("n_classes must be >= 2");
    if (c.input_dim < 1) throw std::invalid_argument("input_dim must be >= 1");
    if (c.spline_kernel_size < 2) throw std::invalid_argument("spline_kernel_size must be >= 2");
    if (c.spline_degree != 1) throw std::invalid_argument("only spline degree 1 is supported");
}

Eigen::MatrixXd& ModelParameters::at(std::string_view name) {
    for (auto& t : tensors)
        if (t.name == name) return t.value;
    throw std::out_of_range("no parameter tensor named \"" + std::string(name) + "\"");
}

const Eigen::MatrixXd& ModelParameters::at(std::string_view name) const {
    for (const auto& t : tensors)
        if (t.name == name) return t.value;
    throw std::out_of_range("no parameter tensor named \"" + std::string(name) + "\"");
}

bool ModelParameters::has(std::string_view name) const {
    for (const auto& t : tensors)
        if (t.name == name) return true;
    return false;
}

Eigen::Index ModelParameters::size() const {
    Eigen::Index n = 0;
    for (const auto& t : tensors) n += t.value.size();
    return n;
}

ModelParameters init_parameters(const ModelConfig& config, Rng& rng) {
    validate_config(config);
    ModelParameters params;
    for (const TensorSpec& spec : tensor_specs(config)) {
        Eigen::MatrixXd value(spec.rows, spec.cols);
        if (spec.fan_in == 0) {
            value.setZero();
        } else {
            const double bound = 1.0 / std::sqrt(static_cast<double>(spec.fan_in));
            for (Eigen::Index r = 0; r < spec.rows; ++r)
                for (Eigen::Index c = 0; c < spec.cols; ++c)
                    value(r, c) = rng.uniform(-bound, bound);
        }
        params.tensors.push_back({spec.name, std::move(value)});
    }
    return params;
}

ModelParameters zeros_like(const ModelParameters& params) {
    ModelParameters out;
    out.tensors.reserve(params.tensors.size());
    for (const auto& t : params.tensors)
        out.tensors.push_back({t.name, Eigen::MatrixXd::Zero(t.value.rows(), t.value.cols())});
    return out;
}

AdamState make_adam_state(const ModelParameters& params) {
    return AdamState{zeros_like(params), zeros_like(params), 0};
}

void adam_step(ModelParameters& params, const ModelParameters& grads, AdamState& state,
               double lr, double beta1, double beta2, double eps) {
    if (params.tensors.size() != grads.tensors.size() ||
        params.tensors.size() != state.m.tensors.size())
        throw std::invalid_argument("adam_step: mismatched tensor collections");
    state.step += 1;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.tensors.size(); ++i) {
        auto& p = params.tensors[i].value;
        const auto& g = grads.tensors[i].value;
        auto& m = state.m.tensors[i].value;
        auto& v = state.v.tensors[i].value;
        if (p.rows() != g.rows() || p.cols() != g.cols())
            throw std::invalid_argument("adam_step: gradient shape mismatch for " +
                                        params.tensors[i].name);
        m = beta1 * m + (1.0 - beta1) * g;
        v = beta2 * v + (1.0 - beta2) * g.cwiseProduct(g);
        p.array() -= lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + eps);
    }
}

Eigen::MatrixXd gcn_conv_forward(const Eigen::MatrixXd& x, const std::vector<Edge>& edges,
                                 const Eigen::MatrixXd& weight, const Eigen::MatrixXd& bias) {
    if (x.cols() != weight.rows()) throw std::invalid_argument("gcn_conv: shape mismatch");
    check_bias(bias, weight.cols(), "gcn_conv");
    const GcnContext ctx = make_gcn_context(x.rows(), edges);
    Eigen::MatrixXd y = gcn_apply(ctx, x * weight);
    y.rowwise() += bias.row(0);
    return y;
}

Eigen::MatrixXd graph_conv_forward(const Eigen::MatrixXd& x, const std::vector<Edge>& edges,
                                   const Eigen::MatrixXd& weight_root,
                                   const Eigen::MatrixXd& weight_nbr,
                                   const Eigen::MatrixXd& bias) {
    if (x.cols() != weight_root.rows() || x.cols() != weight_nbr.rows() ||
        weight_root.cols() != weight_nbr.cols())
        throw std::invalid_argument("graph_conv: shape mismatch");
    check_bias(bias, weight_root.cols(), "graph_conv");
    Eigen::MatrixXd nbr_sum = Eigen::MatrixXd::Zero(x.rows(), x.cols());
    for (const Edge& e : edges) {
        if (e.src < 0 || e.src >= x.rows() || e.dst < 0 || e.dst >= x.rows())
            throw std::out_of_range("edge index out of range");
        nbr_sum.row(e.dst) += x.row(e.src);
    }
    Eigen::MatrixXd y = x * weight_root + nbr_sum * weight_nbr;
    y.rowwise() += bias.row(0);
    return y;
}

std::vector<std::pair<int, double>> spline_basis(const Eigen::Vector3d& u, int kernel_size,
                                                 int degree) {
    if (kernel_size < 2) throw std::invalid_argument("kernel_size must be >= 2");
    if (degree != 1) throw std::invalid_argument("only spline degree 1 is supported");
    std::array<DimKnot, 3> knots;
    for (int d = 0; d < 3; ++d) knots[static_cast<std::size_t>(d)] = dim_knot(u[d], kernel_size);
    std::vector<std::pair<int, double>> out;
    out.reserve(8);
    for (int b = 0; b < 8; ++b) {
        const double w = ((b & 1) ? knots[0].frac : 1.0 - knots[0].frac) *
                         ((b >> 1 & 1) ? knots[1].frac : 1.0 - knots[1].frac) *
                         ((b >> 2 & 1) ? knots[2].frac : 1.0 - knots[2].frac);
        if (w <= 0.0) continue;
        const int index = (knots[0].lower + (b & 1)) +
                          kernel_size * ((knots[1].lower + (b >> 1 & 1)) +
                                         kernel_size * (knots[2].lower + (b >> 2 & 1)));
        out.emplace_back(index, w);
    }
    return out;
}

Eigen::MatrixXd spline_conv_forward(const Eigen::MatrixXd& x, const std::vector<Edge>& edges,
                                    const Eigen::MatrixXd& edge_attrs,
                                    const Eigen::MatrixXd& weight_kernel,
                                    const Eigen::MatrixXd& weight_root,
                                    const Eigen::MatrixXd& bias, int kernel_size) {
    const Eigen::Index d_in = x.cols();
    const Eigen::Index k3 =
        static_cast<Eigen::Index>(kernel_size) * kernel_size * kernel_size;
    if (weight_root.rows() != d_in || weight_kernel.rows() != k3 * d_in ||
        weight_kernel.cols() != weight_root.cols())
        throw std::invalid_argument("spline_conv: shape mismatch");
    if (edge_attrs.rows() != static_cast<Eigen::Index>(edges.size()) || edge_attrs.cols() != 3)
        throw std::invalid_argument("spline_conv: edge_attrs must be edges x 3");
    check_bias(bias, weight_root.cols(), "spline_conv");
    for (const Edge& e : edges)
        if (e.src < 0 || e.src >= x.rows() || e.dst < 0 || e.dst >= x.rows())
            throw std::out_of_range("edge index out of range");
    const SplinePlan plan = build_spline_plan(edge_attrs, kernel_size);
    Eigen::MatrixXd y = spline_messages(x, edges, plan, weight_kernel);
    y.noalias() += x * weight_root;
    y.rowwise() += bias.row(0);
    return y;
}

Eigen::MatrixXd global_mean_pool(const Eigen::MatrixXd& x,
                                 const std::vector<std::int32_t>& assignment, int n_graphs) {
    if (static_cast<Eigen::Index>(assignment.size()) != x.rows())
        throw std::invalid_argument("global_mean_pool: assignment length mismatch");
    Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(n_graphs, x.cols());
    Eigen::VectorXd count = Eigen::VectorXd::Zero(n_graphs);
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const std::int32_t g = assignment[static_cast<std::size_t>(i)];
        if (g < 0 || g >= n_graphs) throw std::out_of_range("assignment value out of range");
        sum.row(g) += x.row(i);
        count[g] += 1.0;
    }
    for (Eigen::Index g = 0; g < n_graphs; ++g)
        if (count[g] > 0.0) sum.row(g) /= count[g];
    return sum;
}

Eigen::MatrixXd model_forward(const ModelParameters& params, const ModelConfig& config,
                              const Batch& batch, ForwardTape* tape) {
    validate_config(config);
    if (static_cast<int>(batch.structures.size()) != config.n_structures)
        throw std::invalid_argument(
            "structure count mismatch: config n_structures=" +
            std::to_string(config.n_structures) + ", batch has " +
            std::to_string(batch.structures.size()));

    const int n_batch = batch.size();
    const Eigen::Index hidden = config.hidden;
    Eigen::MatrixXd concat(n_batch, static_cast<Eigen::Index>(config.n_structures) * hidden);

    ForwardTape local;
    ForwardTape& t = tape ? *tape : local;
    t.structures.assign(static_cast<std::size_t>(config.n_structures), StructureTape{});

    for (int st = 0; st < config.n_structures; ++st) {
        const StructureBatch& sb = batch.structures[static_cast<std::size_t>(st)];
        if (sb.node_features.cols() != config.input_dim)
            throw std::invalid_argument("input_dim mismatch: config input_dim=" +
                                        std::to_string(config.input_dim) + ", batch features have " +
                                        std::to_string(sb.node_features.cols()) + " columns");
        StructureTape& stape = t.structures[static_cast<std::size_t>(st)];

        // Per-structure context shared by the three layers.
        GcnContext gcn_ctx;
        SplinePlan plan;
        if (config.conv_kind == ConvKind::kGcn)
            gcn_ctx = make_gcn_context(sb.node_features.rows(), sb.edges);
        else if (config.conv_kind == ConvKind::kSpline)
            plan = build_spline_plan(sb.edge_attrs, config.spline_kernel_size);

        const Eigen::MatrixXd* layer_in = &sb.node_features;
        for (int l = 0; l < config.conv_layers; ++l) {
            const std::string prefix = "conv" + std::to_string(l) + ".";
            Eigen::MatrixXd pre;
            switch (config.conv_kind) {
                case ConvKind::kGcn: {
                    pre = gcn_apply(gcn_ctx, *layer_in * params.at(prefix + "weight"));
                    break;
                }
                case ConvKind::kGraphConv: {
                    Eigen::MatrixXd nbr_sum =
                        Eigen::MatrixXd::Zero(layer_in->rows(), layer_in->cols());
                    for (const Edge& e : sb.edges) nbr_sum.row(e.dst) += layer_in->row(e.src);
                    pre = *layer_in * params.at(prefix + "weight_root") +
                          nbr_sum * params.at(prefix + "weight_nbr");
                    break;
                }
                case ConvKind::kSpline: {
                    pre = spline_messages(*layer_in, sb.edges, plan,
                                          params.at(prefix + "weight_kernel"));
                    pre.noalias() += *layer_in * params.at(prefix + "weight_root");
                    break;
                }
            }
            pre.rowwise() += params.at(prefix + "bias").row(0);
            stape.pre[static_cast<std::size_t>(l)] = std::move(pre);
            stape.act[static_cast<std::size_t>(l)] =
                relu(stape.pre[static_cast<std::size_t>(l)]);
            layer_in = &stape.act[static_cast<std::size_t>(l)];
        }

        stape.pooled = global_mean_pool(*layer_in, sb.node_sample, n_batch);
        concat.middleCols(static_cast<Eigen::Index>(st) * hidden, hidden) = stape.pooled;
    }

    t.concat = std::move(concat);
    t.fc_pre = t.concat * params.at("fc_hidden.weight");
    t.fc_pre.rowwise() += params.at("fc_hidden.bias").row(0);
    t.fc_act = relu(t.fc_pre);
    t.logits = t.fc_act * params.at("fc_out.weight");
    t.logits.rowwise() += params.at("fc_out.bias").row(0);
    return t.logits;
}

Eigen::MatrixXd softmax(const Eigen::MatrixXd& logits) {
    Eigen::MatrixXd p(logits.rows(), logits.cols());
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        const double m = logits.row(i).maxCoeff();
        p.row(i) = (logits.row(i).array() - m).exp();
        p.row(i) /= p.row(i).sum();
    }
    return p;
}

double cross_entropy(const Eigen::MatrixXd& logits, const std::vector<int>& labels) {
    if (static_cast<Eigen::Index>(labels.size()) != logits.rows())
        throw std::invalid_argument("cross_entropy: label count mismatch");
    double total = 0.0;
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        const int label = labels[static_cast<std::size_t>(i)];
        if (label < 0 || label >= logits.cols()) throw std::out_of_range("label out of range");
        const double m = logits.row(i).maxCoeff();
        const double lse = m + std::log((logits.row(i).array() - m).exp().sum());
        total += lse - logits(i, label);
    }
    return total / static_cast<double>(logits.rows());
}

double backward(const ModelParameters& params, const ModelConfig& config, const Batch& batch,
                const std::vector<int>& labels, ModelParameters& grads) {
    ForwardTape tape;
    model_forward(params, config, batch, &tape);
    const double loss = cross_entropy(tape.logits, labels);

    grads = zeros_like(params);
    const double inv_batch = 1.0 / static_cast<double>(tape.logits.rows());

    // d loss / d logits for mean cross-entropy.
    Eigen::MatrixXd d_logits =
        (softmax(tape.logits) - one_hot_rows(labels, tape.logits.cols())) * inv_batch;

    grads.at("fc_out.weight").noalias() += tape.fc_act.transpose() * d_logits;
    grads.at("fc_out.bias") += d_logits.colwise().sum();
    Eigen::MatrixXd d_fc_act = d_logits * params.at("fc_out.weight").transpose();
    Eigen::MatrixXd d_fc_pre = relu_backward(tape.fc_pre, d_fc_act);

    grads.at("fc_hidden.weight").noalias() += tape.concat.transpose() * d_fc_pre;
    grads.at("fc_hidden.bias") += d_fc_pre.colwise().sum();
    Eigen::MatrixXd d_concat = d_fc_pre * params.at("fc_hidden.weight").transpose();

    const Eigen::Index hidden = config.hidden;
    for (int st = 0; st < config.n_structures; ++st) {
        const StructureBatch& sb = batch.structures[static_cast<std::size_t>(st)];
        const StructureTape& stape = tape.structures[static_cast<std::size_t>(st)];
        const Eigen::Index n_nodes = sb.node_features.rows();

        GcnContext gcn_ctx;
        SplinePlan plan;
        if (config.conv_kind == ConvKind::kGcn)
            gcn_ctx = make_gcn_context(n_nodes, sb.edges);
        else if (config.conv_kind == ConvKind::kSpline)
            plan = build_spline_plan(sb.edge_attrs, config.spline_kernel_size);

        // Un-pool: every node receives its graph's pooled gradient / count.
        Eigen::VectorXd count = Eigen::VectorXd::Zero(batch.size());
        for (std::int32_t g : sb.node_sample) count[g] += 1.0;
        const Eigen::MatrixXd d_pooled =
            d_concat.middleCols(static_cast<Eigen::Index>(st) * hidden, hidden);
        Eigen::MatrixXd d_act(n_nodes, hidden);
        for (Eigen::Index i = 0; i < n_nodes; ++i) {
            const std::int32_t g = sb.node_sample[static_cast<std::size_t>(i)];
            d_act.row(i) = d_pooled.row(g) / count[g];
        }

        for (int l = config.conv_layers - 1; l >= 0; --l) {
            const std::string prefix = "conv" + std::to_string(l) + ".";
            const Eigen::MatrixXd& layer_in =
                l == 0 ? sb.node_features : stape.act[static_cast<std::size_t>(l - 1)];
            const Eigen::MatrixXd d_pre =
                relu_backward(stape.pre[static_cast<std::size_t>(l)], d_act);

            grads.at(prefix + "bias") += d_pre.colwise().sum();
            Eigen::MatrixXd d_in;
            switch (config.conv_kind) {
                case ConvKind::kGcn: {
                    const Eigen::MatrixXd d_prod = gcn_apply_transposed(gcn_ctx, d_pre);
                    grads.at(prefix + "weight").noalias() += layer_in.transpose() * d_prod;
                    d_in.noalias() = d_prod * params.at(prefix + "weight").transpose();
                    break;
                }
                case ConvKind::kGraphConv: {
                    Eigen::MatrixXd nbr_sum =
                        Eigen::MatrixXd::Zero(layer_in.rows(), layer_in.cols());
                    for (const Edge& e : sb.edges) nbr_sum.row(e.dst) += layer_in.row(e.src);
                    grads.at(prefix + "weight_root").noalias() += layer_in.transpose() * d_pre;
                    grads.at(prefix + "weight_nbr").noalias() += nbr_sum.transpose() * d_pre;
                    const Eigen::MatrixXd d_nbr =
                        d_pre * params.at(prefix + "weight_nbr").transpose();
                    d_in.noalias() = d_pre * params.at(prefix + "weight_root").transpose();
                    for (const Edge& e : sb.edges) d_in.row(e.src) += d_nbr.row(e.dst);
                    break;
                }
                case ConvKind::kSpline: {
                    grads.at(prefix + "weight_root").noalias() +=
                        layer_in.transpose() * d_pre;
                    d_in.noalias() = d_pre * params.at(prefix + "weight_root").transpose();
                    spline_messages_backward(layer_in, sb.edges, plan,
                                             params.at(prefix + "weight_kernel"), d_pre,
                                             grads.at(prefix + "weight_kernel"), d_in);
                    break;
                }
            }
            d_act = std::move(d_in);
        }
    }
    return loss;
}

// ---- checkpoint io -------------------------------------------------------

namespace {

std::string format_g17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    const ModelConfig& c = checkpoint.config;
    out << "meshgnn-checkpoint 1\n";
    out << "conv " << to_string(c.conv_kind) << '\n';
    out << "hidden " << c.hidden << '\n';
    out << "conv_layers " << c.conv_layers << '\n';
    out << "n_structures " << c.n_structures << '\n';
    out << "n_classes " << c.n_classes << '\n';
    out << "input_dim " << c.input_dim << '\n';
    out << "spline_kernel_size " << c.spline_kernel_size << '\n';
    out << "spline_degree " << c.spline_degree << '\n';
    out << "feature_mode " << to_string(checkpoint.feature_mode) << '\n';
    out << "fpfh_radius " << format_g17(checkpoint.fpfh_params.radius) << '\n';
    out << "fpfh_max_neighbors " << checkpoint.fpfh_params.max_neighbors << '\n';
    out << "fpfh_bins " << checkpoint.fpfh_params.bins << '\n';
    out << "aug_offset " << format_g17(checkpoint.aug_offset) << '\n';
    out << "seed " << checkpoint.seed << '\n';
    out << "tensors " << checkpoint.params.tensors.size() << '\n';
    for (const NamedTensor& t : checkpoint.params.tensors) {
        out << "tensor " << t.name << ' ' << t.value.rows() << ' ' << t.value.cols() << '\n';
        for (Eigen::Index r = 0; r < t.value.rows(); ++r) {
            for (Eigen::Index c2 = 0; c2 < t.value.cols(); ++c2) {
                if (c2) out << ' ';
                out << format_g17(t.value(r, c2));
            }
            out << '\n';
        }
    }
    if (!out) throw std::runtime_error("write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());

    auto expect_key = [&](const std::string& key) -> std::string {
        std::string k, v;
        if (!(in >> k >> v) || k != key)
            throw std::runtime_error(path.string() + ": expected \"" + key + "\" entry");
        return v;
    };

    std::string magic, version;
    if (!(in >> magic >> version) || magic != "meshgnn-checkpoint" || version != "1")
        throw std::runtime_error(path.string() + ": not a meshgnn checkpoint");

    Checkpoint ckpt;
    ckpt.config.conv_kind = conv_kind_from_string(expect_key("conv"));
    ckpt.config.hidden = std::stoi(expect_key("hidden"));
    ckpt.config.conv_layers = std::stoi(expect_key("conv_layers"));
    ckpt.config.n_structures = std::stoi(expect_key("n_structures"));
    ckpt.config.n_classes = std::stoi(expect_key("n_classes"));
    ckpt.config.input_dim = std::stoi(expect_key("input_dim"));
    ckpt.config.spline_kernel_size = std::stoi(expect_key("spline_kernel_size"));
    ckpt.config.spline_degree = std::stoi(expect_key("spline_degree"));
    ckpt.feature_mode = feature_mode_from_string(expect_key("feature_mode"));
    ckpt.fpfh_params.radius = std::stod(expect_key("fpfh_radius"));
    ckpt.fpfh_params.max_neighbors = std::stoi(expect_key("fpfh_max_neighbors"));
    ckpt.fpfh_params.bins = std::stoi(expect_key("fpfh_bins"));
    ckpt.aug_offset = std::stod(expect_key("aug_offset"));
    ckpt.seed = std::stoull(expect_key("seed"));
    validate_config(ckpt.config);

    const std::size_t n_tensors = std::stoul(expect_key("tensors"));
    for (std::size_t i = 0; i < n_tensors; ++i) {
        std::string tag, name;
        Eigen::Index rows = 0, cols = 0;
        if (!(in >> tag >> name >> rows >> cols) || tag != "tensor")
            throw std::runtime_error(path.string() + ": malformed tensor header");
        Eigen::MatrixXd value(rows, cols);
        for (Eigen::Index r = 0; r < rows; ++r)
            for (Eigen::Index c = 0; c < cols; ++c)
                if (!(in >> value(r, c)))
                    throw std::runtime_error(path.string() + ": truncated tensor " + name);
        ckpt.params.tensors.push_back({name, std::move(value)});
    }

    // Shapes must agree with the embedded config.
    const auto specs = tensor_specs(ckpt.config);
    if (specs.size() != ckpt.params.tensors.size())
        throw std::runtime_error(path.string() + ": tensor count does not match config");
    for (std::size_t i = 0; i < specs.size(); ++i) {
        const auto& t = ckpt.params.tensors[i];
        if (t.name != specs[i].name || t.value.rows() != specs[i].rows ||
            t.value.cols() != specs[i].cols)
            throw std::runtime_error(path.string() + ": tensor " + t.name +
                                     " does not match the embedded config");
    }
    return ckpt;
}

}  // namespace meshgnn
