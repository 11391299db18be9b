#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "meshgnn/graph.hpp"
#include "meshgnn/random.hpp"

namespace meshgnn {

/// The three compared graph convolution operators.
enum class ConvKind { kGcn, kGraphConv, kSpline };

ConvKind conv_kind_from_string(const std::string& name);
std::string to_string(ConvKind kind);

/// Architecture hyperparameters of the shared-submodel multi-graph model.
struct ModelConfig {
    ConvKind conv_kind = ConvKind::kSpline;
    int hidden = 32;        // H: width of conv layers and the FC hidden layer
    int conv_layers = 3;    // fixed
    int n_structures = 15;  // N: graphs per sample
    int n_classes = 2;
    int input_dim = 33;     // d: node feature dimension
    int spline_kernel_size = 5;
    int spline_degree = 1;

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

void validate_config(const ModelConfig& config);

/// A named weight matrix or bias row vector (biases are 1 x d).
struct NamedTensor {
    std::string name;
    Eigen::MatrixXd value;
};

/// All trainable tensors of the model, in a fixed canonical order.
struct ModelParameters {
    std::vector<NamedTensor> tensors;

    Eigen::MatrixXd& at(std::string_view name);
    const Eigen::MatrixXd& at(std::string_view name) const;
    bool has(std::string_view name) const;

    /// Total scalar parameter count.
    Eigen::Index size() const;
};

/// Fresh parameters: weights uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)],
/// biases zero, drawn from `rng` in canonical tensor order.
ModelParameters init_parameters(const ModelConfig& config, Rng& rng);

/// Same tensor names and shapes, all values zero.
ModelParameters zeros_like(const ModelParameters& params);

/// Adam moment accumulators plus the shared step counter.
struct AdamState {
    ModelParameters m;
    ModelParameters v;
    long step = 0;
};

AdamState make_adam_state(const ModelParameters& params);

/// One Adam update with bias correction; increments the step counter once.
void adam_step(ModelParameters& params, const ModelParameters& grads, AdamState& state,
               double lr = 1e-3, double beta1 = 0.9, double beta2 = 0.999,
               double eps = 1e-8);

// ---- layer primitives ------------------------------------------------

/// GCN convolution: X' = D^{-1/2} (A+I) D^{-1/2} X W + b with binary
/// adjacency A[i][j] = 1 for each edge (j -> i).
Eigen::MatrixXd gcn_conv_forward(const Eigen::MatrixXd& x, const std::vector<Edge>& edges,
                                 const Eigen::MatrixXd& weight, const Eigen::MatrixXd& bias);

/// Neighborhood-sum convolution: x'_i = W1^T x_i + W2^T sum_{j->i} x_j + b,
/// no self-loops added.
Eigen::MatrixXd graph_conv_forward(const Eigen::MatrixXd& x, const std::vector<Edge>& edges,
                                   const Eigen::MatrixXd& weight_root,
                                   const Eigen::MatrixXd& weight_nbr,
                                   const Eigen::MatrixXd& bias);

/// Open degree-1 B-spline tensor-product basis over [0,1]^3. Returns up to
/// 8 (kernel index, weight) pairs with positive weight; weights sum to 1.
/// Kernel index = i0 + k*i1 + k^2*i2 for kernel size k.
std::vector<std::pair<int, double>> spline_basis(const Eigen::Vector3d& u,
                                                 int kernel_size = 5, int degree = 1);

/// Spline convolution with sum aggregation:
/// x'_i = W_root^T x_i + sum_{j->i} (sum_p basis_p(u_ji) W_p^T) x_j + b.
/// weight_kernel stacks the k^3 kernel matrices row-wise
/// ((k^3 * d_in) x d_out); block p is rows [p*d_in, (p+1)*d_in).
Eigen::MatrixXd spline_conv_forward(const Eigen::MatrixXd& x, const std::vector<Edge>& edges,
                                    const Eigen::MatrixXd& edge_attrs,
                                    const Eigen::MatrixXd& weight_kernel,
                                    const Eigen::MatrixXd& weight_root,
                                    const Eigen::MatrixXd& bias, int kernel_size = 5);

/// Readout: row g = mean of the rows assigned to graph g; empty graphs
/// yield zero rows.
Eigen::MatrixXd global_mean_pool(const Eigen::MatrixXd& x,
                                 const std::vector<std::int32_t>& assignment, int n_graphs);

// ---- model ------------------------------------------------------------

/// Intermediate activations of one structure union, kept for backward.
struct StructureTape {
    std::array<Eigen::MatrixXd, 3> pre;  // conv outputs before ReLU
    std::array<Eigen::MatrixXd, 3> act;  // after ReLU
    Eigen::MatrixXd pooled;              // batch x H
};

/// Everything backward needs from a forward pass.
struct ForwardTape {
    std::vector<StructureTape> structures;
    Eigen::MatrixXd concat;   // batch x (N*H)
    Eigen::MatrixXd fc_pre;   // batch x H
    Eigen::MatrixXd fc_act;   // batch x H
    Eigen::MatrixXd logits;   // batch x n_classes
};

/// Shared-submodel forward pass: three conv+ReLU layers applied per
/// structure with the same parameters, global mean pool, concatenation in
/// structure order, FC hidden + ReLU, FC output. Returns logits
/// (batch x n_classes).
Eigen::MatrixXd model_forward(const ModelParameters& params, const ModelConfig& config,
                              const Batch& batch, ForwardTape* tape = nullptr);

/// Row-wise softmax with max subtraction.
Eigen::MatrixXd softmax(const Eigen::MatrixXd& logits);

/// Mean negative log softmax probability of the true class.
double cross_entropy(const Eigen::MatrixXd& logits, const std::vector<int>& labels);

/// Forward plus reverse pass. Returns the loss and fills `grads` with the
/// gradient of mean cross-entropy w.r.t. every parameter.
double backward(const ModelParameters& params, const ModelConfig& config, const Batch& batch,
                const std::vector<int>& labels, ModelParameters& grads);

// ---- checkpoints -------------------------------------------------------

/// Trained model plus everything needed to reproduce its inputs.
struct Checkpoint {
    ModelConfig config;
    FeatureMode feature_mode = FeatureMode::kFpfh;
    FpfhParams fpfh_params;
    double aug_offset = 0.0;  // mm, training-time augmentation
    std::uint64_t seed = 0;
    ModelParameters params;
};

/// Self-describing text format; values carry 17 significant digits so
/// doubles round-trip exactly.
void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace meshgnn
