#include <doctest.h>

#include <cmath>
#include <cstring>

#include "meshgnn/nn.hpp"
#include "nn_test_helpers.hpp"
#include "test_util.hpp"

using namespace meshgnn;

namespace {

Eigen::MatrixXd row1(std::initializer_list<double> values) {
    Eigen::MatrixXd m(1, static_cast<Eigen::Index>(values.size()));
    Eigen::Index c = 0;
    for (double v : values) m(0, c++) = v;
    return m;
}

// Dense reference for the GCN propagation rule.
Eigen::MatrixXd dense_gcn_oracle(const Eigen::MatrixXd& x, const std::vector<Edge>& edges,
                                 const Eigen::MatrixXd& w, const Eigen::MatrixXd& b) {
    const Eigen::Index n = x.rows();
    Eigen::MatrixXd adj = Eigen::MatrixXd::Identity(n, n);
    for (const Edge& e : edges) adj(e.dst, e.src) = adj(e.dst, e.src) == 0.0 ? 1.0 : adj(e.dst, e.src);
    for (const Edge& e : edges)
        if (e.src != e.dst) adj(e.dst, e.src) = 1.0;
    Eigen::VectorXd deg = adj.rowwise().sum();
    Eigen::MatrixXd norm = deg.cwiseInverse().cwiseSqrt().asDiagonal();
    Eigen::MatrixXd y = norm * adj * norm * x * w;
    y.rowwise() += b.row(0);
    return y;
}

ModelConfig small_config(ConvKind kind, int input_dim, int hidden = 4, int n_structures = 2) {
    ModelConfig c;
    c.conv_kind = kind;
    c.hidden = hidden;
    c.n_structures = n_structures;
    c.n_classes = 2;
    c.input_dim = input_dim;
    return c;
}

}  // namespace

TEST_CASE("gcn_conv_forward hand cases") {
    SUBCASE("single node, no edges, identity weight") {
        Eigen::MatrixXd x(1, 2);
        x << 3.0, -1.5;
        const Eigen::MatrixXd y =
            gcn_conv_forward(x, {}, Eigen::MatrixXd::Identity(2, 2), row1({0, 0}));
        CHECK((y - x).cwiseAbs().maxCoeff() < 1e-15);
    }
    SUBCASE("two connected nodes average to 2") {
        Eigen::MatrixXd x(2, 1);
        x << 1.0, 3.0;
        const Eigen::MatrixXd y = gcn_conv_forward(x, {{0, 1}, {1, 0}},
                                                   Eigen::MatrixXd::Ones(1, 1), row1({0}));
        CHECK(y(0, 0) == doctest::Approx(2.0));
        CHECK(y(1, 0) == doctest::Approx(2.0));
    }
    SUBCASE("zero features broadcast the bias") {
        const Eigen::MatrixXd y = gcn_conv_forward(Eigen::MatrixXd::Zero(3, 2), {{0, 1}, {1, 0}},
                                                   Eigen::MatrixXd::Ones(2, 2), row1({0.5, -2}));
        for (Eigen::Index i = 0; i < 3; ++i) {
            CHECK(y(i, 0) == 0.5);
            CHECK(y(i, 1) == -2.0);
        }
    }
    SUBCASE("shape mismatch is rejected") {
        CHECK_THROWS_AS(gcn_conv_forward(Eigen::MatrixXd::Zero(2, 3), {},
                                         Eigen::MatrixXd::Zero(2, 2), row1({0, 0})),
                        std::invalid_argument);
    }
}

TEST_CASE("gcn_conv_forward equals the dense normalized-adjacency oracle") {
    Rng rng(101);
    for (int trial = 0; trial < 25; ++trial) {
        const int n = 2 + static_cast<int>(rng.bounded(19));
        const int d_in = 1 + static_cast<int>(rng.bounded(4));
        const int d_out = 1 + static_cast<int>(rng.bounded(4));
        Eigen::MatrixXd x(n, d_in), w(d_in, d_out), b(1, d_out);
        for (Eigen::Index r = 0; r < n; ++r)
            for (Eigen::Index c = 0; c < d_in; ++c) x(r, c) = rng.uniform(-2, 2);
        for (Eigen::Index r = 0; r < d_in; ++r)
            for (Eigen::Index c = 0; c < d_out; ++c) w(r, c) = rng.uniform(-1, 1);
        for (Eigen::Index c = 0; c < d_out; ++c) b(0, c) = rng.uniform(-1, 1);
        std::vector<Edge> edges;
        for (int e = 0; e < n; ++e) {
            const auto a = static_cast<std::int32_t>(rng.bounded(static_cast<std::uint64_t>(n)));
            const auto bb = static_cast<std::int32_t>(rng.bounded(static_cast<std::uint64_t>(n)));
            if (a == bb) continue;
            edges.push_back({a, bb});
            edges.push_back({bb, a});
        }
        const Eigen::MatrixXd fast = gcn_conv_forward(x, edges, w, b);
        const Eigen::MatrixXd slow = dense_gcn_oracle(x, edges, w, b);
        CHECK((fast - slow).cwiseAbs().maxCoeff() < 1e-10);
    }
}

TEST_CASE("graph_conv_forward hand cases") {
    SUBCASE("node with no neighbors reduces to the root transform") {
        Eigen::MatrixXd x(1, 2);
        x << 2.0, -1.0;
        Eigen::MatrixXd w1(2, 1), w2(2, 1);
        w1 << 1.0, 1.0;
        w2 << 5.0, 5.0;
        const Eigen::MatrixXd y = graph_conv_forward(x, {}, w1, w2, row1({0.25}));
        CHECK(y(0, 0) == doctest::Approx(1.25));
    }
    SUBCASE("star center sums its three leaves") {
        Eigen::MatrixXd x(4, 1);
        x << 0.0, 1.0, 1.0, 1.0;
        const std::vector<Edge> edges = {{1, 0}, {0, 1}, {2, 0}, {0, 2}, {3, 0}, {0, 3}};
        const Eigen::MatrixXd y = graph_conv_forward(x, edges, Eigen::MatrixXd::Ones(1, 1),
                                                     Eigen::MatrixXd::Ones(1, 1), row1({0}));
        CHECK(y(0, 0) == doctest::Approx(3.0));
        CHECK(y(1, 0) == doctest::Approx(1.0));  // leaf: own 1 + center 0
    }
    SUBCASE("zero neighbor weight degenerates to a dense layer") {
        Rng rng(5);
        Eigen::MatrixXd x(4, 3), w1(3, 2);
        for (Eigen::Index r = 0; r < 4; ++r)
            for (Eigen::Index c = 0; c < 3; ++c) x(r, c) = rng.uniform(-1, 1);
        for (Eigen::Index r = 0; r < 3; ++r)
            for (Eigen::Index c = 0; c < 2; ++c) w1(r, c) = rng.uniform(-1, 1);
        const Eigen::MatrixXd b = row1({0.1, 0.2});
        const std::vector<Edge> edges = {{0, 1}, {1, 0}, {2, 3}, {3, 2}};
        Eigen::MatrixXd expect = x * w1;
        expect.rowwise() += b.row(0);
        const Eigen::MatrixXd y =
            graph_conv_forward(x, edges, w1, Eigen::MatrixXd::Zero(3, 2), b);
        CHECK((y - expect).cwiseAbs().maxCoeff() < 1e-15);
    }
}

TEST_CASE("spline_basis knot-aligned and boundary cases") {
    const auto at_zero = spline_basis({0, 0, 0});
    REQUIRE(at_zero.size() == 1);
    CHECK(at_zero[0].first == 0);
    CHECK(at_zero[0].second == 1.0);

    const auto at_one = spline_basis({1, 1, 1});
    REQUIRE(at_one.size() == 1);
    CHECK(at_one[0].first == 124);
    CHECK(at_one[0].second == 1.0);

    const auto mid = spline_basis({0.125, 0, 0});
    REQUIRE(mid.size() == 2);
    CHECK(mid[0].first == 0);
    CHECK(mid[0].second == doctest::Approx(0.5));
    CHECK(mid[1].first == 1);
    CHECK(mid[1].second == doctest::Approx(0.5));

    CHECK_THROWS_AS(spline_basis({1.5, 0, 0}), std::domain_error);
    CHECK_THROWS_AS(spline_basis({0, -0.1, 0}), std::domain_error);
    CHECK_THROWS_AS(spline_basis({0, 0, 0}, 5, 2), std::invalid_argument);
}

TEST_CASE("spline_basis is a partition of unity") {
    Rng rng(77);
    for (int trial = 0; trial < 1000; ++trial) {
        const Eigen::Vector3d u(rng.uniform(), rng.uniform(), rng.uniform());
        double sum = 0.0;
        for (const auto& [index, value] : spline_basis(u)) {
            CHECK(value > 0.0);
            CHECK(index >= 0);
            CHECK(index < 125);
            sum += value;
        }
        CHECK(std::abs(sum - 1.0) < 1e-12);
    }
}

TEST_CASE("spline_conv_forward hand cases") {
    const int d = 2;
    Eigen::MatrixXd x(2, d);
    x << 1.0, -2.0, 0.5, 4.0;

    SUBCASE("no edges reduces to the root transform") {
        Eigen::MatrixXd wk = Eigen::MatrixXd::Zero(125 * d, d);
        const Eigen::MatrixXd y = spline_conv_forward(
            x, {}, Eigen::MatrixXd(0, 3), wk, Eigen::MatrixXd::Identity(d, d), row1({1, 1}));
        CHECK((y - (x.array() + 1.0).matrix()).cwiseAbs().maxCoeff() < 1e-15);
    }
    SUBCASE("knot-aligned edge routes through kernel matrix 0") {
        Eigen::MatrixXd wk = Eigen::MatrixXd::Zero(125 * d, d);
        wk.topRows(d) = Eigen::MatrixXd::Identity(d, d);  // W_0 = I
        Eigen::MatrixXd attrs(1, 3);
        attrs << 0.0, 0.0, 0.0;
        const Eigen::MatrixXd y =
            spline_conv_forward(x, {{0, 1}}, attrs, wk, Eigen::MatrixXd::Zero(d, d),
                                row1({0, 0}));
        CHECK(y.row(0).isZero(0.0));
        CHECK(y.row(1) == x.row(0));
    }
}

TEST_CASE("spline_conv with a constant kernel equals neighborhood-sum conv") {
    Rng rng(55);
    const int d_in = 3, d_out = 2, n = 6;
    Eigen::MatrixXd x(n, d_in), m(d_in, d_out), w_root(d_in, d_out);
    for (Eigen::Index r = 0; r < n; ++r)
        for (Eigen::Index c = 0; c < d_in; ++c) x(r, c) = rng.uniform(-1, 1);
    for (Eigen::Index r = 0; r < d_in; ++r)
        for (Eigen::Index c = 0; c < d_out; ++c) {
            m(r, c) = rng.uniform(-1, 1);
            w_root(r, c) = rng.uniform(-1, 1);
        }
    Eigen::MatrixXd wk(125 * d_in, d_out);
    for (int p = 0; p < 125; ++p) wk.middleRows(p * d_in, d_in) = m;

    std::vector<Edge> edges;
    Eigen::MatrixXd attrs(10, 3);
    for (int e = 0; e < 10; ++e) {
        const auto a = static_cast<std::int32_t>(rng.bounded(n));
        const auto b = static_cast<std::int32_t>(rng.bounded(n));
        if (a == b) {
            attrs.conservativeResize(attrs.rows() - 1, 3);
            continue;
        }
        edges.push_back({a, b});
        for (int c = 0; c < 3; ++c) attrs(static_cast<Eigen::Index>(edges.size()) - 1, c) = rng.uniform();
    }
    attrs.conservativeResize(static_cast<Eigen::Index>(edges.size()), 3);

    const Eigen::MatrixXd b = row1({0.3, -0.7});
    const Eigen::MatrixXd spline = spline_conv_forward(x, edges, attrs, wk, w_root, b);
    const Eigen::MatrixXd sum_conv = graph_conv_forward(x, edges, w_root, m, b);
    // Partition of unity collapses the kernel mixture onto m.
    CHECK((spline - sum_conv).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("global_mean_pool hand cases") {
    Eigen::MatrixXd x(2, 2);
    x << 1, 2, 3, 4;
    const Eigen::MatrixXd pooled = global_mean_pool(x, {0, 0}, 1);
    CHECK(pooled(0, 0) == doctest::Approx(2.0));
    CHECK(pooled(0, 1) == doctest::Approx(3.0));

    const Eigen::MatrixXd identity = global_mean_pool(x, {0, 1}, 2);
    CHECK(identity == x);

    // Interleaved assignment against a split-and-average oracle.
    Eigen::MatrixXd y(4, 1);
    y << 1, 10, 3, 30;
    const Eigen::MatrixXd inter = global_mean_pool(y, {0, 1, 0, 1}, 2);
    CHECK(inter(0, 0) == doctest::Approx((1.0 + 3.0) / 2));
    CHECK(inter(1, 0) == doctest::Approx((10.0 + 30.0) / 2));

    // A graph with no nodes pools to a zero row.
    const Eigen::MatrixXd with_empty = global_mean_pool(x, {0, 0}, 2);
    CHECK(with_empty.row(1).isZero(0.0));
}

TEST_CASE("model_forward with all-zero parameters broadcasts the output bias") {
    const ModelConfig config = small_config(ConvKind::kGraphConv, 3);
    Rng rng(1);
    ModelParameters params = init_parameters(config, rng);
    for (auto& t : params.tensors) t.value.setZero();
    params.at("fc_out.bias") = row1({0.3, -0.2});

    Rng data_rng(2);
    const Batch batch = nntest::random_batch(config, 5, 6, data_rng);
    const Eigen::MatrixXd logits = model_forward(params, config, batch);
    REQUIRE(logits.rows() == 5);
    for (Eigen::Index r = 0; r < 5; ++r) {
        CHECK(logits(r, 0) == 0.3);
        CHECK(logits(r, 1) == -0.2);
    }
}

TEST_CASE("batching is semantically transparent") {
    for (ConvKind kind : {ConvKind::kGcn, ConvKind::kGraphConv, ConvKind::kSpline}) {
        CAPTURE(to_string(kind));
        const ModelConfig config = small_config(kind, 3);
        Rng rng(33);
        ModelParameters params = init_parameters(config, rng);
        Rng data_rng(34);
        const Batch batch = nntest::random_batch(config, 8, 7, data_rng);
        const Eigen::MatrixXd batched = model_forward(params, config, batch);

        const auto per_sample = unbatch(batch);
        for (int s = 0; s < 8; ++s) {
            Batch single;
            single.labels = {batch.labels[static_cast<std::size_t>(s)]};
            for (const Graph& g : per_sample[static_cast<std::size_t>(s)]) {
                StructureBatch sb;
                sb.node_features = g.node_features;
                sb.edges = g.edges;
                sb.edge_attrs = g.edge_attrs;
                sb.node_sample.assign(static_cast<std::size_t>(g.node_count()), 0);
                sb.n_graphs = 1;
                single.structures.push_back(std::move(sb));
            }
            const Eigen::MatrixXd one = model_forward(params, config, single);
            CHECK((one.row(0) - batched.row(s)).cwiseAbs().maxCoeff() < 1e-9);
        }
    }
}

TEST_CASE("model_forward matches a hand-evaluated single-node model") {
    ModelConfig config = small_config(ConvKind::kGcn, 1, 2, 1);
    Rng rng(3);
    ModelParameters params = init_parameters(config, rng);
    params.at("conv0.weight") = row1({0.5, -0.25});          // 1 -> 2
    params.at("conv0.bias") = row1({0.1, 0.2});
    Eigen::MatrixXd w(2, 2);
    w << 1.0, 0.5, -1.0, 0.25;
    params.at("conv1.weight") = w;
    params.at("conv1.bias") = row1({0.0, 0.1});
    params.at("conv2.weight") = Eigen::MatrixXd::Identity(2, 2);
    params.at("conv2.bias") = row1({0.0, 0.0});
    Eigen::MatrixXd wh(2, 2);
    wh << 0.2, -0.3, 0.4, 0.6;
    params.at("fc_hidden.weight") = wh;
    params.at("fc_hidden.bias") = row1({0.05, -0.05});
    Eigen::MatrixXd wo(2, 2);
    wo << 1.0, -1.0, 2.0, 0.5;
    params.at("fc_out.weight") = wo;
    params.at("fc_out.bias") = row1({0.0, 0.25});

    Batch batch;
    StructureBatch sb;
    sb.node_features = row1({2.0});
    sb.node_sample = {0};
    sb.n_graphs = 1;
    sb.edge_attrs.resize(0, 3);
    batch.structures.push_back(sb);
    batch.labels = {0};

    // Single node, no edges: every conv is a dense layer (self-loop norm 1).
    const double h1a = std::max(0.0, 2.0 * 0.5 + 0.1);    // 1.1
    const double h1b = std::max(0.0, 2.0 * -0.25 + 0.2);  // 0 (pre-relu -0.3)
    const double h2a = std::max(0.0, h1a * 1.0 + h1b * -1.0 + 0.0);
    const double h2b = std::max(0.0, h1a * 0.5 + h1b * 0.25 + 0.1);
    const double h3a = std::max(0.0, h2a);
    const double h3b = std::max(0.0, h2b);
    const double fca = std::max(0.0, h3a * 0.2 + h3b * 0.4 + 0.05);
    const double fcb = std::max(0.0, h3a * -0.3 + h3b * 0.6 - 0.05);
    const double l0 = fca * 1.0 + fcb * 2.0 + 0.0;
    const double l1 = fca * -1.0 + fcb * 0.5 + 0.25;

    const Eigen::MatrixXd logits = model_forward(params, config, batch);
    CHECK(logits(0, 0) == doctest::Approx(l0).epsilon(1e-12));
    CHECK(logits(0, 1) == doctest::Approx(l1).epsilon(1e-12));
}

TEST_CASE("cross_entropy closed forms") {
    Eigen::MatrixXd logits(1, 2);
    logits << 0.0, 0.0;
    CHECK(cross_entropy(logits, {0}) == doctest::Approx(std::log(2.0)).epsilon(1e-12));

    logits << 100.0, 0.0;
    CHECK(cross_entropy(logits, {0}) < 1e-8);

    logits << 1.0, 2.0;
    CHECK(cross_entropy(logits, {0}) ==
          doctest::Approx(std::log1p(std::exp(1.0))).epsilon(1e-12));

    Eigen::MatrixXd two(2, 2);
    two << 0.0, 0.0, 100.0, 0.0;
    CHECK(cross_entropy(two, {0, 0}) ==
          doctest::Approx(0.5 * std::log(2.0)).epsilon(1e-9));
}

TEST_CASE("softmax rows are probabilities") {
    Eigen::MatrixXd logits(2, 3);
    logits << 1000.0, 999.0, -1000.0, 0.0, 0.0, 0.0;
    const Eigen::MatrixXd p = softmax(logits);
    for (Eigen::Index r = 0; r < 2; ++r)
        CHECK(p.row(r).sum() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(p(1, 0) == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("backward output bias gradient equals softmax minus one-hot") {
    const ModelConfig config = small_config(ConvKind::kSpline, 3);
    Rng rng(9);
    ModelParameters params = init_parameters(config, rng);
    Rng data_rng(10);
    const Batch batch = nntest::random_batch(config, 6, 6, data_rng);

    ModelParameters grads;
    backward(params, config, batch, batch.labels, grads);

    const Eigen::MatrixXd probs = softmax(model_forward(params, config, batch));
    Eigen::RowVectorXd expect = Eigen::RowVectorXd::Zero(2);
    for (Eigen::Index r = 0; r < probs.rows(); ++r) {
        expect += probs.row(r);
        expect(batch.labels[static_cast<std::size_t>(r)]) -= 1.0;
    }
    expect /= static_cast<double>(probs.rows());
    CHECK((grads.at("fc_out.bias").row(0) - expect).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("analytic gradients agree with finite differences (spot checks)") {
    for (ConvKind kind : {ConvKind::kGcn, ConvKind::kGraphConv, ConvKind::kSpline}) {
        CAPTURE(to_string(kind));
        const ModelConfig config = small_config(kind, 3);
        auto [params, batch] = nntest::make_fd_testcase(config, 21, 3, 5);
        const auto result = nntest::finite_difference_check(config, std::move(params), batch);
        CAPTURE(result.worst_tensor);
        CHECK(result.max_rel_error < 1e-4);
    }
}

TEST_CASE("saturated zero-loss batches have vanishing gradients") {
    const ModelConfig config = small_config(ConvKind::kGcn, 1);
    Rng rng(4);
    ModelParameters params = init_parameters(config, rng);
    for (auto& t : params.tensors) t.value.setZero();
    params.at("fc_out.bias") = row1({50.0, -50.0});

    Rng data_rng(5);
    Batch batch = nntest::random_batch(config, 4, 5, data_rng);
    batch.labels = {0, 0, 0, 0};

    ModelParameters grads;
    const double loss = backward(params, config, batch, batch.labels, grads);
    CHECK(loss < 1e-12);
    for (const auto& t : grads.tensors) CHECK(t.value.cwiseAbs().maxCoeff() < 1e-20);
}

TEST_CASE("adam_step reference traces") {
    const ModelConfig config = small_config(ConvKind::kGcn, 1, 1, 1);

    SUBCASE("zero gradients leave parameters untouched") {
        Rng rng(6);
        ModelParameters params = init_parameters(config, rng);
        const ModelParameters before = params;
        ModelParameters grads = zeros_like(params);
        AdamState state = make_adam_state(params);
        adam_step(params, grads, state);
        for (std::size_t t = 0; t < params.tensors.size(); ++t)
            CHECK(params.tensors[t].value == before.tensors[t].value);
        CHECK(state.step == 1);
    }

    SUBCASE("first step with g=0.5 moves by about -lr") {
        Rng rng(6);
        ModelParameters params = init_parameters(config, rng);
        const double before = params.at("conv0.weight")(0, 0);
        ModelParameters grads = zeros_like(params);
        grads.at("conv0.weight")(0, 0) = 0.5;
        AdamState state = make_adam_state(params);
        adam_step(params, grads, state, 0.001);
        const double update = 0.001 * 0.5 / (0.5 + 1e-8);  // m_hat / (sqrt(v_hat) + eps)
        CHECK(params.at("conv0.weight")(0, 0) ==
              doctest::Approx(before - update).epsilon(1e-15));
    }

    SUBCASE("two constant-gradient steps match a scalar transcription") {
        Rng rng(6);
        ModelParameters params = init_parameters(config, rng);
        const double p0 = params.at("conv0.weight")(0, 0);
        ModelParameters grads = zeros_like(params);
        const double g = -1.25;
        grads.at("conv0.weight")(0, 0) = g;
        AdamState state = make_adam_state(params);
        adam_step(params, grads, state, 0.01);
        adam_step(params, grads, state, 0.01);

        double p = p0, m = 0, v = 0;
        for (int t = 1; t <= 2; ++t) {
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            const double mh = m / (1 - std::pow(0.9, t));
            const double vh = v / (1 - std::pow(0.999, t));
            p -= 0.01 * mh / (std::sqrt(vh) + 1e-8);
        }
        CHECK(params.at("conv0.weight")(0, 0) == doctest::Approx(p).epsilon(1e-15));
        CHECK(state.step == 2);
    }
}

TEST_CASE("model logits are invariant to node permutations") {
    Rng perm_rng(71);
    for (ConvKind kind : {ConvKind::kGcn, ConvKind::kGraphConv, ConvKind::kSpline}) {
        CAPTURE(to_string(kind));
        const ModelConfig config = small_config(kind, 3);
        Rng rng(72);
        ModelParameters params = init_parameters(config, rng);
        Rng data_rng(73);
        Batch batch = nntest::random_batch(config, 4, 6, data_rng);
        const Eigen::MatrixXd base = model_forward(params, config, batch);

        // Permute nodes within each structure union, remapping edges.
        for (auto& sb : batch.structures) nntest::permute_structure_nodes(sb, perm_rng);
        const Eigen::MatrixXd permuted = model_forward(params, config, batch);
        CHECK((permuted - base).cwiseAbs().maxCoeff() < 1e-9);
    }
}

TEST_CASE("edge attributes only matter to spline convolutions") {
    for (ConvKind kind : {ConvKind::kGcn, ConvKind::kGraphConv}) {
        CAPTURE(to_string(kind));
        const ModelConfig config = small_config(kind, 3);
        Rng rng(81);
        ModelParameters params = init_parameters(config, rng);
        Rng data_rng(82);
        Batch batch = nntest::random_batch(config, 4, 6, data_rng);
        const Eigen::MatrixXd base = model_forward(params, config, batch);

        Rng attr_rng(83);
        for (auto& sb : batch.structures)
            for (Eigen::Index r = 0; r < sb.edge_attrs.rows(); ++r)
                for (int c = 0; c < 3; ++c) sb.edge_attrs(r, c) = attr_rng.uniform();
        const Eigen::MatrixXd randomized = model_forward(params, config, batch);
        CHECK(std::memcmp(base.data(), randomized.data(),
                          sizeof(double) * static_cast<std::size_t>(base.size())) == 0);
    }
}

TEST_CASE("shared submodel embeddings do not depend on structure slots") {
    const ModelConfig config = small_config(ConvKind::kSpline, 3);
    Rng rng(91);
    ModelParameters params = init_parameters(config, rng);
    Rng data_rng(92);
    Batch batch = nntest::random_batch(config, 3, 6, data_rng);

    Batch swapped = batch;
    std::swap(swapped.structures[0], swapped.structures[1]);

    ForwardTape tape_a, tape_b;
    model_forward(params, config, batch, &tape_a);
    model_forward(params, config, swapped, &tape_b);
    // The same graphs produce the same pooled embeddings wherever they sit.
    CHECK((tape_a.structures[0].pooled - tape_b.structures[1].pooled).cwiseAbs().maxCoeff() ==
          0.0);
    CHECK((tape_a.structures[1].pooled - tape_b.structures[0].pooled).cwiseAbs().maxCoeff() ==
          0.0);
}

TEST_CASE("checkpoints round-trip bitwise") {
    const ModelConfig config = small_config(ConvKind::kSpline, 33, 5, 3);
    Rng rng(13);
    Checkpoint ckpt;
    ckpt.config = config;
    ckpt.feature_mode = FeatureMode::kFpfh;
    ckpt.aug_offset = 0.1;
    ckpt.seed = 42;
    ckpt.params = init_parameters(config, rng);

    const auto path = testutil::scratch_dir() / "roundtrip.ckpt";
    save_checkpoint(ckpt, path);
    const Checkpoint loaded = load_checkpoint(path);

    CHECK(loaded.config == config);
    CHECK(loaded.feature_mode == FeatureMode::kFpfh);
    CHECK(loaded.aug_offset == 0.1);
    CHECK(loaded.seed == 42);
    REQUIRE(loaded.params.tensors.size() == ckpt.params.tensors.size());
    for (std::size_t t = 0; t < ckpt.params.tensors.size(); ++t) {
        CHECK(loaded.params.tensors[t].name == ckpt.params.tensors[t].name);
        CHECK(loaded.params.tensors[t].value == ckpt.params.tensors[t].value);
    }

    CHECK_THROWS_AS(load_checkpoint(testutil::write_file("bogus.ckpt", "not a checkpoint")),
                    std::runtime_error);
}

TEST_CASE("init_parameters is seeded and bounded") {
    const ModelConfig config = small_config(ConvKind::kGraphConv, 4);
    Rng a(123), b(123), c(124);
    const ModelParameters pa = init_parameters(config, a);
    const ModelParameters pb = init_parameters(config, b);
    const ModelParameters pc = init_parameters(config, c);
    for (std::size_t t = 0; t < pa.tensors.size(); ++t) {
        CHECK(pa.tensors[t].value == pb.tensors[t].value);
        if (pa.tensors[t].name.ends_with("bias")) {
            CHECK(pa.tensors[t].value.isZero(0.0));
        } else {
            const double bound =
                1.0 / std::sqrt(static_cast<double>(pa.tensors[t].value.rows()));
            CHECK(pa.tensors[t].value.cwiseAbs().maxCoeff() <= bound);
        }
    }
    CHECK(pa.at("conv0.weight_root") != pc.at("conv0.weight_root"));
}
