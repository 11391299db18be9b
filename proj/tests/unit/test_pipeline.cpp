#include <doctest.h>

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "meshgnn/pipeline.hpp"
#include "test_util.hpp"

using namespace meshgnn;

namespace {

// O(n^2) pair-counting oracle; integer counts, same final expression.
double pair_count_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    long long concordant = 0, tied = 0, n_pos = 0, n_neg = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] != 1) continue;
        ++n_pos;
        for (std::size_t j = 0; j < labels.size(); ++j) {
            if (labels[j] != 0) continue;
            if (scores[i] > scores[j])
                ++concordant;
            else if (scores[i] == scores[j])
                ++tied;
        }
    }
    for (int l : labels) n_neg += l == 0 ? 1 : 0;
    return (static_cast<double>(concordant) + 0.5 * static_cast<double>(tied)) /
           (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

double trapezoid_area(const std::vector<RocPoint>& roc) {
    double area = 0.0;
    for (std::size_t i = 1; i < roc.size(); ++i)
        area += (roc[i].fpr - roc[i - 1].fpr) * (roc[i].tpr + roc[i - 1].tpr) / 2.0;
    return area;
}

std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// A small on-disk dataset for manifest/train tests.
std::filesystem::path tiny_dataset(int n_samples, int n_structures, std::uint64_t seed) {
    SyntheticConfig config;
    config.n_samples = n_samples;
    config.n_structures = n_structures;
    config.seed = seed;
    const auto dir = testutil::scratch_dir() /
                     ("ds-" + std::to_string(n_samples) + "-" + std::to_string(n_structures) +
                      "-" + std::to_string(seed));
    std::filesystem::remove_all(dir);
    return gen_synthetic(config, dir);
}

}  // namespace

TEST_CASE("roc_auc hand cases") {
    CHECK(roc_auc({0.9, 0.1}, {1, 0}).second == 1.0);
    CHECK(roc_auc({0.1, 0.9}, {1, 0}).second == 0.0);
    CHECK(roc_auc({0.5, 0.5, 0.5, 0.5}, {1, 0, 1, 0}).second == 0.5);
    CHECK_THROWS_WITH_AS(roc_auc({0.1, 0.9}, {1, 1}), doctest::Contains("degenerate"),
                         std::runtime_error);
    CHECK_THROWS_AS(roc_auc({0.1}, {2}), std::invalid_argument);
}

TEST_CASE("roc_auc equals O(n^2) pair counting exactly") {
    Rng rng(7);
    for (int trial = 0; trial < 100; ++trial) {
        const int n = 2 + static_cast<int>(rng.bounded(199));
        std::vector<double> scores;
        std::vector<int> labels;
        bool has[2] = {false, false};
        for (int i = 0; i < n; ++i) {
            // Coarse grid forces plenty of score ties.
            scores.push_back(std::round(rng.uniform() * 8.0) / 8.0);
            labels.push_back(static_cast<int>(rng.bounded(2)));
            has[labels.back()] = true;
        }
        if (!has[0] || !has[1]) continue;
        const auto [roc, auc] = roc_auc(scores, labels);
        CHECK(auc == pair_count_auc(scores, labels));
        CHECK(std::abs(trapezoid_area(roc) - auc) < 1e-12);
    }
}

TEST_CASE("roc curves are anchored and monotone") {
    Rng rng(15);
    std::vector<double> scores;
    std::vector<int> labels;
    for (int i = 0; i < 60; ++i) {
        scores.push_back(rng.uniform());
        labels.push_back(i % 2);
    }
    const auto [roc, auc] = roc_auc(scores, labels);
    REQUIRE(roc.size() >= 2);
    CHECK(roc.front().fpr == 0.0);
    CHECK(roc.front().tpr == 0.0);
    CHECK(roc.back().fpr == 1.0);
    CHECK(roc.back().tpr == 1.0);
    for (std::size_t i = 1; i < roc.size(); ++i) {
        CHECK(roc[i].fpr >= roc[i - 1].fpr);
        CHECK(roc[i].tpr >= roc[i - 1].tpr);
    }
    CHECK(auc >= 0.0);
    CHECK(auc <= 1.0);
}

TEST_CASE("age_group decade bins") {
    CHECK(age_group(18) == "[18,30)");
    CHECK(age_group(29.9) == "[18,30)");
    CHECK(age_group(30) == "[30,40)");
    CHECK(age_group(45) == "[40,50)");
    CHECK(age_group(97) == "[90,100)");
    CHECK(age_group(5) == "[0,18)");
}

TEST_CASE("stratified_metrics group behavior") {
    Rng rng(21);
    std::vector<double> scores;
    std::vector<int> labels;
    for (int i = 0; i < 40; ++i) {
        const int label = i % 2;
        labels.push_back(label);
        scores.push_back(label == 1 ? 0.6 + 0.4 * rng.uniform() : 0.4 * rng.uniform());
    }

    SUBCASE("one group equals the unstratified metrics") {
        const auto groups = stratified_metrics(scores, labels,
                                               std::vector<std::string>(40, "all"));
        REQUIRE(groups.count("all") == 1);
        CHECK(groups.at("all").auc == roc_auc(scores, labels).second);
        CHECK(groups.at("all").n_samples == 40);
    }
    SUBCASE("identical score/label multisets give identical AUC") {
        std::vector<std::string> halves;
        for (int i = 0; i < 40; ++i) halves.push_back(i < 20 ? "first" : "second");
        std::vector<double> doubled(scores.begin(), scores.begin() + 20);
        doubled.insert(doubled.end(), scores.begin(), scores.begin() + 20);
        std::vector<int> doubled_labels(labels.begin(), labels.begin() + 20);
        doubled_labels.insert(doubled_labels.end(), labels.begin(), labels.begin() + 20);
        const auto groups = stratified_metrics(doubled, doubled_labels, halves);
        CHECK(groups.at("first").auc == groups.at("second").auc);
    }
    SUBCASE("shuffled labels depress one group's AUC") {
        std::vector<double> s2 = scores;
        std::vector<int> l2 = labels;
        std::vector<std::string> groups2(40, "A");
        Rng shuffle_rng(5);
        for (int i = 0; i < 40; ++i) {
            s2.push_back(scores[static_cast<std::size_t>(i)]);
            l2.push_back(static_cast<int>(shuffle_rng.bounded(2)));
            groups2.push_back("B");
        }
        // Guard against an all-one-class shuffle.
        l2[40] = 0;
        l2[41] = 1;
        const auto groups = stratified_metrics(s2, l2, groups2);
        CHECK(groups.at("A").auc > groups.at("B").auc);
    }
    SUBCASE("single-class groups report accuracy only") {
        const auto groups = stratified_metrics({0.9, 0.2}, {1, 1}, {"g", "g"});
        CHECK(groups.at("g").degenerate);
        CHECK(groups.at("g").accuracy == 0.5);  // 0.9 -> predict 1, 0.2 -> predict 0
    }
}

TEST_CASE("split is stratified, deterministic, and a partition") {
    Manifest manifest;
    manifest.n_structures = 1;
    for (int i = 0; i < 100; ++i) {
        ManifestRow row;
        row.sample_id = "s" + std::to_string(i);
        row.label = i < 50 ? 0 : 1;
        row.mesh_paths = {"unused.off"};
        manifest.rows.push_back(row);
    }

    const SplitResult parts = split(manifest, {0.7, 0.1, 0.2}, 11);
    CHECK(parts.train.rows.size() == 70);
    CHECK(parts.val.rows.size() == 10);
    CHECK(parts.test.rows.size() == 20);
    auto count_label = [](const Manifest& m, int label) {
        int n = 0;
        for (const auto& r : m.rows) n += r.label == label ? 1 : 0;
        return n;
    };
    CHECK(count_label(parts.train, 0) == 35);
    CHECK(count_label(parts.val, 1) == 5);
    CHECK(count_label(parts.test, 0) == 10);

    const SplitResult again = split(manifest, {0.7, 0.1, 0.2}, 11);
    for (std::size_t i = 0; i < parts.train.rows.size(); ++i)
        CHECK(parts.train.rows[i].sample_id == again.train.rows[i].sample_id);

    std::set<std::string> seen;
    for (const Manifest* m : {&parts.train, &parts.val, &parts.test})
        for (const auto& r : m->rows) CHECK(seen.insert(r.sample_id).second);
    CHECK(seen.size() == 100);

    const SplitResult all_train = split(manifest, {1.0, 0.0, 0.0}, 3);
    CHECK(all_train.train.rows.size() == 100);
    CHECK(all_train.val.rows.empty());
    CHECK(all_train.test.rows.empty());

    CHECK_THROWS_AS(split(manifest, {0.5, 0.1, 0.2}, 0), std::invalid_argument);
}

TEST_CASE("manifest round trip and validation") {
    const auto manifest_path = tiny_dataset(6, 2, 5);
    const Manifest manifest = load_manifest(manifest_path);
    CHECK(manifest.n_structures == 2);
    CHECK(manifest.rows.size() == 6);
    CHECK(manifest.rows[0].sample_id == "sample_0000");
    CHECK(manifest.rows[1].label == 1);
    for (const auto& row : manifest.rows)
        for (const auto& p : row.mesh_paths) CHECK(std::filesystem::exists(p));

    const auto copy_path = testutil::scratch_dir() / "manifest-copy.csv";
    save_manifest(manifest, copy_path);
    const Manifest reloaded = load_manifest(copy_path);
    REQUIRE(reloaded.rows.size() == manifest.rows.size());
    for (std::size_t i = 0; i < manifest.rows.size(); ++i) {
        CHECK(reloaded.rows[i].sample_id == manifest.rows[i].sample_id);
        CHECK(reloaded.rows[i].label == manifest.rows[i].label);
        CHECK(reloaded.rows[i].metadata.sex == manifest.rows[i].metadata.sex);
        CHECK(reloaded.rows[i].mesh_paths == manifest.rows[i].mesh_paths);
    }

    SUBCASE("duplicate ids are rejected") {
        const auto mesh = testutil::write_file("dup-mesh.off",
                                               "OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n");
        const std::string name = mesh.filename().string();
        const auto bad = testutil::write_file(
            "dup.csv", "sample_id,label,age,sex,group,mesh_0\na,0,30,F,A," + name +
                           "\na,1,40,M,B," + name + "\n");
        CHECK_THROWS_WITH_AS(load_manifest(bad), doctest::Contains("duplicate"),
                             std::runtime_error);
    }
    SUBCASE("missing files are rejected") {
        const auto bad = testutil::write_file(
            "missing.csv", "sample_id,label,age,sex,group,mesh_0\na,0,30,F,A,nope.off\n");
        CHECK_THROWS_WITH_AS(load_manifest(bad), doctest::Contains("not found"),
                             std::runtime_error);
    }
    SUBCASE("negative labels are rejected") {
        const auto mesh = testutil::write_file("m.off", "OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n");
        const auto bad = testutil::write_file(
            "label.csv", "sample_id,label,age,sex,group,mesh_0\na,-1,30,F,A," +
                             mesh.filename().string() + "\n");
        CHECK_THROWS_WITH_AS(load_manifest(bad), doctest::Contains("label"),
                             std::runtime_error);
    }
}

TEST_CASE("gen_synthetic is deterministic and shaped as declared") {
    SyntheticConfig config;
    config.n_samples = 6;
    config.n_structures = 3;
    config.seed = 77;
    const auto dir_a = testutil::scratch_dir() / "gen-a";
    const auto dir_b = testutil::scratch_dir() / "gen-b";
    std::filesystem::remove_all(dir_a);
    std::filesystem::remove_all(dir_b);
    const auto manifest_a = gen_synthetic(config, dir_a);
    const auto manifest_b = gen_synthetic(config, dir_b);

    CHECK(read_file(manifest_a) == read_file(manifest_b));
    CHECK(read_file(dir_a / "sample_0000/structure_00.off") ==
          read_file(dir_b / "sample_0000/structure_00.off"));

    const Manifest manifest = load_manifest(manifest_a);
    CHECK(manifest.n_structures == 3);
    REQUIRE(manifest.rows.size() == 6);
    for (std::size_t i = 0; i < 6; ++i) CHECK(manifest.rows[i].label == static_cast<int>(i % 2));

    const Mesh mesh = load_off(manifest.rows[0].mesh_paths[0]);
    CHECK(mesh.vertex_count() == 162);
    CHECK(mesh.face_count() == 320);
    CHECK_NOTHROW(validate_mesh(mesh));
}

TEST_CASE("gen_synthetic handles relative output directories") {
    SyntheticConfig config;
    config.n_samples = 4;
    config.n_structures = 1;
    config.seed = 2;
    const auto previous = std::filesystem::current_path();
    std::filesystem::current_path(testutil::scratch_dir());
    std::filesystem::remove_all("rel-out");
    const auto manifest_path = gen_synthetic(config, "rel-out");
    const Manifest manifest = load_manifest(manifest_path);
    std::filesystem::current_path(previous);
    REQUIRE(manifest.rows.size() == 4);
    for (const auto& row : manifest.rows)
        for (const auto& p : row.mesh_paths) CHECK(std::filesystem::exists(p));
}

TEST_CASE("class bump enlarges even structures of class-1 samples") {
    SyntheticConfig config;
    config.n_samples = 4;
    config.n_structures = 1;
    config.class_effect = 0.5;
    config.seed = 9;
    const auto dir = testutil::scratch_dir() / "gen-bump";
    std::filesystem::remove_all(dir);
    const Manifest manifest = load_manifest(gen_synthetic(config, dir));

    auto max_radius = [](const Mesh& mesh) {
        Vec3 centroid = Vec3::Zero();
        for (const Vec3& v : mesh.vertices) centroid += v;
        centroid /= static_cast<double>(mesh.vertices.size());
        double best = 0.0;
        for (const Vec3& v : mesh.vertices) best = std::max(best, (v - centroid).norm());
        return best;
    };
    const double class0 = max_radius(load_off(manifest.rows[0].mesh_paths[0]));
    const double class1 = max_radius(load_off(manifest.rows[1].mesh_paths[0]));
    CHECK(class1 > class0 + 1.0);  // bump amplitude is 4 mm against 0.64 mm noise
}

TEST_CASE("train with zero epochs checkpoints the initial parameters") {
    const auto manifest_path = tiny_dataset(12, 1, 31);
    const Manifest manifest = load_manifest(manifest_path);

    TrainConfig config;
    config.seed = 5;
    config.max_epochs = 0;
    config.batch_size = 4;
    config.feature_mode = FeatureMode::kConstant;
    config.model.conv_kind = ConvKind::kGcn;
    config.model.hidden = 4;
    config.threads = 1;

    const auto out = testutil::scratch_dir() / "zero-epochs.ckpt";
    const TrainResult result = train(config, manifest, out);
    CHECK(result.log.empty());

    const Checkpoint ckpt = load_checkpoint(out);
    Rng rng(5);
    const ModelParameters expect = init_parameters(ckpt.config, rng);
    REQUIRE(ckpt.params.tensors.size() == expect.tensors.size());
    for (std::size_t t = 0; t < expect.tensors.size(); ++t)
        CHECK(ckpt.params.tensors[t].value == expect.tensors[t].value);
}

TEST_CASE("training runs are reproducible and evaluation recounts accuracy") {
    const auto manifest_path = tiny_dataset(24, 2, 13);
    const Manifest manifest = load_manifest(manifest_path);

    TrainConfig config;
    config.seed = 3;
    config.max_epochs = 2;
    config.batch_size = 8;
    config.aug_offset = 0.1;
    config.feature_mode = FeatureMode::kPositional;
    config.model.conv_kind = ConvKind::kGraphConv;
    config.model.hidden = 8;
    config.threads = 1;

    const auto out_a = testutil::scratch_dir() / "repro-a.ckpt";
    const auto out_b = testutil::scratch_dir() / "repro-b.ckpt";
    train(config, manifest, out_a);
    train(config, manifest, out_b);
    CHECK(read_file(out_a) == read_file(out_b));
    CHECK(read_file(out_a.string() + ".epochs.csv") == read_file(out_b.string() + ".epochs.csv"));

    // Accuracy recount oracle via predict_probabilities.
    const Checkpoint ckpt = load_checkpoint(out_a);
    const Manifest test_manifest = load_manifest(out_a.string() + ".split-test.csv");
    const Metrics metrics = evaluate(ckpt, test_manifest, 1);
    int correct = 0;
    for (const auto& row : test_manifest.rows) {
        const Eigen::VectorXd probs = predict_probabilities(ckpt, row.mesh_paths);
        CHECK(probs.sum() == doctest::Approx(1.0).epsilon(1e-12));
        Eigen::Index arg = 0;
        probs.maxCoeff(&arg);
        correct += static_cast<int>(arg) == row.label ? 1 : 0;
    }
    CHECK(metrics.accuracy ==
          doctest::Approx(static_cast<double>(correct) /
                          static_cast<double>(test_manifest.rows.size())));
    CHECK(metrics.n_samples == static_cast<int>(test_manifest.rows.size()));
}

TEST_CASE("evaluate rejects mismatched checkpoints") {
    const auto manifest_path = tiny_dataset(12, 1, 31);
    const Manifest manifest = load_manifest(manifest_path);

    TrainConfig config;
    config.max_epochs = 0;
    config.feature_mode = FeatureMode::kConstant;
    config.model.conv_kind = ConvKind::kGcn;
    config.model.hidden = 4;
    config.threads = 1;
    const auto out = testutil::scratch_dir() / "mismatch.ckpt";
    train(config, manifest, out);
    Checkpoint ckpt = load_checkpoint(out);
    ckpt.config.n_structures = 3;
    CHECK_THROWS_WITH_AS(evaluate(ckpt, manifest, 1), doctest::Contains("n_structures"),
                         std::runtime_error);
}

TEST_CASE("predict validates the mesh file count") {
    const auto manifest_path = tiny_dataset(12, 2, 37);
    const Manifest manifest = load_manifest(manifest_path);
    TrainConfig config;
    config.max_epochs = 0;
    config.feature_mode = FeatureMode::kConstant;
    config.model.conv_kind = ConvKind::kGcn;
    config.model.hidden = 4;
    config.threads = 1;
    const auto out = testutil::scratch_dir() / "predict.ckpt";
    train(config, manifest, out);
    const Checkpoint ckpt = load_checkpoint(out);
    CHECK_THROWS_WITH_AS(predict_probabilities(ckpt, {manifest.rows[0].mesh_paths[0]}),
                         doctest::Contains("expected 2 mesh files"), std::runtime_error);
    // Zero-parameter checkpoints emit uniform probabilities.
    Checkpoint zeroed = ckpt;
    for (auto& t : zeroed.params.tensors) t.value.setZero();
    const Eigen::VectorXd probs = predict_probabilities(zeroed, manifest.rows[0].mesh_paths);
    CHECK(probs[0] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(probs[1] == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("feature cache round trip and mismatch rejection") {
    const auto cache_dir = testutil::scratch_dir() / "feature-cache";
    std::filesystem::remove_all(cache_dir);
    const auto mesh_path = testutil::write_file("cache-mesh.off",
                                                "OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n");
    Eigen::MatrixXd features(3, 2);
    features << 1.0, -2.0, 3.25, 0.0, 1e-17, 42.0;

    const FpfhParams params{10.0, 100, 11};
    write_feature_cache(cache_dir, mesh_path, FeatureMode::kPositional, params, features);
    const Eigen::MatrixXd back =
        read_feature_cache(cache_dir, mesh_path, FeatureMode::kPositional, params);
    CHECK(back == features);

    const FpfhParams other{5.0, 100, 11};
    CHECK(read_feature_cache(cache_dir, mesh_path, FeatureMode::kPositional, other).size() == 0);
    CHECK(read_feature_cache(cache_dir, mesh_path, FeatureMode::kFpfh, params).size() == 0);
}

TEST_CASE("metrics writers cover text and csv") {
    Metrics m;
    m.n_samples = 4;
    m.accuracy = 0.75;
    m.auc = 0.875;
    m.roc = {{0, 0}, {0.5, 1}, {1, 1}};
    Metrics sub;
    sub.n_samples = 2;
    sub.accuracy = 0.5;
    sub.degenerate = true;
    m.groups.emplace("sex:F", sub);

    std::ostringstream text;
    write_metrics(m, text, false);
    CHECK(text.str().find("auc 0.875") != std::string::npos);
    CHECK(text.str().find("group sex:F") != std::string::npos);
    CHECK(text.str().find("single-class") != std::string::npos);

    std::ostringstream csv;
    write_metrics(m, csv, true);
    CHECK(csv.str().find("all,auc,0.875") != std::string::npos);
    CHECK(csv.str().find("sex:F,degenerate,1") != std::string::npos);
    CHECK(csv.str().find("all,roc,0.5 1") != std::string::npos);
}
