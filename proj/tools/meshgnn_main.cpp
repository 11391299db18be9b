// meshgnn command line: synthetic data generation, feature extraction,
// training, evaluation, and single-sample prediction.

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#include "meshgnn/pipeline.hpp"
#include "meshgnn/threading.hpp"

namespace {

namespace fs = std::filesystem;
using namespace meshgnn;

CLI::Validator non_negative(const std::string& flag) {
    return CLI::Validator(
        [flag](std::string& value) -> std::string {
            try {
                if (std::stod(value) < 0.0) return flag + " must be >= 0";
            } catch (const std::exception&) {
                return flag + " must be a number";
            }
            return {};
        },
        "NONNEGATIVE");
}

struct CommonTrainFlags {
    std::string manifest;
    std::string conv = "spline";
    std::string features = "fpfh";
    double aug = 0.0;          // mm
    std::uint64_t seed = 0;
    int epochs = 50;
    int batch = 128;
    double lr = 0.001;
    int hidden = 32;
    int structures = 0;        // 0 = infer from manifest
    int kernel_size = 5;
    double radius = 10.0;      // mm
    int max_neighbors = 100;
    std::string out;
    std::string cache_dir;
    int threads = 0;
};

int run_gen_synthetic(const SyntheticConfig& config, const std::string& out_dir) {
    const fs::path manifest = gen_synthetic(config, out_dir);
    std::cout << manifest.string() << '\n';
    return 0;
}

int run_extract_features(const std::string& manifest_path, const std::string& features,
                         double radius, int max_neighbors, const std::string& cache_dir,
                         int threads) {
    const Manifest manifest = load_manifest(manifest_path);
    const FeatureMode mode = feature_mode_from_string(features);
    const FpfhParams params{radius, max_neighbors, 11};

    std::set<fs::path> unique_paths;
    for (const ManifestRow& row : manifest.rows)
        for (const fs::path& p : row.mesh_paths) unique_paths.insert(p);
    const std::vector<fs::path> paths(unique_paths.begin(), unique_paths.end());

    parallel_for(paths.size(), resolve_threads(threads), [&](std::size_t i) {
        const Mesh mesh = load_off(paths[i]);
        write_feature_cache(cache_dir, paths[i], mode, params, node_features(mesh, mode, params));
    });
    std::cout << "cached " << paths.size() << " feature tables in " << cache_dir << '\n';
    return 0;
}

int run_train(const CommonTrainFlags& flags) {
    const Manifest manifest = load_manifest(flags.manifest);
    if (flags.structures > 0 && manifest.n_structures != flags.structures)
        throw std::runtime_error("manifest has " + std::to_string(manifest.n_structures) +
                                 " structures, --structures requested " +
                                 std::to_string(flags.structures));

    TrainConfig config;
    config.seed = flags.seed;
    config.batch_size = flags.batch;
    config.lr = flags.lr;
    config.max_epochs = flags.epochs;
    config.aug_offset = flags.aug;
    config.feature_mode = feature_mode_from_string(flags.features);
    config.fpfh_params = {flags.radius, flags.max_neighbors, 11};
    config.model.conv_kind = conv_kind_from_string(flags.conv);
    config.model.hidden = flags.hidden;
    config.model.spline_kernel_size = flags.kernel_size;
    config.threads = flags.threads;
    config.cache_dir = flags.cache_dir;

    const TrainResult result = train(config, manifest, flags.out, &std::cout);
    std::cout << "checkpoint " << result.checkpoint_path.string() << '\n';
    std::cout << "best_epoch " << result.best_epoch << '\n';
    std::cout << "best_val_auc " << result.best_val_auc << '\n';
    return 0;
}

int run_evaluate(const std::string& checkpoint, const std::string& manifest,
                 const std::string& out, const std::string& format, int threads) {
    const Metrics metrics = evaluate(fs::path(checkpoint), fs::path(manifest), threads);
    const bool csv = format == "csv";
    if (out.empty()) {
        write_metrics(metrics, std::cout, csv);
    } else {
        std::ofstream file(out);
        if (!file) throw std::runtime_error("cannot write " + out);
        write_metrics(metrics, file, csv);
        std::cerr << "metrics written to " << out << '\n';
    }
    return 0;
}

int run_predict(const std::string& checkpoint_path, const std::vector<std::string>& meshes,
                const std::string& format) {
    const Checkpoint checkpoint = load_checkpoint(checkpoint_path);
    std::vector<fs::path> paths(meshes.begin(), meshes.end());
    const Eigen::VectorXd probs = predict_probabilities(checkpoint, paths);
    if (format == "csv") {
        std::cout << "class,probability\n";
        for (Eigen::Index c = 0; c < probs.size(); ++c)
            std::cout << c << ',' << probs[c] << '\n';
    } else {
        for (Eigen::Index c = 0; c < probs.size(); ++c)
            std::cout << "class " << c << ": " << probs[c] << '\n';
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"meshgnn: multi-graph neural network shape classification on meshes"};
    app.require_subcommand(1);

    // gen-synthetic
    auto* gen = app.add_subcommand("gen-synthetic", "Generate a synthetic multi-structure dataset");
    SyntheticConfig gen_config;
    std::string gen_out, gen_pose = "aligned", gen_shift = "none";
    gen->add_option("--samples", gen_config.n_samples, "number of samples (>= 4)")
        ->default_val(100);
    gen->add_option("--structures", gen_config.n_structures, "structures per sample")
        ->default_val(4);
    gen->add_option("--class-effect", gen_config.class_effect,
                    "class bump amplitude, fraction of the 8 mm base radius")
        ->default_val(0.3)
        ->check(non_negative("class-effect"));
    gen->add_option("--pose", gen_pose, "mesh pose: aligned or random")
        ->default_val("aligned")
        ->check(CLI::IsMember({"aligned", "random"}));
    gen->add_option("--domain-shift", gen_shift,
                    "test-domain shift: none, translate (+100 mm), or scale (x1.1)")
        ->default_val("none")
        ->check(CLI::IsMember({"none", "translate", "scale"}));
    gen->add_option("--seed", gen_config.seed, "random seed")->default_val(0);
    gen->add_option("--out", gen_out, "output directory")->required();

    // extract-features
    auto* extract = app.add_subcommand("extract-features", "Precompute node feature caches");
    std::string ext_manifest, ext_features = "fpfh", ext_cache;
    double ext_radius = 10.0;
    int ext_max_neighbors = 100, ext_threads = 0;
    extract->add_option("--manifest", ext_manifest, "dataset manifest CSV")->required();
    extract->add_option("--features", ext_features, "constant, positional, or fpfh")
        ->default_val("fpfh")
        ->check(CLI::IsMember({"constant", "positional", "fpfh"}));
    extract->add_option("--radius", ext_radius, "FPFH sampling radius (mm)")->default_val(10.0);
    extract->add_option("--max-neighbors", ext_max_neighbors, "FPFH neighbor cap")
        ->default_val(100);
    extract->add_option("--cache-dir", ext_cache, "directory for feature cache files")
        ->required();
    extract->add_option("--threads", ext_threads, "worker cap (0 = MESHGNN_THREADS or hardware)")
        ->default_val(0);

    // train
    auto* tr = app.add_subcommand("train", "Train the shared-submodel classifier");
    CommonTrainFlags tf;
    tr->add_option("--manifest", tf.manifest, "dataset manifest CSV")->required();
    tr->add_option("--conv", tf.conv, "convolution: gcn, graphconv, or spline")
        ->default_val("spline")
        ->check(CLI::IsMember({"gcn", "graphconv", "spline"}));
    tr->add_option("--features", tf.features, "node features: constant, positional, or fpfh")
        ->default_val("fpfh")
        ->check(CLI::IsMember({"constant", "positional", "fpfh"}));
    tr->add_option("--aug", tf.aug, "max node translation offset (mm)")
        ->default_val(0.0)
        ->check(non_negative("aug"));
    tr->add_option("--seed", tf.seed, "random seed")->default_val(0);
    tr->add_option("--epochs", tf.epochs, "maximum training epochs")->default_val(50);
    tr->add_option("--batch", tf.batch, "mini-batch size")->default_val(128);
    tr->add_option("--lr", tf.lr, "Adam learning rate")->default_val(0.001);
    tr->add_option("--hidden", tf.hidden, "hidden feature width")->default_val(32);
    tr->add_option("--structures", tf.structures,
                   "expected structures per sample (0 = infer from manifest)")
        ->default_val(0);
    tr->add_option("--kernel-size", tf.kernel_size, "spline kernel size per dimension")
        ->default_val(5);
    tr->add_option("--radius", tf.radius, "FPFH sampling radius (mm)")->default_val(10.0);
    tr->add_option("--max-neighbors", tf.max_neighbors, "FPFH neighbor cap")->default_val(100);
    tr->add_option("--out", tf.out, "checkpoint output path")->required();
    tr->add_option("--cache-dir", tf.cache_dir,
                   "feature cache directory (used only when --aug 0)");
    tr->add_option("--threads", tf.threads, "worker cap (0 = MESHGNN_THREADS or hardware)")
        ->default_val(0);

    // evaluate
    auto* ev = app.add_subcommand("evaluate", "Evaluate a checkpoint on a manifest");
    std::string ev_checkpoint, ev_manifest, ev_out, ev_format = "text";
    int ev_threads = 0;
    ev->add_option("--checkpoint", ev_checkpoint, "trained checkpoint file")->required();
    ev->add_option("--manifest", ev_manifest, "dataset manifest CSV")->required();
    ev->add_option("--out", ev_out, "metrics output file (default: stdout)");
    ev->add_option("--format", ev_format, "output format: text or csv")
        ->default_val("text")
        ->check(CLI::IsMember({"text", "csv"}));
    ev->add_option("--threads", ev_threads, "worker cap (0 = MESHGNN_THREADS or hardware)")
        ->default_val(0);

    // predict
    auto* pr = app.add_subcommand("predict", "Class probabilities for one sample");
    std::string pr_checkpoint, pr_format = "text";
    std::vector<std::string> pr_meshes;
    pr->add_option("--checkpoint", pr_checkpoint, "trained checkpoint file")->required();
    pr->add_option("--format", pr_format, "output format: text or csv")
        ->default_val("text")
        ->check(CLI::IsMember({"text", "csv"}));
    pr->add_option("meshes", pr_meshes, "N mesh files in structure order")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);  // prints the right (sub)command help, exits 0
    } catch (const CLI::ParseError& e) {
        app.exit(e);  // message to stderr
        return 1;
    }

    try {
        if (gen->parsed()) {
            gen_config.pose_mode = pose_mode_from_string(gen_pose);
            gen_config.domain_shift = domain_shift_from_string(gen_shift);
            return run_gen_synthetic(gen_config, gen_out);
        }
        if (extract->parsed())
            return run_extract_features(ext_manifest, ext_features, ext_radius,
                                        ext_max_neighbors, ext_cache, ext_threads);
        if (tr->parsed()) return run_train(tf);
        if (ev->parsed())
            return run_evaluate(ev_checkpoint, ev_manifest, ev_out, ev_format, ev_threads);
        if (pr->parsed()) return run_predict(pr_checkpoint, pr_meshes, pr_format);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
