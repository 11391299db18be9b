#include "meshgnn/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "meshgnn/threading.hpp"

namespace meshgnn {

namespace {

std::string format_g17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string format_g9(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            fields.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur += ch;
        }
    }
    fields.push_back(cur);
    return fields;
}

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

std::filesystem::path cache_file_for(const std::filesystem::path& cache_dir,
                                     const std::filesystem::path& mesh_path, FeatureMode mode,
                                     const FpfhParams& params) {
    std::ostringstream key;
    key << std::filesystem::absolute(mesh_path).string() << '|' << to_string(mode) << '|'
        << format_g17(params.radius) << '|' << params.max_neighbors << '|' << params.bins;
    char hex[24];
    std::snprintf(hex, sizeof hex, "%016llx",
                  static_cast<unsigned long long>(fnv1a(key.str())));
    return cache_dir / (mesh_path.stem().string() + "-" + hex + ".feat");
}

}  // namespace

// ---- manifests -------------------------------------------------------------

Manifest load_manifest(const std::filesystem::path& csv_path) {
    std::ifstream in(csv_path);
    if (!in) throw std::runtime_error("cannot open manifest " + csv_path.string());
    const std::filesystem::path dir = std::filesystem::absolute(csv_path).parent_path();

    std::string line;
    std::size_t line_no = 0;
    auto next_line = [&]() -> bool {
        while (std::getline(in, line)) {
            ++line_no;
            if (line.empty() || line[0] == '#') continue;
            return true;
        }
        return false;
    };

    if (!next_line()) throw std::runtime_error(csv_path.string() + ": missing header");
    const auto header = split_csv_line(line);
    const std::vector<std::string> fixed = {"sample_id", "label", "age", "sex", "group"};
    if (header.size() < fixed.size() + 1)
        throw std::runtime_error(csv_path.string() + ": header needs at least one mesh column");
    for (std::size_t i = 0; i < fixed.size(); ++i)
        if (header[i] != fixed[i])
            throw std::runtime_error(csv_path.string() + ": header column " + std::to_string(i) +
                                     " must be \"" + fixed[i] + "\"");
    const int n_structures = static_cast<int>(header.size() - fixed.size());
    for (int s = 0; s < n_structures; ++s)
        if (header[fixed.size() + static_cast<std::size_t>(s)] != "mesh_" + std::to_string(s))
            throw std::runtime_error(csv_path.string() + ": expected column mesh_" +
                                     std::to_string(s));

    Manifest manifest;
    manifest.n_structures = n_structures;
    std::set<std::string> ids;
    while (next_line()) {
        const auto fields = split_csv_line(line);
        if (fields.size() != header.size())
            throw std::runtime_error(csv_path.string() + ":" + std::to_string(line_no) +
                                     ": expected " + std::to_string(header.size()) + " fields");
        ManifestRow row;
        row.sample_id = fields[0];
        if (!ids.insert(row.sample_id).second)
            throw std::runtime_error(csv_path.string() + ":" + std::to_string(line_no) +
                                     ": duplicate sample_id " + row.sample_id);
        try {
            row.label = std::stoi(fields[1]);
            row.metadata.age = std::stod(fields[2]);
        } catch (const std::exception&) {
            throw std::runtime_error(csv_path.string() + ":" + std::to_string(line_no) +
                                     ": malformed label or age");
        }
        if (row.label < 0)
            throw std::runtime_error(csv_path.string() + ":" + std::to_string(line_no) +
                                     ": label must be >= 0");
        row.metadata.sex = fields[3];
        row.metadata.group = fields[4];
        for (int s = 0; s < n_structures; ++s) {
            std::filesystem::path p = fields[5 + static_cast<std::size_t>(s)];
            if (p.is_relative()) p = dir / p;
            if (!std::filesystem::exists(p))
                throw std::runtime_error(csv_path.string() + ":" + std::to_string(line_no) +
                                         ": mesh file not found: " + p.string());
            row.mesh_paths.push_back(p.lexically_normal());
        }
        manifest.rows.push_back(std::move(row));
    }
    return manifest;
}

void save_manifest(const Manifest& manifest, const std::filesystem::path& csv_path) {
    std::ofstream out(csv_path);
    if (!out) throw std::runtime_error("cannot write manifest " + csv_path.string());
    const std::filesystem::path dir = std::filesystem::absolute(csv_path).parent_path();
    out << "sample_id,label,age,sex,group";
    for (int s = 0; s < manifest.n_structures; ++s) out << ",mesh_" << s;
    out << '\n';
    for (const ManifestRow& row : manifest.rows) {
        out << row.sample_id << ',' << row.label << ',' << format_g9(row.metadata.age) << ','
            << row.metadata.sex << ',' << row.metadata.group;
        for (const auto& p : row.mesh_paths) {
            const auto abs = std::filesystem::absolute(p).lexically_normal();
            out << ',' << abs.lexically_proximate(dir).generic_string();
        }
        out << '\n';
    }
    if (!out) throw std::runtime_error("write failed for " + csv_path.string());
}

// ---- feature cache -----------------------------------------------------------

std::filesystem::path write_feature_cache(const std::filesystem::path& cache_dir,
                                          const std::filesystem::path& mesh_path,
                                          FeatureMode mode, const FpfhParams& params,
                                          const Eigen::MatrixXd& features) {
    std::filesystem::create_directories(cache_dir);
    const auto path = cache_file_for(cache_dir, mesh_path, mode, params);
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write feature cache " + path.string());
    out << "meshgnn-features 1 mode=" << to_string(mode) << " radius=" << format_g17(params.radius)
        << " max_neighbors=" << params.max_neighbors << " bins=" << params.bins
        << " rows=" << features.rows() << " cols=" << features.cols() << '\n';
    for (Eigen::Index r = 0; r < features.rows(); ++r) {
        for (Eigen::Index c = 0; c < features.cols(); ++c) {
            if (c) out << ' ';
            out << format_g17(features(r, c));
        }
        out << '\n';
    }
    if (!out) throw std::runtime_error("write failed for " + path.string());
    return path;
}

Eigen::MatrixXd read_feature_cache(const std::filesystem::path& cache_dir,
                                   const std::filesystem::path& mesh_path, FeatureMode mode,
                                   const FpfhParams& params) {
    const auto path = cache_file_for(cache_dir, mesh_path, mode, params);
    std::ifstream in(path);
    if (!in) return {};
    try {
        std::string magic, version;
        in >> magic >> version;
        if (magic != "meshgnn-features" || version != "1") return {};
        const std::string expect = "mode=" + to_string(mode);
        std::string tok;
        bool mode_ok = false, radius_ok = false, nbrs_ok = false, bins_ok = false;
        while (in >> tok && tok.rfind("rows=", 0) != 0) {
            if (tok == expect) mode_ok = true;
            if (tok == "radius=" + format_g17(params.radius)) radius_ok = true;
            if (tok == "max_neighbors=" + std::to_string(params.max_neighbors)) nbrs_ok = true;
            if (tok == "bins=" + std::to_string(params.bins)) bins_ok = true;
        }
        if (!in || !(mode_ok && radius_ok && nbrs_ok && bins_ok)) return {};
        const long rows = std::stol(tok.substr(5));
        if (!(in >> tok) || tok.rfind("cols=", 0) != 0) return {};
        const long cols = std::stol(tok.substr(5));
        if (rows < 0 || cols < 0) return {};
        Eigen::MatrixXd m(rows, cols);
        for (Eigen::Index r = 0; r < m.rows(); ++r)
            for (Eigen::Index c = 0; c < m.cols(); ++c)
                if (!(in >> m(r, c))) return {};
        return m;
    } catch (const std::exception&) {
        return {};  // malformed caches are misses, never errors
    }
}

// ---- sample loading ------------------------------------------------------------

namespace {

Sample load_one_sample(const ManifestRow& row, FeatureMode mode, const FpfhParams& params,
                       const std::filesystem::path& cache_dir) {
    Sample sample;
    sample.sample_id = row.sample_id;
    sample.label = row.label;
    sample.metadata = row.metadata;
    sample.feature_mode = mode;
    sample.fpfh_params = params;
    sample.meshes.reserve(row.mesh_paths.size());
    for (const auto& p : row.mesh_paths) sample.meshes.push_back(load_off(p));
    sample.graphs.reserve(sample.meshes.size());
    for (std::size_t s = 0; s < sample.meshes.size(); ++s) {
        const Mesh& mesh = sample.meshes[s];
        validate_mesh(mesh);
        Graph g;
        g.structure_id = static_cast<int>(s);
        g.edges = edges_from_faces(mesh);
        g.edge_attrs = edge_attributes(mesh.vertices, g.edges);
        g.node_positions = mesh.vertices;
        Eigen::MatrixXd cached;
        if (!cache_dir.empty())
            cached = read_feature_cache(cache_dir, row.mesh_paths[s], mode, params);
        if (cached.rows() == static_cast<Eigen::Index>(mesh.vertices.size()) &&
            cached.cols() == feature_dim(mode))
            g.node_features = std::move(cached);
        else
            g.node_features = node_features(mesh, mode, params);
        sample.graphs.push_back(std::move(g));
    }
    return sample;
}

}  // namespace

std::vector<Sample> load_samples(const Manifest& manifest, FeatureMode mode,
                                 const FpfhParams& params, int threads,
                                 const std::filesystem::path& cache_dir) {
    std::vector<Sample> samples(manifest.rows.size());
    parallel_for(manifest.rows.size(), resolve_threads(threads), [&](std::size_t i) {
        samples[i] = load_one_sample(manifest.rows[i], mode, params, cache_dir);
    });
    return samples;
}

// ---- splits ----------------------------------------------------------------------

SplitResult split(const Manifest& manifest, const SplitFractions& fractions,
                  std::uint64_t seed) {
    if (fractions.train < 0 || fractions.val < 0 || fractions.test < 0 ||
        std::abs(fractions.train + fractions.val + fractions.test - 1.0) > 1e-9)
        throw std::invalid_argument("split fractions must be non-negative and sum to 1");

    std::map<int, std::vector<std::size_t>> by_label;
    for (std::size_t i = 0; i < manifest.rows.size(); ++i)
        by_label[manifest.rows[i].label].push_back(i);

    Rng rng(seed);
    std::vector<std::size_t> train_idx, val_idx, test_idx;
    for (auto& [label, indices] : by_label) {
        rng.shuffle(indices);
        const double n = static_cast<double>(indices.size());
        // Cumulative round-half-up keeps the three parts a partition.
        const auto cut1 = static_cast<std::size_t>(std::floor(n * fractions.train + 0.5));
        const auto cut2 = static_cast<std::size_t>(
            std::floor(n * (fractions.train + fractions.val) + 0.5));
        for (std::size_t k = 0; k < indices.size(); ++k) {
            if (k < cut1)
                train_idx.push_back(indices[k]);
            else if (k < cut2)
                val_idx.push_back(indices[k]);
            else
                test_idx.push_back(indices[k]);
        }
        if (cut1 == 0 || cut2 == cut1 || cut2 == indices.size())
            std::cerr << "warning: label " << label << " has an empty split part\n";
    }

    auto build = [&](std::vector<std::size_t>& idx) {
        std::sort(idx.begin(), idx.end());
        Manifest part;
        part.n_structures = manifest.n_structures;
        part.rows.reserve(idx.size());
        for (std::size_t i : idx) part.rows.push_back(manifest.rows[i]);
        return part;
    };
    return {build(train_idx), build(val_idx), build(test_idx)};
}

// ---- metrics -----------------------------------------------------------------------

std::pair<std::vector<RocPoint>, double> roc_auc(const std::vector<double>& scores,
                                                 const std::vector<int>& labels) {
    if (scores.size() != labels.size())
        throw std::invalid_argument("roc_auc: scores/labels length mismatch");
    long long n_pos = 0, n_neg = 0;
    for (int l : labels) {
        if (l == 1)
            ++n_pos;
        else if (l == 0)
            ++n_neg;
        else
            throw std::invalid_argument("roc_auc: labels must be 0 or 1");
    }
    if (n_pos == 0 || n_neg == 0) throw std::runtime_error("degenerate label set");

    std::vector<std::size_t> order(scores.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return scores[a] > scores[b];
    });

    // Threshold sweep over distinct scores, ties grouped.
    std::vector<RocPoint> roc;
    roc.push_back({0.0, 0.0});
    long long tp = 0, fp = 0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) {
            if (labels[order[j]] == 1)
                ++tp;
            else
                ++fp;
            ++j;
        }
        roc.push_back({static_cast<double>(fp) / static_cast<double>(n_neg),
                       static_cast<double>(tp) / static_cast<double>(n_pos)});
        i = j;
    }

    // Mann-Whitney: concordant pairs plus half the tied pairs, counted in
    // one ascending sweep.
    long long concordant = 0, tied = 0, neg_below = 0;
    std::vector<std::size_t> asc(order.rbegin(), order.rend());
    std::size_t k = 0;
    while (k < asc.size()) {
        std::size_t j = k;
        long long pos_here = 0, neg_here = 0;
        while (j < asc.size() && scores[asc[j]] == scores[asc[k]]) {
            if (labels[asc[j]] == 1)
                ++pos_here;
            else
                ++neg_here;
            ++j;
        }
        concordant += pos_here * neg_below;
        tied += pos_here * neg_here;
        neg_below += neg_here;
        k = j;
    }
    const double auc = (static_cast<double>(concordant) + 0.5 * static_cast<double>(tied)) /
                       (static_cast<double>(n_pos) * static_cast<double>(n_neg));
    return {std::move(roc), auc};
}

std::string age_group(double age_years) {
    if (age_years < 18.0) return "[0,18)";
    if (age_years < 30.0) return "[18,30)";
    const int decade = static_cast<int>(std::floor(age_years / 10.0)) * 10;
    return "[" + std::to_string(decade) + "," + std::to_string(decade + 10) + ")";
}

namespace {

Metrics metrics_from_scores(const std::vector<double>& scores, const std::vector<int>& labels,
                            const std::vector<int>& predictions) {
    Metrics m;
    m.n_samples = static_cast<int>(labels.size());
    long long correct = 0;
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (predictions[i] == labels[i]) ++correct;
    m.accuracy = labels.empty() ? 0.0
                                : static_cast<double>(correct) / static_cast<double>(labels.size());
    const bool has_pos = std::find(labels.begin(), labels.end(), 1) != labels.end();
    const bool has_neg = std::find(labels.begin(), labels.end(), 0) != labels.end();
    const bool binary_only =
        std::all_of(labels.begin(), labels.end(), [](int l) { return l == 0 || l == 1; });
    if (has_pos && has_neg && binary_only) {
        auto [roc, auc] = roc_auc(scores, labels);
        m.roc = std::move(roc);
        m.auc = auc;
    } else {
        m.degenerate = true;
    }
    return m;
}

}  // namespace

std::map<std::string, Metrics> stratified_metrics(const std::vector<double>& scores,
                                                  const std::vector<int>& labels,
                                                  const std::vector<std::string>& groups) {
    if (scores.size() != labels.size() || scores.size() != groups.size())
        throw std::invalid_argument("stratified_metrics: length mismatch");
    std::map<std::string, std::vector<std::size_t>> members;
    for (std::size_t i = 0; i < groups.size(); ++i) members[groups[i]].push_back(i);

    std::map<std::string, Metrics> out;
    for (const auto& [name, idx] : members) {
        std::vector<double> s;
        std::vector<int> l, p;
        s.reserve(idx.size());
        l.reserve(idx.size());
        for (std::size_t i : idx) {
            s.push_back(scores[i]);
            l.push_back(labels[i]);
            p.push_back(scores[i] >= 0.5 ? 1 : 0);
        }
        out.emplace(name, metrics_from_scores(s, l, p));
    }
    return out;
}

void write_metrics(const Metrics& metrics, std::ostream& out, bool csv) {
    if (csv) {
        out << "group,key,value\n";
        auto emit = [&out](const std::string& g, const Metrics& m) {
            out << g << ",samples," << m.n_samples << '\n';
            out << g << ",accuracy," << format_g9(m.accuracy) << '\n';
            if (m.degenerate)
                out << g << ",degenerate,1\n";
            else
                out << g << ",auc," << format_g9(m.auc) << '\n';
            for (const RocPoint& p : m.roc)
                out << g << ",roc," << format_g9(p.fpr) << ' ' << format_g9(p.tpr) << '\n';
        };
        emit("all", metrics);
        for (const auto& [name, sub] : metrics.groups) emit(name, sub);
        return;
    }
    auto emit = [&out](const std::string& header, const Metrics& m) {
        if (!header.empty()) out << "group " << header << '\n';
        out << "samples " << m.n_samples << '\n';
        out << "accuracy " << format_g9(m.accuracy) << '\n';
        if (m.degenerate)
            out << "auc n/a (single-class)\n";
        else
            out << "auc " << format_g9(m.auc) << '\n';
        out << "roc " << m.roc.size() << '\n';
        for (const RocPoint& p : m.roc)
            out << format_g9(p.fpr) << ' ' << format_g9(p.tpr) << '\n';
    };
    emit("", metrics);
    for (const auto& [name, sub] : metrics.groups) emit(name, sub);
}

// ---- training ---------------------------------------------------------------------

namespace {

// Softmax probability of class 1 plus argmax prediction, batched.
void score_samples(const ModelParameters& params, const ModelConfig& config,
                   const std::vector<Sample>& samples, int batch_size,
                   std::vector<double>& scores, std::vector<int>& predictions) {
    scores.clear();
    predictions.clear();
    for (std::size_t begin = 0; begin < samples.size();
         begin += static_cast<std::size_t>(batch_size)) {
        const std::size_t end =
            std::min(samples.size(), begin + static_cast<std::size_t>(batch_size));
        std::vector<const Sample*> chunk;
        chunk.reserve(end - begin);
        for (std::size_t i = begin; i < end; ++i) chunk.push_back(&samples[i]);
        const Eigen::MatrixXd probs = softmax(model_forward(params, config, make_batch(chunk)));
        for (Eigen::Index r = 0; r < probs.rows(); ++r) {
            scores.push_back(probs(r, 1));
            Eigen::Index arg = 0;
            probs.row(r).maxCoeff(&arg);
            predictions.push_back(static_cast<int>(arg));
        }
    }
}

}  // namespace

TrainResult train(const TrainConfig& config, const Manifest& manifest,
                  const std::filesystem::path& out_checkpoint, std::ostream* progress) {
    if (config.batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    if (config.max_epochs < 0) throw std::invalid_argument("max_epochs must be >= 0");
    if (config.aug_offset < 0) throw std::invalid_argument("aug must be >= 0");
    if (!(config.lr > 0)) throw std::invalid_argument("lr must be > 0");

    ModelConfig model = config.model;
    model.n_structures = manifest.n_structures;
    model.input_dim = feature_dim(config.feature_mode);
    int max_label = 1;
    for (const ManifestRow& row : manifest.rows) max_label = std::max(max_label, row.label);
    model.n_classes = max_label + 1;
    validate_config(model);

    SplitResult parts = split(manifest, config.fractions, config.seed);
    if (parts.train.rows.empty()) throw std::runtime_error("empty train split");
    if (parts.val.rows.empty() && config.max_epochs > 0)
        throw std::runtime_error("empty validation split");

    const auto base = out_checkpoint.string();
    save_manifest(parts.train, base + ".split-train.csv");
    save_manifest(parts.val, base + ".split-val.csv");
    save_manifest(parts.test, base + ".split-test.csv");

    const int threads = resolve_threads(config.threads);
    // Caching baseline features is only sound when augmentation never
    // perturbs them.
    const std::filesystem::path cache =
        config.aug_offset == 0.0 ? config.cache_dir : std::filesystem::path{};
    std::vector<Sample> train_samples =
        load_samples(parts.train, config.feature_mode, config.fpfh_params, threads, cache);
    std::vector<Sample> val_samples =
        load_samples(parts.val, config.feature_mode, config.fpfh_params, threads, cache);

    Rng init_rng(config.seed);
    ModelParameters params = init_parameters(model, init_rng);
    AdamState adam = make_adam_state(params);

    TrainResult result;
    result.best_epoch = 0;
    result.best_val_auc = -1.0;
    ModelParameters best_params = params;

    std::vector<int> val_labels;
    for (const Sample& s : val_samples) val_labels.push_back(s.label);

    if (progress) *progress << "epoch,train_loss,val_auc\n" << std::flush;

    std::vector<std::size_t> order(train_samples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
        Rng shuffle_rng(derive_seed(config.seed, 0x5u, static_cast<std::uint64_t>(epoch)));
        shuffle_rng.shuffle(order);

        double loss_sum = 0.0;
        for (std::size_t begin = 0; begin < order.size();
             begin += static_cast<std::size_t>(config.batch_size)) {
            const std::size_t end =
                std::min(order.size(), begin + static_cast<std::size_t>(config.batch_size));

            std::vector<Sample> staging;
            std::vector<const Sample*> chunk(end - begin, nullptr);
            if (config.aug_offset > 0.0) {
                staging.resize(end - begin);
                parallel_for(end - begin, threads, [&](std::size_t k) {
                    const std::size_t sample_idx = order[begin + k];
                    Rng aug_rng(derive_seed(config.seed, static_cast<std::uint64_t>(epoch),
                                            static_cast<std::uint64_t>(sample_idx)));
                    staging[k] = augment(train_samples[sample_idx], config.aug_offset, aug_rng);
                });
                for (std::size_t k = 0; k < staging.size(); ++k) chunk[k] = &staging[k];
            } else {
                for (std::size_t k = 0; k < chunk.size(); ++k)
                    chunk[k] = &train_samples[order[begin + k]];
            }

            Batch batch = make_batch(chunk);
            ModelParameters grads;
            const double loss = backward(params, model, batch, batch.labels, grads);
            adam_step(params, grads, adam, config.lr);
            loss_sum += loss * static_cast<double>(end - begin);
        }
        const double train_loss = loss_sum / static_cast<double>(train_samples.size());

        std::vector<double> val_scores;
        std::vector<int> val_preds;
        score_samples(params, model, val_samples, config.batch_size, val_scores, val_preds);
        double val_auc;
        try {
            val_auc = roc_auc(val_scores, val_labels).second;
        } catch (const std::runtime_error&) {
            // Single-class validation split: fall back to accuracy so model
            // selection still has a signal.
            long long correct = 0;
            for (std::size_t i = 0; i < val_labels.size(); ++i)
                if (val_preds[i] == val_labels[i]) ++correct;
            val_auc = static_cast<double>(correct) / static_cast<double>(val_labels.size());
            std::cerr << "warning: validation split is single-class; using accuracy\n";
        }

        result.log.push_back({epoch, train_loss, val_auc});
        if (progress)
            *progress << epoch << ',' << format_g17(train_loss) << ',' << format_g17(val_auc)
                      << '\n'
                      << std::flush;
        if (val_auc > result.best_val_auc) {
            result.best_val_auc = val_auc;
            result.best_epoch = epoch;
            best_params = params;
        }
    }

    Checkpoint ckpt;
    ckpt.config = model;
    ckpt.feature_mode = config.feature_mode;
    ckpt.fpfh_params = config.fpfh_params;
    ckpt.aug_offset = config.aug_offset;
    ckpt.seed = config.seed;
    ckpt.params = std::move(best_params);
    save_checkpoint(ckpt, out_checkpoint);

    std::ofstream log_out(base + ".epochs.csv");
    if (!log_out) throw std::runtime_error("cannot write epoch log " + base + ".epochs.csv");
    log_out << "epoch,train_loss,val_auc\n";
    for (const EpochRecord& r : result.log)
        log_out << r.epoch << ',' << format_g17(r.train_loss) << ',' << format_g17(r.val_auc)
                << '\n';

    result.checkpoint_path = out_checkpoint;
    return result;
}

// ---- evaluation ----------------------------------------------------------------------

Metrics evaluate(const Checkpoint& checkpoint, const Manifest& manifest, int threads) {
    if (manifest.n_structures != checkpoint.config.n_structures)
        throw std::runtime_error("n_structures mismatch: checkpoint has " +
                                 std::to_string(checkpoint.config.n_structures) +
                                 ", manifest has " + std::to_string(manifest.n_structures));
    for (const ManifestRow& row : manifest.rows)
        if (row.label >= checkpoint.config.n_classes)
            throw std::runtime_error("label " + std::to_string(row.label) + " of sample " +
                                     row.sample_id + " exceeds checkpoint n_classes=" +
                                     std::to_string(checkpoint.config.n_classes));

    const std::vector<Sample> samples = load_samples(
        manifest, checkpoint.feature_mode, checkpoint.fpfh_params, threads);
    std::vector<int> labels;
    for (const Sample& s : samples) labels.push_back(s.label);

    std::vector<double> scores;
    std::vector<int> predictions;
    score_samples(checkpoint.params, checkpoint.config, samples, 128, scores, predictions);

    Metrics metrics = metrics_from_scores(scores, labels, predictions);

    auto add_groups = [&](const std::string& prefix, auto&& value_of) {
        std::vector<std::string> g;
        g.reserve(samples.size());
        for (const Sample& s : samples) g.push_back(prefix + value_of(s));
        for (auto& [name, sub] : stratified_metrics(scores, labels, g))
            metrics.groups.emplace(name, std::move(sub));
    };
    add_groups("sex:", [](const Sample& s) { return s.metadata.sex; });
    add_groups("age:", [](const Sample& s) { return age_group(s.metadata.age); });
    add_groups("group:", [](const Sample& s) { return s.metadata.group; });
    return metrics;
}

Metrics evaluate(const std::filesystem::path& checkpoint_path,
                 const std::filesystem::path& manifest_path, int threads) {
    return evaluate(load_checkpoint(checkpoint_path), load_manifest(manifest_path), threads);
}

Eigen::VectorXd predict_probabilities(const Checkpoint& checkpoint,
                                      const std::vector<std::filesystem::path>& mesh_paths) {
    if (static_cast<int>(mesh_paths.size()) != checkpoint.config.n_structures)
        throw std::runtime_error("expected " + std::to_string(checkpoint.config.n_structures) +
                                 " mesh files, got " + std::to_string(mesh_paths.size()));
    std::vector<Mesh> meshes;
    meshes.reserve(mesh_paths.size());
    for (const auto& p : mesh_paths) meshes.push_back(load_off(p));
    const Sample sample =
        assemble_sample(std::move(meshes), 0, {}, checkpoint.feature_mode,
                        checkpoint.config.n_structures, "predict", checkpoint.fpfh_params);
    std::vector<const Sample*> one{&sample};
    const Eigen::MatrixXd probs =
        softmax(model_forward(checkpoint.params, checkpoint.config, make_batch(one)));
    return probs.row(0).transpose();
}

PoseMode pose_mode_from_string(const std::string& name) {
    if (name == "aligned") return PoseMode::kAligned;
    if (name == "random") return PoseMode::kRandom;
    throw std::invalid_argument("unknown pose mode \"" + name + "\" (expected aligned or random)");
}

DomainShift domain_shift_from_string(const std::string& name) {
    if (name == "none") return DomainShift::kNone;
    if (name == "translate") return DomainShift::kTranslate;
    if (name == "scale") return DomainShift::kScale;
    throw std::invalid_argument("unknown domain shift \"" + name +
                                "\" (expected none, translate, or scale)");
}

}  // namespace meshgnn
