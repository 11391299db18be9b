#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "meshgnn/graph.hpp"
#include "meshgnn/nn.hpp"

namespace meshgnn {

// ---- dataset manifests ---------------------------------------------------

/// One manifest row: id, class label, group fields, and the N mesh files
/// in structure order.
struct ManifestRow {
    std::string sample_id;
    int label = 0;
    SampleMetadata metadata;
    std::vector<std::filesystem::path> mesh_paths;  // absolute after load
};

struct Manifest {
    std::vector<ManifestRow> rows;
    int n_structures = 0;
};

/// Reads a manifest CSV (header sample_id,label,age,sex,group,mesh_0,...).
/// Mesh paths are resolved relative to the CSV's directory; leading '#'
/// comment lines are skipped. Validates unique ids and file existence.
Manifest load_manifest(const std::filesystem::path& csv_path);

/// Writes the schema above with mesh paths relative to the CSV's directory.
void save_manifest(const Manifest& manifest, const std::filesystem::path& csv_path);

/// Loads every sample of a manifest (meshes from disk, features computed).
std::vector<Sample> load_samples(const Manifest& manifest, FeatureMode mode,
                                 const FpfhParams& params = {}, int threads = 0,
                                 const std::filesystem::path& cache_dir = {});

// ---- feature cache ---------------------------------------------------------

/// Writes one mesh's feature table; the name encodes mode and parameters so
/// stale caches never match.
std::filesystem::path write_feature_cache(const std::filesystem::path& cache_dir,
                                          const std::filesystem::path& mesh_path,
                                          FeatureMode mode, const FpfhParams& params,
                                          const Eigen::MatrixXd& features);

/// Returns the cached table, or an empty matrix when absent/mismatched.
Eigen::MatrixXd read_feature_cache(const std::filesystem::path& cache_dir,
                                   const std::filesystem::path& mesh_path, FeatureMode mode,
                                   const FpfhParams& params);

// ---- splits ----------------------------------------------------------------

struct SplitFractions {
    double train = 0.7;
    double val = 0.1;
    double test = 0.2;
};

struct SplitResult {
    Manifest train;
    Manifest val;
    Manifest test;
};

/// Label-stratified shuffle split; deterministic per seed; the three parts
/// partition the input.
SplitResult split(const Manifest& manifest, const SplitFractions& fractions,
                  std::uint64_t seed);

// ---- metrics ----------------------------------------------------------------

struct RocPoint {
    double fpr = 0.0;
    double tpr = 0.0;
};

struct Metrics {
    int n_samples = 0;
    double accuracy = 0.0;
    double auc = 0.0;
    bool degenerate = false;  // single-class label set: accuracy only
    std::vector<RocPoint> roc;
    std::map<std::string, Metrics> groups;
};

/// ROC threshold sweep over distinct scores plus Mann-Whitney AUC
/// (ties count half). Throws on single-class label sets.
std::pair<std::vector<RocPoint>, double> roc_auc(const std::vector<double>& scores,
                                                 const std::vector<int>& labels);

/// Decade bin label for stratified evaluation; the first adult bin is
/// [18,30).
std::string age_group(double age_years);

/// Metrics per group value, computed independently within each group.
/// Single-class groups get accuracy only (degenerate flag set).
std::map<std::string, Metrics> stratified_metrics(const std::vector<double>& scores,
                                                  const std::vector<int>& labels,
                                                  const std::vector<std::string>& groups);

/// Text (human) or CSV (machine) rendering of a Metrics tree.
void write_metrics(const Metrics& metrics, std::ostream& out, bool csv);

// ---- training and evaluation -------------------------------------------------

struct TrainConfig {
    std::uint64_t seed = 0;
    int batch_size = 128;
    double lr = 1e-3;
    int max_epochs = 50;
    double aug_offset = 0.0;  // mm
    SplitFractions fractions;
    FeatureMode feature_mode = FeatureMode::kFpfh;
    FpfhParams fpfh_params;
    ModelConfig model;
    int threads = 0;  // 0 = auto
    std::filesystem::path cache_dir;
};

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0.0;
    double val_auc = 0.0;
};

struct TrainResult {
    std::filesystem::path checkpoint_path;
    std::vector<EpochRecord> log;
    int best_epoch = 0;
    double best_val_auc = 0.0;
};

/// Mini-batch Adam over augmented training samples with best-validation
/// checkpointing. Writes the checkpoint to `out_checkpoint`, the epoch log
/// CSV next to it (<out>.epochs.csv), and the three split manifests
/// (<out>.split-{train,val,test}.csv).
TrainResult train(const TrainConfig& config, const Manifest& manifest,
                  const std::filesystem::path& out_checkpoint,
                  std::ostream* progress = nullptr);

/// Runs the model over a manifest without augmentation and computes ROC,
/// AUC, accuracy, and per-group breakdowns (sex, age decade, group).
Metrics evaluate(const Checkpoint& checkpoint, const Manifest& manifest, int threads = 0);
Metrics evaluate(const std::filesystem::path& checkpoint_path,
                 const std::filesystem::path& manifest_path, int threads = 0);

/// Class probabilities for one sample given as N mesh files in structure
/// order, using the checkpoint's feature settings.
Eigen::VectorXd predict_probabilities(const Checkpoint& checkpoint,
                                      const std::vector<std::filesystem::path>& mesh_paths);

// ---- synthetic data ------------------------------------------------------------

enum class PoseMode { kAligned, kRandom };
enum class DomainShift { kNone, kTranslate, kScale };

PoseMode pose_mode_from_string(const std::string& name);
DomainShift domain_shift_from_string(const std::string& name);

struct SyntheticConfig {
    int n_samples = 100;
    int n_structures = 4;
    double class_effect = 0.3;  // bump amplitude as a fraction of base radius
    PoseMode pose_mode = PoseMode::kAligned;
    DomainShift domain_shift = DomainShift::kNone;
    std::uint64_t seed = 0;
};

/// Writes a synthetic multi-structure dataset (deformed icospheres at
/// subcortical scale) plus its manifest; returns the manifest path.
/// Class 1 samples carry a smooth bump on even-indexed structures with
/// amplitude class_effect * base radius.
std::filesystem::path gen_synthetic(const SyntheticConfig& config,
                                    const std::filesystem::path& out_dir);

}  // namespace meshgnn
