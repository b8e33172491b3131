#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "mtrans/kspace.hpp"
#include "mtrans/metrics.hpp"
#include "mtrans/model.hpp"
#include "mtrans/tensor.hpp"

namespace mtrans {

/// Sub-seed streams fanned out from one master seed. Weight init, the two
/// phantom pools, per-sample degradation, and batch order each get an
/// independent generator so changing one never perturbs the others.
enum SeedStream : uint64_t {
  seed_init = 0,
  seed_train_phantoms = 1,
  seed_train_degrade = 2,
  seed_batch_order = 3,
  seed_eval_phantoms = 4,
  seed_eval_degrade = 5,
};

/// Recipe for paired-modality phantoms: both modalities are rendered from
/// one shared set of soft-edged ellipses, so their structure matches while
/// their intensity mappings differ (modality B inverts contrast and adds a
/// smooth modality-specific bias field).
struct SyntheticPhantomSpec {
  size_t H = 32, W = 32;
  size_t min_ellipses = 3, max_ellipses = 6;
  uint64_t seed = 0;
};

struct PhantomPair {
  Tensor img_a;  // auxiliary modality, values in [0, 1], max exactly 1
  Tensor img_b;  // target modality, same geometry, remapped intensities
};

/// Deterministic per (spec.seed, index); draw order is documented in the
/// implementation so streams stay stable across refactors.
PhantomPair make_synthetic_pair(const SyntheticPhantomSpec& spec, size_t index);

enum class AuxMode : uint8_t { paired = 0, noise = 1, self = 2 };
std::string aux_mode_name(AuxMode m);
AuxMode aux_mode_from_name(const std::string& name);

std::string mask_kind_name(MaskKind k);
MaskKind mask_kind_from_name(const std::string& name);

/// Degradation applied to the target modality plus the choice of auxiliary
/// input. accel = 1 means fully sampled (no mask); for super-resolution the
/// scale comes from `s`.
struct DatasetParams {
  Task task = Task::reconstruction;
  MaskKind mask_kind = MaskKind::random;
  unsigned accel = 4;
  double center_fraction = 0.08;
  size_t s = 2;
  AuxMode aux_mode = AuxMode::paired;
  uint64_t degrade_seed = 0;
};

std::vector<DegradedSample> build_dataset(size_t n, const DatasetParams& dp,
                                          const SyntheticPhantomSpec& spec);

/// p <- p - lr * g, plain SGD. Gradients come in registry order, one per
/// parameter, as produced by Tape::backward.
void sgd_step(ParamStore& params, const std::vector<Tensor>& grads, double lr);

struct TrainConfig {
  MTransConfig model;
  double lr = 1e-4;
  size_t batch = 4;
  size_t steps = 200;
  size_t train_samples = 8;
  size_t eval_samples = 4;
  MaskKind mask_kind = MaskKind::random;
  unsigned accel = 4;
  double center_fraction = 0.08;
  AuxMode aux_mode = AuxMode::paired;
  uint64_t seed = 0;

  void validate() const;
};

/// Flat key=value text ('#' comments and blank lines allowed). Unknown keys
/// are hard errors so typos in ablation matrices fail loudly.
TrainConfig parse_train_config(const std::string& text);
TrainConfig load_train_config(const std::string& path);
std::string serialize_train_config(const TrainConfig& tc);
nlohmann::ordered_json train_config_json(const TrainConfig& tc);

/// The datasets a config implies: phantom and degradation streams fanned out
/// from the config seed, training and held-out pools fully independent.
std::vector<DegradedSample> build_train_dataset(const TrainConfig& tc);
std::vector<DegradedSample> build_eval_dataset(const TrainConfig& tc);

struct TrainReport {
  TrainConfig config;
  std::vector<double> losses;  // batch loss per step, before the update
  double initial_loss = 0.0;   // full training set, initial weights
  double final_loss = 0.0;     // full training set, final weights
  MetricSummary eval;          // held-out metrics, per-sample values kept
  double wall_seconds = 0.0;   // informational; never serialized
};

/// Line-oriented log and JSON summary. Both are byte-deterministic for a
/// given report; wall-clock time is deliberately left out.
std::string train_report_log(const TrainReport& r);
std::string train_report_json(const TrainReport& r);

struct TrainResult {
  TrainReport report;
  MTransParams params;
};

/// Runs the loop: seeded batch order, forward both branches, the combined
/// L1 objective, backward, SGD. A non-finite loss aborts with the step and
/// per-parameter norms in the message. `checkpoint_path`, when nonempty,
/// receives the final weights.
TrainResult train(const TrainConfig& tc, const std::string& checkpoint_path = "");

/// Forward every sample and score the target reconstruction against ground
/// truth (peak = per-sample ground-truth max). jobs > 1 splits the samples
/// across threads; results are stored by index so aggregation is identical
/// regardless of thread count.
MetricSummary evaluate(const ParamStore& params, const MTransConfig& cfg,
                       const std::vector<DegradedSample>& dataset,
                       size_t jobs = 1);

struct AblationCell {
  std::string name;
  TrainConfig config;  // seed field is overwritten per run
};

struct AblationPairTest {
  std::string cell_a, cell_b;
  double mean_diff_psnr = 0.0;  // mean over paired samples of (a - b)
  double mean_diff_ssim = 0.0;
  double mean_diff_nmse = 0.0;
  TTestResult psnr_test;
  TTestResult ssim_test;
  TTestResult nmse_test;
};

struct AblationReport {
  std::vector<std::string> cell_names;
  std::vector<uint64_t> seeds;
  std::vector<std::vector<TrainReport>> reports;  // [cell][seed]
  std::vector<AblationPairTest> pairs;            // all cell pairs, a < b
};

/// Trains every cell over the same seed list (so datasets pair up across
/// cells), pools per-sample held-out metrics seed-major, and runs paired
/// t-tests between every pair of cells.
AblationReport run_ablation(const std::vector<AblationCell>& cells,
                            const std::vector<uint64_t>& seeds);

/// Matrix file: "seeds s1,s2,...", "base.<key> <value>" defaults, and
/// "cell.<name>.<key> <value>" overrides; cells appear in first-mention
/// order. '#' comments and blank lines allowed.
struct AblationMatrix {
  std::vector<AblationCell> cells;
  std::vector<uint64_t> seeds;
};
AblationMatrix parse_ablation_matrix(const std::string& text);

std::string ablation_report_log(const AblationReport& r);
std::string ablation_report_json(const AblationReport& r);

}  // namespace mtrans
