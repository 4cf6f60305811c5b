#pragma once

// Training recipe: Adam with coupled weight decay, learning rate halved at
// fixed fractions of the run, BCE + soft Dice loss, best-validation-Dice
// checkpoint selection. Deterministic for a given configuration and seed.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "scp/config.hpp"
#include "scp/metrics.hpp"
#include "scp/model.hpp"
#include "scp/synthdata.hpp"

namespace scp {
inline namespace SCP_PRECISION_NS {

enum class LossKind { BceDice, Bce, Dice };

struct TrainConfig {
  double lr = 1e-3;
  double weight_decay = 1e-6;
  std::size_t batch_size = 14;
  std::size_t epochs = 90;
  std::vector<double> lr_milestones = {0.5, 0.7, 0.9};
  std::uint64_t seed = 0;
  ModelConfig model;
  LossKind loss = LossKind::BceDice;
  Connectivity connectivity = Connectivity::Eight;
  bool ldice_doubled = false;

  void validate() const;
};

// Applies one `key=value` setting; false when the key is unknown.
bool apply_train_key(TrainConfig& cfg, const std::string& key, const std::string& value);
std::string config_to_text(const TrainConfig& cfg);
TrainConfig config_from_key_values(const KeyValues& kv);

// lr0 * 2^-(number of milestones m with epoch >= m * epochs)
double lr_at_epoch(const TrainConfig& cfg, std::size_t epoch);

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t step = 0;
  std::vector<std::vector<double>> m, v;
};

// One Adam update of every tensor from its gradient, with the decay term
// weight_decay * param added to the gradient. Throws NumericError on a
// non-finite gradient, leaving parameters untouched.
void adam_step(std::span<Tensor> params, AdamState& state, double lr, double weight_decay);

// logits [1,H,W] against a mask. BceDice = mean BCE + (1 - soft Dice),
// soft Dice = (2 sum(p g) + 1) / (sum(p) + sum(g) + 1), p = sigmoid(logits).
Tensor loss_bce_dice(Graph& g, const Tensor& logits, const BinaryMask& mask, LossKind kind = LossKind::BceDice);

struct EvalResult {
  std::vector<LesionMetricsReport> cases;
  LesionMetricsReport mean;
};

// Binarizes sigmoid(logits) at 0.5.
BinaryMask predict_mask(const Segmenter& model, const Tensor& image);
EvalResult evaluate(const Segmenter& model, std::span<const Sample> samples, const LesionOptions& options = {});

struct RunRecord {
  std::uint64_t seed = 0;
  TrainConfig config;
  std::vector<double> train_loss;  // per epoch
  std::vector<double> val_dice;    // per epoch
  std::vector<double> lr;          // per epoch
  std::size_t best_epoch = 0;      // 0 = initialization
  EvalResult test;
};

struct TrainOptions {
  // Called after every epoch with (epoch index, record so far).
  std::function<void(std::size_t, const RunRecord&)> on_epoch;
};

struct TrainResult {
  RunRecord record;
  Segmenter model;  // best validation Dice weights
};

TrainResult train(const TrainConfig& cfg, std::span<const Sample> train_set, std::span<const Sample> val_set,
                  const TrainOptions& options = {});

// Checkpoint directory: tensors + manifest.txt + config.txt.
void save_model(const std::filesystem::path& dir, const Segmenter& model, const TrainConfig& cfg);
std::pair<TrainConfig, Segmenter> load_model(const std::filesystem::path& dir);
void write_history_csv(const std::filesystem::path& path, const RunRecord& record);

struct RunComparison {
  TTestResult dice;
  TTestResult l_dice;
};

// Paired two-tailed t-tests on per-case Dice and L-Dice. The two lists must
// describe the same cases in the same order.
RunComparison compare_runs(std::span<const LesionMetricsReport> a, std::span<const LesionMetricsReport> b);

// Multi-seed comparison of head variants and capacities on one dataset.
struct Arm {
  HeadVariant head = HeadVariant::Scp;
  std::size_t n_c = 32;

  std::string label() const;
};

struct ArmResult {
  Arm arm;
  std::vector<RunRecord> runs;               // one per seed
  std::vector<LesionMetricsReport> per_case;  // test cases averaged over seeds
  LesionMetricsReport mean;                  // mean over runs
  std::size_t params = 0;
};

struct ExperimentResult {
  std::vector<ArmResult> arms;
  // t-tests of every arm against arms[0]
  std::vector<std::pair<std::string, RunComparison>> comparisons;
};

// `on_model` sees every trained model (best validation weights) before it
// is discarded.
using ModelVisitor = std::function<void(const Arm&, std::uint64_t seed, const TrainConfig&, const Segmenter&)>;
ExperimentResult run_experiment(const TrainConfig& base, const std::vector<Arm>& arms,
                                const std::vector<std::uint64_t>& seeds, const Dataset& data,
                                const std::function<void(const std::string&)>& log = {},
                                const ModelVisitor& on_model = {});

std::string format_experiment(const ExperimentResult& result);

}  // namespace SCP_PRECISION_NS
}  // namespace scp
