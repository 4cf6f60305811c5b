#include "scp/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "scp/tensor_io.hpp"

namespace scp {
inline namespace SCP_PRECISION_NS {

// ---- configuration ---------------------------------------------------------

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("lr must be > 0");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  double prev = 0.0;
  for (double m : lr_milestones) {
    if (!(m > prev && m < 1.0)) throw ConfigError("lr_milestones must be strictly increasing inside (0, 1)");
    prev = m;
  }
  model.backbone.validate();
  if (model.classes < 1) throw ConfigError("classes must be >= 1");
  if (model.phi_hidden < 1) throw ConfigError("phi_hidden must be >= 1");
}

bool apply_train_key(TrainConfig& cfg, const std::string& key, const std::string& value) {
  auto& m = cfg.model;
  if (key == "lr") cfg.lr = parse_double(key, value);
  else if (key == "weight_decay") cfg.weight_decay = parse_double(key, value);
  else if (key == "batch_size") cfg.batch_size = parse_size(key, value);
  else if (key == "epochs") cfg.epochs = parse_size(key, value);
  else if (key == "lr_milestones") cfg.lr_milestones = parse_double_list(key, value);
  else if (key == "seed") cfg.seed = parse_u64(key, value);
  else if (key == "head") m.head = parse_head_variant(value);
  else if (key == "n_c") m.backbone.n_c = parse_size(key, value);
  else if (key == "depth") m.backbone.depth = parse_size(key, value);
  else if (key == "in_channels") m.backbone.in_channels = parse_size(key, value);
  else if (key == "classes") m.classes = parse_size(key, value);
  else if (key == "phi_hidden") m.phi_hidden = parse_size(key, value);
  else if (key == "zero_init_phi_last") m.zero_init_phi_last = parse_bool(key, value);
  else if (key == "normalize_positions") m.normalize_positions = parse_bool(key, value);
  else if (key == "ldice_doubled") cfg.ldice_doubled = parse_bool(key, value);
  else if (key == "connectivity") {
    if (value == "4") cfg.connectivity = Connectivity::Four;
    else if (value == "8") cfg.connectivity = Connectivity::Eight;
    else throw ConfigError("connectivity must be 4 or 8, got '" + value + "'");
  } else if (key == "loss") {
    if (value == "bce_dice") cfg.loss = LossKind::BceDice;
    else if (value == "bce") cfg.loss = LossKind::Bce;
    else if (value == "dice") cfg.loss = LossKind::Dice;
    else throw ConfigError("loss must be bce_dice, bce or dice, got '" + value + "'");
  } else {
    return false;
  }
  return true;
}

std::string config_to_text(const TrainConfig& cfg) {
  std::ostringstream os;
  os.precision(17);
  const char* loss = cfg.loss == LossKind::BceDice ? "bce_dice" : cfg.loss == LossKind::Bce ? "bce" : "dice";
  os << "lr=" << cfg.lr << "\nweight_decay=" << cfg.weight_decay << "\nbatch_size=" << cfg.batch_size
     << "\nepochs=" << cfg.epochs << "\nlr_milestones=";
  for (std::size_t i = 0; i < cfg.lr_milestones.size(); ++i) os << (i ? "," : "") << cfg.lr_milestones[i];
  os << "\nseed=" << cfg.seed << "\nhead=" << to_string(cfg.model.head) << "\nn_c=" << cfg.model.backbone.n_c
     << "\ndepth=" << cfg.model.backbone.depth << "\nin_channels=" << cfg.model.backbone.in_channels
     << "\nclasses=" << cfg.model.classes << "\nphi_hidden=" << cfg.model.phi_hidden
     << "\nzero_init_phi_last=" << (cfg.model.zero_init_phi_last ? "true" : "false")
     << "\nnormalize_positions=" << (cfg.model.normalize_positions ? "true" : "false") << "\nloss=" << loss
     << "\nconnectivity=" << (cfg.connectivity == Connectivity::Four ? 4 : 8)
     << "\nldice_doubled=" << (cfg.ldice_doubled ? "true" : "false") << "\n";
  return os.str();
}

TrainConfig config_from_key_values(const KeyValues& kv) {
  TrainConfig cfg;
  for (const auto& [k, v] : kv) {
    if (!apply_train_key(cfg, k, v)) throw ConfigError("unknown training key '" + k + "'");
  }
  return cfg;
}

double lr_at_epoch(const TrainConfig& cfg, std::size_t epoch) {
  double lr = cfg.lr;
  for (double m : cfg.lr_milestones) {
    if (static_cast<double>(epoch) >= m * static_cast<double>(cfg.epochs)) lr *= 0.5;
  }
  return lr;
}

// ---- optimisation ----------------------------------------------------------

void adam_step(std::span<Tensor> params, AdamState& state, double lr, double weight_decay) {
  for (const auto& p : params) {
    for (real g : p.grad()) {
      if (!std::isfinite(static_cast<double>(g))) throw NumericError("adam_step: non-finite gradient");
    }
  }
  if (state.m.size() != params.size()) {
    state.m.assign(params.size(), {});
    state.v.assign(params.size(), {});
    for (std::size_t i = 0; i < params.size(); ++i) {
      state.m[i].assign(params[i].numel(), 0.0);
      state.v[i].assign(params[i].numel(), 0.0);
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto values = params[i].mutable_values();
    auto grad = params[i].grad();
    auto& m = state.m[i];
    auto& v = state.v[i];
    if (m.size() != values.size()) throw ContractError("adam_step: moment shape does not match parameter");
    for (std::size_t k = 0; k < values.size(); ++k) {
      const double g = (grad.empty() ? 0.0 : static_cast<double>(grad[k])) + weight_decay * values[k];
      m[k] = state.beta1 * m[k] + (1.0 - state.beta1) * g;
      v[k] = state.beta2 * v[k] + (1.0 - state.beta2) * g * g;
      const double step = lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + state.eps);
      values[k] = static_cast<real>(values[k] - step);
    }
  }
}

Tensor loss_bce_dice(Graph& g, const Tensor& logits, const BinaryMask& mask, LossKind kind) {
  if (logits.rank() != 3 || logits.dim(0) != 1 || logits.dim(1) != mask.height() || logits.dim(2) != mask.width()) {
    throw DimensionError("loss: logits " + shape_string(logits.shape()) + " do not match mask");
  }
  const Tensor target = mask.to_tensor();
  Tensor bce, dice_loss;
  if (kind != LossKind::Dice) {
    // log(1 + e^x) - x*y is the stable form of -[y log p + (1-y) log(1-p)]
    bce = mean(g, sub(g, softplus(g, logits), mul(g, logits, target)));
  }
  if (kind != LossKind::Bce) {
    const Tensor p = sigmoid(g, logits);
    const real target_sum = static_cast<real>(mask.count());
    const Tensor num = add_scalar(g, scale(g, sum(g, mul(g, p, target)), real(2)), real(1));
    const Tensor den = add_scalar(g, sum(g, p), target_sum + real(1));
    dice_loss = add_scalar(g, scale(g, div(g, num, den), real(-1)), real(1));
  }
  if (kind == LossKind::Bce) return bce;
  if (kind == LossKind::Dice) return dice_loss;
  return add(g, bce, dice_loss);
}

// ---- evaluation ------------------------------------------------------------

BinaryMask predict_mask(const Segmenter& model, const Tensor& image) {
  if (model.config().classes != 1) throw ContractError("predict_mask: binary models only");
  Graph g(false);
  // sigmoid(x) > 0.5 exactly when x > 0
  return BinaryMask::from_tensor(model.forward(g, image), 0.0);
}

EvalResult evaluate(const Segmenter& model, std::span<const Sample> samples, const LesionOptions& options) {
  if (model.config().classes != 1) throw ContractError("evaluate: binary models only");
  constexpr std::size_t kChunk = 32;
  EvalResult r;
  r.cases.reserve(samples.size());
  for (std::size_t start = 0; start < samples.size(); start += kChunk) {
    const std::size_t stop = std::min(samples.size(), start + kChunk);
    std::vector<Tensor> images;
    for (std::size_t i = start; i < stop; ++i) images.push_back(samples[i].image);
    Graph g(false);
    const auto logits = model.forward_batch(g, images);
    for (std::size_t i = start; i < stop; ++i) {
      r.cases.push_back(lesion_metrics(BinaryMask::from_tensor(logits[i - start], 0.0), samples[i].mask, options));
    }
  }
  r.mean = mean_report(r.cases);
  return r;
}

namespace {

NamedTensors snapshot(const Segmenter& model) {
  NamedTensors out;
  for (const auto& [name, t] : model.parameters()) out.emplace_back(name, t.clone());
  return out;
}

}  // namespace

TrainResult train(const TrainConfig& cfg, std::span<const Sample> train_set, std::span<const Sample> val_set,
                  const TrainOptions& options) {
  cfg.validate();
  if (train_set.empty()) throw ContractError("train: empty training set");
  const std::size_t mult = cfg.model.backbone.spatial_multiple();
  for (const auto* set : {&train_set, &val_set}) {
    for (const auto& s : *set) {
      if (s.image.rank() != 3 || s.image.dim(0) != cfg.model.backbone.in_channels || s.image.dim(1) % mult != 0 ||
          s.image.dim(2) % mult != 0) {
        throw DimensionError("train: sample " + shape_string(s.image.shape()) + " incompatible with backbone (" +
                             std::to_string(cfg.model.backbone.in_channels) + " channels, multiple of " +
                             std::to_string(mult) + ")");
      }
    }
  }

  TrainResult result{RunRecord{}, Segmenter(cfg.model, cfg.seed)};
  Segmenter& model = result.model;
  RunRecord& rec = result.record;
  rec.seed = cfg.seed;
  rec.config = cfg;

  NamedTensors named = model.parameters();
  std::vector<Tensor> params;
  for (auto& [name, t] : named) params.push_back(t);
  AdamState adam;
  const LesionOptions lesion_opts{cfg.connectivity, cfg.ldice_doubled};

  NamedTensors best = snapshot(model);
  double best_dice = -std::numeric_limits<double>::infinity();
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 shuffle_rng(cfg.seed ^ 0x5eed5eed5eed5eedULL);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_at_epoch(cfg, epoch);
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double total = 0.0;
    std::size_t step = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++step) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
      const real inv_batch = real(1) / static_cast<real>(stop - start);
      model.zero_grad();
      std::vector<Tensor> images;
      for (std::size_t k = start; k < stop; ++k) images.push_back(train_set[order[k]].image);
      Graph g;
      const auto logits = model.forward_batch(g, images);
      Tensor batch_loss;
      for (std::size_t k = start; k < stop; ++k) {
        const Tensor loss = loss_bce_dice(g, logits[k - start], train_set[order[k]].mask, cfg.loss);
        const double value = loss.item();
        if (!std::isfinite(value)) {
          throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", step " + std::to_string(step));
        }
        total += value;
        batch_loss = batch_loss.defined() ? add(g, batch_loss, loss) : loss;
      }
      g.backward(scale(g, batch_loss, inv_batch));
      try {
        adam_step(params, adam, lr, cfg.weight_decay);
      } catch (const NumericError& e) {
        throw NumericError(std::string(e.what()) + " at epoch " + std::to_string(epoch) + ", step " +
                           std::to_string(step));
      }
    }
    rec.train_loss.push_back(total / static_cast<double>(order.size()));
    rec.lr.push_back(lr);
    const double val_dice = val_set.empty() ? 0.0 : evaluate(model, val_set, lesion_opts).mean.dice;
    rec.val_dice.push_back(val_dice);
    if (val_dice > best_dice) {
      best_dice = val_dice;
      best = snapshot(model);
      rec.best_epoch = epoch + 1;
    }
    if (options.on_epoch) options.on_epoch(epoch, rec);
  }
  model.load(best);
  return result;
}

// ---- persistence -----------------------------------------------------------

void save_model(const std::filesystem::path& dir, const Segmenter& model, const TrainConfig& cfg) {
  save_checkpoint(dir, model.parameters());
  std::ofstream os(dir / "config.txt", std::ios::trunc);
  if (!os) throw IoError("cannot write " + (dir / "config.txt").string());
  os << config_to_text(cfg);
}

std::pair<TrainConfig, Segmenter> load_model(const std::filesystem::path& dir) {
  if (!std::filesystem::exists(dir / "config.txt")) throw IoError("missing " + (dir / "config.txt").string());
  TrainConfig cfg = config_from_key_values(read_key_values(dir / "config.txt"));
  Segmenter model(cfg.model, cfg.seed);
  model.load(load_checkpoint(dir));
  return {cfg, std::move(model)};
}

void write_history_csv(const std::filesystem::path& path, const RunRecord& record) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write " + path.string());
  os << "epoch,lr,train_loss,val_dice\n";
  char buf[128];
  for (std::size_t e = 0; e < record.train_loss.size(); ++e) {
    std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g,%.6f\n", e + 1, record.lr[e], record.train_loss[e], record.val_dice[e]);
    os << buf;
  }
}

// ---- comparisons -----------------------------------------------------------

RunComparison compare_runs(std::span<const LesionMetricsReport> a, std::span<const LesionMetricsReport> b) {
  if (a.size() != b.size()) {
    throw ContractError("compare_runs: case lists differ in length (" + std::to_string(a.size()) + " vs " +
                        std::to_string(b.size()) + ")");
  }
  std::vector<double> da, db, la, lb;
  for (std::size_t i = 0; i < a.size(); ++i) {
    da.push_back(a[i].dice);
    db.push_back(b[i].dice);
    la.push_back(a[i].l_dice);
    lb.push_back(b[i].l_dice);
  }
  return {paired_ttest(da, db), paired_ttest(la, lb)};
}

std::string Arm::label() const {
  std::string name;
  switch (head) {
    case HeadVariant::Base: name = "Base"; break;
    case HeadVariant::BaseF: name = "Base F"; break;
    case HeadVariant::BaseB: name = "Base B"; break;
    case HeadVariant::ScpMuSigma: name = "SCP-musigma"; break;
    case HeadVariant::Scp: name = "SCP"; break;
  }
  return name + " (" + std::to_string(n_c) + ")";
}

ExperimentResult run_experiment(const TrainConfig& base, const std::vector<Arm>& arms,
                                const std::vector<std::uint64_t>& seeds, const Dataset& data,
                                const std::function<void(const std::string&)>& log, const ModelVisitor& on_model) {
  if (arms.empty() || seeds.empty()) throw ContractError("run_experiment: need at least one arm and one seed");
  ExperimentResult out;
  const LesionOptions lesion_opts{base.connectivity, base.ldice_doubled};
  for (const auto& arm : arms) {
    ArmResult ar;
    ar.arm = arm;
    std::vector<LesionMetricsReport> run_means;
    for (auto seed : seeds) {
      TrainConfig cfg = base;
      cfg.model.head = arm.head;
      cfg.model.backbone.n_c = arm.n_c;
      cfg.seed = seed;
      TrainResult tr = train(cfg, data.train, data.val);
      tr.record.test = evaluate(tr.model, data.test, lesion_opts);
      ar.params = tr.model.param_count();
      run_means.push_back(tr.record.test.mean);
      if (log) {
        char buf[160];
        std::snprintf(buf, sizeof buf, "%-14s seed=%llu best_epoch=%zu test_dice=%.4f l_f1=%.4f",
                      arm.label().c_str(), static_cast<unsigned long long>(seed), tr.record.best_epoch,
                      tr.record.test.mean.dice, tr.record.test.mean.l_f1);
        log(buf);
      }
      if (on_model) on_model(arm, seed, cfg, tr.model);
      ar.runs.push_back(std::move(tr.record));
    }
    const std::size_t n_cases = ar.runs.front().test.cases.size();
    for (std::size_t c = 0; c < n_cases; ++c) {
      std::vector<LesionMetricsReport> per_seed;
      for (const auto& run : ar.runs) per_seed.push_back(run.test.cases[c]);
      ar.per_case.push_back(mean_report(per_seed));
    }
    ar.mean = mean_report(run_means);
    out.arms.push_back(std::move(ar));
  }
  for (std::size_t i = 1; i < out.arms.size(); ++i) {
    RunComparison cmp;
    try {
      cmp = compare_runs(out.arms[i].per_case, out.arms[0].per_case);
    } catch (const StatisticsError&) {
      const double nan = std::numeric_limits<double>::quiet_NaN();
      cmp.dice = {nan, nan, out.arms[0].per_case.size()};
      cmp.l_dice = cmp.dice;
    }
    out.comparisons.emplace_back(out.arms[i].arm.label() + " vs " + out.arms[0].arm.label(), cmp);
  }
  return out;
}

std::string format_experiment(const ExperimentResult& result) {
  std::ostringstream os;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-16s %10s %8s %8s %8s %8s %8s %8s\n", "model", "params", "Dice", "sd", "L-Dice",
                "L-F1", "L-PPV", "L-TPR");
  os << buf;
  for (const auto& a : result.arms) {
    double sd = 0.0;
    for (const auto& r : a.runs) sd += (r.test.mean.dice - a.mean.dice) * (r.test.mean.dice - a.mean.dice);
    sd = a.runs.size() > 1 ? std::sqrt(sd / static_cast<double>(a.runs.size() - 1)) : 0.0;
    std::snprintf(buf, sizeof buf, "%-16s %10zu %8.2f %8.2f %8.2f %8.2f %8.2f %8.2f\n", a.arm.label().c_str(), a.params,
                  100 * a.mean.dice, 100 * sd, 100 * a.mean.l_dice, 100 * a.mean.l_f1, 100 * a.mean.l_ppv,
                  100 * a.mean.l_tpr);
    os << buf;
  }
  auto test_text = [&](const TTestResult& t) {
    if (!std::isfinite(t.t_statistic)) return std::string("n/a");
    std::snprintf(buf, sizeof buf, "t=%.3f p=%.4g", t.t_statistic, t.p_value);
    return std::string(buf);
  };
  for (const auto& [label, cmp] : result.comparisons) {
    os << label << ": Dice " << test_text(cmp.dice) << " | L-Dice " << test_text(cmp.l_dice) << "\n";
  }
  return os.str();
}

}  // namespace SCP_PRECISION_NS
}  // namespace scp
