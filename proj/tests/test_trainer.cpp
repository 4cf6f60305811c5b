#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "scp/trainer.hpp"

using namespace scp;

namespace {

SynthSpec tiny_spec(std::size_t n_train, double contrast = 0.15) {
  SynthSpec s;
  s.height = 40;
  s.width = 40;
  s.n_train = n_train;
  s.n_val = 4;
  s.n_test = 4;
  s.lesion_contrast = contrast;
  s.seed = 5;
  return s;
}

TrainConfig tiny_cfg(HeadVariant head = HeadVariant::Scp) {
  TrainConfig c;
  c.model.head = head;
  c.model.backbone.n_c = 16;
  c.model.backbone.depth = 3;
  c.model.phi_hidden = 16;
  c.batch_size = 4;
  c.epochs = 3;
  c.seed = 9;
  return c;
}

Tensor scalar_param(real v) {
  Tensor t = Tensor::scalar(v);
  t.set_requires_grad(true);
  return t;
}

bool same_params(const Segmenter& a, const Segmenter& b) {
  const auto pa = a.parameters(), pb = b.parameters();
  if (pa.size() != pb.size()) return false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    const auto va = pa[i].second.values(), vb = pb[i].second.values();
    if (pa[i].first != pb[i].first || !std::equal(va.begin(), va.end(), vb.begin(), vb.end())) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("adam first step moves by the learning rate") {
  std::vector<Tensor> p = {scalar_param(0)};
  p[0].mutable_grad()[0] = 1;
  AdamState st;
  adam_step(p, st, 1e-3, 0);
  CHECK(p[0].item() == doctest::Approx(-1e-3).epsilon(1e-4));
  CHECK(st.step == 1);
}

TEST_CASE("adam leaves parameters alone without gradient or decay") {
  std::vector<Tensor> p = {scalar_param(0.7f), Tensor({3}, 1.5f).set_requires_grad(true)};
  AdamState st;
  for (int i = 0; i < 5; ++i) adam_step(p, st, 1e-2, 0);
  CHECK(p[0].item() == 0.7f);
  CHECK(p[1].at(2) == 1.5f);
}

TEST_CASE("adam converges on a convex scalar problem") {
  std::vector<Tensor> p = {scalar_param(0)};
  AdamState st;
  for (int i = 0; i < 100; ++i) {
    p[0].mutable_grad()[0] = 2 * (p[0].item() - 3);
    adam_step(p, st, 0.1, 0);
  }
  CHECK(std::abs(p[0].item() - 3) < 0.1);
}

TEST_CASE("weight decay shrinks parameters") {
  std::vector<Tensor> p = {scalar_param(2), scalar_param(-2)};
  AdamState st;
  adam_step(p, st, 1e-2, 1e-3);
  CHECK(p[0].item() < 2);
  CHECK(p[1].item() > -2);
}

TEST_CASE("non-finite gradients are rejected before any update") {
  std::vector<Tensor> p = {scalar_param(1), scalar_param(1)};
  p[0].mutable_grad()[0] = 1;
  p[1].mutable_grad()[0] = NAN;
  AdamState st;
  CHECK_THROWS_AS(adam_step(p, st, 1e-3, 0), NumericError);
  CHECK(p[0].item() == 1);
}

TEST_CASE("loss examples") {
  BinaryMask mask(2, 2);
  mask.set(0, 0);
  mask.set(1, 1);
  Graph g;
  const Tensor perfect({1, 2, 2}, std::vector<real>{20, -20, -20, 20});
  CHECK(loss_bce_dice(g, perfect, mask).item() < 0.01);
  const Tensor zero({1, 2, 2}, 0.0f);
  CHECK(loss_bce_dice(g, zero, mask, LossKind::Bce).item() == doctest::Approx(std::log(2.0)));
  // p = 0.5 everywhere: soft Dice = (2 * 1 + 1) / (2 + 2 + 1)
  CHECK(loss_bce_dice(g, zero, mask, LossKind::Dice).item() == doctest::Approx(1 - 3.0 / 5));
  CHECK(loss_bce_dice(g, zero, mask).item() == doctest::Approx(std::log(2.0) + 0.4));
  CHECK_THROWS_AS(loss_bce_dice(g, Tensor({1, 3, 2}), mask), DimensionError);
  CHECK_THROWS_AS(loss_bce_dice(g, Tensor({2, 2, 2}), mask), DimensionError);
}

TEST_CASE("learning rate schedule") {
  TrainConfig c;
  c.lr = 0.8;
  c.epochs = 10;
  const std::vector<double> expected = {0.8, 0.8, 0.8, 0.8, 0.8, 0.4, 0.4, 0.2, 0.2, 0.1};
  for (std::size_t e = 0; e < 10; ++e) CHECK(lr_at_epoch(c, e) == doctest::Approx(expected[e]));
}

TEST_CASE("config keys and validation") {
  TrainConfig c;
  CHECK(apply_train_key(c, "lr", "0.01"));
  CHECK(apply_train_key(c, "head", "BaseF"));
  CHECK(apply_train_key(c, "n_c", "64"));
  CHECK(apply_train_key(c, "lr_milestones", "0.3,0.6"));
  CHECK(apply_train_key(c, "connectivity", "4"));
  CHECK_FALSE(apply_train_key(c, "colour", "red"));
  CHECK(c.lr == 0.01);
  CHECK(c.model.head == HeadVariant::BaseF);
  CHECK(c.model.backbone.n_c == 64);
  CHECK(c.lr_milestones == std::vector<double>{0.3, 0.6});
  CHECK(c.connectivity == Connectivity::Four);
  CHECK_THROWS_AS(apply_train_key(c, "connectivity", "6"), ConfigError);
  CHECK_THROWS_AS(apply_train_key(c, "batch_size", "many"), ConfigError);

  std::istringstream text(config_to_text(c));
  const TrainConfig back = config_from_key_values(parse_key_values(text, "test"));
  CHECK(config_to_text(back) == config_to_text(c));
  CHECK_THROWS_AS(config_from_key_values({{"colour", "red"}}), ConfigError);

  for (auto [key, value] : std::vector<std::pair<std::string, std::string>>{
           {"lr", "0"}, {"weight_decay", "-1"}, {"batch_size", "0"}, {"lr_milestones", "0.7,0.5"}, {"n_c", "6"}}) {
    TrainConfig bad;
    apply_train_key(bad, key, value);
    CHECK_THROWS_AS(bad.validate(), ConfigError);
  }
}

TEST_CASE("zero epochs returns the initialization") {
  const Dataset d = generate(tiny_spec(4));
  TrainConfig c = tiny_cfg();
  c.epochs = 0;
  const auto r = train(c, d.train, d.val);
  CHECK(r.record.train_loss.empty());
  CHECK(r.record.val_dice.empty());
  CHECK(r.record.best_epoch == 0);
  CHECK(same_params(r.model, Segmenter(c.model, c.seed)));
}

TEST_CASE("training is deterministic") {
  const Dataset d = generate(tiny_spec(8));
  for (auto head : {HeadVariant::Scp, HeadVariant::BaseF}) {
    const auto a = train(tiny_cfg(head), d.train, d.val);
    const auto b = train(tiny_cfg(head), d.train, d.val);
    CHECK(a.record.train_loss == b.record.train_loss);
    CHECK(a.record.val_dice == b.record.val_dice);
    CHECK(same_params(a.model, b.model));
    CHECK(a.record.lr.size() == 3);
    auto c = tiny_cfg(head);
    c.seed = 10;
    CHECK(train(c, d.train, d.val).record.train_loss != a.record.train_loss);
  }
}

TEST_CASE("training rejects mismatched samples") {
  Dataset d = generate(tiny_spec(4));
  d.train[1].mask = BinaryMask(16, 16);
  CHECK_THROWS_AS(train(tiny_cfg(), d.train, d.val), DimensionError);
  TrainConfig bad = tiny_cfg();
  bad.lr = -1;
  CHECK_THROWS_AS(train(bad, d.val, d.val), ConfigError);
}

TEST_CASE("zero-initialised SCP starts with the Base metrics") {
  const Dataset d = generate(tiny_spec(4));
  const Segmenter scp(tiny_cfg(HeadVariant::Scp).model, 3), base(tiny_cfg(HeadVariant::Base).model, 3);
  const auto a = evaluate(scp, d.test), b = evaluate(base, d.test);
  for (std::size_t i = 0; i < a.cases.size(); ++i) {
    CHECK(a.cases[i].dice == b.cases[i].dice);
    CHECK(a.cases[i].l_dice == b.cases[i].l_dice);
  }
}

TEST_CASE("the SCP head overfits a small training set") {
  SynthSpec spec = tiny_spec(10, 0.6);
  const Dataset d = generate(spec);
  TrainConfig c = tiny_cfg();
  c.epochs = 300;
  c.batch_size = 2;
  const auto r = train(c, d.train, d.train);
  const auto ev = evaluate(r.model, d.train);
  MESSAGE("train Dice after overfitting " << ev.mean.dice);
  CHECK(ev.mean.dice > 0.95);
  double sum = 0;
  for (const auto& cs : ev.cases) sum += cs.dice;
  CHECK(ev.mean.dice == doctest::Approx(sum / static_cast<double>(ev.cases.size())));
}

TEST_CASE("checkpoints round trip") {
  const Dataset d = generate(tiny_spec(4));
  TrainConfig c = tiny_cfg();
  c.epochs = 1;
  const auto r = train(c, d.train, d.val);
  const auto dir = std::filesystem::temp_directory_path() / "scp_ckpt_test";
  std::filesystem::remove_all(dir);
  save_model(dir, r.model, c);
  auto [cfg2, model2] = load_model(dir);
  CHECK(config_to_text(cfg2) == config_to_text(c));
  CHECK(same_params(model2, r.model));
  CHECK(predict_mask(model2, d.test[0].image) == predict_mask(r.model, d.test[0].image));

  write_history_csv(dir / "history.csv", r.record);
  std::ifstream in(dir / "history.csv");
  std::string header, row;
  std::getline(in, header);
  std::getline(in, row);
  CHECK(header == "epoch,lr,train_loss,val_dice");
  CHECK(row.rfind("1,", 0) == 0);
  std::filesystem::remove_all(dir);
  CHECK_THROWS_AS(load_model(dir), IoError);
}

TEST_CASE("run comparison") {
  auto reports = [](const std::vector<double>& dice) {
    std::vector<LesionMetricsReport> out(dice.size());
    for (std::size_t i = 0; i < dice.size(); ++i) {
      out[i].dice = dice[i];
      out[i].l_dice = dice[i] / 2;
    }
    return out;
  };
  const auto a = reports({0.5, 0.6, 0.7}), b = reports({0.4, 0.45, 0.62});
  CHECK_THROWS_AS(compare_runs(a, a), StatisticsError);
  CHECK_THROWS_AS(compare_runs(a, reports({0.1})), ContractError);
  const auto cmp = compare_runs(a, b);
  const auto direct = paired_ttest(std::vector<double>{0.5, 0.6, 0.7}, std::vector<double>{0.4, 0.45, 0.62});
  CHECK(cmp.dice.t_statistic == direct.t_statistic);
  CHECK(cmp.dice.p_value == direct.p_value);

  std::mt19937_64 rng(77);
  std::normal_distribution<double> noise(0, 3);
  std::vector<double> x(60), y(60);
  for (std::size_t i = 0; i < 60; ++i) {
    y[i] = 70 + noise(rng);
    x[i] = y[i] + 2 + noise(rng);
  }
  CHECK(compare_runs(reports(x), reports(y)).dice.p_value < 0.05);
}

TEST_CASE("arm labels") {
  CHECK(Arm{HeadVariant::Scp, 32}.label() == "SCP (32)");
  CHECK(Arm{HeadVariant::Base, 64}.label() == "Base (64)");
}
