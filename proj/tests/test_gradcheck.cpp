#include <doctest.h>

#include <random>

#include "fixtures.hpp"
#include "gradcheck.hpp"
#include "scp/model.hpp"
#include "scp/trainer.hpp"

using namespace scp;
using fixtures::random_tensor;
using fixtures::uniform_tensor;

namespace {

constexpr double kTol = 1e-3;

void expect_ok(const gradcheck::Result& r, const std::string& what) {
  INFO(what << ": max rel " << r.max_rel << " at " << r.worst << " (analytic " << r.worst_analytic << ", numeric "
            << r.worst_numeric << "), checked " << r.checked << ", kinks " << r.kinks);
  MESSAGE(what << ": max rel " << r.max_rel << ", checked " << r.checked << " (" << r.resolved
               << " at the small step), kinks " << r.kinks);
  CHECK(r.checked > 0);
  CHECK(r.max_rel < kTol);
  CHECK(r.kinks * 20 <= r.checked + r.kinks);
}

}  // namespace

TEST_CASE("elementwise and reduction ops") {
  std::mt19937_64 rng(101);
  Tensor a = random_tensor({2, 1, 3}, rng), b = uniform_tensor({1, 4, 3}, rng, 0.5, 2.0);
  const Tensor w = random_tensor({2, 4, 3}, rng);
  using Op = Tensor (*)(Graph&, const Tensor&, const Tensor&);
  for (Op op : {Op(add), Op(sub), Op(mul), Op(div)}) {
    expect_ok(gradcheck::check([&](Graph& g) { return gradcheck::project(g, op(g, a, b), w); }, {{"a", a}, {"b", b}}),
              "binary op");
  }
  Tensor x = random_tensor({3, 4}, rng, 2.0);
  const Tensor wx = random_tensor({3, 4}, rng);
  using Unary = Tensor (*)(Graph&, const Tensor&);
  for (Unary op : {Unary(relu), Unary(sigmoid), Unary(softplus), Unary(transpose2d)}) {
    expect_ok(gradcheck::check(
                  [&](Graph& g) {
                    Tensor y = op(g, x);
                    return gradcheck::project(g, y.shape() == wx.shape() ? y : y.reshape(wx.shape()), wx);
                  },
                  {{"x", x}}),
              "unary op");
  }
  expect_ok(gradcheck::check(
                [&](Graph& g) {
                  return add(g, mean(g, scale(g, add_scalar(g, x, 0.3), -1.7)), sum(g, clamp_min(g, x, 0.2)));
                },
                {{"x", x}}),
            "scale, shift, clamp, mean");
  const Tensor wa = random_tensor({4}, rng);
  expect_ok(gradcheck::check([&](Graph& g) { return gradcheck::project(g, sum_axis(g, x, 0), wa); }, {{"x", x}}),
            "sum_axis");
}

TEST_CASE("spatial ops") {
  std::mt19937_64 rng(102);
  Tensor x = random_tensor({3, 4, 6}, rng), y = random_tensor({2, 4, 6}, rng);
  const Tensor wp = random_tensor({3, 2, 3}, rng);
  expect_ok(gradcheck::check([&](Graph& g) { return gradcheck::project(g, maxpool2(g, x), wp); }, {{"x", x}}),
            "maxpool");
  const Tensor wu = random_tensor({3, 8, 12}, rng), wc = random_tensor({5, 4, 6}, rng), ws = random_tensor({2, 4, 6}, rng);
  expect_ok(gradcheck::check([&](Graph& g) { return gradcheck::project(g, upsample_nearest2(g, x), wu); }, {{"x", x}}),
            "upsample");
  expect_ok(gradcheck::check([&](Graph& g) { return gradcheck::project(g, concat_channels(g, x, y), wc); },
                             {{"x", x}, {"y", y}}),
            "concat");
  expect_ok(gradcheck::check([&](Graph& g) { return gradcheck::project(g, slice_channels(g, x, 1, 3), ws); }, {{"x", x}}),
            "slice");
}

TEST_CASE("conv2d") {
  std::mt19937_64 rng(103);
  struct Case {
    std::size_t cin, cout, k;
    int stride, pad;
  };
  for (const Case c : {Case{2, 3, 3, 1, 1}, Case{3, 2, 1, 1, 0}, Case{2, 2, 3, 2, 1}, Case{1, 2, 1, 2, 0},
                       Case{2, 1, 3, 1, 0}}) {
    Tensor x = random_tensor({c.cin, 7, 6}, rng), w = random_tensor({c.cout, c.cin, c.k, c.k}, rng);
    Graph probe(false);
    const Tensor proj = random_tensor(conv2d(probe, x, w, c.stride, c.pad).shape(), rng);
    expect_ok(gradcheck::check([&](Graph& g) { return gradcheck::project(g, conv2d(g, x, w, c.stride, c.pad), proj); },
                               {{"x", x}, {"w", w}}),
              "conv2d");
  }
}

TEST_CASE("heads") {
  std::mt19937_64 rng(104);
  const std::size_t c = 4, n = 2;
  Tensor x = random_tensor({c, 6, 6}, rng);
  const auto s = encode_positions(6, 6);
  const Tensor proj = random_tensor({n, 6, 6}, rng);

  SharedHead shared{random_tensor({c, n}, rng)};
  expect_ok(gradcheck::check([&](Graph& g) { return gradcheck::project(g, base_forward(g, shared, x), proj); },
                             {{"x", x}, {"w", shared.w}}),
            "base");

  CoordHeadVariant bb{CoordKind::BaseB, SharedHead{random_tensor({c + 2, n}, rng)}};
  const Tensor coords = coord_channels(6, 6);
  expect_ok(gradcheck::check(
                [&](Graph& g) { return gradcheck::project(g, coord_head_forward(g, bb, x, coords), proj); },
                {{"x", x}, {"w", bb.head.w}}),
            "baseb");

  ScpHead fin = fixtures::random_scp_head(c, n, 8, rng);
  expect_ok(gradcheck::check([&](Graph& g) { return gradcheck::project(g, scp_forward_final(g, fin, x, s), proj); },
                             {{"x", x}, {"w_r", fin.w_r}, {"w1", fin.phi.w1}, {"w2", fin.phi.w2}, {"w3", fin.phi.w3}}),
            "scp");

  ScpHead pq = fixtures::random_scp_head(c, n, 8, rng, ScpForm::PQ);
  const std::vector<std::pair<std::string, Tensor>> pq_params = {
      {"x", x}, {"w_r", pq.w_r}, {"w1", pq.phi.w1}, {"w2", pq.phi.w2}, {"w3", pq.phi.w3}};
  expect_ok(gradcheck::check(
                [&](Graph& g) { return gradcheck::project(g, scp_forward_pq(g, pq, x, s).hadamard, proj); }, pq_params),
            "pq hadamard");
  expect_ok(gradcheck::check(
                [&](Graph& g) { return gradcheck::project(g, scp_forward_pq(g, pq, x, s).reformulated, proj); },
                pq_params),
            "pq reformulated");

  // MuSigma with sigma kept away from the clamp floor
  ScpHead ms = fixtures::random_scp_head(c, n, 8, rng, ScpForm::MuSigma);
  Graph plain(false);
  Tensor generated =
      concat_channels(plain, random_tensor({c, 6, 6}, rng), uniform_tensor({c, 6, 6}, rng, 0.5, 1.5)).clone();
  expect_ok(gradcheck::check(
                [&](Graph& g) { return gradcheck::project(g, scp_apply_musigma(g, ms, x, generated), proj); },
                {{"x", x}, {"w_r", ms.w_r}, {"generated", generated}}),
            "musigma");
  const Tensor pphi = random_tensor({2 * c, 6, 6}, rng);
  expect_ok(gradcheck::check([&](Graph& g) { return gradcheck::project(g, phi_forward(g, ms.phi, s), pphi); },
                             {{"w1", ms.phi.w1}, {"w2", ms.phi.w2}, {"w3", ms.phi.w3}}),
            "phi");
}

TEST_CASE("losses") {
  std::mt19937_64 rng(105);
  Tensor logits = random_tensor({1, 4, 4}, rng, 2.0);
  const BinaryMask mask = BinaryMask::from_tensor(uniform_tensor({1, 4, 4}, rng, 0, 1));
  for (auto kind : {LossKind::BceDice, LossKind::Bce, LossKind::Dice}) {
    expect_ok(gradcheck::check([&](Graph& g) { return loss_bce_dice(g, logits, mask, kind); }, {{"logits", logits}}),
              "loss");
  }
}

TEST_CASE("whole models") {
  std::mt19937_64 rng(106);
  const Tensor image = random_tensor({1, 8, 8}, rng);
  const BinaryMask mask = BinaryMask::from_tensor(uniform_tensor({1, 8, 8}, rng, 0, 1.5));
  for (auto head : {HeadVariant::Base, HeadVariant::BaseF, HeadVariant::BaseB, HeadVariant::Scp}) {
    ModelConfig cfg;
    cfg.head = head;
    cfg.backbone.n_c = 8;
    cfg.backbone.depth = 2;
    cfg.phi_hidden = 4;
    cfg.zero_init_phi_last = false;
    const Segmenter model(cfg, 7);
    const NamedTensors named = model.parameters();
    std::vector<std::pair<std::string, Tensor>> params(named.begin(), named.end());
    expect_ok(gradcheck::check([&](Graph& g) { return loss_bce_dice(g, model.forward(g, image), mask); }, params),
              std::string(to_string(head)));
  }
}
