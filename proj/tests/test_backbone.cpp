#include <doctest.h>

#include <cmath>
#include <random>
#include <set>

#include "scp/backbone.hpp"

using namespace scp;

namespace {

Tensor random_image(std::size_t c, std::size_t h, std::size_t w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d;
  Tensor t({c, h, w});
  for (auto& v : t.mutable_values()) v = static_cast<real>(d(rng));
  return t;
}

Tensor flip_w(const Tensor& x) {
  Tensor out(x.shape());
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  for (std::size_t k = 0; k < c; ++k)
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) out.mutable_values()[(k * h + i) * w + j] = x.at(k, i, w - 1 - j);
  return out;
}

// Mirrors every kernel left-right and averages, so each conv commutes with a horizontal flip.
void symmetrize(BackboneParams& p) {
  for (auto& [name, w] : p.weights) {
    const std::size_t k = w.dim(3);
    auto v = w.mutable_values();
    for (std::size_t base = 0; base < v.size(); base += k) {
      for (std::size_t b = 0; b < k / 2; ++b) {
        const real m = (v[base + b] + v[base + k - 1 - b]) / 2;
        v[base + b] = v[base + k - 1 - b] = m;
      }
    }
  }
}

}  // namespace

TEST_CASE("parameter count closed form for n_c=16, depth=2") {
  // enc0 1->8, 8->8; center 8->16, 16->16; dec0 (8+16)->8, 8->8, all 3x3
  const std::size_t expected = 9 * (1 * 8 + 8 * 8 + 8 * 16 + 16 * 16 + 24 * 8 + 8 * 8);
  CHECK(expected == 6408);
  const auto p = build_backbone({1, 16, 2}, 0);
  CHECK(p.param_count() == expected);
  std::size_t from_layers = 0;
  for (const auto& l : backbone_layers({1, 16, 2})) from_layers += l.params();
  CHECK(from_layers == expected);
}

TEST_CASE("capacity ratio between n_c=256 and n_c=128") {
  const double r = static_cast<double>(build_backbone({1, 256, 4}, 0).param_count()) /
                   static_cast<double>(build_backbone({1, 128, 4}, 0).param_count());
  CHECK(r >= 3.8);
  CHECK(r <= 4.2);
}

TEST_CASE("initialisation is deterministic and seed dependent") {
  const auto a = build_backbone({1, 16, 3}, 42), b = build_backbone({1, 16, 3}, 42), c = build_backbone({1, 16, 3}, 43);
  REQUIRE(a.weights.size() == b.weights.size());
  bool differs = false;
  for (std::size_t i = 0; i < a.weights.size(); ++i) {
    CHECK(a.weights[i].first == b.weights[i].first);
    const auto va = a.weights[i].second.values(), vb = b.weights[i].second.values(), vc = c.weights[i].second.values();
    CHECK(std::equal(va.begin(), va.end(), vb.begin()));
    differs = differs || !std::equal(va.begin(), va.end(), vc.begin());
  }
  CHECK(differs);
  CHECK(a.param_count() == c.param_count());
}

TEST_CASE("weights follow the fan-in uniform bound and are unique by name") {
  const auto p = build_backbone({2, 32, 3}, 1);
  std::set<std::string> names;
  for (const auto& [name, w] : p.weights) {
    CHECK(names.insert(name).second);
    CHECK(w.requires_grad());
    const double bound = std::sqrt(6.0 / static_cast<double>(w.dim(1) * 9));
    for (real v : w.values()) CHECK(std::abs(v) <= bound);
  }
}

TEST_CASE("forward shape contract") {
  const auto p = build_backbone({1, 16, 2}, 0);
  Graph g;
  const Tensor y = backbone_forward(g, p, random_image(1, 8, 8, 1));
  CHECK(y.shape() == Shape{8, 8, 8});

  const auto p3 = build_backbone({2, 32, 3}, 0);
  CHECK(backbone_forward(g, p3, random_image(2, 12, 8, 1)).shape() == Shape{8, 12, 8});
}

TEST_CASE("forward errors") {
  const auto p = build_backbone({1, 16, 3}, 0);
  Graph g;
  CHECK_THROWS_AS(backbone_forward(g, p, random_image(1, 10, 8, 0)), DimensionError);
  CHECK_THROWS_AS(backbone_forward(g, p, random_image(2, 8, 8, 0)), DimensionError);
  CHECK_THROWS_AS(build_backbone({1, 10, 3}, 0), ConfigError);
  CHECK_THROWS_AS(build_backbone({0, 16, 3}, 0), ConfigError);
  CHECK_THROWS_AS(build_backbone({1, 16, 0}, 0), ConfigError);
}

TEST_CASE("all-zero weights give an all-zero feature map") {
  auto p = build_backbone({1, 16, 2}, 0);
  for (auto& [name, w] : p.weights) std::fill(w.mutable_values().begin(), w.mutable_values().end(), real(0));
  Graph g;
  const Tensor y = backbone_forward(g, p, random_image(1, 8, 8, 3));
  for (real v : y.values()) CHECK(v == 0);
}

TEST_CASE("left-right symmetric kernels commute with a horizontal flip") {
  auto p = build_backbone({1, 16, 2}, 5);
  symmetrize(p);
  Graph g;
  const Tensor constant({1, 8, 8}, 0.7f);
  const Tensor yc = backbone_forward(g, p, constant);
  const Tensor yc_flip = flip_w(yc);
  for (std::size_t i = 0; i < yc.numel(); ++i) CHECK(yc.values()[i] == doctest::Approx(yc_flip.values()[i]).epsilon(1e-5));

  const Tensor x = random_image(1, 8, 8, 9);
  const Tensor a = flip_w(backbone_forward(g, p, x));
  const Tensor b = backbone_forward(g, p, flip_w(x));
  for (std::size_t i = 0; i < a.numel(); ++i) CHECK(a.values()[i] == doctest::Approx(b.values()[i]).epsilon(1e-5));
}

TEST_CASE("depth 1 stack is translation equivariant away from the borders") {
  const auto p = build_backbone({1, 8, 1}, 2);
  const std::size_t h = 16, w = 16, shift = 2, radius = 2;  // two 3x3 convs
  const Tensor x = random_image(1, h, w, 4);
  Tensor shifted({1, h, w});
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = shift; j < w; ++j) shifted.mutable_values()[i * w + j] = x.at(0, i, j - shift);
  Graph g;
  const Tensor y = backbone_forward(g, p, x), ys = backbone_forward(g, p, shifted);
  // interior: at least `radius` from every border, and clear of the zero-filled strip
  double worst = 0;
  for (std::size_t c = 0; c < y.dim(0); ++c)
    for (std::size_t i = radius; i + radius < h; ++i)
      for (std::size_t j = shift + radius; j + radius < w; ++j)
        worst = std::max(worst, double(std::abs(ys.at(c, i, j) - y.at(c, i, j - shift))));
  CHECK(worst < 1e-5);
}
