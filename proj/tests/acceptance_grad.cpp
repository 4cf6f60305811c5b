#include "acceptance_grad.hpp"

#include <random>

#include "fixtures.hpp"
#include "gradcheck.hpp"
#include "scp/model.hpp"
#include "scp/trainer.hpp"

namespace acceptance {

std::vector<GradientCheckLine> run_gradient_checks() {
  using namespace scp;
  using fixtures::random_tensor;
  std::mt19937_64 rng(3003);
  const std::size_t c = 4, n = 2, h = 6, w = 6, hidden = 8;
  Tensor x = random_tensor({c, h, w}, rng);
  const auto s = encode_positions(h, w);
  const Tensor proj = random_tensor({n, h, w}, rng);
  std::vector<GradientCheckLine> out;
  auto record = [&](std::string what, const gradcheck::Result& r) {
    out.push_back({std::move(what), r.max_rel, r.checked, r.kinks, r.resolved, r.worst});
  };

  SharedHead shared{random_tensor({c, n}, rng)};
  record("Base head", gradcheck::check([&](Graph& g) { return gradcheck::project(g, base_forward(g, shared, x), proj); },
                                       {{"x", x}, {"w", shared.w}}));

  CoordHeadVariant bb{CoordKind::BaseB, SharedHead{random_tensor({c + 2, n}, rng)}};
  const Tensor coords = coord_channels(h, w);
  record("BaseB head", gradcheck::check(
                           [&](Graph& g) { return gradcheck::project(g, coord_head_forward(g, bb, x, coords), proj); },
                           {{"x", x}, {"w", bb.head.w}}));

  // BaseF's head is the shared head; the coordinates enter at the image
  Tensor image = random_tensor({1, h, w}, rng);
  Tensor first = random_tensor({c, 3, 3, 3}, rng, 0.5);
  SharedHead f_head{random_tensor({c, n}, rng)};
  record("BaseF head", gradcheck::check(
                           [&](Graph& g) {
                             const Tensor feats = relu(g, conv2d(g, with_coords(g, image, coords), first, 1, 1));
                             return gradcheck::project(g, base_forward(g, f_head, feats), proj);
                           },
                           {{"image", image}, {"conv", first}, {"w", f_head.w}}));

  const Head scp_init = init_head(HeadVariant::Scp, c, n, hidden, 11, false);
  ScpHead fin = scp_init.scp;
  record("SCP head", gradcheck::check(
                         [&](Graph& g) { return gradcheck::project(g, scp_forward_final(g, fin, x, s), proj); },
                         {{"x", x}, {"w_r", fin.w_r}, {"phi.w1", fin.phi.w1}, {"phi.w2", fin.phi.w2},
                          {"phi.w3", fin.phi.w3}}));

  ScpHead ms = init_head(HeadVariant::ScpMuSigma, c, n, hidden, 12, false).scp;
  std::size_t clamped = 0;
  {
    Graph g(false);
    scp_forward_musigma(g, ms, x, s, &clamped);
  }
  record("MuSigma head (" + std::to_string(clamped) + " sigma clamps)",
         gradcheck::check([&](Graph& g) { return gradcheck::project(g, scp_forward_musigma(g, ms, x, s), proj); },
                          {{"x", x}, {"w_r", ms.w_r}, {"phi.w1", ms.phi.w1}, {"phi.w2", ms.phi.w2},
                           {"phi.w3", ms.phi.w3}}));

  ScpHead pq = fixtures::random_scp_head(c, n, hidden, rng, ScpForm::PQ);
  const std::vector<std::pair<std::string, Tensor>> pq_params = {
      {"x", x}, {"w_r", pq.w_r}, {"phi.w1", pq.phi.w1}, {"phi.w2", pq.phi.w2}, {"phi.w3", pq.phi.w3}};
  record("P/Q head", gradcheck::check(
                         [&](Graph& g) { return gradcheck::project(g, scp_forward_pq(g, pq, x, s).hadamard, proj); },
                         pq_params));
  record("P/Q reformulated head",
         gradcheck::check(
             [&](Graph& g) { return gradcheck::project(g, scp_forward_pq(g, pq, x, s).reformulated, proj); },
             pq_params));

  Tensor logits = random_tensor({1, h, w}, rng, 2.0);
  const BinaryMask mask = BinaryMask::from_tensor(fixtures::uniform_tensor({1, h, w}, rng, 0, 1));
  record("BCE + soft Dice loss",
         gradcheck::check([&](Graph& g) { return loss_bce_dice(g, logits, mask); }, {{"logits", logits}}));
  return out;
}

}  // namespace acceptance
