// Copyright 2026 The selftrain Authors
// SPDX-License-Identifier: Apache-2.0

#include <catch_amalgamated.hpp>

#include "selftrain/core/rng.hpp"
#include "selftrain/model/encoder.hpp"
#include "selftrain/objectives/crf.hpp"
#include "selftrain/objectives/losses.hpp"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"

using namespace selftrain;
using selftrain::testing::brute_force_crf;

namespace {

CrfParams<double> make_crf(std::size_t K, const std::vector<double>& tr, const std::vector<double>& st,
                           const std::vector<double>& en) {
  CrfParams<double> c;
  c.transitions = Tensor<double>({K, K}, tr);
  c.start = Tensor<double>({K}, st);
  c.end = Tensor<double>({K}, en);
  return c;
}

std::vector<double> draw(Rng& rng, std::size_t n, bool integer, double scale = 3.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = integer ? static_cast<double>(rng.uniform_range(-2, 2)) : scale * rng.normal();
  return v;
}

}  // namespace

TEST_CASE("crf matches brute-force enumeration on random small chains") {
  Rng rng(2024);
  int cases = 0, ties_seen = 0;
  for (std::size_t T = 1; T <= 4; ++T)
    for (std::size_t K = 1; K <= 4; ++K)
      for (int rep = 0; rep < 20; ++rep) {
        const bool integer = rep % 2 == 1;  // integer scores produce exact ties
        auto emis = draw(rng, T * K, integer), tr = draw(rng, K * K, integer);
        auto st = draw(rng, K, integer), en = draw(rng, K, integer);
        auto crf = make_crf(K, tr, st, en);
        auto ref = brute_force_crf(emis, tr, st, en, T, K);

        auto lz = crf_log_partition(Tensor<double>({T, K}, emis), {}, crf).item();
        CHECK(std::abs(lz - static_cast<double>(ref.log_z)) < 1e-6);
        CHECK(std::abs(static_cast<double>(ref.total_prob) - 1.0) < 1e-9);

        auto path = crf_viterbi<double>(emis, {}, crf);
        CHECK(path == ref.argmax);

        // count optimal paths to make sure the tie rule is actually exercised
        int optimal = 0;
        selftrain::testing::for_each_path(T, K, [&](const std::vector<int>& p) {
          if (selftrain::testing::path_score(emis, tr, st, en, p, K) == ref.best) ++optimal;
        });
        if (optimal > 1) ++ties_seen;
        ++cases;
      }
  CHECK(cases >= 200);
  CHECK(ties_seen > 10);
}

TEST_CASE("crf ignores masked positions") {
  Rng rng(5);
  const std::size_t S = 6, K = 3;
  auto emis = draw(rng, S * K, false), tr = draw(rng, K * K, false), st = draw(rng, K, false),
       en = draw(rng, K, false);
  auto crf = make_crf(K, tr, st, en);
  std::vector<int> mask{0, 1, 1, 0, 1, 0};
  std::vector<double> packed;
  for (std::size_t t = 0; t < S; ++t)
    if (mask[t]) packed.insert(packed.end(), emis.begin() + t * K, emis.begin() + (t + 1) * K);
  auto ref = brute_force_crf(packed, tr, st, en, 3, K);
  CHECK(std::abs(crf_log_partition(Tensor<double>({S, K}, emis), mask, crf).item() - (double)ref.log_z) < 1e-9);
  CHECK(crf_viterbi<double>(emis, mask, crf) == ref.argmax);

  auto marg = crf_marginals<double>(emis, mask, crf);
  REQUIRE(marg.size() == 3 * K);
  for (std::size_t t = 0; t < 3; ++t) {
    double s = 0;
    for (std::size_t k = 0; k < K; ++k) s += marg[t * K + k];
    CHECK(std::abs(s - 1.0) < 1e-12);
  }
}

TEST_CASE("crf_nll equals log partition minus gold score and rejects bad input") {
  Rng rng(6);
  const std::size_t B = 2, S = 4, K = 3;
  auto emis = draw(rng, B * S * K, false);
  auto crf = make_crf(K, draw(rng, K * K, false), draw(rng, K, false), draw(rng, K, false));
  std::vector<int> mask{1, 1, 1, 0, 1, 1, 0, 0};
  std::vector<int> tags{0, 2, 1, -1, 1, 1, -1, -1};
  Tensor<double> e({B, S, K}, emis);
  double expect = 0;
  for (std::size_t b = 0; b < B; ++b) {
    std::span<const double> eb(emis.data() + b * S * K, S * K);
    std::span<const int> mb(mask.data() + b * S, S), tb(tags.data() + b * S, S);
    expect += crf_log_partition(Tensor<double>({S, K}, std::vector<double>(eb.begin(), eb.end())), mb, crf).item() -
              crf_path_score<double>(eb, mb, tb, crf);
  }
  CHECK(std::abs(crf_nll(e, tags, mask, crf).item() - expect / B) < 1e-12);
  CHECK(crf_nll(e, tags, mask, crf).item() > 0);

  auto bad = tags;
  bad[1] = 3;
  CHECK_THROWS_AS(crf_nll(e, bad, mask, crf), IndexError);
  CHECK_THROWS_AS(crf_nll(e, tags, std::vector<int>(B * S, 0), crf), ContractError);
  CHECK_THROWS_AS(crf_nll(e, std::vector<int>(3, 0), mask, crf), DimensionError);
}

TEST_CASE("crf gradients match finite differences") {
  Rng rng(7);
  const std::size_t B = 2, S = 4, K = 3;
  Tensor<double> e({B, S, K}, draw(rng, B * S * K, false, 1.0));
  auto crf = make_crf(K, draw(rng, K * K, false, 1.0), draw(rng, K, false, 1.0), draw(rng, K, false, 1.0));
  std::vector<int> mask{1, 1, 1, 0, 0, 1, 1, 1};
  std::vector<int> tags{0, 2, 1, -1, -1, 1, 1, 0};
  std::vector<Param<double>> params{{"emissions", e}, {"transitions", crf.transitions}, {"start", crf.start},
                                    {"end", crf.end}};
  for (auto& p : params) p.tensor.set_requires_grad(true);
  auto r = selftrain::testing::check_gradients([&] { return crf_nll(e, tags, mask, crf); }, params);
  INFO(r.worst);
  CHECK(r.max_rel_error < 1e-5);
}

TEST_CASE("kl properties") {
  Rng rng(8);
  for (int i = 0; i < 1000; ++i) {
    const std::size_t C = 2 + rng.uniform_int(10);
    std::vector<double> a(C), b(C);
    for (auto& x : a) x = 5.0 * rng.normal();
    for (auto& x : b) x = 5.0 * rng.normal();
    Tensor<double> ta({1, C}, a), tb({1, C}, b);
    CHECK(kl_logits_loss(ta, ta).item() == 0.0);
    const double kl = kl_logits_loss(ta, tb).item();
    CHECK(kl >= -1e-9);
    const double c = 10.0 * rng.normal();
    std::vector<double> a2 = a, b2 = b;
    for (auto& x : a2) x += c;
    for (auto& x : b2) x -= 2 * c;
    CHECK(std::abs(kl_logits_loss(Tensor<double>({1, C}, a2), Tensor<double>({1, C}, b2)).item() - kl) < 1e-6);
  }
}

TEST_CASE("kl against a direct formula and its gradient") {
  std::vector<double> t{1.0, 2.0, 0.5}, s{0.0, -1.0, 3.0};
  auto sm = [](std::vector<double> v) {
    double z = 0;
    for (double x : v) z += std::exp(x);
    for (double& x : v) x = std::exp(x) / z;
    return v;
  };
  const auto p = sm(t), q = sm(s);
  double expect = 0;
  for (int i = 0; i < 3; ++i) expect += p[i] * std::log(p[i] / q[i]);
  Tensor<double> tt({1, 3}, t), ss({1, 3}, s);
  CHECK(std::abs(kl_logits_loss(tt, ss).item() - expect) < 1e-12);

  ss.set_requires_grad(true);
  tt.set_requires_grad(true);
  {
    Tape<double> tape;
    TapeScope<double> scope(tape);
    backward(kl_logits_loss(tt, ss));
  }
  for (int i = 0; i < 3; ++i) CHECK(std::abs(ss.grad()[i] - (q[i] - p[i])) < 1e-12);
  CHECK_FALSE(tt.has_grad());
  CHECK_THROWS_AS(kl_logits_loss(tt, Tensor<double>({1, 4}, {0, 0, 0, 0})), DimensionError);
}

TEST_CASE("token kl averages over unmasked tokens only") {
  Tensor<double> t({1, 3, 2}, {1, 0, 5, 5, 0, 3}), s({1, 3, 2}, {0, 1, -4, 9, 0, 3});
  std::vector<int> mask{1, 0, 1};
  const double only_first = kl_logits_loss(Tensor<double>({1, 2}, {1, 0}), Tensor<double>({1, 2}, {0, 1})).item();
  CHECK(std::abs(token_kl_loss(t, s, mask).item() - only_first / 2) < 1e-12);
}

TEST_CASE("cross entropy losses") {
  Tensor<double> logits({2, 3}, {0, 0, 0, 1, 2, 3});
  const double l0 = std::log(3.0);
  const double l1 = std::log(std::exp(1) + std::exp(2) + std::exp(3)) - 1;
  CHECK(std::abs(classification_ce_loss(logits, std::vector<int>{1, 0}).item() - (l0 + l1) / 2) < 1e-12);
  CHECK_THROWS_AS(classification_ce_loss(logits, std::vector<int>{-1, 0}), IndexError);
  CHECK_THROWS_AS(classification_ce_loss(logits, std::vector<int>{3, 0}), IndexError);
  CHECK(std::abs(mlm_loss(logits, std::vector<int>{kNoMlmLabel, 0}).item() - l1) < 1e-12);

  Tensor<double> grad_in({2, 3}, {0, 0, 0, 1, 2, 3});
  grad_in.set_requires_grad(true);
  Tape<double> tape;
  TapeScope<double> scope(tape);
  auto empty = mlm_loss(grad_in, std::vector<int>{kNoMlmLabel, kNoMlmLabel});
  CHECK(empty.item() == 0.0);
  backward(empty);
  for (double g : grad_in.grad()) CHECK(g == 0.0);
}

TEST_CASE("loss variants and pairings") {
  CHECK(is_legal_pairing(LossVariant::LabelCE_only, InputVariant::NoMask));
  CHECK(is_legal_pairing(LossVariant::LogitsKL_plus_MLM, InputVariant::Masked));
  CHECK_FALSE(is_legal_pairing(LossVariant::LogitsKL_plus_MLM, InputVariant::NoMask));
  CHECK_FALSE(is_legal_pairing(LossVariant::LabelCE_plus_MLM, InputVariant::NoMask));
  CHECK_THROWS_WITH(validate_pairing(LossVariant::LabelCE_plus_MLM, InputVariant::NoMask),
                    Catch::Matchers::ContainsSubstring("NoMask"));
  for (auto v : {LossVariant::LabelCE_plus_MLM, LossVariant::LabelCE_only, LossVariant::LogitsKL_plus_MLM,
                 LossVariant::LogitsKL_only})
    CHECK(parse_loss_variant(to_string(v)) == v);
  CHECK_THROWS_AS(parse_loss_variant("KL"), ConfigError);

  auto a = Tensor<double>::scalar(1.5), b = Tensor<double>::scalar(0.25);
  CHECK(combined_loss<double>(LossVariant::LabelCE_plus_MLM, a, b).item() == 1.75);
  CHECK(combined_loss<double>(LossVariant::LogitsKL_only, a, std::nullopt).item() == 1.5);
  CHECK_THROWS_AS(combined_loss<double>(LossVariant::LogitsKL_plus_MLM, a, std::nullopt), ContractError);
  CHECK_THROWS_AS(combined_loss<double>(LossVariant::LabelCE_only, a, b), ContractError);
}
