#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "tacnet/tac.hpp"

using namespace tacnet::tac;

TEST(CategoryProbs, AllZeroIsUniform) {
  ScorePair s{{0, 0, 0, 0}, {0, 0, 0}};
  for (double p : category_probs(s)) EXPECT_NEAR(p, 0.25, 1e-15);
}

TEST(CategoryProbs, CommonModeSoftmax) {
  ScorePair s{{0, 1, 0}, {1, 0}};
  const auto p = category_probs(s);
  // softmax([0, 2, 0]) = [1, e^2, 1] / (2 + e^2)
  const double z = 2.0 + std::exp(2.0);
  EXPECT_NEAR(p[0], 1.0 / z, 1e-15);
  EXPECT_NEAR(p[1], std::exp(2.0) / z, 1e-15);
  EXPECT_NEAR(p[2], 1.0 / z, 1e-15);
  EXPECT_NEAR(p[1], 0.78698604, 1e-8);
}

TEST(CategoryProbs, ShiftInvariance) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0, 3);
  for (int trial = 0; trial < 100; ++trial) {
    ScorePair s{{n(rng), n(rng), n(rng), n(rng)}, {n(rng), n(rng), n(rng)}};
    auto shifted = s;
    const double kappa = n(rng) * 10;
    for (auto& c : shifted.c_plus) c += kappa;
    const auto a = category_probs(s), b = category_probs(shifted);
    for (std::size_t j = 0; j < a.size(); ++j) EXPECT_NEAR(a[j], b[j], 1e-12);
  }
}

TEST(StateProbs, Examples) {
  EXPECT_EQ(state_probs(ScorePair{{0, 0.3}, {0.3}})[0], 0.5);
  EXPECT_NEAR(state_probs(ScorePair{{0, 1.5}, {0.5}})[0], 1.0 / (1.0 + std::exp(-1.0)), 1e-15);
  const double sat = state_probs(ScorePair{{0, 50}, {0}})[0];
  EXPECT_TRUE(std::isfinite(sat));
  EXPECT_NEAR(sat, 1.0, 1e-15);
  const double low = state_probs(ScorePair{{0, -800}, {800}})[0];
  EXPECT_TRUE(std::isfinite(low));
  EXPECT_GE(low, 0.0);
}

TEST(StateProbs, Monotone) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n(0, 2);
  for (int trial = 0; trial < 200; ++trial) {
    ScorePair s{{n(rng), n(rng), n(rng)}, {n(rng), n(rng)}};
    const auto base = state_probs(s);
    auto up = s;
    up.c_plus[1] += 0.5;
    auto down = s;
    down.c_minus[0] += 0.5;
    EXPECT_GT(state_probs(up)[0], base[0]);
    EXPECT_LT(state_probs(down)[0], base[0]);
    EXPECT_EQ(state_probs(up)[1], base[1]);
  }
}

TEST(Classify, Rules) {
  EXPECT_EQ(classify(TacOutput{{0.9, 0.05, 0.05}, {0.99, 0.99}}).state, State::kBackground);
  auto active = classify(TacOutput{{0.1, 0.1, 0.8}, {0.1, 0.9}});
  EXPECT_EQ(active.state, State::kActive);
  EXPECT_EQ(active.label, 2u);
  auto trans = classify(TacOutput{{0.1, 0.1, 0.8}, {0.9, 0.2}});
  EXPECT_EQ(trans.state, State::kTransitional);
  EXPECT_EQ(trans.label, 2u);
  // Argmax ties resolve to the lowest index.
  EXPECT_EQ(classify(TacOutput{{0.2, 0.4, 0.4}, {0.9, 0.9}}, 0.3).label, 1u);
  // Below the category threshold counts as background.
  EXPECT_EQ(classify(TacOutput{{0.3, 0.4, 0.3}, {0.9, 0.9}}).state, State::kBackground);
}

TEST(Classify, VerdictsFollowScoreSigns) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0, 2);
  int active = 0, transitional = 0;
  for (int trial = 0; trial < 2000; ++trial) {
    ScorePair s{{n(rng) - 2, n(rng) + 1, n(rng) + 1}, {n(rng), n(rng)}};
    const auto v = classify(s, 0.3, 0.5);
    if (v.state == State::kActive) {
      EXPECT_GT(s.c_plus[v.label], s.c_minus[v.label - 1]);
      ++active;
    } else if (v.state == State::kTransitional) {
      EXPECT_LT(s.c_plus[v.label], s.c_minus[v.label - 1]);
      ++transitional;
    }
  }
  EXPECT_GT(active, 100);
  EXPECT_GT(transitional, 100);
}

TEST(Decoupling, DifferentialAndCommonPerturbations) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> gauss(0, 3);
  // Dyadic grid (multiples of 2^-24, |x| < 64): every sum below is exact, so
  // bitwise statements about the common mode are meaningful.
  auto n = [&gauss](std::mt19937_64& r) { return std::ldexp(std::round(std::ldexp(std::clamp(gauss(r), -60.0, 60.0), 24)), -24); };
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t K = 1 + rng() % 6;
    ScorePair s;
    s.c_plus.resize(K + 1);
    s.c_minus.resize(K);
    for (auto& c : s.c_plus) c = n(rng);
    for (auto& c : s.c_minus) c = n(rng);
    std::vector<double> lambda(K), mu(K);
    for (auto& l : lambda) l = n(rng);
    for (auto& m : mu) m = n(rng);

    auto diff = s;
    auto common = s;
    for (std::size_t i = 1; i <= K; ++i) {
      diff.c_plus[i] -= lambda[i - 1];
      diff.c_minus[i - 1] += lambda[i - 1];
      common.c_plus[i] += mu[i - 1];
      common.c_minus[i - 1] += mu[i - 1];
    }
    const auto p0 = category_probs(s), p1 = category_probs(diff);
    for (std::size_t j = 0; j <= K; ++j) ASSERT_NEAR(p0[j], p1[j], 1e-12);
    for (std::size_t i = 1; i <= K; ++i) {
      ASSERT_NEAR(state_logit(view(diff), i) - state_logit(view(s), i), -2.0 * lambda[i - 1], 1e-12);
    }
    const auto t0 = state_probs(s), t2 = state_probs(common);
    for (std::size_t i = 0; i < K; ++i) ASSERT_EQ(t0[i], t2[i]);
  }
}
