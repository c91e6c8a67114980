#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <span>
#include <vector>

#include "switchlab/numerics.hpp"
#include "switchlab/population.hpp"

using namespace switchlab;

namespace {

// Enumerate all 2^t path prefixes of length t.
std::vector<std::vector<std::uint8_t>> all_paths(int t) {
  std::vector<std::vector<std::uint8_t>> out;
  for (int mask = 0; mask < (1 << t); ++mask) {
    std::vector<std::uint8_t> p(t);
    for (int s = 0; s < t; ++s) p[s] = (mask >> s) & 1;
    out.push_back(p);
  }
  return out;
}

}  // namespace

TEST_CASE("ar1 no-carryover: estimand and degenerate variants") {
  auto b = make_ar1_no_carryover(10, 6, 1.0, 99);
  CHECK(b.estimands.tau_bar == 0.5);
  for (double t : b.estimands.tau_t) CHECK(t == 0.5);
  CHECK(b.oracle.order == CarryoverOrder::None);

  SUBCASE("zero-noise variant collapses to constants") {
    Ar1Options opt;
    opt.eps_sd = 0.0;
    opt.x_sd = 0.0;
    opt.zero_init = true;
    auto z = make_ar1_no_carryover(4, 5, 1.0, 1, opt);
    std::vector<std::uint8_t> p0{0, 0, 0, 0, 0}, p1{1, 1, 1, 1, 1};
    for (int i = 0; i < 4; ++i)
      for (int t = 1; t <= 5; ++t) {
        CHECK(z.oracle.outcome(i, t, std::span(p0).subspan(0, t)) == 0.0);
        CHECK(z.oracle.outcome(i, t, std::span(p1).subspan(0, t)) == 0.5);
      }
  }

  SUBCASE("long-run variance of Y(0) near the AR(1) stationary value") {
    auto big = make_ar1_no_carryover(200, 200, 1.0, 7);
    double target = 1.25 / 0.36;
    double s = 0.0, s2 = 0.0;
    int n = 0;
    for (double v : big.oracle.y0.data) {
      s += v;
      s2 += v * v;
      ++n;
    }
    double var = s2 / n - (s / n) * (s / n);
    CHECK(var == doctest::Approx(target).epsilon(0.05));
  }

  SUBCASE("invalid dimensions rejected") {
    CHECK_THROWS(make_ar1_no_carryover(5, 5, 1.0, 1));
    CHECK_THROWS(make_ar1_no_carryover(4, 0, 1.0, 1));
  }
}

TEST_CASE("ar1 first-order carryover: offsets and probe") {
  auto b = make_ar1_first_order_carryover(8, 6, 3);
  CHECK(b.estimands.tau_bar == 3.5);
  CHECK(b.oracle.order == CarryoverOrder::FirstOrder);

  SUBCASE("paths differing only before t-1 give identical outcomes") {
    for (int t = 3; t <= 6; ++t) {
      for (auto& base : all_paths(t)) {
        auto alt = base;
        alt[0] ^= 1;  // flip an early coordinate
        CHECK(b.oracle.outcome(2, t, base) == b.oracle.outcome(2, t, alt));
      }
    }
  }

  SUBCASE("zero-noise offsets") {
    Ar1Options opt;
    opt.ar_coeff = 0.7;
    opt.eps_sd = 0.0;
    opt.x_sd = 0.0;
    opt.zero_init = true;
    auto z = make_ar1_first_order_carryover(4, 4, 1, opt);
    std::vector<std::uint8_t> p11{0, 1, 1}, p01{0, 0, 1};
    CHECK(z.oracle.outcome(0, 3, p11) - z.oracle.outcome(0, 3, p01) == doctest::Approx(2.5));
  }

  CHECK_THROWS(make_ar1_first_order_carryover(6, 6, 1));   // N not divisible by 4
  CHECK_THROWS(make_ar1_first_order_carryover(8, 1, 1));   // T < 2
}

TEST_CASE("heterogeneous carryover estimand") {
  SUBCASE("tau_bar close to 3.5 with many draws") {
    auto b = make_heterogeneous_carryover(100, 102, 11);
    // sd of 7*B is 3.5; with N(T-1) >= 10,000 draws the SE is <= 0.035.
    double se = 3.5 / std::sqrt(100.0 * 101.0);
    CHECK(std::fabs(b.estimands.tau_bar - 3.5) <= 3.0 * se);
  }
  SUBCASE("forced Bernoulli variants") {
    auto ones = make_heterogeneous_carryover(8, 4, 5, 1.0);
    for (double t : ones.estimands.tau_t) CHECK(t == 7.0);
    auto zeros = make_heterogeneous_carryover(8, 4, 5, 0.0);
    for (double t : zeros.estimands.tau_t) CHECK(t == 0.0);
  }
}

TEST_CASE("synthetic factor model") {
  SUBCASE("tau = 0, no carryover: both arms equal") {
    auto b = make_synthetic_factor_model(6, 5, 0.0, CarryoverOrder::None, 2);
    CHECK(b.oracle.y0.data == b.oracle.y1.data);
    CHECK(b.estimands.tau_bar == 0.0);
  }
  SUBCASE("first-order scheme: tau_bar = 2 tau") {
    auto b = make_synthetic_factor_model(6, 5, 0.5, CarryoverOrder::FirstOrder, 2);
    CHECK(b.estimands.tau_bar == doctest::Approx(1.0));
  }
  SUBCASE("latent component has numerical rank n_factors") {
    auto b = make_synthetic_factor_model(12, 7, 0.3, CarryoverOrder::None, 4);
    // Gram matrix of L has exactly n_factors nonzero eigenvalues.
    int T = 7;
    SymmetricMatrix gram(T);
    for (int s = 0; s < T; ++s)
      for (int t = s; t < T; ++t) {
        double v = 0.0;
        for (int i = 0; i < 12; ++i) v += b.latent(i, s) * b.latent(i, t);
        gram.set(s, t, v);
      }
    auto eig = jacobi_eigen(gram);
    std::sort(eig.values.begin(), eig.values.end(), std::greater<>());
    CHECK(eig.values[0] > 1e-6);
    CHECK(eig.values[1] > 1e-6);
    for (int k = 2; k < T; ++k) CHECK(std::fabs(eig.values[k]) < 1e-10 * eig.values[0]);
  }
}

TEST_CASE("markov latent carryover") {
  SUBCASE("zero shocks, all-zeros path: outcome equals base") {
    auto b = make_markov_latent_carryover(4, 6, 0.5, 3, {}, 0.0);
    std::vector<std::uint8_t> zeros(6, 0);
    for (int i = 0; i < 4; ++i)
      for (int t = 1; t <= 6; ++t)
        CHECK(b.oracle.outcome(i, t, std::span(zeros).subspan(0, t)) ==
              b.oracle.ybase(i, t - 1));
  }

  SUBCASE("rho = 0, zero shocks, W_{t-1} = W_t = 1 adds tanh(1)") {
    auto b = make_markov_latent_carryover(4, 4, 0.0, 3, {}, 0.0);
    std::vector<std::uint8_t> p{0, 1, 1};
    double y = b.oracle.outcome(0, 3, p);
    CHECK(y - b.oracle.ybase(0, 2) == doctest::Approx(std::tanh(1.0)).epsilon(1e-12));
  }

  SUBCASE("estimand consistency: direct recomputation matches stored value") {
    auto b = make_markov_latent_carryover(6, 8, 0.3, 17);
    std::vector<std::uint8_t> ones(8, 1), zeros(8, 0);
    double total = 0.0;
    for (int t = 2; t <= 8; ++t) {
      double s = 0.0;
      for (int i = 0; i < 6; ++i)
        s += b.oracle.outcome(i, t, std::span(ones).subspan(0, t)) -
             b.oracle.outcome(i, t, std::span(zeros).subspan(0, t));
      total += s / 6.0;
    }
    CHECK(total / 7.0 == doctest::Approx(b.estimands.tau_bar).epsilon(1e-12));
  }

  SUBCASE("carryover decays more slowly with larger rho") {
    // After switching from treatment to control, the gap to the all-zeros
    // trajectory shrinks more slowly when rho is larger.
    const int N = 40, T = 12;
    auto slow = make_markov_latent_carryover(N, T, 0.5, 9, {}, 0.0);
    auto fast = make_markov_latent_carryover(N, T, 0.1, 9, {}, 0.0);
    // Path: treated through t=6, control afterwards.
    std::vector<std::uint8_t> sw(T, 0), zeros(T, 0);
    for (int s = 0; s < 6; ++s) sw[s] = 1;
    auto gap_at = [&](const PopulationBundle& b, int t) {
      double g = 0.0;
      for (int i = 0; i < N; ++i)
        g += std::fabs(b.oracle.outcome(i, t, std::span(sw).subspan(0, t)) -
                       b.oracle.outcome(i, t, std::span(zeros).subspan(0, t)));
      return g / N;
    };
    // Gap three periods after the switch, relative to one period after.
    double slow_ratio = gap_at(slow, 10) / gap_at(slow, 8);
    double fast_ratio = gap_at(fast, 10) / gap_at(fast, 8);
    CHECK(slow_ratio > fast_ratio);
  }

  CHECK_THROWS(make_markov_latent_carryover(4, 4, 1.0, 1));  // |rho| < 1
}

TEST_CASE("oracle determinism and assumption probes") {
  auto b = make_ar1_no_carryover(6, 5, 1.0, 77);
  SUBCASE("identical queries are bitwise equal") {
    std::vector<std::uint8_t> p{1, 0, 1};
    double a = b.oracle.outcome(3, 3, p);
    double c = b.oracle.outcome(3, 3, p);
    CHECK(std::memcmp(&a, &c, sizeof(double)) == 0);
  }
  SUBCASE("no-carryover probe: only w_t matters, exhaustively for T <= 6") {
    for (int t = 1; t <= 5; ++t) {
      for (auto& p : all_paths(t)) {
        // Reference: path of all zeros except the final coordinate.
        std::vector<std::uint8_t> ref(t, 0);
        ref[t - 1] = p[t - 1];
        CHECK(b.oracle.outcome(1, t, p) == b.oracle.outcome(1, t, ref));
      }
    }
  }
  SUBCASE("estimand recomputation from the oracle") {
    double total = 0.0;
    for (int t = 1; t <= 5; ++t) {
      std::vector<std::uint8_t> p1(t, 1), p0(t, 0);
      double s = 0.0;
      for (int i = 0; i < 6; ++i) s += b.oracle.outcome(i, t, p1) - b.oracle.outcome(i, t, p0);
      total += s / 6.0;
    }
    CHECK(total / 5.0 == doctest::Approx(b.estimands.tau_bar).epsilon(1e-12));
  }
}

TEST_CASE("oracle snapshot round-trips") {
  auto check_roundtrip = [](const PotentialOutcomeOracle& o) {
    auto j = o.snapshot();
    auto back = PotentialOutcomeOracle::from_snapshot(j);
    CHECK(back.content_hash() == o.content_hash());
    CHECK(back.n_units == o.n_units);
    CHECK(back.order == o.order);
  };
  check_roundtrip(make_ar1_no_carryover(4, 3, 1.0, 1).oracle);
  check_roundtrip(make_ar1_first_order_carryover(4, 3, 1).oracle);
  check_roundtrip(make_markov_latent_carryover(4, 3, 0.2, 1).oracle);
}
