#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <vector>

#include "fsgpt/common.hpp"
#include "fsgpt/metrics.hpp"
#include "fsgpt/rng.hpp"

using namespace fsgpt;

TEST_SUITE("metrics") {

TEST_CASE("regression errors match hand sums") {
  const std::vector<double> y = {2.0, -4.0, 0.5, 8.0};
  const std::vector<double> h = {1.0, -6.0, 1.5, 8.0};
  // diffs: 1, 2, -1, 0
  BpMetrics m = bp_metrics(y, h);
  CHECK(m.count == 4);
  CHECK(m.mae == doctest::Approx((1 + 2 + 1 + 0) / 4.0).epsilon(1e-15));
  CHECK(m.mse == doctest::Approx((1 + 4 + 1 + 0) / 4.0).epsilon(1e-15));
  CHECK(m.mape ==
        doctest::Approx((1 / 2.0 + 2 / 4.0 + 1 / 0.5 + 0.0) / 4.0).epsilon(1e-15));

  CHECK_THROWS_AS(bp_metrics({1.0}, {1.0, 2.0}), ShapeError);
  CHECK_THROWS_AS(bp_metrics({}, {}), ContractError);
}

TEST_CASE("relative error denominator is floored near zero") {
  // |y| = 0 would divide by zero; the floor keeps the term at |diff| / 1e-8
  BpMetrics m = bp_metrics({0.0}, {3.0});
  CHECK(m.mape == doctest::Approx(3.0 / 1e-8).epsilon(1e-12));
  // just above the floor the true magnitude is used
  BpMetrics m2 = bp_metrics({-2e-8}, {0.0});
  CHECK(m2.mape == doctest::Approx(2e-8 / 2e-8).epsilon(1e-12));
}

TEST_CASE("detection counts split on the threshold inclusively") {
  const std::vector<uint8_t> labels = {1, 1, 0, 0, 1, 0};
  const std::vector<double> scores = {0.9, 0.2, 0.7, 0.1, 0.5, 0.5};
  AdCounts c = ad_metrics(labels, scores, 0.5);
  // label 1: 0.9 tp, 0.2 fn, 0.5 tp (>= is positive); label 0: 0.7 fp, 0.1 tn, 0.5 fp
  CHECK(c.tp == 2);
  CHECK(c.fn == 1);
  CHECK(c.fp == 2);
  CHECK(c.tn == 1);
  CHECK(c.total() == 6);

  AdCounts other = ad_metrics(labels, scores, 0.95);
  other.add(c);
  CHECK(other.total() == 12);
  CHECK(other.tp == 2);  // 0 at the higher threshold plus 2
  CHECK(other.fn == 4);

  CHECK_THROWS_AS(ad_metrics({1, 0}, {0.5}, 0.5), ShapeError);
  CHECK_THROWS_AS(ad_metrics({2}, {0.5}, 0.5), ContractError);
}

TEST_CASE("precision, recall, and f1 are undefined on empty denominators") {
  AdCounts c;
  c.tp = 3;
  c.fp = 1;
  c.fn = 2;
  c.tn = 10;
  CHECK(*precision(c) == doctest::Approx(3.0 / 4.0));
  CHECK(*recall(c) == doctest::Approx(3.0 / 5.0));
  const double p = 0.75, r = 0.6;
  CHECK(*f1_score(c) == doctest::Approx(2 * p * r / (p + r)));

  AdCounts no_pred;  // never predicted positive
  no_pred.tn = 5;
  no_pred.fn = 2;
  CHECK(!precision(no_pred).has_value());
  CHECK(*recall(no_pred) == 0.0);
  CHECK(!f1_score(no_pred).has_value());

  AdCounts no_pos;  // no positive labels at all
  no_pos.tn = 5;
  no_pos.fp = 1;
  CHECK(*precision(no_pos) == 0.0);
  CHECK(!recall(no_pos).has_value());
  CHECK(!f1_score(no_pos).has_value());

  AdCounts both_zero;  // zero precision and zero recall: f1's denominator is 0
  both_zero.fp = 1;
  both_zero.fn = 1;
  CHECK(*precision(both_zero) == 0.0);
  CHECK(*recall(both_zero) == 0.0);
  CHECK(!f1_score(both_zero).has_value());

  CHECK(metric_str(precision(no_pred)) == "None");
  CHECK(metric_str(std::optional<double>(0.5)) == "0.5");
}

TEST_CASE("power-law fit recovers planted parameters exactly") {
  // L(N) = (N_c / N)^alpha sampled noise-free must come back with r2 ~ 1
  const double alpha = 0.37, n_c = 5.0e5;
  std::vector<std::pair<double, double>> pts;
  for (double N : {1e3, 3e3, 1e4, 5e4, 2e5, 1e6}) {
    pts.push_back({N, std::pow(n_c / N, alpha)});
  }
  PowerLawFit fit = fit_power_law(pts);
  CHECK(fit.alpha == doctest::Approx(alpha).epsilon(1e-10));
  CHECK(fit.n_c == doctest::Approx(n_c).epsilon(1e-8));
  CHECK(fit.r2 >= 1.0 - 1e-9);

  // noisy points still identify the slope to first order
  Rng rng(3);
  std::vector<std::pair<double, double>> noisy;
  for (const auto& [N, L] : pts) noisy.push_back({N, L * std::exp(rng.normal(0.0, 0.01))});
  PowerLawFit nf = fit_power_law(noisy);
  CHECK(nf.alpha == doctest::Approx(alpha).epsilon(0.05));
  CHECK(nf.r2 > 0.99);
}

TEST_CASE("power-law fit degenerate and invalid inputs") {
  // flat losses: slope 0, so the crossover scale is unidentifiable
  PowerLawFit flat = fit_power_law({{10.0, 2.0}, {100.0, 2.0}, {1000.0, 2.0}});
  CHECK(flat.alpha == 0.0);
  CHECK(std::isnan(flat.n_c));
  CHECK(flat.r2 == 1.0);  // residuals and total variance are both zero

  CHECK_THROWS_AS(fit_power_law({{1.0, 1.0}, {2.0, 2.0}}), ContractError);
  CHECK_THROWS_AS(fit_power_law({{1.0, 1.0}, {2.0, -2.0}, {3.0, 1.0}}), ContractError);
  CHECK_THROWS_AS(fit_power_law({{1.0, 1.0}, {2.0, 0.0}, {3.0, 1.0}}), ContractError);
  // all N identical: the regression matrix is singular
  CHECK_THROWS_AS(fit_power_law({{5.0, 1.0}, {5.0, 2.0}, {5.0, 3.0}}), ContractError);
}

TEST_CASE("report text carries every field and the counting convention") {
  EvalReport r;
  r.fleet_id = "fleetX";
  r.windows = 12;
  r.seed = 77;
  r.config_hash = "abc123";
  r.bp = bp_metrics({1.0, 2.0}, {1.5, 2.5});
  r.ad = ad_metrics({1, 0}, {0.9, 0.1}, 0.5);
  std::string text = report_text(r);
  CHECK(text.find("fleet_id=fleetX\n") != std::string::npos);
  CHECK(text.find("windows=12\n") != std::string::npos);
  CHECK(text.find("seed=77\n") != std::string::npos);
  CHECK(text.find("config_hash=abc123\n") != std::string::npos);
  CHECK(text.find("ad.counting=per_timestep\n") != std::string::npos);
  CHECK(text.find("ad.tp=1\n") != std::string::npos);
  CHECK(text.find("ad.f1=1\n") != std::string::npos);
  CHECK(text.find("bp.no_normal_support=0\n") != std::string::npos);
  // ratio is hidden unless set
  CHECK(text.find("trainable_ratio") == std::string::npos);
  r.trainable_ratio = 0.25;
  CHECK(report_text(r).find("trainable_ratio=0.25\n") != std::string::npos);

  CHECK(counts_csv(r.ad) == "tp,fp,tn,fn\n1,0,1,0\n");
}

}  // TEST_SUITE("metrics")
