#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "peftlab/errors.hpp"
#include "peftlab/metrics.hpp"
#include "peftlab/rng.hpp"

using namespace peftlab;
using namespace peftlab::metrics;

namespace {

using Counts = std::vector<std::vector<std::size_t>>;

Counts random_counts(Rng& rng, std::size_t n, std::size_t max_count) {
  Counts c(n, std::vector<std::size_t>(n));
  for (auto& row : c)
    for (auto& x : row) x = rng.below(max_count + 1);
  return c;
}

// Per-class F1 straight from the counts; absent classes give 0.
std::vector<double> oracle_f1(const Counts& c) {
  const std::size_t n = c.size();
  std::vector<double> out(n);
  for (std::size_t k = 0; k < n; ++k) {
    double tp = static_cast<double>(c[k][k]), fp = 0, fn = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == k) continue;
      fp += static_cast<double>(c[j][k]);
      fn += static_cast<double>(c[k][j]);
    }
    out[k] = tp == 0 ? 0.0 : 2 * tp / (2 * tp + fp + fn);
  }
  return out;
}

MetricsReport report_with(double micro, const std::vector<std::string>& labels) {
  MetricsReport r;
  r.labels = labels;
  r.f1_micro = micro;
  r.f1_macro = micro;
  r.classes.resize(labels.size());
  return r;
}

}  // namespace

TEST_SUITE("metrics") {
  TEST_CASE("f1_micro examples") {
    const auto cm = ConfusionMatrix::from_counts({{5, 0, 0}, {0, 0, 5}, {0, 0, 5}});
    CHECK(std::abs(f1_micro(cm) - 10.0 / 15.0) < 1e-9);
    CHECK(std::round(f1_micro(cm) * 1e4) / 1e4 == 0.6667);
    CHECK(f1_micro(ConfusionMatrix::from_counts({{3, 0}, {0, 4}})) == 1.0);
    CHECK(f1_micro(ConfusionMatrix::from_counts({{0, 3}, {4, 0}})) == 0.0);
    CHECK_THROWS_AS(f1_micro(ConfusionMatrix(3)), DataError);
    CHECK_THROWS_AS(f1_macro(ConfusionMatrix(3)), DataError);
    CHECK_THROWS_AS(accuracy(ConfusionMatrix(3)), DataError);
  }

  TEST_CASE("f1_macro examples") {
    CHECK(f1_macro(ConfusionMatrix::from_counts({{2, 0, 0}, {0, 7, 0}, {0, 0, 1}})) == 1.0);
    for (std::size_t n = 2; n <= 6; ++n) {
      Counts c(n, std::vector<std::size_t>(n, 0));
      c[0][0] = 9;
      CHECK(f1_macro(ConfusionMatrix::from_counts(c)) == doctest::Approx(1.0 / static_cast<double>(n)));
    }
    CHECK(f1_macro(ConfusionMatrix::from_counts({{1, 1}, {1, 1}})) == 0.5);
  }

  TEST_CASE("f1_micro equals accuracy on random matrices") {
    Rng rng(31);
    for (int trial = 0; trial < 1000; ++trial) {
      auto c = random_counts(rng, 2 + rng.below(5), 20);
      c[0][0] += 1;  // never empty
      const auto cm = ConfusionMatrix::from_counts(c);
      CHECK(f1_micro(cm) == accuracy(cm));
      CHECK(accuracy(cm) == static_cast<double>(cm.trace()) / static_cast<double>(cm.total()));
    }
  }

  TEST_CASE("per-class and macro match the counting oracle") {
    Rng rng(32);
    for (int trial = 0; trial < 300; ++trial) {
      auto c = random_counts(rng, 2 + rng.below(4), 6);
      c[0][1] += 1;
      const auto cm = ConfusionMatrix::from_counts(c);
      const auto expect = oracle_f1(c);
      const auto got = per_class(cm);
      double mean = 0.0;
      for (std::size_t k = 0; k < c.size(); ++k) {
        CHECK(got[k].f1 == doctest::Approx(expect[k]).epsilon(1e-12));
        CHECK(got[k].support == std::accumulate(c[k].begin(), c[k].end(), std::size_t{0}));
        CHECK(got[k].precision >= 0.0);
        CHECK(got[k].recall <= 1.0);
        mean += expect[k];
      }
      mean /= static_cast<double>(c.size());
      const double macro = f1_macro(cm);
      CHECK(macro == doctest::Approx(mean).epsilon(1e-12));
      CHECK(macro >= 0.0);
      CHECK(macro <= 1.0);
    }
  }

  TEST_CASE("class permutation") {
    Rng rng(33);
    for (int trial = 0; trial < 200; ++trial) {
      const std::size_t n = 2 + rng.below(4);
      auto c = random_counts(rng, n, 9);
      c[1][1] += 1;
      std::vector<std::size_t> perm(n);
      std::iota(perm.begin(), perm.end(), std::size_t{0});
      rng.shuffle(std::span(perm));
      Counts p(n, std::vector<std::size_t>(n));
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) p[perm[i]][perm[j]] = c[i][j];
      const auto a = ConfusionMatrix::from_counts(c), b = ConfusionMatrix::from_counts(p);
      CHECK(f1_micro(a) == f1_micro(b));
      const auto pa = per_class(a), pb = per_class(b);
      for (std::size_t i = 0; i < n; ++i) {
        CHECK(pa[i].f1 == pb[perm[i]].f1);
        CHECK(pa[i].support == pb[perm[i]].support);
      }
    }
  }

  TEST_CASE("balanced diagonal-plus-uniform-error family") {
    for (std::size_t n = 2; n <= 6; ++n) {
      for (std::size_t diag = 1; diag <= 5; ++diag) {
        for (std::size_t off = 0; off <= 3; ++off) {
          Counts c(n, std::vector<std::size_t>(n, off));
          for (std::size_t k = 0; k < n; ++k) c[k][k] = diag;
          const auto cm = ConfusionMatrix::from_counts(c);
          CHECK(f1_macro(cm) == doctest::Approx(f1_micro(cm)).epsilon(1e-12));
        }
      }
    }
  }

  TEST_CASE("from_predictions") {
    const std::vector<int> truth = {0, 1, 2, 2}, pred = {0, 2, 2, 1};
    const auto cm = ConfusionMatrix::from_predictions(3, truth, pred);
    CHECK(cm.rows() == Counts{{1, 0, 0}, {0, 0, 1}, {0, 1, 1}});
    CHECK(cm.total() == 4);
    CHECK_THROWS(ConfusionMatrix::from_predictions(3, truth, std::vector<int>{0}));
    CHECK_THROWS(ConfusionMatrix::from_predictions(3, std::vector<int>{3}, std::vector<int>{0}));
  }

  TEST_CASE("fold aggregation") {
    const std::vector<std::string> labels = {"a", "b"};
    const std::vector<MetricsReport> one = {report_with(0.7, labels)};
    const auto a1 = aggregate_folds(one);
    CHECK(a1.f1_micro.mean == 0.7);
    CHECK(a1.f1_micro.std == 0.0);

    const std::vector<MetricsReport> two = {report_with(0.8, labels), report_with(0.9, labels)};
    const auto a2 = aggregate_folds(two);
    CHECK(a2.f1_micro.mean == doctest::Approx(0.85).epsilon(1e-12));
    CHECK(a2.f1_micro.std == doctest::Approx(std::sqrt(0.005)).epsilon(1e-12));
    CHECK(a2.f1_micro.std == doctest::Approx(0.0707).epsilon(1e-3));
    CHECK(a2.n_folds == 2);

    CHECK_THROWS_AS(aggregate_folds(std::span<const MetricsReport>{}), DataError);
    const std::vector<MetricsReport> mixed = {report_with(0.8, labels), report_with(0.9, {"a", "c"})};
    CHECK_THROWS_AS(aggregate_folds(mixed), DataError);

    const std::vector<double> xs = {1, 2, 3, 4};
    const auto ms = mean_std(xs);
    CHECK(ms.mean == 2.5);
    CHECK(ms.std == doctest::Approx(std::sqrt(5.0 / 3.0)));
  }

  TEST_CASE("report JSON round trip") {
    const auto cm = ConfusionMatrix::from_counts({{4, 1}, {2, 3}});
    const auto r = make_report({"Positive", "Negative"}, cm, 3);
    const auto j = to_json(r);
    CHECK(j["f1_micro"] == 0.7);
    CHECK(j["n"] == 10);
    CHECK(j["fold_id"] == 3);
    CHECK(j["per_class"][0]["label"] == "Positive");
    const auto back = report_from_json(j);
    CHECK(back.confusion == cm);
    CHECK(back.f1_macro == r.f1_macro);
    CHECK(back.fold_id == r.fold_id);
  }

  TEST_CASE("result table rendering") {
    ResultTable t({"Prompt", "Prefix"}, {"RHMD", "Illness"});
    t.set(0, 0, 0.9123);
    t.set(0, 1, 1.0);
    t.set_error(1, 0);
    CHECK(t.error_count() == 1);
    const std::string md = render_markdown(t);
    CHECK(md ==
          "| Technique |  RHMD | Illness |\n"
          "| --------- | ----: | ------: |\n"
          "| Prompt    |  91.2 |   100.0 |\n"
          "| Prefix    | ERROR |         |\n");
    const auto j = to_json(t);
    CHECK(j["columns"] == nlohmann::ordered_json({"RHMD", "Illness"}));
  }
}
