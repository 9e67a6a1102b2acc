#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "hbscreen/error.hpp"
#include "hbscreen/models.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

using namespace hbscreen;

namespace {

struct Blobs {
  std::vector<std::vector<double>> rows;
  std::vector<Severity> labels;
};

Blobs blobs(int per_class, double sigma, double spacing, int dims, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, sigma);
  Blobs b;
  for (int c = 0; c < 3; ++c) {
    for (int i = 0; i < per_class; ++i) {
      std::vector<double> r(dims);
      for (int d = 0; d < dims; ++d) r[d] = n(rng) + (d == c % dims ? spacing * (c + 1) : 0.0) + (d == 1 ? c * spacing : 0);
      b.rows.push_back(r);
      b.labels.push_back(kSeverities[c]);
    }
  }
  return b;
}

double max_coef_error(const std::vector<double>& got, const std::vector<double>& want) {
  double e = 0;
  for (std::size_t i = 0; i < want.size(); ++i) e = std::max(e, std::abs(got[i] - want[i]));
  return e;
}

RegressorModel intercept_only(Severity cls, double value) {
  std::vector<std::vector<double>> rows;
  std::mt19937_64 rng(static_cast<int>(cls));
  std::uniform_real_distribution<double> u(0, 1);
  for (int i = 0; i < 90; ++i) {
    std::vector<double> r(3 * kFeatureLength);
    for (auto& v : r) v = u(rng);
    rows.push_back(r);
  }
  const std::vector<double> y(90, value);
  return train_regressor(rows, y, cls);
}

ModelBundle toy_bundle() {
  ModelBundle b;
  const Blobs data = blobs(30, 0.5, 5.0, kFeatureLength, 1);
  for (int r = 0; r < 3; ++r) b.classifiers[r] = train_classifier(data.rows, data.labels, {1e-3, 0.5, 100, 7});
  for (int c = 0; c < 3; ++c) b.regressors[c] = intercept_only(kSeverities[c], 6.0 + 3 * c);
  b.impute_means.assign(3 * kFeatureLength, 0.5);
  b.thresholds = ThresholdTable::defaults();
  b.heldout_patients = {"0003", "0009"};
  b.heldout_spearman = 0.93;
  b.trained_at = 1700000000;
  return b;
}

}  // namespace

// ---- classifier ---------------------------------------------------------------------

TEST(Classifier, SeparableBlobsFullyLearned) {
  const Blobs b = blobs(100, 0.1, 10.0, 2, 3);
  const ClassifierModel m = train_classifier(b.rows, b.labels, {});
  int correct = 0;
  for (std::size_t i = 0; i < b.rows.size(); ++i) correct += classify_row(m, b.rows[i]).cls == b.labels[i];
  EXPECT_EQ(correct, 300);
}

TEST(Classifier, LossNeverIncreases) {
  const Blobs b = blobs(50, 2.0, 1.0, 4, 8);
  const ClassifierModel m = train_classifier(b.rows, b.labels, {1e-3, 50.0, 200, 1});
  ASSERT_GT(m.loss_trace.size(), 1u);
  for (std::size_t i = 1; i < m.loss_trace.size(); ++i) EXPECT_LE(m.loss_trace[i], m.loss_trace[i - 1]);
}

TEST(Classifier, NoSignalGivesUniform) {
  std::vector<std::vector<double>> rows(30, {1.0, 2.0});
  std::vector<Severity> labels;
  for (int i = 0; i < 30; ++i) labels.push_back(kSeverities[i % 3]);
  const ClassifierModel m = train_classifier(rows, labels, {});
  for (double p : classify_row(m, rows[0]).probabilities) EXPECT_NEAR(p, 1.0 / 3.0, 0.01);
}

TEST(Classifier, SingleClassRejected) {
  std::vector<std::vector<double>> rows{{1.0}, {2.0}};
  std::vector<Severity> labels{Severity::Mild, Severity::Mild};
  EXPECT_THROW(train_classifier(rows, labels, {}), InvalidArgument);
}

TEST(Classifier, ZeroModelIsUniformAndSevere) {
  ClassifierModel m;
  m.n_features = 3;
  for (auto& w : m.weights) w.assign(3, 0.0);
  const Classification c = classify_row(m, std::vector<double>{1, 2, 3});
  for (double p : c.probabilities) EXPECT_DOUBLE_EQ(p, 1.0 / 3.0);
  EXPECT_EQ(c.cls, Severity::Severe);
}

TEST(Classifier, ArgmaxAndSoftmaxClosedForm) {
  EXPECT_EQ(argmax_severity({0.1, 0.2, 0.7}), Severity::NonAnaemic);
  EXPECT_EQ(argmax_severity({0.4, 0.4, 0.2}), Severity::Severe);
  const auto p = softmax({0.0, std::log(2.0), std::log(4.0)});
  EXPECT_NEAR(p[0], 1.0 / 7.0, 1e-12);
  EXPECT_NEAR(p[1], 2.0 / 7.0, 1e-12);
  EXPECT_NEAR(p[2], 4.0 / 7.0, 1e-12);
  const auto big = softmax({1000.0, 999.0, -1000.0});
  EXPECT_NEAR(big[0] + big[1] + big[2], 1.0, 1e-12);
}

TEST(Classifier, ProbabilitiesSumToOne) {
  const Blobs b = blobs(30, 1.0, 2.0, 3, 4);
  const ClassifierModel m = train_classifier(b.rows, b.labels, {});
  for (const auto& r : b.rows) {
    const auto p = classify_row(m, r).probabilities;
    EXPECT_NEAR(p[0] + p[1] + p[2], 1.0, 1e-9);
  }
  FeatureVector f;
  f.version = kFeatureVersion + 1;
  EXPECT_THROW(classify(m, f), InvalidArgument);
}

// ---- fusion ------------------------------------------------------------------------

TEST(Fusion, ExamplesAndAllTriples) {
  using S = Severity;
  EXPECT_EQ(fuse_majority(S::Mild, S::Mild, S::NonAnaemic), S::Mild);
  EXPECT_EQ(fuse_majority(S::Severe, S::Mild, S::NonAnaemic), S::Mild);
  for (S a : kSeverities)
    for (S b : kSeverities)
      for (S c : kSeverities) EXPECT_EQ(fuse_majority(a, b, c), oracle::majority_rule(a, b, c));
}

TEST(Fusion, MissingRegionsUseArbiter) {
  using S = Severity;
  EXPECT_EQ(fuse_majority(std::nullopt, S::Severe, std::nullopt), S::Severe);
  EXPECT_EQ(fuse_majority(S::Mild, std::nullopt, S::NonAnaemic), S::Mild);
  EXPECT_EQ(fuse_majority(S::Mild, std::nullopt, S::Mild), S::Mild);
  EXPECT_EQ(fuse_majority(std::nullopt, std::nullopt, S::NonAnaemic), S::NonAnaemic);
  EXPECT_THROW(fuse_majority(std::nullopt, std::nullopt, std::nullopt), InvalidArgument);
}

// ---- regression --------------------------------------------------------------------

TEST(Regressor, NoiselessPlantedModel) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-5, 5);
  std::vector<std::vector<double>> X;
  std::vector<double> y;
  for (int i = 0; i < 50; ++i) {
    const double a = u(rng), b = u(rng);
    X.push_back({a, b});
    y.push_back(2 * a - 3 * b + 1);
  }
  const RegressorModel m = train_regressor(X, y, Severity::Mild);
  EXPECT_NEAR(m.coefficients[0], 2.0, 1e-6);
  EXPECT_NEAR(m.coefficients[1], -3.0, 1e-6);
  EXPECT_NEAR(m.intercept, 1.0, 1e-6);
  EXPECT_NEAR(predict(m, std::vector<double>{1.0, 1.0}), 0.0, 1e-6);
}

TEST(Regressor, ConstantTargets) {
  std::vector<std::vector<double>> X;
  for (int i = 0; i < 10; ++i) X.push_back({double(i), double(i * i)});
  const RegressorModel m = train_regressor(X, std::vector<double>(10, 12.5), Severity::NonAnaemic);
  EXPECT_DOUBLE_EQ(m.intercept, 12.5);
  for (double c : m.coefficients) EXPECT_EQ(c, 0.0);
  EXPECT_DOUBLE_EQ(predict(m, std::vector<double>{100, -3}), 12.5);
}

TEST(Regressor, HuberBeatsOlsUnderOutliers) {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> xn(0, 2), noise(0, 0.1);
  const std::vector<double> beta{1.5, -2.0, 0.5, 3.0, -1.0};
  std::vector<std::vector<double>> X;
  std::vector<double> y;
  for (int i = 0; i < 200; ++i) {
    std::vector<double> r(5);
    double t = 4.0;
    for (int d = 0; d < 5; ++d) {
      r[d] = xn(rng);
      t += beta[d] * r[d];
    }
    if (i % 10 == 0) t += 50.0;
    X.push_back(r);
    y.push_back(t + noise(rng));
  }
  const RegressorModel m = train_regressor(X, y, Severity::Mild);
  const auto ols = oracle::ols(X, y);
  const std::vector<double> ols_coef(ols.begin() + 1, ols.end());
  const double huber_err = max_coef_error(m.coefficients, beta);
  const double ols_err = max_coef_error(ols_coef, beta);
  EXPECT_LE(huber_err, 0.05);
  EXPECT_LT(huber_err, ols_err);
  for (std::size_t i = 1; i < m.objective_trace.size(); ++i) {
    EXPECT_LE(m.objective_trace[i], m.objective_trace[i - 1] + 1e-12);
  }
}

TEST(Regressor, HuberLossPieces) {
  EXPECT_DOUBLE_EQ(huber_loss(0.5, 1.0), 0.125);
  EXPECT_DOUBLE_EQ(huber_loss(-3.0, 1.0), 2.5);
  std::vector<std::vector<double>> X{{1.0}, {2.0}};
  EXPECT_THROW(train_regressor(X, std::vector<double>{1, 2}, Severity::Mild), InvalidArgument);
}

// ---- calibration -------------------------------------------------------------------

TEST(Calibration, WorkedPairs) {
  using P = std::pair<double, double>;
  const std::vector<P> same{{10, 10}, {12, 12}};
  const auto c1 = fit_calibration(same);
  EXPECT_NEAR(c1.a, 1.0, 1e-12);
  EXPECT_NEAR(c1.b, 0.0, 1e-12);
  const std::vector<P> shifted{{10, 11}, {12, 13}};
  const auto c2 = fit_calibration(shifted);
  EXPECT_NEAR(c2.a, 1.0, 1e-12);
  EXPECT_NEAR(c2.b, 1.0, 1e-12);
  EXPECT_EQ(c2.n_points, 2);
  const auto c0 = fit_calibration(std::vector<P>{});
  EXPECT_EQ(c0, CalibrationParams{});
  const auto one = fit_calibration(std::vector<P>{{9.0, 10.5}});
  EXPECT_DOUBLE_EQ(one.a, 1.0);
  EXPECT_DOUBLE_EQ(one.b, 1.5);
}

TEST(Calibration, GainClampedIntoRange) {
  using P = std::pair<double, double>;
  EXPECT_DOUBLE_EQ(fit_calibration(std::vector<P>{{10, 10}, {11, 20}}).a, kMaxCalibrationGain);
  EXPECT_DOUBLE_EQ(fit_calibration(std::vector<P>{{10, 12}, {12, 10}}).a, kMinCalibrationGain);
}

// ---- thresholds --------------------------------------------------------------------

TEST(Thresholds, BoundaryRuleOnWomanRow) {
  const ThresholdTable t = ThresholdTable::defaults();
  Demographics d;
  d.sex = Sex::Female;
  d.age_years = 30;
  ASSERT_EQ(t.row_for(d).severe_below, 8.0);
  ASSERT_EQ(t.row_for(d).mild_below, 12.0);
  EXPECT_EQ(diagnose(13.0, d, t), Severity::NonAnaemic);
  EXPECT_EQ(diagnose(12.0, d, t), Severity::NonAnaemic);
  EXPECT_EQ(diagnose(8.0, d, t), Severity::Mild);
  EXPECT_EQ(diagnose(7.9, d, t), Severity::Severe);
}

TEST(Thresholds, GroupSelection) {
  Demographics d;
  d.age_years = 3;
  EXPECT_EQ(group_for(d), DemographicGroup::ChildUnder5);
  d.age_years = 8;
  EXPECT_EQ(group_for(d), DemographicGroup::Child5to11);
  d.age_years = 13;
  EXPECT_EQ(group_for(d), DemographicGroup::Child12to14);
  d.age_years = 40;
  d.sex = Sex::Male;
  EXPECT_EQ(group_for(d), DemographicGroup::Man);
  d.sex = Sex::Female;
  EXPECT_EQ(group_for(d), DemographicGroup::WomanNonPregnant);
  d.pregnant = true;
  EXPECT_EQ(group_for(d), DemographicGroup::WomanPregnant);
}

TEST(Thresholds, CsvRoundTripAndValidation) {
  const ThresholdTable t = ThresholdTable::defaults();
  EXPECT_EQ(ThresholdTable::from_csv(t.to_csv()), t);
  EXPECT_THROW(ThresholdTable::from_csv("group,severe_below,mild_below\nman,8,13\n"), DataError);
  EXPECT_THROW(ThresholdTable({{DemographicGroup::Man, 13, 8}}), InvalidArgument);
  const ThresholdTable partial({{DemographicGroup::Man, 8, 13}});
  Demographics d;
  d.sex = Sex::Female;
  EXPECT_THROW(diagnose(10, d, partial), NotFound);
}

// ---- bundle ------------------------------------------------------------------------

TEST(Bundle, SerializeRoundTrip) {
  const ModelBundle b = toy_bundle();
  ASSERT_NO_THROW(b.validate());
  const auto bytes = serialize_bundle(b);
  const ModelBundle back = deserialize_bundle(bytes);
  EXPECT_EQ(back.bundle_version, b.bundle_version);
  EXPECT_EQ(back.trained_at, b.trained_at);
  EXPECT_EQ(back.heldout_patients, b.heldout_patients);
  EXPECT_EQ(back.heldout_spearman, b.heldout_spearman);
  EXPECT_EQ(back.thresholds, b.thresholds);
  EXPECT_EQ(back.impute_means, b.impute_means);
  for (int i = 0; i < 3; ++i) {
    EXPECT_EQ(back.classifiers[i].weights, b.classifiers[i].weights);
    EXPECT_EQ(back.classifiers[i].means, b.classifiers[i].means);
    EXPECT_EQ(back.regressors[i].coefficients, b.regressors[i].coefficients);
    EXPECT_EQ(back.regressors[i].intercept, b.regressors[i].intercept);
  }
  EXPECT_EQ(serialize_bundle(back), bytes);
}

TEST(Bundle, CorruptArchivesRejected) {
  auto bytes = serialize_bundle(toy_bundle());
  auto bad = bytes;
  bad[1] = 'X';
  EXPECT_THROW(deserialize_bundle(bad), DataError);
  bad = bytes;
  bad.resize(bad.size() - 8);
  EXPECT_THROW(deserialize_bundle(bad), DataError);
  EXPECT_THROW(deserialize_bundle(std::vector<std::uint8_t>{}), DataError);
}

TEST(Bundle, PredictionUsesFusedRegressorAndFlagsImputation) {
  const ModelBundle b = toy_bundle();
  std::array<FeatureVector, 3> f{};
  for (int r = 0; r < 3; ++r) {
    f[r].valid = true;
    f[r].region = kRegions[r];
  }
  const HbPrediction p = predict_hb(b, f, Severity::Mild);
  EXPECT_DOUBLE_EQ(p.hb, 9.0);
  EXPECT_FALSE(p.reduced_confidence);
  f[2].valid = false;
  EXPECT_TRUE(predict_hb(b, f, Severity::NonAnaemic).reduced_confidence);
  EXPECT_DOUBLE_EQ(predict_hb(b, f, Severity::NonAnaemic).hb, 12.0);
  for (auto& x : f) x.valid = false;
  EXPECT_THROW(predict_hb(b, f, Severity::Mild), InvalidArgument);
}

// ---- metrics -----------------------------------------------------------------------

TEST(Metrics, SpearmanUsesAverageRanks) {
  const std::vector<double> x{1, 2, 2, 3};
  const std::vector<double> y{10, 20, 20, 30};
  EXPECT_NEAR(spearman(x, y), 1.0, 1e-12);
  const std::vector<double> z{4, 3, 2, 1};
  const std::vector<double> w{1, 2, 3, 4};
  EXPECT_NEAR(spearman(z, w), -1.0, 1e-12);
  // ranks x: 1, 2.5, 2.5, 4 ; v: 2, 1, 4, 3
  const std::vector<double> v{5, 1, 9, 7};
  const double rx[] = {1, 2.5, 2.5, 4}, rv[] = {2, 1, 4, 3};
  EXPECT_NEAR(spearman(x, v), pearson(rx, rv), 1e-12);
}

TEST(Metrics, ConfusionAndAccuracy) {
  using S = Severity;
  const std::vector<double> ph{7, 10, 14}, th{7.5, 12, 13};
  const std::vector<S> pc{S::Severe, S::Mild, S::NonAnaemic}, tc{S::Severe, S::NonAnaemic, S::NonAnaemic};
  const EvalMetrics m = compute_metrics(ph, th, pc, tc);
  EXPECT_EQ(m.n, 3u);
  EXPECT_NEAR(m.accuracy, 2.0 / 3.0, 1e-12);
  EXPECT_EQ(m.confusion[2][1], 1);
  EXPECT_NEAR(m.mae, (0.5 + 2 + 1) / 3.0, 1e-12);
}
