#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "hbscreen/clinical.hpp"
#include "hbscreen/features.hpp"

namespace hbscreen {

// ---- classifier -----------------------------------------------------------

struct ClassifierOptions {
  double l2 = 1e-3;
  double learning_rate = 0.5;
  int epochs = 300;
  std::uint64_t seed = 0;
};

// Multinomial logistic regression on standardized features.
struct ClassifierModel {
  int feature_version = kFeatureVersion;
  int n_features = 0;
  std::vector<double> means;  // empty: no standardization
  std::vector<double> stds;
  std::array<std::vector<double>, 3> weights;  // per class, n_features each
  std::array<double, 3> bias{};
  std::size_t sample_count = 0;
  std::uint64_t seed = 0;
  std::vector<double> loss_trace;  // initial loss, then one entry per accepted step

  void validate() const;
};

// Full-batch gradient descent on mean cross-entropy + l2/2 |W|^2. A step that
// raises the loss is retried with half the learning rate (at most 20 times
// overall), so loss_trace is non-increasing. Throws InvalidArgument when a
// class has no rows or rows differ in length.
ClassifierModel train_classifier(std::span<const std::vector<double>> rows, std::span<const Severity> labels,
                                 const ClassifierOptions& opts);

struct Classification {
  Severity cls = Severity::Severe;
  std::array<double, 3> probabilities{};
};

std::array<double, 3> softmax(const std::array<double, 3>& logits) noexcept;

// First maximum wins, so ties go to the more severe class.
Severity argmax_severity(const std::array<double, 3>& probabilities) noexcept;

// Throws InvalidArgument on feature version or length mismatch.
Classification classify(const ClassifierModel& model, const FeatureVector& vec);
Classification classify_row(const ClassifierModel& model, std::span<const double> row);

// 2-of-3 majority; full disagreement yields the conjunctiva's label. A missing
// region takes the arbiter's label, where the arbiter is the conjunctiva, else
// the nailbed, else the tongue. Throws InvalidArgument when all are missing.
Severity fuse_majority(std::optional<Severity> nail, std::optional<Severity> conj, std::optional<Severity> tongue);

// ---- robust regression ----------------------------------------------------

struct RegressorOptions {
  double ridge = 0.0;  // on standardized coefficients, intercept unpenalized
  int max_iters = 50;
  double tol = 1e-8;
};

struct RegressorModel {
  std::vector<double> coefficients;  // raw feature units
  double intercept = 0.0;
  double tau = 1.0;  // final scale
  Severity serves = Severity::NonAnaemic;
  int iterations = 0;
  std::vector<double> objective_trace;  // Huber objective at the OLS start, then per iteration

  void validate() const;
};

inline constexpr double kHuberK = 1.345;
inline constexpr double kMadScale = 1.4826;

double huber_loss(double r, double delta) noexcept;

// IRLS with Huber weights. tau = 1.4826 * MAD of the current residuals
// (starting from OLS, never allowed to grow); delta = 1.345 * tau. Stops at max_iters, when the standardized coefficient
// change drops below tol, or if a step would raise the objective. Identical
// targets give an intercept-only model. Throws InvalidArgument for fewer than
// p + 2 rows or mismatched lengths.
RegressorModel train_regressor(std::span<const std::vector<double>> rows, std::span<const double> hb, Severity cls,
                               const RegressorOptions& opts = {});

double predict(const RegressorModel& model, std::span<const double> row);

// ---- calibration ----------------------------------------------------------

struct CalibrationParams {
  double a = 1.0;
  double b = 0.0;
  int n_points = 0;

  double apply(double raw) const noexcept { return a * raw + b; }
  friend bool operator==(const CalibrationParams&, const CalibrationParams&) = default;
};

inline constexpr double kMinCalibrationGain = 0.25;
inline constexpr double kMaxCalibrationGain = 4.0;

// history holds (raw prediction, lab hb) pairs.
CalibrationParams fit_calibration(std::span<const std::pair<double, double>> history);

// ---- diagnosis ------------------------------------------------------------

enum class DemographicGroup { ChildUnder5, Child5to11, Child12to14, WomanNonPregnant, WomanPregnant, Man };
inline constexpr std::array<DemographicGroup, 6> kDemographicGroups = {
    DemographicGroup::ChildUnder5,      DemographicGroup::Child5to11,    DemographicGroup::Child12to14,
    DemographicGroup::WomanNonPregnant, DemographicGroup::WomanPregnant, DemographicGroup::Man};

std::string_view to_string(DemographicGroup g) noexcept;
DemographicGroup group_from_string(std::string_view s);

// Pregnancy takes precedence; otherwise age bands (<5, <12, <15) then sex.
DemographicGroup group_for(const Demographics& d) noexcept;

struct ThresholdRow {
  DemographicGroup group = DemographicGroup::Man;
  double severe_below = 0.0;
  double mild_below = 0.0;
  friend bool operator==(const ThresholdRow&, const ThresholdRow&) = default;
};

class ThresholdTable {
 public:
  ThresholdTable() = default;
  // Throws InvalidArgument on duplicate groups or severe_below >= mild_below.
  explicit ThresholdTable(std::vector<ThresholdRow> rows);

  // CSV with header group,severe_below,mild_below; '#' starts a comment line.
  // Requires every demographic group. Throws DataError on malformed input.
  static ThresholdTable from_csv(std::string_view text);
  static ThresholdTable load(const std::filesystem::path& path);
  static ThresholdTable defaults();
  std::string to_csv() const;

  const std::vector<ThresholdRow>& rows() const noexcept { return rows_; }
  // Throws NotFound when the group has no row.
  const ThresholdRow& row_for(DemographicGroup g) const;
  const ThresholdRow& row_for(const Demographics& d) const { return row_for(group_for(d)); }

  friend bool operator==(const ThresholdTable&, const ThresholdTable&) = default;

 private:
  std::vector<ThresholdRow> rows_;
};

// hb < severe_below: severe; hb < mild_below: mild; otherwise non-anaemic.
Severity diagnose(double hb, const Demographics& d, const ThresholdTable& table);

// ---- bundle ---------------------------------------------------------------

inline constexpr int kBundleFormat = 1;

struct ModelBundle {
  int bundle_version = 1;
  int feature_version = kFeatureVersion;
  std::int64_t trained_at = 0;
  std::array<ClassifierModel, 3> classifiers;  // nailbed, conjunctiva, tongue
  std::array<RegressorModel, 3> regressors;    // severe, mild, non-anaemic
  std::vector<double> impute_means;            // 3 * kFeatureLength
  ThresholdTable thresholds;
  std::vector<std::string> heldout_patients;
  double heldout_spearman = 0.0;

  void validate() const;
};

struct HbPrediction {
  double hb = 0.0;
  bool reduced_confidence = false;
};

// Concatenates the three region vectors, imputing invalid ones with the stored
// training means. Throws InvalidArgument when no region is valid.
HbPrediction predict_hb(const ModelBundle& bundle, const std::array<FeatureVector, 3>& features, Severity fused);

// Archive: "HBBN", u32 manifest length, JSON manifest, then f64 blobs in the
// order the manifest lists them.
std::vector<std::uint8_t> serialize_bundle(const ModelBundle& bundle);
// Throws DataError on corrupt archives or a feature layout mismatch.
ModelBundle deserialize_bundle(std::span<const std::uint8_t> bytes);
void save_bundle(const ModelBundle& bundle, const std::filesystem::path& path);
ModelBundle load_bundle(const std::filesystem::path& path);

// ---- metrics --------------------------------------------------------------

double pearson(std::span<const double> x, std::span<const double> y);
// Pearson correlation of average ranks.
double spearman(std::span<const double> x, std::span<const double> y);

struct EvalMetrics {
  std::size_t n = 0;
  double accuracy = 0.0;
  std::array<std::array<int, 3>, 3> confusion{};  // [true][predicted]
  double spearman = 0.0;
  double mae = 0.0;
};

EvalMetrics compute_metrics(std::span<const double> predicted_hb, std::span<const double> true_hb,
                            std::span<const Severity> predicted_cls, std::span<const Severity> true_cls);

}  // namespace hbscreen
