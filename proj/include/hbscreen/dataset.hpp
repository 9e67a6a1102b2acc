#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hbscreen/clinical.hpp"
#include "hbscreen/features.hpp"
#include "hbscreen/geometry.hpp"
#include "hbscreen/image.hpp"
#include "hbscreen/segment.hpp"

namespace hbscreen {

using Row = std::vector<double>;

// ---- augmentation ---------------------------------------------------------

struct AugmentPlan {
  std::vector<GeometricOp> ops;
};

// Comma-separated entries: flip_h, flip_v, rot90, identity,
// affine:m0:m1:m2:m3:m4:m5. Blur-like directives (blur, gaussian, median,
// diffuse, smooth) and unknown entries throw InvalidArgument.
AugmentPlan parse_augment_plan(std::string_view text);

// One output image per plan entry. Throws InvalidArgument on an empty plan.
std::vector<ImageRGB8> augment_images(const ImageRGB8& img, const AugmentPlan& plan);

// ---- oversampling ---------------------------------------------------------

// Interpolates toward one of the k nearest neighbours (Euclidean, ties by
// index). Throws InvalidArgument when minority.size() < 2, k < 1, k >= size,
// or the rows differ in length.
std::vector<Row> smote(std::span<const Row> minority, int k, int n_new, std::uint64_t seed);

// Smoothed bootstrap: a uniformly drawn row plus N(0, (h * column std)^2)
// noise per column (sample std, n-1). Throws InvalidArgument on empty input or h < 0.
std::vector<Row> rose(std::span<const Row> rows, double bandwidth, int n_new, std::uint64_t seed);

enum class Oversampler { Smote, Rose };

struct BalanceOptions {
  Oversampler method = Oversampler::Smote;
  int k = 5;
  double rose_bandwidth = 0.5;
  // Every class is topped up to max(largest class, min_per_class).
  std::size_t min_per_class = 0;
  std::uint64_t seed = 0;
};

// Tops every class up to a common count. Classes with a single row are
// duplicated. Throws InvalidArgument if any class is empty.
std::vector<std::vector<Row>> oversample_to_parity(const std::vector<std::vector<Row>>& per_class,
                                                   const BalanceOptions& opts);

// ---- labelled samples and splits -----------------------------------------

struct LabelledSample {
  std::array<FeatureVector, 3> features{};  // nailbed, conjunctiva, tongue
  double hb = 0.0;
  Severity cls = Severity::NonAnaemic;
  std::string patient_id;
  std::int64_t timestamp = 0;
  Demographics demographics;

  bool complete() const noexcept;
};

struct Split;
Split split_by_patient(std::vector<LabelledSample> samples, double test_fraction, std::uint64_t seed);

// Training side of a patient-level split. Only split_by_patient can create one,
// so balancing can never see evaluation rows.
class TrainingFold {
 public:
  const std::vector<LabelledSample>& samples() const noexcept { return samples_; }

 private:
  explicit TrainingFold(std::vector<LabelledSample> s) : samples_(std::move(s)) {}
  std::vector<LabelledSample> samples_;
  friend struct Split;
  friend Split split_by_patient(std::vector<LabelledSample>, double, std::uint64_t);
};

struct Split {
  TrainingFold train;
  std::vector<LabelledSample> test;
};

// Stratified by each patient's class; no patient lands in both folds.
// test_fraction in [0, 1).
Split split_by_patient(std::vector<LabelledSample> samples, double test_fraction, std::uint64_t seed);

// Concatenated three-region features (84 columns) of complete samples,
// grouped by class; hb is appended as a final column when `with_hb`.
std::array<std::vector<Row>, 3> rows_by_class(std::span<const LabelledSample> samples, bool with_hb);

// Split-then-balance: rows_by_class(fold, with_hb = true) topped up to parity.
std::array<std::vector<Row>, 3> balance(const TrainingFold& fold, const BalanceOptions& opts);

// ---- synthetic oracle corpus ---------------------------------------------

struct SynthPatient {
  std::string id;
  std::array<ImageRGB8, 3> images{ImageRGB8(1, 1), ImageRGB8(1, 1), ImageRGB8(1, 1)};  // nailbed, conjunctiva, tongue
  double hb = 0.0;
  Demographics demographics;
};

inline constexpr int kSynthImageSize = 96;
inline constexpr double kSynthHbMin = 5.0;
inline constexpr double kSynthHbMax = 17.0;

// Mean ROI colour the generator plants for a region at a given hb.
Lab synth_roi_lab(Region region, double hb);

SynthPatient synth_patient(std::uint64_t seed, int index);
std::vector<SynthPatient> synth_corpus(int n_patients, std::uint64_t seed);

// Ground-truth ROI mask of a generated image (before noise), for tests.
RegionMask synth_roi_mask(std::uint64_t seed, int index, Region region);

// ---- corpus on disk -------------------------------------------------------

struct CorpusEntry {
  std::string id;
  std::optional<double> hb;
  Demographics demographics;
  std::filesystem::path dir;
};

std::string labels_csv_header();

// patient_<id>/{nailbed,conjunctiva,tongue}.png plus labels.csv.
void write_corpus(std::span<const SynthPatient> patients, const std::filesystem::path& dir);

// Reads labels.csv. Throws DataError on a missing file or malformed row.
std::vector<CorpusEntry> read_corpus(const std::filesystem::path& dir);

struct PatientImages {
  std::array<std::optional<ImageRGB8>, 3> images;
  std::vector<Region> missing;
};

// Loads whichever of the three region images exist in a patient directory.
PatientImages load_patient_images(const std::filesystem::path& dir);

std::string image_filename(Region r);

}  // namespace hbscreen
