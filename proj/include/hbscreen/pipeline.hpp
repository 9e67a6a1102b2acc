#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "hbscreen/dataset.hpp"
#include "hbscreen/features.hpp"
#include "hbscreen/models.hpp"
#include "hbscreen/nn.hpp"
#include "hbscreen/preprocess.hpp"
#include "hbscreen/segment.hpp"

namespace hbscreen {

// ---- configuration --------------------------------------------------------

enum class SegmenterBackend { Slic, Net };

struct PipelineConfig {
  ClaheConfig clahe{8, 8, 2.0};
  int threshold_window = 15;
  double threshold_offset = 40.0;  // glare: Y above the local mean by more than this
  SlicParams slic{96, 10.0, 10};
  double crf_weight = 0.6;
  int crf_iters = 10;
  double crf_softness = 2.0;  // Lab units over which the pixel term falls from 1 to 0
  std::array<ColorProfile, 3> profiles{};  // nailbed, conjunctiva, tongue
  ColorProfile sclera{};
  double target_white = kDefaultTargetWhite;
  SegmenterBackend segmenter = SegmenterBackend::Slic;
  std::string net_path;
  ClassifierOptions classifier{};
  RegressorOptions regressor{};
  Oversampler balance_method = Oversampler::Smote;
  int smote_k = 5;
  double rose_bandwidth = 0.5;
  std::string thresholds_path;  // empty: built-in table
  std::uint64_t seed = 0;
  double test_fraction = 0.2;

  static PipelineConfig defaults();
  // Throws ConfigError on malformed JSON, unknown keys, or out-of-range values.
  static PipelineConfig from_json(std::string_view text);
  static PipelineConfig load(const std::filesystem::path& path);
  std::string to_json() const;
  void validate() const;
};

// Threshold table named by the config, or the built-in defaults.
ThresholdTable load_thresholds(const PipelineConfig& cfg);

// ---- per-region analysis --------------------------------------------------

struct RegionAnalysis {
  Region region = Region::Nailbed;
  FeatureVector features;
  RegionMask roi{1, 1};
  double roi_area_fraction = 0.0;
  bool low_confidence = false;
  bool illumination_corrected = false;
  std::size_t glare_pixels = 0;
  std::vector<std::string> flags;
};

// Y-channel CLAHE, superpixels, (conjunctiva) sclera-referenced white balance,
// colour-profile ROI selection, CRF refinement, glare removal, morphology and
// feature extraction. Failures surface as PipelineError tagged with the stage.
RegionAnalysis analyze_region(const ImageRGB8& img, Region region, const FeatureMetadata& meta,
                              const PipelineConfig& cfg, const nn::NetSpec* net = nullptr);

// Enhanced image: CLAHE on Y, chroma untouched.
ImageRGB8 enhance(const ImageRGB8& img, const ClaheConfig& cfg);

// ---- screening ------------------------------------------------------------

struct RegionScreening {
  Region region = Region::Nailbed;
  bool captured = false;
  bool usable = false;
  Severity cls = Severity::Severe;
  std::array<double, 3> probabilities{};
  FeatureVector features;
  double roi_area_fraction = 0.0;
  bool low_confidence = false;
};

struct ScreeningOutcome {
  std::array<RegionScreening, 3> regions{};
  Severity fused = Severity::Severe;
  double raw_hb = 0.0;
  double calibrated_hb = 0.0;
  Severity severity = Severity::Severe;
  bool reduced_confidence = false;
  std::vector<std::string> flags;
  int bundle_version = 0;
  CalibrationParams calibration;
};

using RegionImages = std::array<std::optional<ImageRGB8>, 3>;

FeatureMetadata metadata_for(const Demographics& d) noexcept;

// Throws PipelineError("capture") when no image is given and
// PipelineError("features") when no region yields a usable ROI.
ScreeningOutcome screen(const ModelBundle& bundle, const RegionImages& images, const Demographics& demographics,
                        const CalibrationParams& calibration, const ThresholdTable& table, const PipelineConfig& cfg,
                        const nn::NetSpec* net = nullptr);

// Same decision chain from already-extracted region features.
ScreeningOutcome screen_features(const ModelBundle& bundle, const std::array<FeatureVector, 3>& features,
                                 const Demographics& demographics, const CalibrationParams& calibration,
                                 const ThresholdTable& table);

// ---- corpus features, training, evaluation --------------------------------

struct FeatureRecord {
  std::string patient_id;
  std::optional<double> hb;
  Demographics demographics;
  std::array<FeatureVector, 3> features{};
};

// Runs analyze_region over every patient; per-patient work is spread over
// `jobs` threads and the output order follows the input.
std::vector<FeatureRecord> extract_corpus(const std::vector<CorpusEntry>& corpus, const PipelineConfig& cfg, int jobs,
                                          const nn::NetSpec* net = nullptr);

// One row per patient and region: patient_id,region,valid,<28 features>.
std::string feature_table_csv(const std::vector<FeatureRecord>& records);
// Joins a feature table with corpus labels. Throws DataError on malformed rows.
std::vector<FeatureRecord> read_feature_table(std::string_view csv, const std::vector<CorpusEntry>& corpus);

// Labelled samples (class from the threshold table); records without hb are skipped.
std::vector<LabelledSample> to_samples(const std::vector<FeatureRecord>& records, const ThresholdTable& table);

// Per-region classifiers and per-class robust regressors on the SMOTE-balanced
// training fold. Throws PipelineError("train") when a class is absent.
ModelBundle train_bundle(const TrainingFold& fold, const PipelineConfig& cfg, const ThresholdTable& table,
                         int bundle_version, std::int64_t trained_at);

struct SamplePrediction {
  std::string patient_id;
  double true_hb = 0.0;
  Severity true_cls = Severity::Severe;
  double predicted_hb = 0.0;
  Severity predicted_cls = Severity::Severe;  // diagnose(predicted hb)
  Severity fused = Severity::Severe;
  bool reduced_confidence = false;
};

std::vector<SamplePrediction> predict_samples(const ModelBundle& bundle, const std::vector<LabelledSample>& samples,
                                              const ThresholdTable& table);
EvalMetrics metrics_of(const std::vector<SamplePrediction>& predictions);

struct TrainOutcome {
  ModelBundle bundle;
  std::vector<LabelledSample> heldout;
  std::vector<SamplePrediction> heldout_predictions;
  EvalMetrics heldout_metrics;
};

// Patient-level split, train on the training fold, score the held-out fold.
TrainOutcome train_and_validate(std::vector<LabelledSample> samples, const PipelineConfig& cfg,
                                const ThresholdTable& table, int bundle_version, std::int64_t trained_at);

}  // namespace hbscreen
