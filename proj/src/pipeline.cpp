#include "hbscreen/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <map>
#include <set>
#include <sstream>

#include <omp.h>
#include <json.hpp>

#include "hbscreen/color.hpp"
#include "hbscreen/error.hpp"
#include "hbscreen/image_io.hpp"

namespace hbscreen {

using json = nlohmann::json;

// ---- configuration --------------------------------------------------------

PipelineConfig PipelineConfig::defaults() {
  PipelineConfig c;
  c.profiles[index_of(Region::Nailbed)] = {synth_roi_lab(Region::Nailbed, 11.0), 18.0, 0.02};
  c.profiles[index_of(Region::Conjunctiva)] = {synth_roi_lab(Region::Conjunctiva, 11.0), 20.0, 0.02};
  c.profiles[index_of(Region::Tongue)] = {synth_roi_lab(Region::Tongue, 11.0), 18.0, 0.02};
  c.sclera = {{90.0, 0.0, 3.0}, 12.0, 0.01};
  c.regressor.ridge = 1.0;
  return c;
}

void PipelineConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError(m); };
  try {
    clahe.validate();
    for (const auto& p : profiles) p.validate();
    sclera.validate();
  } catch (const InvalidArgument& e) {
    fail(e.what());
  }
  if (threshold_window < 3 || threshold_window % 2 == 0) fail("threshold.window must be odd and >= 3");
  if (!std::isfinite(threshold_offset)) fail("threshold.offset must be finite");
  if (slic.k < 1) fail("slic.k must be >= 1");
  if (!(slic.compactness > 0.0)) fail("slic.compactness must be > 0");
  if (slic.iters < 0 || slic.iters > 100) fail("slic.iters must be in [0, 100]");
  if (!(crf_weight >= 0.0) || !std::isfinite(crf_weight)) fail("crf.weight must be >= 0");
  if (crf_iters < 0 || crf_iters > 100) fail("crf.iters must be in [0, 100]");
  if (!(crf_softness > 0.0)) fail("crf.softness must be > 0");
  if (!(target_white > 0.0 && target_white <= 255.0)) fail("illumination.target_white must be in (0, 255]");
  if (segmenter == SegmenterBackend::Net && net_path.empty()) fail("segmenter.net_path is required for backend 'net'");
  if (!(classifier.l2 >= 0.0)) fail("classifier.l2 must be >= 0");
  if (!(classifier.learning_rate > 0.0)) fail("classifier.learning_rate must be > 0");
  if (classifier.epochs < 0 || classifier.epochs > 100000) fail("classifier.epochs must be in [0, 100000]");
  if (!(regressor.ridge >= 0.0)) fail("regressor.ridge must be >= 0");
  if (regressor.max_iters < 0 || regressor.max_iters > 1000) fail("regressor.max_iters must be in [0, 1000]");
  if (!(regressor.tol > 0.0)) fail("regressor.tol must be > 0");
  if (smote_k < 1) fail("balance.k must be >= 1");
  if (!(rose_bandwidth >= 0.0)) fail("balance.rose_bandwidth must be >= 0");
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) fail("test_fraction must be in (0, 1)");
}

namespace {

// Reads an object, rejecting keys that were never asked for.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + " must be an object");
  }
  ~Section() noexcept(false) {
    if (std::uncaught_exceptions() > 0) return;
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.contains(k)) throw ConfigError("unknown config key '" + qualified(k) + "'");
    }
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError("config key '" + qualified(key) + "' has the wrong type");
    }
  }

  bool has(const char* key) {
    seen_.insert(key);
    return j_.contains(key);
  }
  Section sub(const char* key) {
    seen_.insert(key);
    return Section(j_.at(key), qualified(key));
  }

 private:
  std::string where() const { return path_.empty() ? "config" : "'" + path_ + "'"; }
  std::string qualified(const std::string& k) const { return path_.empty() ? k : path_ + "." + k; }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void read_profile(Section s, ColorProfile& p) {
  std::vector<double> target(p.target.begin(), p.target.end());
  s.get("target", target);
  if (target.size() != 3) throw ConfigError("profile target must have three Lab values");
  std::copy(target.begin(), target.end(), p.target.begin());
  s.get("max_distance", p.max_distance);
  s.get("min_area_fraction", p.min_area_fraction);
}

json profile_json(const ColorProfile& p) {
  return {{"target", p.target}, {"max_distance", p.max_distance}, {"min_area_fraction", p.min_area_fraction}};
}

}  // namespace

PipelineConfig PipelineConfig::from_json(std::string_view text) {
  json j;
  try {
    j = json::parse(text.begin(), text.end());
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  PipelineConfig c = defaults();
  {
    Section root(j, "");
    if (root.has("clahe")) {
      Section s = root.sub("clahe");
      s.get("tiles_x", c.clahe.tiles_x);
      s.get("tiles_y", c.clahe.tiles_y);
      s.get("clip_limit", c.clahe.clip_limit);
    }
    if (root.has("threshold")) {
      Section s = root.sub("threshold");
      s.get("window", c.threshold_window);
      s.get("offset", c.threshold_offset);
    }
    if (root.has("slic")) {
      Section s = root.sub("slic");
      s.get("k", c.slic.k);
      s.get("compactness", c.slic.compactness);
      s.get("iters", c.slic.iters);
    }
    if (root.has("crf")) {
      Section s = root.sub("crf");
      s.get("weight", c.crf_weight);
      s.get("iters", c.crf_iters);
      s.get("softness", c.crf_softness);
    }
    if (root.has("profiles")) {
      Section s = root.sub("profiles");
      for (Region r : kRegions) {
        const std::string name(to_string(r));
        if (s.has(name.c_str())) read_profile(s.sub(name.c_str()), c.profiles[index_of(r)]);
      }
      if (s.has("sclera")) read_profile(s.sub("sclera"), c.sclera);
    }
    if (root.has("illumination")) {
      Section s = root.sub("illumination");
      s.get("target_white", c.target_white);
    }
    if (root.has("segmenter")) {
      Section s = root.sub("segmenter");
      std::string backend = c.segmenter == SegmenterBackend::Net ? "net" : "slic";
      s.get("backend", backend);
      if (backend == "slic") {
        c.segmenter = SegmenterBackend::Slic;
      } else if (backend == "net") {
        c.segmenter = SegmenterBackend::Net;
      } else {
        throw ConfigError("segmenter.backend must be 'slic' or 'net'");
      }
      s.get("net_path", c.net_path);
    }
    if (root.has("classifier")) {
      Section s = root.sub("classifier");
      s.get("l2", c.classifier.l2);
      s.get("learning_rate", c.classifier.learning_rate);
      s.get("epochs", c.classifier.epochs);
    }
    if (root.has("regressor")) {
      Section s = root.sub("regressor");
      s.get("ridge", c.regressor.ridge);
      s.get("max_iters", c.regressor.max_iters);
      s.get("tol", c.regressor.tol);
    }
    if (root.has("balance")) {
      Section s = root.sub("balance");
      std::string method = c.balance_method == Oversampler::Smote ? "smote" : "rose";
      s.get("method", method);
      if (method == "smote") {
        c.balance_method = Oversampler::Smote;
      } else if (method == "rose") {
        c.balance_method = Oversampler::Rose;
      } else {
        throw ConfigError("balance.method must be 'smote' or 'rose'");
      }
      s.get("k", c.smote_k);
      s.get("rose_bandwidth", c.rose_bandwidth);
    }
    root.get("thresholds_path", c.thresholds_path);
    root.get("seed", c.seed);
    root.get("test_fraction", c.test_fraction);
  }
  c.classifier.seed = c.seed;
  c.validate();
  return c;
}

PipelineConfig PipelineConfig::load(const std::filesystem::path& path) {
  std::vector<std::uint8_t> bytes;
  try {
    bytes = io::read_file(path);
  } catch (const DataError& e) {
    throw ConfigError(e.what());
  }
  PipelineConfig c = from_json(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
  if (!c.thresholds_path.empty() && std::filesystem::path(c.thresholds_path).is_relative()) {
    c.thresholds_path = (path.parent_path() / c.thresholds_path).string();
  }
  if (!c.net_path.empty() && std::filesystem::path(c.net_path).is_relative()) {
    c.net_path = (path.parent_path() / c.net_path).string();
  }
  return c;
}

std::string PipelineConfig::to_json() const {
  json profiles_j;
  for (Region r : kRegions) profiles_j[std::string(to_string(r))] = profile_json(profiles[index_of(r)]);
  profiles_j["sclera"] = profile_json(sclera);
  const json j = {
      {"clahe", {{"tiles_x", clahe.tiles_x}, {"tiles_y", clahe.tiles_y}, {"clip_limit", clahe.clip_limit}}},
      {"threshold", {{"window", threshold_window}, {"offset", threshold_offset}}},
      {"slic", {{"k", slic.k}, {"compactness", slic.compactness}, {"iters", slic.iters}}},
      {"crf", {{"weight", crf_weight}, {"iters", crf_iters}, {"softness", crf_softness}}},
      {"profiles", profiles_j},
      {"illumination", {{"target_white", target_white}}},
      {"segmenter", {{"backend", segmenter == SegmenterBackend::Net ? "net" : "slic"}, {"net_path", net_path}}},
      {"classifier",
       {{"l2", classifier.l2}, {"learning_rate", classifier.learning_rate}, {"epochs", classifier.epochs}}},
      {"regressor", {{"ridge", regressor.ridge}, {"max_iters", regressor.max_iters}, {"tol", regressor.tol}}},
      {"balance",
       {{"method", balance_method == Oversampler::Smote ? "smote" : "rose"},
        {"k", smote_k},
        {"rose_bandwidth", rose_bandwidth}}},
      {"thresholds_path", thresholds_path},
      {"seed", seed},
      {"test_fraction", test_fraction}};
  return j.dump(2) + "\n";
}

ThresholdTable load_thresholds(const PipelineConfig& cfg) {
  if (cfg.thresholds_path.empty()) return ThresholdTable::defaults();
  try {
    return ThresholdTable::load(cfg.thresholds_path);
  } catch (const DataError& e) {
    throw ConfigError(e.what());
  }
}

// ---- per-region analysis --------------------------------------------------

namespace {

template <typename F>
auto stage(const char* name, F&& f) {
  try {
    return f();
  } catch (const PipelineError&) {
    throw;
  } catch (const Error& e) {
    throw PipelineError(name, std::string(name) + ": " + e.what());
  }
}

RegionMask mask_and_not(const RegionMask& a, const RegionMask& b) {
  RegionMask out = a;
  auto o = out.bits();
  const auto bb = b.bits();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = o[i] && !bb[i];
  return out;
}

}  // namespace

ImageRGB8 enhance(const ImageRGB8& img, const ClaheConfig& cfg) {
  Planes3 ycc = convert_color(img, ColorSpaceId::YCbCr);
  ycc[0] = clahe(ycc[0], cfg);
  return convert_back(ycc, ColorSpaceId::YCbCr);
}

RegionAnalysis analyze_region(const ImageRGB8& img, Region region, const FeatureMetadata& meta,
                              const PipelineConfig& cfg, const nn::NetSpec* net) {
  RegionAnalysis out;
  out.region = region;
  const double n_pixels = static_cast<double>(img.pixel_count());

  const ImageRGB8 enhanced = stage("preprocess", [&] { return enhance(img, cfg.clahe); });

  const bool need_slic = cfg.segmenter == SegmenterBackend::Slic || region == Region::Conjunctiva;
  std::optional<LabelMap> labels;
  if (need_slic) {
    labels = stage("segment", [&] {
      const Planes3 lab = convert_color(enhanced, ColorSpaceId::CIELab);
      const int k = std::min<int>(cfg.slic.k, static_cast<int>(img.pixel_count()));
      return slic(lab, k, cfg.slic.compactness, cfg.slic.iters);
    });
  }

  ImageRGB8 working = img;
  if (region == Region::Conjunctiva) {
    stage("preprocess", [&] {
      const Planes3 lab = convert_color(img, ColorSpaceId::CIELab);
      const RoiSelection sclera = select_roi(*labels, lab, cfg.sclera);
      if (sclera.mask.empty()) {
        out.flags.push_back("no_sclera_reference");
      } else {
        working = correct_illumination(img, sclera.mask, cfg.target_white);
        out.illumination_corrected = true;
      }
      return 0;
    });
  }

  const ColorProfile& profile = cfg.profiles[index_of(region)];
  const Planes3 lab = convert_color(working, ColorSpaceId::CIELab);

  PlaneF32 prob = stage("segment", [&] {
    PlaneF32 p(img.width(), img.height());
    if (cfg.segmenter == SegmenterBackend::Net) {
      if (!net) throw InvalidArgument("backend 'net' selected but no network loaded");
      if (net->input.width != img.width() || net->input.height != img.height()) {
        throw DimensionMismatch("network input is " + std::to_string(net->input.width) + "x" +
                                std::to_string(net->input.height) + ", image is " + std::to_string(img.width()) + "x" +
                                std::to_string(img.height()));
      }
      p = nn::forward(*net, nn::image_to_tensor(enhanced));
    } else {
      const RoiSelection sel = select_roi(*labels, lab, profile);
      const auto bits = sel.mask.bits();
      auto pd = p.data();
      for (std::size_t i = 0; i < pd.size(); ++i) {
        const Lab px{lab[0].data()[i], lab[1].data()[i], lab[2].data()[i]};
        const double d = lab_distance(px, profile.target);
        const double pixel = 1.0 / (1.0 + std::exp((d - profile.max_distance) / cfg.crf_softness));
        pd[i] = static_cast<float>(0.7 * pixel + 0.3 * (bits[i] ? 1.0 : 0.0));
      }
    }
    return p;
  });

  RegionMask roi = stage("refine", [&] {
    RegionMask m = crf_refine(prob, cfg.crf_weight, cfg.crf_iters);
    m = morph(m, MorphOp::Open, StructuringElement::Square3);
    m = morph(m, MorphOp::Close, StructuringElement::Square3);
    const Planes3 ycc = convert_color(working, ColorSpaceId::YCbCr);
    RegionMask glare = adaptive_threshold(ycc[0], cfg.threshold_window, static_cast<float>(cfg.threshold_offset));
    glare = morph(glare, MorphOp::Dilate, StructuringElement::Square3);
    const std::size_t before = m.count();
    m = mask_and_not(m, glare);
    out.glare_pixels = before - m.count();
    return m;
  });

  out.roi_area_fraction = static_cast<double>(roi.count()) / n_pixels;
  if (out.roi_area_fraction < profile.min_area_fraction) {
    out.low_confidence = true;
    out.flags.push_back("roi_too_small");
    roi = RegionMask(img.width(), img.height());
  }
  out.features = stage("features", [&] { return extract(working, roi, region, meta); });
  out.roi = std::move(roi);
  return out;
}

// ---- screening ------------------------------------------------------------

FeatureMetadata metadata_for(const Demographics& d) noexcept { return {d.altitude_m, d.age_years}; }

ScreeningOutcome screen_features(const ModelBundle& bundle, const std::array<FeatureVector, 3>& features,
                                 const Demographics& demographics, const CalibrationParams& calibration,
                                 const ThresholdTable& table) {
  ScreeningOutcome out;
  out.bundle_version = bundle.bundle_version;
  out.calibration = calibration;
  std::array<std::optional<Severity>, 3> votes;
  for (Region r : kRegions) {
    const int i = index_of(r);
    RegionScreening& rs = out.regions[i];
    rs.region = r;
    rs.features = features[i];
    if (!features[i].valid) continue;
    rs.captured = true;
    rs.usable = true;
    const Classification c = classify(bundle.classifiers[i], features[i]);
    rs.cls = c.cls;
    rs.probabilities = c.probabilities;
    votes[i] = c.cls;
  }
  if (!votes[0] && !votes[1] && !votes[2]) throw PipelineError("features", "features: no region produced a usable ROI");
  out.fused = fuse_majority(votes[0], votes[1], votes[2]);
  const HbPrediction pred = predict_hb(bundle, features, out.fused);
  out.raw_hb = pred.hb;
  out.reduced_confidence = pred.reduced_confidence;
  out.calibrated_hb = calibration.apply(out.raw_hb);
  out.severity = diagnose(out.calibrated_hb, demographics, table);
  if (out.reduced_confidence) out.flags.push_back("reduced_confidence");
  return out;
}

ScreeningOutcome screen(const ModelBundle& bundle, const RegionImages& images, const Demographics& demographics,
                        const CalibrationParams& calibration, const ThresholdTable& table, const PipelineConfig& cfg,
                        const nn::NetSpec* net) {
  if (std::none_of(images.begin(), images.end(), [](const auto& i) { return i.has_value(); })) {
    throw PipelineError("capture", "capture: no region images available");
  }
  std::array<FeatureVector, 3> features{};
  std::array<RegionAnalysis, 3> analyses{};
  std::vector<std::string> flags;
  for (Region r : kRegions) {
    const int i = index_of(r);
    features[i].region = r;
    if (!images[i]) {
      flags.push_back("missing_region:" + std::string(to_string(r)));
      continue;
    }
    analyses[i] = analyze_region(*images[i], r, metadata_for(demographics), cfg, net);
    features[i] = analyses[i].features;
    for (const auto& f : analyses[i].flags) flags.push_back(f + ":" + std::string(to_string(r)));
  }
  ScreeningOutcome out = stage("model", [&] { return screen_features(bundle, features, demographics, calibration, table); });
  for (Region r : kRegions) {
    const int i = index_of(r);
    out.regions[i].captured = images[i].has_value();
    out.regions[i].roi_area_fraction = analyses[i].roi_area_fraction;
    out.regions[i].low_confidence = analyses[i].low_confidence;
  }
  out.flags.insert(out.flags.begin(), flags.begin(), flags.end());
  return out;
}

// ---- corpus features, training, evaluation --------------------------------

std::vector<FeatureRecord> extract_corpus(const std::vector<CorpusEntry>& corpus, const PipelineConfig& cfg, int jobs,
                                          const nn::NetSpec* net) {
  std::vector<FeatureRecord> out(corpus.size());
  std::vector<std::exception_ptr> errors(corpus.size());
  const int n = static_cast<int>(corpus.size());
#pragma omp parallel for schedule(dynamic) num_threads(std::max(1, jobs))
  for (int i = 0; i < n; ++i) {
    try {
      const CorpusEntry& e = corpus[i];
      FeatureRecord rec;
      rec.patient_id = e.id;
      rec.hb = e.hb;
      rec.demographics = e.demographics;
      const PatientImages imgs = load_patient_images(e.dir);
      for (Region r : kRegions) {
        rec.features[index_of(r)].region = r;
        if (const auto& im = imgs.images[index_of(r)]) {
          rec.features[index_of(r)] = analyze_region(*im, r, metadata_for(e.demographics), cfg, net).features;
        }
      }
      out[i] = std::move(rec);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

std::string feature_table_csv(const std::vector<FeatureRecord>& records) {
  std::ostringstream os;
  os << "patient_id," << feature_csv_header() << '\n';
  for (const auto& rec : records) {
    for (const auto& f : rec.features) os << rec.patient_id << ',' << feature_csv_row(f) << '\n';
  }
  return os.str();
}

std::vector<FeatureRecord> read_feature_table(std::string_view csv, const std::vector<CorpusEntry>& corpus) {
  std::map<std::string, FeatureRecord> by_id;
  for (const auto& e : corpus) {
    FeatureRecord rec;
    rec.patient_id = e.id;
    rec.hb = e.hb;
    rec.demographics = e.demographics;
    for (Region r : kRegions) rec.features[index_of(r)].region = r;
    by_id.emplace(e.id, std::move(rec));
  }
  std::istringstream in{std::string(csv)};
  std::string line;
  if (!std::getline(in, line) || line != "patient_id," + feature_csv_header()) {
    throw DataError("feature table: unexpected header");
  }
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::istringstream ls(line);
    for (std::string cell; std::getline(ls, cell, ',');) f.push_back(cell);
    const std::string where = "feature table line " + std::to_string(lineno);
    if (f.size() != 3u + kFeatureLength) throw DataError(where + ": expected " + std::to_string(3 + kFeatureLength) + " fields");
    const auto it = by_id.find(f[0]);
    if (it == by_id.end()) throw DataError(where + ": patient '" + f[0] + "' not in labels.csv");
    FeatureVector v;
    try {
      v.region = region_from_string(f[1]);
      v.valid = f[2] == "1";
      for (int k = 0; k < kFeatureLength; ++k) {
        std::size_t used = 0;
        v.values[k] = std::stod(f[3 + k], &used);
        if (used != f[3 + k].size()) throw std::invalid_argument(f[3 + k]);
      }
    } catch (const std::exception& e) {
      throw DataError(where + ": " + e.what());
    }
    it->second.features[index_of(v.region)] = v;
  }
  std::vector<FeatureRecord> out;
  for (const auto& e : corpus) out.push_back(by_id.at(e.id));
  return out;
}

std::vector<LabelledSample> to_samples(const std::vector<FeatureRecord>& records, const ThresholdTable& table) {
  std::vector<LabelledSample> out;
  for (const auto& r : records) {
    if (!r.hb) continue;
    LabelledSample s;
    s.features = r.features;
    s.hb = *r.hb;
    s.cls = diagnose(*r.hb, r.demographics, table);
    s.patient_id = r.patient_id;
    s.demographics = r.demographics;
    out.push_back(std::move(s));
  }
  return out;
}

ModelBundle train_bundle(const TrainingFold& fold, const PipelineConfig& cfg, const ThresholdTable& table,
                         int bundle_version, std::int64_t trained_at) {
  return stage("train", [&] {
    const auto& samples = fold.samples();
    ModelBundle b;
    b.bundle_version = bundle_version;
    b.trained_at = trained_at;
    b.thresholds = table;

    b.impute_means.assign(3 * kFeatureLength, 0.0);
    for (int r = 0; r < 3; ++r) {
      int count = 0;
      for (const auto& s : samples) {
        if (!s.features[r].valid) continue;
        ++count;
        for (int k = 0; k < kFeatureLength; ++k) b.impute_means[r * kFeatureLength + k] += s.features[r].values[k];
      }
      if (count == 0) {
        throw PipelineError("train", "train: no valid " + std::string(to_string(static_cast<Region>(r))) + " features");
      }
      for (int k = 0; k < kFeatureLength; ++k) b.impute_means[r * kFeatureLength + k] /= count;
    }

    const auto raw = rows_by_class(samples, true);
    for (Severity s : kSeverities) {
      if (raw[index_of(s)].empty()) {
        throw PipelineError("train", "train: class '" + std::string(to_string(s)) + "' has no complete training samples");
      }
    }
    BalanceOptions bo;
    bo.method = cfg.balance_method;
    bo.k = cfg.smote_k;
    bo.rose_bandwidth = cfg.rose_bandwidth;
    bo.min_per_class = 3 * kFeatureLength + 2;
    bo.seed = cfg.seed;
    const auto balanced = balance(fold, bo);

    std::vector<std::vector<double>> cls_rows[3];
    std::vector<Severity> cls_labels;
    for (Severity s : kSeverities) {
      const auto& rows = balanced[index_of(s)];
      std::vector<std::vector<double>> x;
      std::vector<double> y;
      for (const auto& row : rows) {
        x.emplace_back(row.begin(), row.begin() + 3 * kFeatureLength);
        y.push_back(row.back());
        for (int r = 0; r < 3; ++r) {
          cls_rows[r].emplace_back(row.begin() + r * kFeatureLength, row.begin() + (r + 1) * kFeatureLength);
        }
        cls_labels.push_back(s);
      }
      b.regressors[index_of(s)] = train_regressor(x, y, s, cfg.regressor);
    }
    for (int r = 0; r < 3; ++r) {
      ClassifierOptions co = cfg.classifier;
      co.seed = cfg.seed + static_cast<std::uint64_t>(r);
      b.classifiers[r] = train_classifier(cls_rows[r], cls_labels, co);
    }
    b.validate();
    return b;
  });
}

std::vector<SamplePrediction> predict_samples(const ModelBundle& bundle, const std::vector<LabelledSample>& samples,
                                              const ThresholdTable& table) {
  std::vector<SamplePrediction> out;
  for (const auto& s : samples) {
    SamplePrediction p;
    p.patient_id = s.patient_id;
    p.true_hb = s.hb;
    p.true_cls = s.cls;
    const ScreeningOutcome o = screen_features(bundle, s.features, s.demographics, CalibrationParams{}, table);
    p.predicted_hb = o.raw_hb;
    p.predicted_cls = o.severity;
    p.fused = o.fused;
    p.reduced_confidence = o.reduced_confidence;
    out.push_back(std::move(p));
  }
  return out;
}

EvalMetrics metrics_of(const std::vector<SamplePrediction>& predictions) {
  std::vector<double> ph, th;
  std::vector<Severity> pc, tc;
  for (const auto& p : predictions) {
    ph.push_back(p.predicted_hb);
    th.push_back(p.true_hb);
    pc.push_back(p.predicted_cls);
    tc.push_back(p.true_cls);
  }
  return compute_metrics(ph, th, pc, tc);
}

TrainOutcome train_and_validate(std::vector<LabelledSample> samples, const PipelineConfig& cfg,
                                const ThresholdTable& table, int bundle_version, std::int64_t trained_at) {
  Split split = split_by_patient(std::move(samples), cfg.test_fraction, cfg.seed);
  TrainOutcome out{train_bundle(split.train, cfg, table, bundle_version, trained_at), std::move(split.test), {}, {}};
  std::vector<LabelledSample> scorable;
  for (const auto& s : out.heldout) {
    if (std::any_of(s.features.begin(), s.features.end(), [](const FeatureVector& f) { return f.valid; })) {
      scorable.push_back(s);
    }
  }
  out.heldout_predictions = predict_samples(out.bundle, scorable, table);
  out.heldout_metrics = metrics_of(out.heldout_predictions);
  std::set<std::string> ids;
  for (const auto& s : out.heldout) ids.insert(s.patient_id);
  out.bundle.heldout_patients.assign(ids.begin(), ids.end());
  out.bundle.heldout_spearman = out.heldout_metrics.spearman;
  return out;
}

}  // namespace hbscreen
