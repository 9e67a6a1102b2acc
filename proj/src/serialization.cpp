#include "hbscreen/serialization.hpp"

#include <sstream>

#include "hbscreen/error.hpp"

namespace hbscreen {

namespace {

template <typename T>
T field(const json& j, const char* key) {
  if (!j.is_object() || !j.contains(key)) throw InvalidArgument(std::string("missing field '") + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw InvalidArgument(std::string("field '") + key + "' has the wrong type");
  }
}

template <typename T>
T field_or(const json& j, const char* key, T fallback) {
  if (!j.is_object() || !j.contains(key) || j.at(key).is_null()) return fallback;
  return field<T>(j, key);
}

json probabilities_json(const std::array<double, 3>& p) {
  json j = json::object();
  for (Severity s : kSeverities) j[std::string(to_string(s))] = p[index_of(s)];
  return j;
}

}  // namespace

json to_json(const Demographics& d) {
  return {{"age_years", d.age_years}, {"sex", to_string(d.sex)}, {"pregnant", d.pregnant}, {"altitude_m", d.altitude_m}};
}

Demographics demographics_from_json(const json& j) {
  Demographics d;
  d.age_years = field<double>(j, "age_years");
  d.sex = sex_from_string(field<std::string>(j, "sex"));
  d.pregnant = field_or<bool>(j, "pregnant", false);
  d.altitude_m = field_or<double>(j, "altitude_m", 0.0);
  d.validate();
  return d;
}

json to_json(const FeatureVector& f) {
  return {{"region", to_string(f.region)}, {"valid", f.valid}, {"version", f.version}, {"values", f.values}};
}

FeatureVector feature_vector_from_json(const json& j) {
  FeatureVector f;
  f.region = region_from_string(field<std::string>(j, "region"));
  f.valid = field<bool>(j, "valid");
  f.version = field<int>(j, "version");
  const auto v = field<std::vector<double>>(j, "values");
  if (v.size() != kFeatureLength) throw InvalidArgument("feature vector must have 28 values");
  std::copy(v.begin(), v.end(), f.values.begin());
  return f;
}

json to_json(const CalibrationParams& c) { return {{"a", c.a}, {"b", c.b}, {"n_points", c.n_points}}; }

CalibrationParams calibration_from_json(const json& j) {
  return {field<double>(j, "a"), field<double>(j, "b"), field<int>(j, "n_points")};
}

json to_json(const LabReport& r) {
  json j = {{"hb", r.hb}, {"timestamp", r.timestamp}, {"source", to_string(r.source)}};
  j["hct"] = r.hct ? json(*r.hct) : json(nullptr);
  j["mcv"] = r.mcv ? json(*r.mcv) : json(nullptr);
  return j;
}

LabReport lab_report_from_json(const json& j) {
  LabReport r;
  r.hb = field<double>(j, "hb");
  if (j.contains("hct") && !j.at("hct").is_null()) r.hct = field<double>(j, "hct");
  if (j.contains("mcv") && !j.at("mcv").is_null()) r.mcv = field<double>(j, "mcv");
  r.timestamp = field_or<std::int64_t>(j, "timestamp", 0);
  r.source = report_source_from_string(field_or<std::string>(j, "source", "typed"));
  r.validate();
  return r;
}

json to_json(const ScreeningOutcome& s) {
  json regions = json::array();
  for (const auto& r : s.regions) {
    json rj = {{"region", to_string(r.region)},
               {"captured", r.captured},
               {"usable", r.usable},
               {"roi_area_fraction", r.roi_area_fraction},
               {"low_confidence", r.low_confidence},
               {"features", to_json(r.features)}};
    if (r.usable) {
      rj["class"] = to_string(r.cls);
      rj["probabilities"] = probabilities_json(r.probabilities);
    } else {
      rj["class"] = nullptr;
      rj["probabilities"] = nullptr;
    }
    regions.push_back(std::move(rj));
  }
  return {{"regions", regions},
          {"fused_class", to_string(s.fused)},
          {"raw_hb", s.raw_hb},
          {"calibrated_hb", s.calibrated_hb},
          {"severity", to_string(s.severity)},
          {"reduced_confidence", s.reduced_confidence},
          {"flags", s.flags},
          {"bundle_version", s.bundle_version},
          {"calibration", to_json(s.calibration)}};
}

ScreeningOutcome screening_from_json(const json& j) {
  ScreeningOutcome s;
  const auto& regions = j.at("regions");
  if (!regions.is_array() || regions.size() != 3) throw InvalidArgument("screening must list three regions");
  for (std::size_t i = 0; i < 3; ++i) {
    const auto& rj = regions[i];
    RegionScreening& r = s.regions[i];
    r.region = region_from_string(field<std::string>(rj, "region"));
    r.captured = field<bool>(rj, "captured");
    r.usable = field<bool>(rj, "usable");
    r.roi_area_fraction = field<double>(rj, "roi_area_fraction");
    r.low_confidence = field<bool>(rj, "low_confidence");
    r.features = feature_vector_from_json(rj.at("features"));
    if (r.usable) {
      r.cls = severity_from_string(field<std::string>(rj, "class"));
      for (Severity sv : kSeverities) r.probabilities[index_of(sv)] = rj.at("probabilities").at(std::string(to_string(sv))).get<double>();
    }
  }
  s.fused = severity_from_string(field<std::string>(j, "fused_class"));
  s.raw_hb = field<double>(j, "raw_hb");
  s.calibrated_hb = field<double>(j, "calibrated_hb");
  s.severity = severity_from_string(field<std::string>(j, "severity"));
  s.reduced_confidence = field<bool>(j, "reduced_confidence");
  s.flags = field<std::vector<std::string>>(j, "flags");
  s.bundle_version = field<int>(j, "bundle_version");
  s.calibration = calibration_from_json(j.at("calibration"));
  return s;
}

json to_json(const EvalMetrics& m) {
  json confusion = json::array();
  for (const auto& row : m.confusion) confusion.push_back(row);
  return {{"n", m.n},
          {"accuracy", m.accuracy},
          {"spearman", m.spearman},
          {"mae_g_dl", m.mae},
          {"class_order", {"severe", "mild", "non_anaemic"}},
          {"confusion", confusion}};
}

std::string metrics_csv(const EvalMetrics& m) {
  std::ostringstream os;
  os.precision(17);
  os << "metric,value\n";
  os << "n," << m.n << '\n';
  os << "accuracy," << m.accuracy << '\n';
  os << "spearman," << m.spearman << '\n';
  os << "mae_g_dl," << m.mae << '\n';
  for (Severity t : kSeverities) {
    for (Severity p : kSeverities) {
      os << "confusion_" << to_string(t) << "_as_" << to_string(p) << ',' << m.confusion[index_of(t)][index_of(p)] << '\n';
    }
  }
  return os.str();
}

std::string predictions_csv(const std::vector<SamplePrediction>& preds) {
  std::ostringstream os;
  os.precision(17);
  os << "patient_id,true_hb,predicted_hb,true_class,predicted_class,fused_class,reduced_confidence\n";
  for (const auto& p : preds) {
    os << p.patient_id << ',' << p.true_hb << ',' << p.predicted_hb << ',' << to_string(p.true_cls) << ','
       << to_string(p.predicted_cls) << ',' << to_string(p.fused) << ',' << (p.reduced_confidence ? 1 : 0) << '\n';
  }
  return os.str();
}

json bundle_summary(const ModelBundle& b) {
  json thresholds = json::array();
  for (const auto& r : b.thresholds.rows()) {
    thresholds.push_back({{"group", to_string(r.group)}, {"severe_below", r.severe_below}, {"mild_below", r.mild_below}});
  }
  return {{"bundle_version", b.bundle_version},
          {"feature_version", b.feature_version},
          {"trained_at", b.trained_at},
          {"heldout_spearman", b.heldout_spearman},
          {"heldout_patients", b.heldout_patients.size()},
          {"thresholds", thresholds}};
}

}  // namespace hbscreen
