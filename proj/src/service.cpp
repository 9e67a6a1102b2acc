#include "hbscreen/service.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iterator>
#include <limits>

#include <openssl/evp.h>

#include "hbscreen/error.hpp"
#include "hbscreen/image_io.hpp"
#include "hbscreen/serialization.hpp"

namespace hbscreen {

namespace fs = std::filesystem;

// ---- event log ------------------------------------------------------------

EventLog::EventLog(fs::path path) : path_(std::move(path)) {
  if (!path_.parent_path().empty()) fs::create_directories(path_.parent_path());
  repair_tail();
  const auto events = read_all();
  if (!events.empty()) last_seq_ = events.back().seq;
}

// A crash mid-append can leave a final line without its newline. A complete
// record is terminated; a torn fragment is cut so the next append starts clean.
void EventLog::repair_tail() {
  std::error_code ec;
  const auto size = fs::file_size(path_, ec);
  if (ec || size == 0) return;
  std::string text;
  {
    std::ifstream in(path_, std::ios::binary);
    text.assign(std::istreambuf_iterator<char>(in), {});
  }
  if (text.back() == '\n') return;
  const auto cut = text.find_last_of('\n');
  const std::size_t start = cut == std::string::npos ? 0 : cut + 1;
  if (json::accept(text.substr(start))) {
    std::ofstream(path_, std::ios::binary | std::ios::app) << '\n';
  } else {
    fs::resize_file(path_, start);
  }
}

std::vector<Event> EventLog::read_all() const {
  std::vector<Event> out;
  std::ifstream in(path_);
  if (!in) return out;
  std::string line;
  std::uint64_t prev = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception&) {
      if (in.peek() == std::char_traits<char>::eof()) break;  // torn final write
      throw DataError("event log " + path_.string() + ": corrupt line after seq " + std::to_string(prev));
    }
    Event e{j.at("seq").get<std::uint64_t>(), j.at("type").get<std::string>(), j.at("payload")};
    if (e.seq <= prev) throw DataError("event log: sequence numbers must strictly increase");
    prev = e.seq;
    out.push_back(std::move(e));
  }
  return out;
}

std::uint64_t EventLog::append(const std::string& type, const json& payload) {
  const std::uint64_t seq = last_seq_ + 1;
  const json line = {{"seq", seq}, {"type", type}, {"payload", payload}};
  std::ofstream out(path_, std::ios::app | std::ios::binary);
  if (!out) throw DataError("cannot open event log " + path_.string());
  out << line.dump() << '\n';
  out.flush();
  if (!out) throw DataError("cannot write event log " + path_.string());
  last_seq_ = seq;
  return seq;
}

std::string sha256_hex(std::span<const std::uint8_t> bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error("SHA-256 failed");
  }
  static const char* hex = "0123456789abcdef";
  std::string s;
  for (unsigned int i = 0; i < len; ++i) {
    s += hex[digest[i] >> 4];
    s += hex[digest[i] & 15];
  }
  return s;
}

Clock system_clock() {
  return [] {
    return std::chrono::duration_cast<std::chrono::seconds>(std::chrono::system_clock::now().time_since_epoch()).count();
  };
}

// ---- state ----------------------------------------------------------------

struct Service::State {
  std::map<std::string, PatientRecord> patients;
  std::map<std::string, CaptureRecord> captures;
  std::vector<std::pair<std::uint64_t, ScreeningRecord>> screenings;
  std::vector<std::pair<std::uint64_t, ReportRecord>> reports;
  std::map<std::string, CalibrationParams> calibrations;
  std::vector<LabelledSample> pending;
  std::vector<LabelledSample> collected;
  std::map<int, std::string> bundles;
  int active_version = 0;
};

namespace {

json patient_json(const PatientRecord& p) {
  json j = to_json(p.demographics);
  j["id"] = p.id;
  j["created_at"] = p.created_at;
  return j;
}

json capture_json(const CaptureRecord& c) {
  return {{"id", c.id}, {"patient_id", c.patient_id}, {"region", to_string(c.region)}, {"sha256", c.sha256},
          {"timestamp", c.timestamp}};
}

json optional_id(const std::optional<std::string>& s) { return s ? json(*s) : json(nullptr); }

json screening_json(const ScreeningRecord& s) {
  json ids = json::array();
  for (const auto& c : s.capture_ids) ids.push_back(optional_id(c));
  return {{"id", s.id}, {"patient_id", s.patient_id}, {"timestamp", s.timestamp}, {"capture_ids", ids},
          {"outcome", to_json(s.outcome)}};
}

json report_json(const ReportRecord& r) {
  return {{"id", r.id}, {"patient_id", r.patient_id}, {"report", to_json(r.report)},
          {"paired_screening", optional_id(r.paired_screening)}};
}

std::string id_for(const char* prefix, std::uint64_t seq) { return std::string(prefix) + "-" + std::to_string(seq); }

}  // namespace

Service::Service(ServiceOptions opts) : opts_(std::move(opts)), state_(std::make_unique<State>()) {
  if (opts_.data_dir.empty()) throw InvalidArgument("service: data_dir is required");
  fs::create_directories(opts_.data_dir / "blobs");
  fs::create_directories(opts_.data_dir / "bundles");
  if (!opts_.clock) opts_.clock = system_clock();
  if (!opts_.engine) {
    opts_.engine = [cfg = opts_.pipeline, net = opts_.net](const ModelBundle& b, const RegionImages& imgs,
                                                             const Demographics& d, const CalibrationParams& c,
                                                             const ThresholdTable& t) {
      return screen(b, imgs, d, c, t, cfg, net.get());
    };
  }
  if (!opts_.trainer) {
    opts_.trainer = [cfg = opts_.pipeline, table = opts_.thresholds](std::vector<LabelledSample> s, int version,
                                                                       std::int64_t now) {
      return train_and_validate(std::move(s), cfg, table, version, now);
    };
  }

  log_ = std::make_unique<EventLog>(opts_.data_dir / "events.jsonl");
  for (const Event& e : log_->read_all()) apply(e);

  if (state_->bundles.empty() && opts_.initial_bundle) {
    ModelBundle b = load_bundle(*opts_.initial_bundle);
    std::lock_guard w(writer_mutex_);
    save_bundle(b, bundle_path(b.bundle_version));
    commit("bundle_registered", {{"version", b.bundle_version}, {"file", bundle_path(b.bundle_version).filename().string()}});
    commit("bundle_activated", {{"version", b.bundle_version}});
  }
}

Service::~Service() = default;

fs::path Service::bundle_path(int version) const {
  return opts_.data_dir / "bundles" / ("bundle-v" + std::to_string(version) + ".hbb");
}

fs::path Service::blob_path(const std::string& sha) const { return opts_.data_dir / "blobs" / sha; }

void Service::load_active(int version) {
  auto b = std::make_shared<const ModelBundle>(load_bundle(bundle_path(version)));
  std::lock_guard l(bundle_mutex_);
  active_ = std::move(b);
}

Event Service::commit(const std::string& type, json payload) {
  const std::uint64_t seq = log_->append(type, payload);
  Event e{seq, type, std::move(payload)};
  apply(e);
  return e;
}

void Service::apply(const Event& e) {
  std::unique_lock lock(state_mutex_);
  State& s = *state_;
  const json& p = e.payload;
  if (e.type == "patient_created") {
    PatientRecord r{p.at("id").get<std::string>(), demographics_from_json(p.at("demographics")),
                    p.at("created_at").get<std::int64_t>()};
    s.patients[r.id] = r;
  } else if (e.type == "capture_ingested") {
    CaptureRecord c{p.at("id").get<std::string>(), p.at("patient_id").get<std::string>(),
                    region_from_string(p.at("region").get<std::string>()), p.at("sha256").get<std::string>(),
                    p.at("timestamp").get<std::int64_t>()};
    s.captures[c.id] = c;
  } else if (e.type == "screening_recorded") {
    ScreeningRecord r;
    r.id = p.at("id").get<std::string>();
    r.patient_id = p.at("patient_id").get<std::string>();
    r.timestamp = p.at("timestamp").get<std::int64_t>();
    for (std::size_t i = 0; i < 3; ++i) {
      const auto& c = p.at("capture_ids").at(i);
      if (!c.is_null()) r.capture_ids[i] = c.get<std::string>();
    }
    r.outcome = screening_from_json(p.at("outcome"));
    s.screenings.emplace_back(e.seq, std::move(r));
  } else if (e.type == "report_ingested") {
    ReportRecord r;
    r.id = p.at("id").get<std::string>();
    r.patient_id = p.at("patient_id").get<std::string>();
    r.report = lab_report_from_json(p.at("report"));
    if (!p.at("paired_screening").is_null()) r.paired_screening = p.at("paired_screening").get<std::string>();
    s.reports.emplace_back(e.seq, std::move(r));
  } else if (e.type == "calibration_updated") {
    s.calibrations[p.at("patient_id").get<std::string>()] = calibration_from_json(p.at("calibration"));
  } else if (e.type == "sample_queued") {
    const std::string sid = p.at("screening_id").get<std::string>();
    const auto it = std::find_if(s.screenings.begin(), s.screenings.end(),
                                 [&](const auto& x) { return x.second.id == sid; });
    if (it == s.screenings.end()) throw DataError("event log: sample references unknown screening " + sid);
    LabelledSample sample;
    for (int i = 0; i < 3; ++i) sample.features[i] = it->second.outcome.regions[i].features;
    sample.hb = p.at("hb").get<double>();
    sample.cls = severity_from_string(p.at("class").get<std::string>());
    sample.patient_id = it->second.patient_id;
    sample.timestamp = p.at("timestamp").get<std::int64_t>();
    sample.demographics = s.patients.at(sample.patient_id).demographics;
    s.pending.push_back(std::move(sample));
  } else if (e.type == "bundle_registered") {
    s.bundles[p.at("version").get<int>()] = p.at("file").get<std::string>();
  } else if (e.type == "bundle_activated") {
    s.active_version = p.at("version").get<int>();
    lock.unlock();
    load_active(p.at("version").get<int>());
  } else if (e.type == "retrain_decision") {
    if (p.at("status").get<std::string>() == "accepted") {
      s.collected.insert(s.collected.end(), s.pending.begin(), s.pending.end());
      s.pending.clear();
    }
  } else {
    throw DataError("event log: unknown event type '" + e.type + "'");
  }
}

const PatientRecord& Service::patient_locked(const std::string& id) const {
  const auto it = state_->patients.find(id);
  if (it == state_->patients.end()) throw NotFound("unknown patient '" + id + "'");
  return it->second;
}

// ---- patients -------------------------------------------------------------

PatientRecord Service::create_patient(const std::string& id, const Demographics& d) {
  d.validate();
  std::lock_guard w(writer_mutex_);
  std::string pid = id;
  {
    std::shared_lock r(state_mutex_);
    if (pid.empty()) pid = id_for("patient", log_->last_seq() + 1);
    if (state_->patients.contains(pid)) throw Conflict("patient '" + pid + "' already exists");
  }
  if (pid.find_first_of("/\\ \t\n") != std::string::npos) throw InvalidArgument("patient id must not contain '/' or spaces");
  commit("patient_created", {{"id", pid}, {"demographics", to_json(d)}, {"created_at", opts_.clock()}});
  return get_patient(pid);
}

PatientRecord Service::get_patient(const std::string& id) const {
  std::shared_lock r(state_mutex_);
  return patient_locked(id);
}

std::vector<PatientRecord> Service::list_patients() const {
  std::shared_lock r(state_mutex_);
  std::vector<PatientRecord> out;
  for (const auto& [id, p] : state_->patients) out.push_back(p);
  return out;
}

// ---- captures -------------------------------------------------------------

CaptureRecord Service::ingest_capture(const std::string& patient_id, Region region, std::span<const std::uint8_t> bytes) {
  {
    std::shared_lock r(state_mutex_);
    patient_locked(patient_id);
  }
  io::decode_image(bytes);
  const std::string sha = sha256_hex(bytes);
  const fs::path blob = blob_path(sha);
  if (!fs::exists(blob)) {
    const fs::path tmp = blob.string() + ".tmp";
    io::write_file(tmp, bytes);
    fs::rename(tmp, blob);
  }
  std::lock_guard w(writer_mutex_);
  const std::string id = id_for("capture", log_->last_seq() + 1);
  commit("capture_ingested", {{"id", id}, {"patient_id", patient_id}, {"region", to_string(region)}, {"sha256", sha},
                              {"timestamp", opts_.clock()}});
  std::shared_lock r(state_mutex_);
  return state_->captures.at(id);
}

std::vector<std::uint8_t> Service::capture_bytes(const std::string& capture_id) const {
  std::string sha;
  {
    std::shared_lock r(state_mutex_);
    const auto it = state_->captures.find(capture_id);
    if (it == state_->captures.end()) throw NotFound("unknown capture '" + capture_id + "'");
    sha = it->second.sha256;
  }
  return io::read_file(blob_path(sha));
}

// ---- screening ------------------------------------------------------------

ScreeningRecord Service::run_screening(const std::string& patient_id) {
  Demographics demo;
  CalibrationParams calib;
  std::array<std::optional<std::string>, 3> capture_ids;
  std::array<std::optional<std::string>, 3> shas;
  {
    std::shared_lock r(state_mutex_);
    demo = patient_locked(patient_id).demographics;
    if (const auto it = state_->calibrations.find(patient_id); it != state_->calibrations.end()) calib = it->second;
    std::array<std::int64_t, 3> best{};
    for (const auto& [id, c] : state_->captures) {
      if (c.patient_id != patient_id) continue;
      const int i = index_of(c.region);
      const std::int64_t order = std::stoll(id.substr(id.find('-') + 1));
      if (!capture_ids[i] || order > best[i]) {
        capture_ids[i] = id;
        shas[i] = c.sha256;
        best[i] = order;
      }
    }
  }
  if (std::none_of(capture_ids.begin(), capture_ids.end(), [](const auto& c) { return c.has_value(); })) {
    throw PipelineError("capture", "capture: patient '" + patient_id + "' has no captures");
  }
  const auto bundle = active_bundle();
  if (!bundle) throw PipelineError("model", "model: no active bundle");

  RegionImages images;
  for (int i = 0; i < 3; ++i) {
    if (shas[i]) images[i] = io::decode_image(io::read_file(blob_path(*shas[i])));
  }
  const ScreeningOutcome outcome = opts_.engine(*bundle, images, demo, calib, opts_.thresholds);

  std::lock_guard w(writer_mutex_);
  const std::string id = id_for("screening", log_->last_seq() + 1);
  json ids = json::array();
  for (const auto& c : capture_ids) ids.push_back(optional_id(c));
  commit("screening_recorded", {{"id", id}, {"patient_id", patient_id}, {"timestamp", opts_.clock()},
                                {"capture_ids", ids}, {"outcome", to_json(outcome)}});
  std::shared_lock r(state_mutex_);
  return state_->screenings.back().second;
}

// ---- reports and calibration ----------------------------------------------

namespace {

const ScreeningRecord* nearest_screening(const std::vector<std::pair<std::uint64_t, ScreeningRecord>>& screenings,
                                         const std::string& patient_id, std::int64_t t) {
  const ScreeningRecord* best = nullptr;
  std::int64_t best_gap = std::numeric_limits<std::int64_t>::max();
  for (const auto& [seq, s] : screenings) {
    if (s.patient_id != patient_id) continue;
    const std::int64_t gap = std::abs(s.timestamp - t);
    if (gap <= kPairingWindowSeconds && gap < best_gap) {
      best = &s;
      best_gap = gap;
    }
  }
  return best;
}

}  // namespace

CalibrationParams Service::refit_locked(const std::string& patient_id) const {
  std::vector<std::pair<double, double>> pairs;
  for (const auto& [seq, r] : state_->reports) {
    if (r.patient_id != patient_id || !r.paired_screening) continue;
    const auto it = std::find_if(state_->screenings.begin(), state_->screenings.end(),
                                 [&](const auto& x) { return x.second.id == *r.paired_screening; });
    if (it != state_->screenings.end()) pairs.emplace_back(it->second.outcome.raw_hb, r.report.hb);
  }
  return fit_calibration(pairs);
}

Service::ReportResult Service::ingest_report(const std::string& patient_id, LabReport report) {
  if (report.timestamp == 0) report.timestamp = opts_.clock();
  report.validate();

  std::lock_guard w(writer_mutex_);
  std::optional<std::string> paired;
  Demographics demo;
  {
    std::shared_lock r(state_mutex_);
    demo = patient_locked(patient_id).demographics;
    if (const ScreeningRecord* s = nearest_screening(state_->screenings, patient_id, report.timestamp)) paired = s->id;
  }
  const std::string id = id_for("report", log_->last_seq() + 1);
  commit("report_ingested",
         {{"id", id}, {"patient_id", patient_id}, {"report", to_json(report)}, {"paired_screening", optional_id(paired)}});

  ReportResult result;
  if (paired) {
    commit("sample_queued", {{"patient_id", patient_id},
                             {"screening_id", *paired},
                             {"report_id", id},
                             {"hb", report.hb},
                             {"class", to_string(diagnose(report.hb, demo, opts_.thresholds))},
                             {"timestamp", report.timestamp}});
    result.queued = true;
    CalibrationParams c;
    {
      std::shared_lock r(state_mutex_);
      c = refit_locked(patient_id);
    }
    commit("calibration_updated", {{"patient_id", patient_id}, {"calibration", to_json(c)}});
  }
  std::shared_lock r(state_mutex_);
  result.record = state_->reports.back().second;
  const auto it = state_->calibrations.find(patient_id);
  result.calibration = it == state_->calibrations.end() ? CalibrationParams{} : it->second;
  return result;
}

CalibrationParams Service::calibration(const std::string& patient_id) const {
  std::shared_lock r(state_mutex_);
  patient_locked(patient_id);
  const auto it = state_->calibrations.find(patient_id);
  return it == state_->calibrations.end() ? CalibrationParams{} : it->second;
}

// ---- retraining -----------------------------------------------------------

namespace {

json decision_json(const RetrainDecision& d) {
  json j = {{"status", d.status}, {"reason", d.reason}, {"active_version", d.active_version}, {"queue_size", d.queue_size}};
  j["candidate_version"] = d.candidate_version ? json(*d.candidate_version) : json(nullptr);
  j["rho_old"] = d.rho_old ? json(*d.rho_old) : json(nullptr);
  j["rho_new"] = d.rho_new ? json(*d.rho_new) : json(nullptr);
  return j;
}

}  // namespace

RetrainDecision Service::retrain(std::size_t min_new) {
  std::lock_guard rl(retrain_mutex_);
  RetrainDecision d;
  std::vector<LabelledSample> samples;
  int next_version = 1;
  {
    std::shared_lock r(state_mutex_);
    d.queue_size = state_->pending.size();
    d.active_version = state_->active_version;
    if (!state_->bundles.empty()) next_version = state_->bundles.rbegin()->first + 1;
    if (d.queue_size >= min_new) {
      samples = opts_.base_samples;
      samples.insert(samples.end(), state_->collected.begin(), state_->collected.end());
      samples.insert(samples.end(), state_->pending.begin(), state_->pending.end());
    }
  }
  if (d.queue_size < min_new) {
    d.status = "no_op";
    d.reason = "training queue holds " + std::to_string(d.queue_size) + " new samples; " + std::to_string(min_new) +
               " required";
    std::lock_guard w(writer_mutex_);
    commit("retrain_decision", decision_json(d));
    return d;
  }

  d.candidate_version = next_version;
  TrainOutcome t;
  try {
    t = opts_.trainer(std::move(samples), next_version, opts_.clock());
    t.bundle.validate();
  } catch (const std::exception& e) {
    d.status = "failed";
    d.reason = e.what();
    std::lock_guard w(writer_mutex_);
    commit("retrain_decision", decision_json(d));
    throw PipelineError("train", std::string("train: ") + e.what());
  }

  d.rho_new = t.heldout_metrics.spearman;
  if (const auto current = active_bundle()) {
    std::vector<LabelledSample> scorable;
    for (const auto& s : t.heldout) {
      if (std::any_of(s.features.begin(), s.features.end(), [](const FeatureVector& f) { return f.valid; })) {
        scorable.push_back(s);
      }
    }
    d.rho_old = metrics_of(predict_samples(*current, scorable, opts_.thresholds)).spearman;
  }

  const bool accept = !d.rho_old || *d.rho_new >= *d.rho_old - kRetrainGate;
  std::lock_guard w(writer_mutex_);
  if (!accept) {
    d.status = "rejected";
    d.reason = "held-out Spearman would drop by more than " + std::to_string(kRetrainGate);
    commit("retrain_decision", decision_json(d));
    return d;
  }
  t.bundle.bundle_version = next_version;
  save_bundle(t.bundle, bundle_path(next_version));
  commit("bundle_registered", {{"version", next_version}, {"file", bundle_path(next_version).filename().string()}});
  commit("bundle_activated", {{"version", next_version}});
  d.status = "accepted";
  d.reason = "held-out Spearman within gate";
  d.active_version = next_version;
  commit("retrain_decision", decision_json(d));
  return d;
}

// ---- queries --------------------------------------------------------------

json Service::history(const std::string& patient_id) const {
  std::shared_lock r(state_mutex_);
  patient_locked(patient_id);
  struct Item {
    std::int64_t t;
    std::uint64_t seq;
    json j;
  };
  std::vector<Item> items;
  for (const auto& [seq, s] : state_->screenings) {
    if (s.patient_id != patient_id) continue;
    json j = screening_json(s);
    j["kind"] = "screening";
    items.push_back({s.timestamp, seq, std::move(j)});
  }
  for (const auto& [seq, rep] : state_->reports) {
    if (rep.patient_id != patient_id) continue;
    json j = report_json(rep);
    j["kind"] = "report";
    j["timestamp"] = rep.report.timestamp;
    items.push_back({rep.report.timestamp, seq, std::move(j)});
  }
  std::sort(items.begin(), items.end(), [](const Item& a, const Item& b) { return std::tie(a.t, a.seq) < std::tie(b.t, b.seq); });
  json out = json::array();
  for (auto& i : items) out.push_back(std::move(i.j));
  return out;
}

int Service::active_bundle_version() const {
  std::shared_lock r(state_mutex_);
  return state_->active_version;
}

std::shared_ptr<const ModelBundle> Service::active_bundle() const {
  std::lock_guard l(bundle_mutex_);
  return active_;
}

ModelBundle Service::bundle(int version) const {
  {
    std::shared_lock r(state_mutex_);
    if (!state_->bundles.contains(version)) throw NotFound("unknown bundle version " + std::to_string(version));
  }
  return load_bundle(bundle_path(version));
}

std::vector<int> Service::bundle_versions() const {
  std::shared_lock r(state_mutex_);
  std::vector<int> v;
  for (const auto& [ver, file] : state_->bundles) v.push_back(ver);
  return v;
}

std::size_t Service::queue_size() const {
  std::shared_lock r(state_mutex_);
  return state_->pending.size();
}

std::string Service::state_digest() const {
  json j;
  json patients = json::array();
  for (const auto& p : list_patients()) {
    json pj = patient_json(p);
    pj["history"] = history(p.id);
    pj["calibration"] = to_json(calibration(p.id));
    patients.push_back(std::move(pj));
  }
  j["patients"] = patients;
  {
    std::shared_lock r(state_mutex_);
    json caps = json::array();
    for (const auto& [id, c] : state_->captures) caps.push_back(capture_json(c));
    j["captures"] = caps;
    j["bundles"] = state_->bundles;
    j["active_version"] = state_->active_version;
    j["pending"] = state_->pending.size();
    j["collected"] = state_->collected.size();
  }
  const std::string text = j.dump();
  return sha256_hex(std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

}  // namespace hbscreen
