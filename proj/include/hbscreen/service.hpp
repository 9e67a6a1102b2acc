#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include <json.hpp>

#include "hbscreen/clinical.hpp"
#include "hbscreen/dataset.hpp"
#include "hbscreen/models.hpp"
#include "hbscreen/pipeline.hpp"
#include "hbscreen/reports.hpp"

namespace hbscreen {

struct PatientRecord {
  std::string id;
  Demographics demographics;
  std::int64_t created_at = 0;
};

struct CaptureRecord {
  std::string id;
  std::string patient_id;
  Region region = Region::Nailbed;
  std::string sha256;
  std::int64_t timestamp = 0;
};

struct ScreeningRecord {
  std::string id;
  std::string patient_id;
  std::int64_t timestamp = 0;
  std::array<std::optional<std::string>, 3> capture_ids;
  ScreeningOutcome outcome;
};

struct ReportRecord {
  std::string id;
  std::string patient_id;
  LabReport report;
  std::optional<std::string> paired_screening;
};

struct Event {
  std::uint64_t seq = 0;
  std::string type;
  nlohmann::json payload;
};

// Append-only JSON-lines log. Sequence numbers start at 1 and strictly
// increase; a truncated final line (crash mid-write) is ignored on read.
class EventLog {
 public:
  explicit EventLog(std::filesystem::path path);
  std::vector<Event> read_all() const;
  // Writes and flushes one line; returns the assigned sequence number.
  std::uint64_t append(const std::string& type, const nlohmann::json& payload);
  std::uint64_t last_seq() const noexcept { return last_seq_; }
  const std::filesystem::path& path() const noexcept { return path_; }

 private:
  void repair_tail();

  std::filesystem::path path_;
  std::uint64_t last_seq_ = 0;
};

std::string sha256_hex(std::span<const std::uint8_t> bytes);

using Clock = std::function<std::int64_t()>;  // unix seconds
using ScreeningEngine = std::function<ScreeningOutcome(const ModelBundle&, const RegionImages&, const Demographics&,
                                                       const CalibrationParams&, const ThresholdTable&)>;
using Trainer = std::function<TrainOutcome(std::vector<LabelledSample>, int bundle_version, std::int64_t now)>;

Clock system_clock();

inline constexpr std::int64_t kPairingWindowSeconds = 24 * 3600;
inline constexpr double kRetrainGate = 0.02;

struct ServiceOptions {
  std::filesystem::path data_dir;
  PipelineConfig pipeline = PipelineConfig::defaults();
  ThresholdTable thresholds = ThresholdTable::defaults();
  Clock clock;                        // default: system clock
  ScreeningEngine engine;             // default: screen() with `pipeline`
  Trainer trainer;                    // default: train_and_validate() with `pipeline`
  std::vector<LabelledSample> base_samples;  // retraining seed set
  std::optional<std::filesystem::path> initial_bundle;
  std::shared_ptr<const nn::NetSpec> net;
};

struct RetrainDecision {
  std::string status;  // no_op | accepted | rejected
  std::string reason;
  int active_version = 0;
  std::optional<int> candidate_version;
  std::optional<double> rho_old;
  std::optional<double> rho_new;
  std::size_t queue_size = 0;
};

// Patient records, captures, screenings, reports, calibration and the
// active-learning loop. Every mutation is an event in data_dir/events.jsonl;
// constructing a Service replays that log, so state survives restarts.
class Service {
 public:
  explicit Service(ServiceOptions opts);
  ~Service();

  PatientRecord create_patient(const std::string& id, const Demographics& d);
  PatientRecord get_patient(const std::string& id) const;
  std::vector<PatientRecord> list_patients() const;

  // Decodes before persisting; corrupt bytes throw DataError and log nothing.
  CaptureRecord ingest_capture(const std::string& patient_id, Region region, std::span<const std::uint8_t> bytes);
  std::vector<std::uint8_t> capture_bytes(const std::string& capture_id) const;

  // Latest capture per region through the active bundle.
  ScreeningRecord run_screening(const std::string& patient_id);

  struct ReportResult {
    ReportRecord record;
    CalibrationParams calibration;
    bool queued = false;
  };
  // report.timestamp == 0 means "now".
  ReportResult ingest_report(const std::string& patient_id, LabReport report);

  RetrainDecision retrain(std::size_t min_new = 25);

  // Screenings and reports merged by timestamp (ties in log order).
  nlohmann::json history(const std::string& patient_id) const;
  CalibrationParams calibration(const std::string& patient_id) const;

  int active_bundle_version() const;
  std::shared_ptr<const ModelBundle> active_bundle() const;
  // Any registered version, active or not. Throws NotFound.
  ModelBundle bundle(int version) const;
  std::vector<int> bundle_versions() const;
  std::size_t queue_size() const;

  // Hash over every query response; equal before and after a replay.
  std::string state_digest() const;
  const ThresholdTable& thresholds() const noexcept { return opts_.thresholds; }

 private:
  struct State;
  void apply(const Event& e);
  Event commit(const std::string& type, nlohmann::json payload);
  void load_active(int version);
  std::filesystem::path bundle_path(int version) const;
  std::filesystem::path blob_path(const std::string& sha) const;
  const PatientRecord& patient_locked(const std::string& id) const;
  CalibrationParams refit_locked(const std::string& patient_id) const;

  ServiceOptions opts_;
  std::unique_ptr<EventLog> log_;
  std::unique_ptr<State> state_;
  mutable std::shared_mutex state_mutex_;
  std::mutex writer_mutex_;
  std::mutex retrain_mutex_;
  mutable std::mutex bundle_mutex_;
  std::shared_ptr<const ModelBundle> active_;
};

// ---- HTTP -----------------------------------------------------------------

struct ServeOptions {
  std::string data_dir = "hbscreen-data";
  std::string listen = "127.0.0.1:8080";
  std::string thresholds_path;
  std::string initial_bundle;
  std::string base_corpus;
  std::string api_token;
  OcrSettings ocr;

  // HBSCREEN_DATA_DIR, HBSCREEN_LISTEN, HBSCREEN_THRESHOLDS, HBSCREEN_API_TOKEN
  // and the OCR variables override the given values.
  static ServeOptions from_env(ServeOptions base);
};

class HttpApi {
 public:
  HttpApi(Service& service, std::shared_ptr<OcrClient> ocr, std::string api_token = {});
  ~HttpApi();
  HttpApi(const HttpApi&) = delete;
  HttpApi& operator=(const HttpApi&) = delete;

  // Binds and serves on a background thread; port 0 picks a free port.
  int start(const std::string& host, int port);
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// Blocks serving until the process is terminated.
int run_server(const ServeOptions& options, const PipelineConfig& cfg);

}  // namespace hbscreen
