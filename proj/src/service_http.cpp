#include <atomic>
#include <cstdlib>
#include <iostream>
#include <thread>

#include <httplib.h>

#include "hbscreen/error.hpp"
#include "hbscreen/image_io.hpp"
#include "hbscreen/serialization.hpp"
#include "hbscreen/service.hpp"

namespace hbscreen {

namespace {

struct HttpError {
  int status;
  json body;
};

json error_body(const std::string& code, const std::string& message, const std::string& stage) {
  return {{"code", code}, {"message", message}, {"stage", stage.empty() ? json(nullptr) : json(stage)}};
}

// Maps the exception hierarchy onto status codes and the uniform error body.
HttpError classify(std::exception_ptr ep) {
  try {
    std::rethrow_exception(ep);
  } catch (const HttpError& e) {
    return e;
  } catch (const NotFound& e) {
    return {404, error_body("not_found", e.what(), e.stage())};
  } catch (const Conflict& e) {
    return {409, error_body("conflict", e.what(), e.stage())};
  } catch (const RangeError& e) {
    json b = error_body("range_error", e.what(), e.stage());
    b["field"] = e.field();
    return {422, b};
  } catch (const ParseError& e) {
    return {422, error_body("parse_error", e.what(), e.stage())};
  } catch (const DataError& e) {
    return {422, error_body("data_error", e.what(), e.stage())};
  } catch (const TransportError& e) {
    return {502, error_body("transport_error", e.what(), "ocr")};
  } catch (const PipelineError& e) {
    return {422, error_body("pipeline_error", e.what(), e.stage())};
  } catch (const InvalidArgument& e) {
    return {400, error_body("invalid_argument", e.what(), e.stage())};
  } catch (const DimensionMismatch& e) {
    return {400, error_body("invalid_argument", e.what(), e.stage())};
  } catch (const ConfigError& e) {
    return {400, error_body("invalid_argument", e.what(), e.stage())};
  } catch (const json::exception& e) {
    return {400, error_body("invalid_argument", std::string("malformed JSON: ") + e.what(), "")};
  } catch (const Error& e) {
    return {500, error_body("internal", e.what(), e.stage())};
  } catch (const std::exception& e) {
    return {500, error_body("internal", e.what(), "")};
  }
}

HttpError bad_request(const std::string& msg) { return {400, error_body("invalid_argument", msg, "")}; }

void send(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

json parse_body(const httplib::Request& req) {
  if (req.body.empty()) return json::object();
  json j = json::parse(req.body);
  if (!j.is_object()) throw bad_request("request body must be a JSON object");
  return j;
}

json patient_json(const PatientRecord& p) {
  return {{"id", p.id}, {"demographics", to_json(p.demographics)}, {"created_at", p.created_at}};
}

json screening_response(const ScreeningRecord& s) {
  json ids = json::array();
  for (const auto& c : s.capture_ids) ids.push_back(c ? json(*c) : json(nullptr));
  return {{"id", s.id},
          {"patient_id", s.patient_id},
          {"timestamp", s.timestamp},
          {"capture_ids", ids},
          {"screening", to_json(s.outcome)}};
}

std::span<const std::uint8_t> as_bytes(const std::string& s) {
  return {reinterpret_cast<const std::uint8_t*>(s.data()), s.size()};
}

}  // namespace

struct HttpApi::Impl {
  Service& service;
  std::shared_ptr<OcrClient> ocr;
  std::string token;
  httplib::Server server;
  std::thread thread;

  Impl(Service& s, std::shared_ptr<OcrClient> o, std::string t) : service(s), ocr(std::move(o)), token(std::move(t)) {}

  template <typename F>
  httplib::Server::Handler wrap(F f) {
    return [this, f](const httplib::Request& req, httplib::Response& res) {
      try {
        if (!token.empty() && req.get_header_value("Authorization") != "Bearer " + token) {
          throw HttpError{401, error_body("unauthorized", "missing or wrong bearer token", "")};
        }
        f(req, res);
      } catch (...) {
        const HttpError e = classify(std::current_exception());
        send(res, e.status, e.body);
      }
    };
  }

  LabReport report_from_request(const httplib::Request& req) {
    if (req.is_multipart_form_data()) {
      if (!req.has_file("image")) throw bad_request("multipart report needs an 'image' part");
      if (!ocr) throw HttpError{503, error_body("transport_error", "no OCR client configured", "ocr")};
      LabReport r = ingest_report_image(io::decode_image(as_bytes(req.get_file_value("image").content)), *ocr);
      if (req.has_file("timestamp")) r.timestamp = std::stoll(req.get_file_value("timestamp").content);
      return r;
    }
    const json j = parse_body(req);
    LabReport r;
    if (j.contains("text")) {
      r = parse_report_text(j.at("text").get<std::string>());
    } else if (j.contains("hb")) {
      r.hb = j.at("hb").get<double>();
      if (j.contains("hct") && !j.at("hct").is_null()) r.hct = j.at("hct").get<double>();
      if (j.contains("mcv") && !j.at("mcv").is_null()) r.mcv = j.at("mcv").get<double>();
      r.source = ReportSource::Typed;
    } else {
      throw bad_request("report needs 'hb', 'text' or a multipart 'image'");
    }
    if (j.contains("timestamp")) r.timestamp = j.at("timestamp").get<std::int64_t>();
    return r;
  }

  void routes() {
    server.Post("/patients", wrap([this](const httplib::Request& req, httplib::Response& res) {
      const json j = parse_body(req);
      const std::string id = j.value("id", std::string{});
      const Demographics d = demographics_from_json(j.contains("demographics") ? j.at("demographics") : j);
      send(res, 201, patient_json(service.create_patient(id, d)));
    }));
    server.Get("/patients", wrap([this](const httplib::Request&, httplib::Response& res) {
      json out = json::array();
      for (const auto& p : service.list_patients()) out.push_back(patient_json(p));
      send(res, 200, out);
    }));
    server.Get(R"(/patients/([^/]+))", wrap([this](const httplib::Request& req, httplib::Response& res) {
      const std::string id = req.matches[1];
      json j = patient_json(service.get_patient(id));
      j["calibration"] = to_json(service.calibration(id));
      send(res, 200, j);
    }));
    server.Post(R"(/patients/([^/]+)/captures)", wrap([this](const httplib::Request& req, httplib::Response& res) {
      if (!req.is_multipart_form_data() || !req.has_file("region") || !req.has_file("image")) {
        throw bad_request("captures need multipart fields 'region' and 'image'");
      }
      const Region region = region_from_string(req.get_file_value("region").content);
      const CaptureRecord c = service.ingest_capture(req.matches[1], region, as_bytes(req.get_file_value("image").content));
      send(res, 201, {{"id", c.id}, {"patient_id", c.patient_id}, {"region", to_string(c.region)}, {"sha256", c.sha256},
                      {"timestamp", c.timestamp}});
    }));
    server.Post(R"(/patients/([^/]+)/reports)", wrap([this](const httplib::Request& req, httplib::Response& res) {
      const std::string id = req.matches[1];
      service.get_patient(id);
      const auto r = service.ingest_report(id, report_from_request(req));
      send(res, 201, {{"id", r.record.id},
                      {"patient_id", r.record.patient_id},
                      {"report", to_json(r.record.report)},
                      {"paired_screening", r.record.paired_screening ? json(*r.record.paired_screening) : json(nullptr)},
                      {"queued", r.queued},
                      {"calibration", to_json(r.calibration)}});
    }));
    server.Post(R"(/patients/([^/]+)/screenings)", wrap([this](const httplib::Request& req, httplib::Response& res) {
      send(res, 201, screening_response(service.run_screening(req.matches[1])));
    }));
    server.Get(R"(/patients/([^/]+)/history)", wrap([this](const httplib::Request& req, httplib::Response& res) {
      send(res, 200, service.history(req.matches[1]));
    }));
    server.Post("/admin/retrain", wrap([this](const httplib::Request& req, httplib::Response& res) {
      const json j = parse_body(req);
      const auto min_new = j.value("min_new", 25);
      if (min_new < 0) throw bad_request("min_new must be non-negative");
      const RetrainDecision d = service.retrain(static_cast<std::size_t>(min_new));
      json out = {{"status", d.status}, {"reason", d.reason}, {"active_version", d.active_version},
                  {"queue_size", d.queue_size}};
      out["candidate_version"] = d.candidate_version ? json(*d.candidate_version) : json(nullptr);
      out["rho_old"] = d.rho_old ? json(*d.rho_old) : json(nullptr);
      out["rho_new"] = d.rho_new ? json(*d.rho_new) : json(nullptr);
      send(res, 200, out);
    }));
    server.Get("/admin/bundle", wrap([this](const httplib::Request& req, httplib::Response& res) {
      json out;
      if (req.has_param("version")) {
        out = bundle_summary(service.bundle(std::stoi(req.get_param_value("version"))));
      } else {
        const auto b = service.active_bundle();
        if (!b) throw NotFound("no active bundle");
        out = bundle_summary(*b);
      }
      out["active_version"] = service.active_bundle_version();
      out["versions"] = service.bundle_versions();
      send(res, 200, out);
    }));
    server.set_error_handler([](const httplib::Request&, httplib::Response& res) {
      if (res.body.empty()) {
        send(res, res.status, error_body(res.status == 404 ? "not_found" : "invalid_argument",
                                         "no route for this method and path", ""));
      }
    });
    server.set_payload_max_length(64u << 20);
  }
};

HttpApi::HttpApi(Service& service, std::shared_ptr<OcrClient> ocr, std::string api_token)
    : impl_(std::make_unique<Impl>(service, std::move(ocr), std::move(api_token))) {
  impl_->routes();
}

HttpApi::~HttpApi() { stop(); }

int HttpApi::start(const std::string& host, int port) {
  int bound = port;
  if (port == 0) {
    bound = impl_->server.bind_to_any_port(host);
  } else if (!impl_->server.bind_to_port(host, port)) {
    bound = -1;
  }
  if (bound < 0) throw InvalidArgument("cannot bind " + host + ":" + std::to_string(port));
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return bound;
}

void HttpApi::stop() {
  if (!impl_) return;
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

ServeOptions ServeOptions::from_env(ServeOptions base) {
  if (const char* v = std::getenv("HBSCREEN_DATA_DIR")) base.data_dir = v;
  if (const char* v = std::getenv("HBSCREEN_LISTEN")) base.listen = v;
  if (const char* v = std::getenv("HBSCREEN_THRESHOLDS")) base.thresholds_path = v;
  if (const char* v = std::getenv("HBSCREEN_API_TOKEN")) base.api_token = v;
  base.ocr = OcrSettings::from_env(base.ocr);
  return base;
}

int run_server(const ServeOptions& options, const PipelineConfig& cfg) {
  const auto colon = options.listen.rfind(':');
  if (colon == std::string::npos) throw ConfigError("listen address must be host:port, got '" + options.listen + "'");
  const std::string host = options.listen.substr(0, colon);
  int port = 0;
  try {
    port = std::stoi(options.listen.substr(colon + 1));
  } catch (const std::exception&) {
    throw ConfigError("bad port in listen address '" + options.listen + "'");
  }
  options.ocr.validate();

  ServiceOptions so;
  so.data_dir = options.data_dir;
  so.pipeline = cfg;
  so.thresholds = options.thresholds_path.empty() ? load_thresholds(cfg) : ThresholdTable::load(options.thresholds_path);
  if (!options.initial_bundle.empty()) so.initial_bundle = options.initial_bundle;
  if (!options.base_corpus.empty()) {
    const auto corpus = read_corpus(options.base_corpus);
    const std::filesystem::path table = std::filesystem::path(options.base_corpus) / "features.csv";
    std::vector<FeatureRecord> records;
    if (std::filesystem::exists(table)) {
      const auto bytes = io::read_file(table);
      records = read_feature_table(std::string(bytes.begin(), bytes.end()), corpus);
    } else {
      records = extract_corpus(corpus, cfg, 0);
    }
    so.base_samples = to_samples(records, so.thresholds);
  }

  Service service(std::move(so));
  HttpApi api(service, std::make_shared<HttpOcrClient>(options.ocr), options.api_token);
  const int bound = api.start(host, port);
  std::cerr << "hbscreen: serving on " << host << ":" << bound << " (data " << options.data_dir << ", bundle v"
            << service.active_bundle_version() << ")\n";
  for (;;) std::this_thread::sleep_for(std::chrono::hours(1));
}

}  // namespace hbscreen
