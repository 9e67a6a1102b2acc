#include "hbscreen/reports.hpp"

#include <charconv>
#include <cmath>
#include <cstdlib>
#include <regex>

#include <httplib.h>

#include "hbscreen/error.hpp"
#include "hbscreen/image_io.hpp"

namespace hbscreen {

std::string_view to_string(ReportSource s) noexcept {
  switch (s) {
    case ReportSource::Typed: return "typed";
    case ReportSource::ParsedText: return "parsed_text";
    case ReportSource::Ocr: return "ocr";
  }
  return "?";
}

ReportSource report_source_from_string(std::string_view s) {
  for (auto v : {ReportSource::Typed, ReportSource::ParsedText, ReportSource::Ocr}) {
    if (to_string(v) == s) return v;
  }
  throw InvalidArgument("unknown report source '" + std::string(s) + "'");
}

void LabReport::validate() const {
  if (!(hb > 0.0 && hb <= 25.0)) throw RangeError("hb", "hb " + std::to_string(hb) + " g/dL outside (0, 25]");
  if (hct && !(*hct > 0.0 && *hct <= 100.0)) throw RangeError("hct", "hct " + std::to_string(*hct) + "% outside (0, 100]");
  if (mcv && !(*mcv > 30.0 && *mcv <= 150.0)) throw RangeError("mcv", "mcv " + std::to_string(*mcv) + " fL outside (30, 150]");
}

namespace {

std::optional<double> find_value(const std::string& text, const std::regex& re) {
  std::smatch m;
  if (!std::regex_search(text, m, re)) return std::nullopt;
  return std::stod(m[2].str());
}

}  // namespace

LabReport parse_report_text(std::string_view text) {
  static const auto flags = std::regex::ECMAScript | std::regex::icase;
  static const std::regex kHb(R"(\b(haemoglobin|hemoglobin|hgb|hb)\b[^0-9\n]{0,24}?(\d+(?:\.\d+)?))", flags);
  static const std::regex kHct(R"(\b(hct|haematocrit|hematocrit)\b[^0-9\n]{0,24}?(\d+(?:\.\d+)?))", flags);
  static const std::regex kMcv(R"(\b(mcv)\b[^0-9\n]{0,24}?(\d+(?:\.\d+)?))", flags);

  if (text.empty()) throw ParseError("unparseable report: empty text");
  const std::string s(text);
  const auto hb = find_value(s, kHb);
  if (!hb) throw ParseError("unparseable report: no haemoglobin value found");

  LabReport r;
  r.source = ReportSource::ParsedText;
  r.hb = *hb > 25.0 ? *hb / 10.0 : *hb;
  r.hct = find_value(s, kHct);
  r.mcv = find_value(s, kMcv);
  r.validate();
  return r;
}

OcrSettings OcrSettings::from_env(OcrSettings base) {
  if (const char* e = std::getenv("HBSCREEN_OCR_ENDPOINT")) base.endpoint = e;
  if (const char* t = std::getenv("HBSCREEN_OCR_TIMEOUT")) {
    char* end = nullptr;
    base.timeout_seconds = std::strtod(t, &end);
    if (end == t || *end != '\0') throw InvalidArgument("HBSCREEN_OCR_TIMEOUT is not a number");
  }
  if (const char* r = std::getenv("HBSCREEN_OCR_RETRIES")) {
    const std::string_view sv(r);
    const auto [p, ec] = std::from_chars(sv.data(), sv.data() + sv.size(), base.retries);
    if (ec != std::errc() || p != sv.data() + sv.size()) throw InvalidArgument("HBSCREEN_OCR_RETRIES is not an integer");
  }
  base.validate();
  return base;
}

void OcrSettings::validate() const {
  if (!(timeout_seconds > 0.0)) throw InvalidArgument("ocr timeout_seconds must be > 0");
  if (retries < 0) throw InvalidArgument("ocr retries must be >= 0");
}

StubOcrClient::StubOcrClient(std::string text, int failures, OcrSettings settings)
    : text_(std::move(text)), failures_(failures), settings_(std::move(settings)) {
  settings_.validate();
}

StubOcrClient StubOcrClient::timing_out(OcrSettings settings) { return StubOcrClient({}, -1, std::move(settings)); }

std::string StubOcrClient::submit(const ImageRGB8&) {
  ++calls_;
  if (failures_ < 0 || calls_ <= failures_) {
    throw TransportError("OCR request timed out after " + std::to_string(settings_.timeout_seconds) + " s");
  }
  return text_;
}

HttpOcrClient::HttpOcrClient(OcrSettings settings) : settings_(std::move(settings)) { settings_.validate(); }

std::string HttpOcrClient::submit(const ImageRGB8& img) {
  static const std::regex kUrl(R"(^(https?://[^/]+)(/.*)?$)");
  std::smatch m;
  if (!std::regex_match(settings_.endpoint, m, kUrl)) {
    throw TransportError("OCR endpoint '" + settings_.endpoint + "' is not an http URL");
  }
  httplib::Client cli(m[1].str());
  const auto secs = static_cast<time_t>(settings_.timeout_seconds);
  const auto usecs = static_cast<time_t>((settings_.timeout_seconds - static_cast<double>(secs)) * 1e6);
  cli.set_connection_timeout(secs, usecs);
  cli.set_read_timeout(secs, usecs);
  cli.set_write_timeout(secs, usecs);
  const auto png = io::encode_png(img);
  const std::string path = m[2].matched ? m[2].str() : "/";
  auto res = cli.Post(path, std::string(png.begin(), png.end()), "image/png");
  if (!res) throw TransportError("OCR request failed: " + httplib::to_string(res.error()));
  if (res->status != 200) throw TransportError("OCR service returned HTTP " + std::to_string(res->status));
  return res->body;
}

LabReport ingest_report_image(const ImageRGB8& img, OcrClient& client) {
  const int attempts = 1 + client.settings().retries;
  std::string last;
  for (int i = 0; i < attempts; ++i) {
    std::string text;
    try {
      text = client.submit(img);
    } catch (const TransportError& e) {
      last = e.what();
      continue;
    }
    LabReport r = parse_report_text(text);
    r.source = ReportSource::Ocr;
    return r;
  }
  throw TransportError("OCR failed after " + std::to_string(attempts) + " attempts: " + last);
}

}  // namespace hbscreen
