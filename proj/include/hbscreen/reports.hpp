#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>

#include "hbscreen/image.hpp"

namespace hbscreen {

enum class ReportSource { Typed, ParsedText, Ocr };

std::string_view to_string(ReportSource s) noexcept;
ReportSource report_source_from_string(std::string_view s);

struct LabReport {
  double hb = 0.0;            // g/dL
  std::optional<double> hct;  // percent
  std::optional<double> mcv;  // fL
  std::int64_t timestamp = 0;
  ReportSource source = ReportSource::Typed;

  // Throws RangeError naming the offending field.
  void validate() const;
  friend bool operator==(const LabReport&, const LabReport&) = default;
};

// Case-insensitive search for haemoglobin/hemoglobin/hgb/hb followed by a
// number; values above 25 are taken as g/L and divided by 10. HCT and MCV are
// picked up when present. Throws ParseError when no Hb value is found and
// RangeError for out-of-range values. The result has source = ParsedText.
LabReport parse_report_text(std::string_view text);

struct OcrSettings {
  std::string endpoint = "http://127.0.0.1:8089/ocr";
  double timeout_seconds = 10.0;
  int retries = 2;

  // HBSCREEN_OCR_ENDPOINT, HBSCREEN_OCR_TIMEOUT, HBSCREEN_OCR_RETRIES override
  // the given values. Throws InvalidArgument on unparsable overrides.
  static OcrSettings from_env(OcrSettings base);
  void validate() const;
};

class OcrClient {
 public:
  virtual ~OcrClient() = default;
  // One attempt. Throws TransportError on timeouts and connection failures.
  virtual std::string submit(const ImageRGB8& img) = 0;
  virtual const OcrSettings& settings() const noexcept = 0;
};

// Returns canned text. The first `failures` calls (or every call when
// failures < 0) throw TransportError as a timeout would.
class StubOcrClient : public OcrClient {
 public:
  explicit StubOcrClient(std::string text, int failures = 0, OcrSettings settings = {});
  static StubOcrClient timing_out(OcrSettings settings = {});

  std::string submit(const ImageRGB8& img) override;
  const OcrSettings& settings() const noexcept override { return settings_; }
  int calls() const noexcept { return calls_; }

 private:
  std::string text_;
  int failures_;
  OcrSettings settings_;
  int calls_ = 0;
};

// POSTs the image as PNG to settings.endpoint and reads the response body as text.
class HttpOcrClient : public OcrClient {
 public:
  explicit HttpOcrClient(OcrSettings settings);
  std::string submit(const ImageRGB8& img) override;
  const OcrSettings& settings() const noexcept override { return settings_; }

 private:
  OcrSettings settings_;
};

// Submits up to 1 + settings().retries times, then parses with source = Ocr.
// Throws TransportError when every attempt fails, ParseError/RangeError when
// the text has no usable Hb value.
LabReport ingest_report_image(const ImageRGB8& img, OcrClient& client);

}  // namespace hbscreen
