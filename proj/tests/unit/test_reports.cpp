#include <gtest/gtest.h>

#include <httplib.h>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <random>
#include <thread>

#include "hbscreen/error.hpp"
#include "hbscreen/reports.hpp"
#include "test_support.hpp"

using namespace hbscreen;

TEST(ReportText, PlainGramsPerDecilitre) {
  const LabReport r = parse_report_text("Haemoglobin: 11.2 g/dL");
  EXPECT_DOUBLE_EQ(r.hb, 11.2);
  EXPECT_EQ(r.source, ReportSource::ParsedText);
  EXPECT_FALSE(r.hct.has_value());
}

TEST(ReportText, GramsPerLitreConvertedWithIndices) {
  const LabReport r = parse_report_text("HGB 112 g/L, HCT 30%, MCV 72 fL");
  EXPECT_NEAR(r.hb, 11.2, 1e-12);
  ASSERT_TRUE(r.hct && r.mcv);
  EXPECT_DOUBLE_EQ(*r.hct, 30.0);
  EXPECT_DOUBLE_EQ(*r.mcv, 72.0);
}

TEST(ReportText, NoHbTokenIsParseError) {
  EXPECT_THROW(parse_report_text("WBC 8.1"), ParseError);
  EXPECT_THROW(parse_report_text(""), ParseError);
  // 'hb' must be a whole word
  EXPECT_THROW(parse_report_text("phb 12"), ParseError);
}

TEST(ReportText, RangeErrorsNameTheField) {
  try {
    parse_report_text("Hb 300 g/L");
    FAIL() << "expected RangeError";
  } catch (const RangeError& e) {
    EXPECT_EQ(e.field(), "hb");
  }
  try {
    parse_report_text("Hb 12 HCT 130");
    FAIL() << "expected RangeError";
  } catch (const RangeError& e) {
    EXPECT_EQ(e.field(), "hct");
  }
}

TEST(ReportText, RandomisedLayoutsRecoverTheValue) {
  std::mt19937_64 rng(2024);
  const char* tokens[] = {"Haemoglobin", "HEMOGLOBIN", "hemoglobin", "Hgb", "HB", "hb"};
  const char* seps[] = {": ", " ", " = ", "\t", " - ", " (venous): "};
  const char* prefixes[] = {"", "CBC report\n", "Patient: J. Doe\nDate 2024-03-01\n", "WBC 7.2 x10^9/L\n"};
  std::uniform_int_distribution<int> tenths(30, 200);
  for (int i = 0; i < 500; ++i) {
    const double hb = tenths(rng) / 10.0;
    const bool grams_per_litre = rng() % 2 == 0;
    std::string value = grams_per_litre ? std::to_string(static_cast<int>(std::lround(hb * 10))) + " g/L"
                                        : std::to_string(hb).substr(0, std::to_string(hb).find('.') + 2) + " g/dL";
    const std::string text = std::string(prefixes[rng() % 4]) + tokens[rng() % 6] + seps[rng() % 6] + value +
                             (rng() % 2 ? "\nPlatelets 250" : "");
    const LabReport r = parse_report_text(text);
    EXPECT_NEAR(r.hb, hb, 1e-9) << text;
  }
}

TEST(Ocr, StubPassThrough) {
  StubOcrClient stub("Hb 9.0 g/dL");
  const LabReport r = ingest_report_image(fixtures::random_image(4, 4, 1), stub);
  EXPECT_DOUBLE_EQ(r.hb, 9.0);
  EXPECT_EQ(r.source, ReportSource::Ocr);
  EXPECT_EQ(stub.calls(), 1);
}

TEST(Ocr, RetriesThenTransportError) {
  OcrSettings s;
  s.retries = 3;
  StubOcrClient always = StubOcrClient::timing_out(s);
  EXPECT_THROW(ingest_report_image(fixtures::random_image(2, 2, 1), always), TransportError);
  EXPECT_EQ(always.calls(), 4);
  StubOcrClient flaky("Hb 10.5", 2, s);
  EXPECT_DOUBLE_EQ(ingest_report_image(fixtures::random_image(2, 2, 1), flaky).hb, 10.5);
  EXPECT_EQ(flaky.calls(), 3);
}

TEST(Ocr, GibberishIsParseErrorNotTransport) {
  StubOcrClient stub("~~ lorem ipsum 42 ~~");
  EXPECT_THROW(ingest_report_image(fixtures::random_image(2, 2, 1), stub), ParseError);
}

TEST(Ocr, EnvironmentOverrides) {
  ::setenv("HBSCREEN_OCR_ENDPOINT", "http://10.0.0.9:9000/read", 1);
  ::setenv("HBSCREEN_OCR_RETRIES", "5", 1);
  ::setenv("HBSCREEN_OCR_TIMEOUT", "2.5", 1);
  const OcrSettings s = OcrSettings::from_env({});
  EXPECT_EQ(s.endpoint, "http://10.0.0.9:9000/read");
  EXPECT_EQ(s.retries, 5);
  EXPECT_DOUBLE_EQ(s.timeout_seconds, 2.5);
  ::setenv("HBSCREEN_OCR_RETRIES", "many", 1);
  EXPECT_THROW(OcrSettings::from_env({}), InvalidArgument);
  ::unsetenv("HBSCREEN_OCR_ENDPOINT");
  ::unsetenv("HBSCREEN_OCR_RETRIES");
  ::unsetenv("HBSCREEN_OCR_TIMEOUT");
}

TEST(Ocr, HttpClientAgainstLocalServer) {
  httplib::Server srv;
  int hits = 0;
  srv.Post("/ocr", [&](const httplib::Request& req, httplib::Response& res) {
    ++hits;
    EXPECT_FALSE(req.body.empty());
    res.set_content("Hemoglobin 13.4 g/dL", "text/plain");
  });
  srv.Post("/slow", [&](const httplib::Request&, httplib::Response& res) {
    ++hits;
    std::this_thread::sleep_for(std::chrono::milliseconds(1500));
    res.set_content("Hb 12", "text/plain");
  });
  const int port = srv.bind_to_any_port("127.0.0.1");
  std::thread t([&] { srv.listen_after_bind(); });
  srv.wait_until_ready();

  OcrSettings s;
  s.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/ocr";
  HttpOcrClient client(s);
  EXPECT_DOUBLE_EQ(ingest_report_image(fixtures::random_image(8, 8, 2), client).hb, 13.4);
  EXPECT_EQ(hits, 1);

  s.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/slow";
  s.timeout_seconds = 0.3;
  s.retries = 1;
  HttpOcrClient slow(s);
  EXPECT_THROW(ingest_report_image(fixtures::random_image(8, 8, 2), slow), TransportError);
  EXPECT_EQ(hits, 3);

  srv.stop();
  t.join();
  s.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/ocr";
  s.retries = 0;
  HttpOcrClient down(s);
  EXPECT_THROW(ingest_report_image(fixtures::random_image(8, 8, 2), down), TransportError);
}
