// hbscreen: batch driver for the screening pipeline.
//
// Exit codes: 0 ok, 1 usage, 2 config, 3 data, 4 pipeline.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <set>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "hbscreen/color.hpp"
#include "hbscreen/dataset.hpp"
#include "hbscreen/error.hpp"
#include "hbscreen/image_io.hpp"
#include "hbscreen/pipeline.hpp"
#include "hbscreen/serialization.hpp"
#include "hbscreen/service.hpp"

namespace fs = std::filesystem;
using namespace hbscreen;

namespace {

enum Exit { kOk = 0, kUsage = 1, kConfig = 2, kData = 3, kPipeline = 4 };

struct Common {
  std::string config;
  std::string input;
  std::string output;
  std::optional<std::uint64_t> seed;
  int jobs = 1;
};

void add_common(CLI::App* app, Common& c, bool needs_output = true) {
  app->add_option("--config", c.config, "Pipeline config (JSON)")->check(CLI::ExistingFile);
  app->add_option("--input", c.input, "Input path")->required();
  auto* out = app->add_option("--output", c.output, "Output path");
  if (needs_output) out->required();
  app->add_option("--seed", c.seed, "Seed (overrides config)");
  app->add_option("--jobs", c.jobs, "Worker threads")->check(CLI::PositiveNumber);
}

PipelineConfig load_config(const Common& c) {
  PipelineConfig cfg = c.config.empty() ? PipelineConfig::defaults() : PipelineConfig::load(c.config);
  if (c.seed) {
    cfg.seed = *c.seed;
    cfg.classifier.seed = *c.seed;
  }
  return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
  io::write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::string read_text(const fs::path& path) {
  const auto bytes = io::read_file(path);
  return std::string(bytes.begin(), bytes.end());
}

std::unique_ptr<nn::NetSpec> load_net_for(const PipelineConfig& cfg) {
  if (cfg.segmenter != SegmenterBackend::Net) return nullptr;
  return std::make_unique<nn::NetSpec>(nn::load_net(cfg.net_path));
}

// Features for every corpus patient, from a precomputed table or the images.
std::vector<FeatureRecord> corpus_features(const Common& c, const std::string& features_csv, const PipelineConfig& cfg) {
  const auto corpus = read_corpus(c.input);
  if (!features_csv.empty()) return read_feature_table(read_text(features_csv), corpus);
  const auto net = load_net_for(cfg);
  return extract_corpus(corpus, cfg, c.jobs, net.get());
}

int cmd_preprocess(const Common& c, const std::string& region_name) {
  const PipelineConfig cfg = load_config(c);
  const ImageRGB8 img = io::read_image(c.input);
  const fs::path out(c.output);
  io::write_png(enhance(img, cfg.clahe), out / "enhanced.png");
  const Planes3 ycc = convert_color(img, ColorSpaceId::YCbCr);
  const RegionMask glare = adaptive_threshold(ycc[0], cfg.threshold_window, static_cast<float>(cfg.threshold_offset));
  io::write_png(io::mask_to_image(glare), out / "glare_mask.png");
  if (!region_name.empty() && region_from_string(region_name) == Region::Conjunctiva) {
    const Planes3 lab = convert_color(img, ColorSpaceId::CIELab);
    const LabelMap labels = slic(lab, std::min<int>(cfg.slic.k, static_cast<int>(img.pixel_count())),
                                 cfg.slic.compactness, cfg.slic.iters);
    const RoiSelection sclera = select_roi(labels, lab, cfg.sclera);
    io::write_png(io::mask_to_image(sclera.mask), out / "sclera_mask.png");
    io::write_png(correct_illumination(img, sclera.mask, cfg.target_white), out / "corrected.png");
  }
  return kOk;
}

int cmd_segment(const Common& c, const std::string& region_name) {
  const PipelineConfig cfg = load_config(c);
  const Region region = region_from_string(region_name);
  const ImageRGB8 img = io::read_image(c.input);
  const auto net = load_net_for(cfg);
  const RegionAnalysis a = analyze_region(img, region, {}, cfg, net.get());
  const fs::path out(c.output);
  io::write_png(io::mask_to_image(a.roi), out / "roi_mask.png");
  const json j = {{"region", to_string(region)},
                  {"roi_area_fraction", a.roi_area_fraction},
                  {"low_confidence", a.low_confidence},
                  {"illumination_corrected", a.illumination_corrected},
                  {"glare_pixels", a.glare_pixels},
                  {"flags", a.flags}};
  write_text(out / "roi.json", j.dump(2) + "\n");
  return kOk;
}

int cmd_features(const Common& c) {
  const PipelineConfig cfg = load_config(c);
  std::vector<FeatureRecord> records;
  if (fs::exists(fs::path(c.input) / "labels.csv")) {
    records = corpus_features(c, {}, cfg);
  } else {
    const auto net = load_net_for(cfg);
    FeatureRecord rec;
    rec.patient_id = fs::path(c.input).filename().string();
    const PatientImages imgs = load_patient_images(c.input);
    for (Region r : kRegions) {
      rec.features[index_of(r)].region = r;
      if (const auto& im = imgs.images[index_of(r)]) {
        rec.features[index_of(r)] = analyze_region(*im, r, {}, cfg, net.get()).features;
      }
    }
    records.push_back(std::move(rec));
  }
  write_text(c.output, feature_table_csv(records));
  return kOk;
}

int cmd_synth(const std::string& output, int n, std::uint64_t seed) {
  const auto corpus = synth_corpus(n, seed);
  write_corpus(corpus, output);
  return kOk;
}

int cmd_train(const Common& c, const std::string& features_csv, std::int64_t trained_at, const std::string& report) {
  const PipelineConfig cfg = load_config(c);
  const ThresholdTable table = load_thresholds(cfg);
  const auto samples = to_samples(corpus_features(c, features_csv, cfg), table);
  if (samples.empty()) throw DataError("train: corpus has no labelled patients");
  TrainOutcome t = train_and_validate(samples, cfg, table, 1, trained_at);
  save_bundle(t.bundle, c.output);
  const json j = {{"bundle", bundle_summary(t.bundle)}, {"heldout", to_json(t.heldout_metrics)}};
  if (!report.empty()) write_text(report, j.dump(2) + "\n");
  std::cout << j.dump(2) << '\n';
  return kOk;
}

int cmd_evaluate(const Common& c, const std::string& bundle_path, const std::string& features_csv, bool all) {
  const PipelineConfig cfg = load_config(c);
  const ModelBundle bundle = load_bundle(bundle_path);
  const ThresholdTable table = load_thresholds(cfg);
  auto samples = to_samples(corpus_features(c, features_csv, cfg), table);
  if (!all && !bundle.heldout_patients.empty()) {
    const std::set<std::string> keep(bundle.heldout_patients.begin(), bundle.heldout_patients.end());
    std::erase_if(samples, [&](const LabelledSample& s) { return !keep.contains(s.patient_id); });
  }
  std::erase_if(samples, [](const LabelledSample& s) {
    return std::none_of(s.features.begin(), s.features.end(), [](const FeatureVector& f) { return f.valid; });
  });
  if (samples.empty()) throw DataError("evaluate: no scorable patients");
  const auto preds = predict_samples(bundle, samples, table);
  const EvalMetrics m = metrics_of(preds);
  const fs::path out(c.output);
  write_text(out / "metrics.json", to_json(m).dump(2) + "\n");
  write_text(out / "metrics.csv", metrics_csv(m));
  write_text(out / "predictions.csv", predictions_csv(preds));
  std::cout << to_json(m).dump(2) << '\n';
  return kOk;
}

int cmd_predict(const Common& c, const std::string& bundle_path, const Demographics& demo) {
  const PipelineConfig cfg = load_config(c);
  const ModelBundle bundle = load_bundle(bundle_path);
  const ThresholdTable table = load_thresholds(cfg);
  PatientImages imgs = load_patient_images(c.input);
  if (imgs.missing.size() == 3) {
    std::string names;
    for (Region r : imgs.missing) names += (names.empty() ? "" : ", ") + image_filename(r);
    throw DataError("predict: " + c.input + " is missing all region images (" + names + ")");
  }
  const auto net = load_net_for(cfg);
  const ScreeningOutcome s = screen(bundle, imgs.images, demo, CalibrationParams{}, table, cfg, net.get());
  json j = to_json(s);
  j["patient"] = fs::path(c.input).filename().string();
  const std::string text = j.dump(2) + "\n";
  if (c.output.empty() || c.output == "-") {
    std::cout << text;
  } else {
    write_text(c.output, text);
  }
  return kOk;
}

template <typename F>
int guarded(F&& f) {
  try {
    return f();
  } catch (const ConfigError& e) {
    std::cerr << "hbscreen: [config] " << e.what() << '\n';
    return kConfig;
  } catch (const PipelineError& e) {
    std::cerr << "hbscreen: [" << e.stage() << "] " << e.what() << '\n';
    return kPipeline;
  } catch (const DataError& e) {
    std::cerr << "hbscreen: [data] " << e.what() << '\n';
    return kData;
  } catch (const NotFound& e) {
    std::cerr << "hbscreen: [data] " << e.what() << '\n';
    return kData;
  } catch (const ParseError& e) {
    std::cerr << "hbscreen: [data] " << e.what() << '\n';
    return kData;
  } catch (const InvalidArgument& e) {
    std::cerr << "hbscreen: [data] " << e.what() << '\n';
    return kData;
  } catch (const DimensionMismatch& e) {
    std::cerr << "hbscreen: [data] " << e.what() << '\n';
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "hbscreen: [pipeline] " << e.what() << '\n';
    return kPipeline;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Anaemia screening pipeline"};
  app.require_subcommand(1);

  Common pre, seg, feat, train, eval, pred;
  std::string pre_region, seg_region;
  auto* c_pre = app.add_subcommand("preprocess", "CLAHE-enhanced image, glare mask, sclera correction");
  add_common(c_pre, pre);
  c_pre->add_option("--region", pre_region, "Region (conjunctiva adds sclera outputs)");

  auto* c_seg = app.add_subcommand("segment", "ROI mask for one region image");
  add_common(c_seg, seg);
  c_seg->add_option("--region", seg_region, "nailbed | conjunctiva | tongue")->required();

  auto* c_feat = app.add_subcommand("features", "Feature table (CSV) for a corpus or one patient directory");
  add_common(c_feat, feat);

  std::string synth_out;
  int synth_n = 100;
  std::uint64_t synth_seed = 0;
  auto* c_synth = app.add_subcommand("synth", "Generate the synthetic oracle corpus");
  c_synth->add_option("--n", synth_n, "Patients")->check(CLI::PositiveNumber);
  c_synth->add_option("--seed", synth_seed, "Seed");
  c_synth->add_option("--output", synth_out, "Corpus directory")->required();

  std::string train_features, train_report;
  std::int64_t trained_at = 0;
  auto* c_train = app.add_subcommand("train", "Train a model bundle on a corpus");
  add_common(c_train, train);
  c_train->add_option("--features", train_features, "Precomputed feature table")->check(CLI::ExistingFile);
  c_train->add_option("--trained-at", trained_at, "Timestamp recorded in the bundle");
  c_train->add_option("--report", train_report, "Write held-out metrics JSON here");

  std::string eval_bundle, eval_features;
  bool eval_all = false;
  auto* c_eval = app.add_subcommand("evaluate", "Metrics on the bundle's held-out patients");
  add_common(c_eval, eval);
  c_eval->add_option("--bundle", eval_bundle, "Model bundle")->required()->check(CLI::ExistingFile);
  c_eval->add_option("--features", eval_features, "Precomputed feature table")->check(CLI::ExistingFile);
  c_eval->add_flag("--all", eval_all, "Score every labelled patient, not just the held-out fold");

  std::string pred_bundle, pred_sex = "female";
  Demographics pred_demo;
  auto* c_pred = app.add_subcommand("predict", "Screen one patient directory");
  add_common(c_pred, pred, false);
  c_pred->add_option("--bundle", pred_bundle, "Model bundle")->required()->check(CLI::ExistingFile);
  c_pred->add_option("--age", pred_demo.age_years, "Age in years");
  c_pred->add_option("--sex", pred_sex, "female | male");
  c_pred->add_flag("--pregnant", pred_demo.pregnant, "Pregnant");
  c_pred->add_option("--altitude", pred_demo.altitude_m, "Altitude in metres");

  ServeOptions serve;
  std::string serve_config;
  auto* c_serve = app.add_subcommand("serve", "Run the HTTP service");
  c_serve->add_option("--config", serve_config, "Pipeline config (JSON)")->check(CLI::ExistingFile);
  c_serve->add_option("--data", serve.data_dir, "Data directory (HBSCREEN_DATA_DIR)");
  c_serve->add_option("--listen", serve.listen, "host:port (HBSCREEN_LISTEN)");
  c_serve->add_option("--thresholds", serve.thresholds_path, "Threshold table CSV (HBSCREEN_THRESHOLDS)");
  c_serve->add_option("--bundle", serve.initial_bundle, "Bundle to activate when none is registered");
  c_serve->add_option("--base-corpus", serve.base_corpus, "Corpus whose features seed retraining");
  c_serve->add_option("--token", serve.api_token, "Static bearer token (HBSCREEN_API_TOKEN)");
  c_serve->add_option("--ocr-endpoint", serve.ocr.endpoint, "OCR endpoint (HBSCREEN_OCR_ENDPOINT)");
  c_serve->add_option("--ocr-timeout", serve.ocr.timeout_seconds, "OCR timeout seconds (HBSCREEN_OCR_TIMEOUT)");
  c_serve->add_option("--ocr-retries", serve.ocr.retries, "OCR retries (HBSCREEN_OCR_RETRIES)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  if (*c_pre) return guarded([&] { return cmd_preprocess(pre, pre_region); });
  if (*c_seg) return guarded([&] { return cmd_segment(seg, seg_region); });
  if (*c_feat) return guarded([&] { return cmd_features(feat); });
  if (*c_synth) return guarded([&] { return cmd_synth(synth_out, synth_n, synth_seed); });
  if (*c_train) return guarded([&] { return cmd_train(train, train_features, trained_at, train_report); });
  if (*c_eval) return guarded([&] { return cmd_evaluate(eval, eval_bundle, eval_features, eval_all); });
  if (*c_pred) {
    return guarded([&] {
      pred_demo.sex = sex_from_string(pred_sex);
      pred_demo.validate();
      return cmd_predict(pred, pred_bundle, pred_demo);
    });
  }
  if (*c_serve) {
    return guarded([&] {
      PipelineConfig cfg = serve_config.empty() ? PipelineConfig::defaults() : PipelineConfig::load(serve_config);
      return run_server(ServeOptions::from_env(serve), cfg);
    });
  }
  return kUsage;
}
