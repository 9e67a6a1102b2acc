#include "hbscreen/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "hbscreen/color_math.hpp"
#include "hbscreen/error.hpp"
#include "hbscreen/image_io.hpp"

namespace hbscreen {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.emplace_back(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

double parse_double(const std::string& s, const std::string& what) {
  double v = 0.0;
  const auto t = trim(s);
  const auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || p != t.data() + t.size() || !std::isfinite(v)) {
    throw DataError("cannot parse " + what + " from '" + s + "'");
  }
  return v;
}

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::mt19937_64 stream(std::uint64_t seed, int index, int salt) {
  return std::mt19937_64(splitmix(splitmix(seed) ^ splitmix(static_cast<std::uint64_t>(index) * 16 + salt)));
}

double squared_distance(const Row& a, const Row& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d += (a[i] - b[i]) * (a[i] - b[i]);
  return d;
}

void check_rows(std::span<const Row> rows, const char* what) {
  for (const auto& r : rows) {
    if (r.size() != rows.front().size()) throw InvalidArgument(std::string(what) + ": rows differ in length");
  }
}

}  // namespace

// ---- augmentation ---------------------------------------------------------

AugmentPlan parse_augment_plan(std::string_view text) {
  static const std::set<std::string> kProhibited = {"blur", "gaussian", "gaussian_blur", "median",
                                                     "diffuse", "diffusion", "smooth", "box_blur"};
  AugmentPlan plan;
  for (const auto& raw : split(text, ',')) {
    const std::string entry = trim(raw);
    if (entry.empty()) continue;
    const auto parts = split(entry, ':');
    std::string name = parts[0];
    std::transform(name.begin(), name.end(), name.begin(), [](unsigned char c) { return std::tolower(c); });
    if (kProhibited.contains(name)) {
      throw InvalidArgument("augment plan: '" + name + "' is prohibited (no blurring or diffusion augmentation)");
    }
    if (name == "flip_h") {
      plan.ops.emplace_back(FlipH{});
    } else if (name == "flip_v") {
      plan.ops.emplace_back(FlipV{});
    } else if (name == "rot90") {
      plan.ops.emplace_back(Rot90{});
    } else if (name == "identity") {
      plan.ops.emplace_back(Affine{});
    } else if (name == "affine") {
      if (parts.size() != 7) throw InvalidArgument("augment plan: affine needs six coefficients");
      Affine a;
      for (int i = 0; i < 6; ++i) {
        try {
          a.m[i] = parse_double(parts[i + 1], "affine coefficient");
        } catch (const DataError& e) {
          throw InvalidArgument(std::string("augment plan: ") + e.what());
        }
      }
      plan.ops.emplace_back(a);
    } else {
      throw InvalidArgument("augment plan: unknown entry '" + entry + "'");
    }
  }
  return plan;
}

std::vector<ImageRGB8> augment_images(const ImageRGB8& img, const AugmentPlan& plan) {
  if (plan.ops.empty()) throw InvalidArgument("augment_images: empty plan");
  std::vector<ImageRGB8> out;
  out.reserve(plan.ops.size());
  for (const auto& op : plan.ops) out.push_back(transform_geometric(img, op));
  return out;
}

// ---- oversampling ---------------------------------------------------------

std::vector<Row> smote(std::span<const Row> minority, int k, int n_new, std::uint64_t seed) {
  const int n = static_cast<int>(minority.size());
  if (n < 2) throw InvalidArgument("smote: minority needs at least 2 rows");
  if (k < 1 || k >= n) throw InvalidArgument("smote: k must be in [1, minority size)");
  if (n_new < 0) throw InvalidArgument("smote: n_new must be >= 0");
  check_rows(minority, "smote");

  std::vector<std::vector<int>> neighbours(n);
  for (int i = 0; i < n; ++i) {
    std::vector<std::pair<double, int>> d;
    d.reserve(n - 1);
    for (int j = 0; j < n; ++j) {
      if (j != i) d.emplace_back(squared_distance(minority[i], minority[j]), j);
    }
    std::partial_sort(d.begin(), d.begin() + k, d.end());
    for (int t = 0; t < k; ++t) neighbours[i].push_back(d[t].second);
  }

  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> pick_base(0, n - 1);
  std::uniform_int_distribution<int> pick_nn(0, k - 1);
  std::uniform_real_distribution<double> lambda(0.0, 1.0);
  std::vector<Row> out;
  out.reserve(n_new);
  for (int s = 0; s < n_new; ++s) {
    const int i = pick_base(rng);
    const Row& x = minority[i];
    const Row& nn = minority[neighbours[i][pick_nn(rng)]];
    const double l = lambda(rng);
    Row r(x.size());
    for (std::size_t c = 0; c < x.size(); ++c) r[c] = x[c] + l * (nn[c] - x[c]);
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<Row> rose(std::span<const Row> rows, double bandwidth, int n_new, std::uint64_t seed) {
  if (rows.empty()) throw InvalidArgument("rose: no rows");
  if (!(bandwidth >= 0.0)) throw InvalidArgument("rose: bandwidth must be >= 0");
  if (n_new < 0) throw InvalidArgument("rose: n_new must be >= 0");
  check_rows(rows, "rose");
  const std::size_t dims = rows.front().size();
  const std::size_t n = rows.size();

  std::vector<double> sd(dims, 0.0);
  if (n > 1) {
    for (std::size_t c = 0; c < dims; ++c) {
      double mean = 0.0;
      for (const auto& r : rows) mean += r[c];
      mean /= static_cast<double>(n);
      double ss = 0.0;
      for (const auto& r : rows) ss += (r[c] - mean) * (r[c] - mean);
      sd[c] = std::sqrt(ss / static_cast<double>(n - 1));
    }
  }

  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::vector<Row> out;
  out.reserve(n_new);
  for (int s = 0; s < n_new; ++s) {
    Row r = rows[pick(rng)];
    for (std::size_t c = 0; c < dims; ++c) {
      const double scale = bandwidth * sd[c];
      if (scale > 0.0) r[c] += scale * noise(rng);
    }
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<std::vector<Row>> oversample_to_parity(const std::vector<std::vector<Row>>& per_class,
                                                   const BalanceOptions& opts) {
  std::size_t target = opts.min_per_class;
  for (const auto& c : per_class) {
    if (c.empty()) throw InvalidArgument("oversample_to_parity: a class has no rows");
    target = std::max(target, c.size());
  }
  std::vector<std::vector<Row>> out = per_class;
  for (std::size_t ci = 0; ci < out.size(); ++ci) {
    auto& rows = out[ci];
    const int missing = static_cast<int>(target - rows.size());
    if (missing == 0) continue;
    const std::uint64_t seed = splitmix(opts.seed + ci);
    std::vector<Row> extra;
    if (rows.size() == 1) {
      extra.assign(missing, rows.front());
    } else if (opts.method == Oversampler::Smote) {
      const int k = std::min<int>(opts.k, static_cast<int>(rows.size()) - 1);
      extra = smote(rows, k, missing, seed);
    } else {
      extra = rose(rows, opts.rose_bandwidth, missing, seed);
    }
    rows.insert(rows.end(), std::make_move_iterator(extra.begin()), std::make_move_iterator(extra.end()));
  }
  return out;
}

// ---- labelled samples and splits -----------------------------------------

bool LabelledSample::complete() const noexcept {
  return std::all_of(features.begin(), features.end(), [](const FeatureVector& f) { return f.valid; });
}

Split split_by_patient(std::vector<LabelledSample> samples, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction >= 0.0 && test_fraction < 1.0)) {
    throw InvalidArgument("split_by_patient: test_fraction must be in [0, 1)");
  }
  std::map<std::string, Severity> patient_class;
  for (const auto& s : samples) patient_class.emplace(s.patient_id, s.cls);

  std::array<std::vector<std::string>, 3> by_class;
  for (const auto& [id, cls] : patient_class) by_class[index_of(cls)].push_back(id);

  std::set<std::string> test_ids;
  std::mt19937_64 rng(seed);
  for (auto& ids : by_class) {
    std::shuffle(ids.begin(), ids.end(), rng);
    const auto n_test = static_cast<std::size_t>(std::lround(test_fraction * static_cast<double>(ids.size())));
    test_ids.insert(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(std::min(n_test, ids.size())));
  }

  std::vector<LabelledSample> train, test;
  for (auto& s : samples) {
    (test_ids.contains(s.patient_id) ? test : train).push_back(std::move(s));
  }
  return Split{TrainingFold(std::move(train)), std::move(test)};
}

std::array<std::vector<Row>, 3> rows_by_class(std::span<const LabelledSample> samples, bool with_hb) {
  std::array<std::vector<Row>, 3> out;
  for (const auto& s : samples) {
    if (!s.complete()) continue;
    Row r;
    r.reserve(3 * kFeatureLength + 1);
    for (const auto& f : s.features) r.insert(r.end(), f.values.begin(), f.values.end());
    if (with_hb) r.push_back(s.hb);
    out[index_of(s.cls)].push_back(std::move(r));
  }
  return out;
}

std::array<std::vector<Row>, 3> balance(const TrainingFold& fold, const BalanceOptions& opts) {
  auto grouped = rows_by_class(fold.samples(), true);
  std::vector<std::vector<Row>> v(grouped.begin(), grouped.end());
  auto balanced = oversample_to_parity(v, opts);
  return {std::move(balanced[0]), std::move(balanced[1]), std::move(balanced[2])};
}

// ---- synthetic oracle corpus ---------------------------------------------

namespace {

struct Ellipse {
  double cx, cy, ax, ay;
  bool contains(double x, double y) const {
    const double u = (x - cx) / ax, v = (y - cy) / ay;
    return u * u + v * v <= 1.0;
  }
};

struct RegionGeometry {
  Ellipse roi;
  std::optional<Ellipse> sclera;
};

RegionGeometry draw_geometry(Region region, std::mt19937_64& rng) {
  auto u = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  switch (region) {
    case Region::Nailbed:
      return {{48 + u(-4, 4), 48 + u(-4, 4), 26 + u(-3, 3), 18 + u(-3, 3)}, std::nullopt};
    case Region::Conjunctiva: {
      const double cx = 48 + u(-3, 3);
      return {{cx, 64 + u(-2, 2), 32 + u(-2, 2), 12 + u(-1.5, 1.5)}, Ellipse{cx, 32 + u(-2, 2), 30 + u(-2, 2), 10}};
    }
    case Region::Tongue:
      return {{48 + u(-4, 4), 50 + u(-3, 3), 28 + u(-3, 3), 24 + u(-3, 3)}, std::nullopt};
  }
  return {};
}

Lab background_lab(Region region) {
  switch (region) {
    case Region::Nailbed: return {70, 14, 30};
    case Region::Conjunctiva: return {62, 14, 32};
    case Region::Tongue: return {68, 12, 32};
  }
  return {};
}

constexpr Lab kScleraLab = {90, 0, 3};

}  // namespace

Lab synth_roi_lab(Region region, double hb) {
  const double d = hb - kSynthHbMin;
  switch (region) {
    case Region::Nailbed: return {62, 8 + 2.2 * d, 6};
    case Region::Conjunctiva: return {52, 12 + 2.5 * d, 10};
    case Region::Tongue: return {55, 14 + 2.0 * d, 4};
  }
  return {};
}

RegionMask synth_roi_mask(std::uint64_t seed, int index, Region region) {
  auto rng = stream(seed, index, 1 + index_of(region));
  const RegionGeometry g = draw_geometry(region, rng);
  RegionMask m(kSynthImageSize, kSynthImageSize);
  for (int y = 0; y < kSynthImageSize; ++y) {
    for (int x = 0; x < kSynthImageSize; ++x) m.set(x, y, g.roi.contains(x, y));
  }
  return m;
}

SynthPatient synth_patient(std::uint64_t seed, int index) {
  auto prng = stream(seed, index, 0);
  auto u = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(prng); };
  std::normal_distribution<double> jitter(0.0, 1.0);

  SynthPatient p;
  char id[16];
  std::snprintf(id, sizeof id, "%04d", index + 1);
  p.id = id;
  p.hb = std::round(u(kSynthHbMin, kSynthHbMax) * 100.0) / 100.0;
  p.demographics.age_years = std::round(u(15.0, 70.0) * 10.0) / 10.0;
  p.demographics.sex = u(0, 1) < 0.5 ? Sex::Female : Sex::Male;
  p.demographics.pregnant =
      p.demographics.sex == Sex::Female && p.demographics.age_years >= 18 && p.demographics.age_years <= 45 &&
      u(0, 1) < 0.2;
  p.demographics.altitude_m = std::round(u(0.0, 2500.0));

  for (Region region : kRegions) {
    Lab roi = synth_roi_lab(region, p.hb);
    roi[0] += 0.8 * jitter(prng);
    roi[1] += 0.6 * jitter(prng);
    roi[2] += 0.6 * jitter(prng);
    Lab bg = background_lab(region);
    for (double& c : bg) c += 1.5 * jitter(prng);
    const double gain = region == Region::Conjunctiva ? u(0.92, 1.08) : 1.0;

    auto rng = stream(seed, index, 1 + index_of(region));
    const RegionGeometry g = draw_geometry(region, rng);
    std::normal_distribution<double> pixel_noise(0.0, 2.0);

    ImageRGB8 img(kSynthImageSize, kSynthImageSize);
    auto px = img.data();
    for (int y = 0; y < kSynthImageSize; ++y) {
      // Gentle vertical shading so contrast enhancement has something to do.
      const double shade = 3.0 * (static_cast<double>(y) / (kSynthImageSize - 1) - 0.5);
      for (int x = 0; x < kSynthImageSize; ++x) {
        Lab lab = bg;
        if (g.roi.contains(x, y)) {
          lab = roi;
        } else if (g.sclera && g.sclera->contains(x, y)) {
          lab = kScleraLab;
        }
        const auto rgb = color::lab_to_rgb(lab[0] - shade, lab[1], lab[2]);
        const std::size_t o = (static_cast<std::size_t>(y) * kSynthImageSize + x) * 3;
        for (int c = 0; c < 3; ++c) px[o + c] = color::to_u8(rgb[c] * gain + pixel_noise(rng));
      }
    }
    if (region != Region::Nailbed) {
      // Two specular highlights inside the ROI.
      std::uniform_real_distribution<double> angle(0.0, 6.283185307179586);
      for (int s = 0; s < 2; ++s) {
        const double t = angle(rng);
        const int hx = static_cast<int>(g.roi.cx + 0.4 * g.roi.ax * std::cos(t));
        const int hy = static_cast<int>(g.roi.cy + 0.4 * g.roi.ay * std::sin(t));
        for (int dy = 0; dy < 2; ++dy) {
          for (int dx = 0; dx < 2; ++dx) img.set(hx + dx, hy + dy, Rgb{250, 250, 250});
        }
      }
    }
    p.images[index_of(region)] = std::move(img);
  }
  return p;
}

std::vector<SynthPatient> synth_corpus(int n_patients, std::uint64_t seed) {
  if (n_patients < 1) throw InvalidArgument("synth_corpus: n_patients must be >= 1");
  std::vector<SynthPatient> out;
  out.reserve(n_patients);
  for (int i = 0; i < n_patients; ++i) out.push_back(synth_patient(seed, i));
  return out;
}

// ---- corpus on disk -------------------------------------------------------

std::string image_filename(Region r) { return std::string(to_string(r)) + ".png"; }

std::string labels_csv_header() { return "patient_id,hb,age_years,sex,pregnant,altitude_m"; }

void write_corpus(std::span<const SynthPatient> patients, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ostringstream labels;
  labels << labels_csv_header() << '\n';
  for (const auto& p : patients) {
    const auto pdir = dir / ("patient_" + p.id);
    for (Region r : kRegions) io::write_png(p.images[index_of(r)], pdir / image_filename(r));
    char line[160];
    std::snprintf(line, sizeof line, "%s,%.2f,%.1f,%s,%d,%.0f\n", p.id.c_str(), p.hb, p.demographics.age_years,
                  std::string(to_string(p.demographics.sex)).c_str(), p.demographics.pregnant ? 1 : 0,
                  p.demographics.altitude_m);
    labels << line;
  }
  const std::string text = labels.str();
  io::write_file(dir / "labels.csv", std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::vector<CorpusEntry> read_corpus(const std::filesystem::path& dir) {
  const auto path = dir / "labels.csv";
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || trim(line) != labels_csv_header()) {
    throw DataError(path.string() + ": expected header '" + labels_csv_header() + "'");
  }
  std::vector<CorpusEntry> out;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto f = split(trim(line), ',');
    const std::string where = path.string() + ":" + std::to_string(lineno);
    if (f.size() != 6) throw DataError(where + ": expected 6 fields");
    CorpusEntry e;
    e.id = trim(f[0]);
    if (e.id.empty()) throw DataError(where + ": empty patient_id");
    if (!trim(f[1]).empty()) e.hb = parse_double(f[1], "hb");
    e.demographics.age_years = parse_double(f[2], "age_years");
    try {
      e.demographics.sex = sex_from_string(trim(f[3]));
      e.demographics.pregnant = parse_double(f[4], "pregnant") != 0.0;
      e.demographics.altitude_m = parse_double(f[5], "altitude_m");
      e.demographics.validate();
    } catch (const InvalidArgument& err) {
      throw DataError(where + ": " + err.what());
    }
    if (e.hb && !(*e.hb > 0.0)) throw DataError(where + ": hb must be > 0");
    e.dir = dir / ("patient_" + e.id);
    out.push_back(std::move(e));
  }
  return out;
}

PatientImages load_patient_images(const std::filesystem::path& dir) {
  PatientImages out;
  for (Region r : kRegions) {
    const auto path = dir / image_filename(r);
    if (std::filesystem::exists(path)) {
      out.images[index_of(r)] = io::read_image(path);
    } else {
      out.missing.push_back(r);
    }
  }
  return out;
}

}  // namespace hbscreen
