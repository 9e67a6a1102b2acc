#include "hbscreen/models.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include <json.hpp>

#include "hbscreen/error.hpp"
#include "hbscreen/image_io.hpp"

namespace hbscreen {

using json = nlohmann::json;

namespace {

bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

std::size_t check_matrix(std::span<const std::vector<double>> rows, const char* what) {
  if (rows.empty()) throw InvalidArgument(std::string(what) + ": no rows");
  const std::size_t p = rows.front().size();
  for (const auto& r : rows) {
    if (r.size() != p) throw InvalidArgument(std::string(what) + ": rows differ in length");
    if (!all_finite(r)) throw InvalidArgument(std::string(what) + ": non-finite feature value");
  }
  return p;
}

struct Standardizer {
  std::vector<double> mean, sd;

  static Standardizer fit(std::span<const std::vector<double>> rows) {
    const std::size_t p = rows.front().size();
    const double n = static_cast<double>(rows.size());
    Standardizer s{std::vector<double>(p, 0.0), std::vector<double>(p, 1.0)};
    for (std::size_t j = 0; j < p; ++j) {
      double m = 0.0;
      for (const auto& r : rows) m += r[j];
      m /= n;
      double ss = 0.0;
      for (const auto& r : rows) ss += (r[j] - m) * (r[j] - m);
      const double sd = std::sqrt(ss / n);
      s.mean[j] = m;
      s.sd[j] = sd > 1e-12 * std::max(1.0, std::abs(m)) ? sd : 0.0;
    }
    return s;
  }

  double apply(std::size_t j, double v) const { return sd[j] > 0.0 ? (v - mean[j]) / sd[j] : 0.0; }
};

// Solves A x = b for symmetric positive (semi)definite A by Cholesky, adding
// diagonal jitter starting at 1e-9 when a pivot is not positive.
std::vector<double> solve_spd(std::vector<double> a, std::vector<double> b, std::size_t n) {
  const std::vector<double> a0 = a;
  double jitter = 0.0;
  for (int attempt = 0; attempt < 12; ++attempt) {
    a = a0;
    for (std::size_t i = 0; i < n; ++i) a[i * n + i] += jitter;
    bool ok = true;
    for (std::size_t j = 0; j < n && ok; ++j) {
      double d = a[j * n + j];
      for (std::size_t k = 0; k < j; ++k) d -= a[j * n + k] * a[j * n + k];
      if (!(d > 1e-300)) {
        ok = false;
        break;
      }
      const double l = std::sqrt(d);
      a[j * n + j] = l;
      for (std::size_t i = j + 1; i < n; ++i) {
        double s = a[i * n + j];
        for (std::size_t k = 0; k < j; ++k) s -= a[i * n + k] * a[j * n + k];
        a[i * n + j] = s / l;
      }
    }
    if (!ok) {
      jitter = jitter == 0.0 ? 1e-9 : jitter * 10.0;
      continue;
    }
    std::vector<double> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      double s = b[i];
      for (std::size_t k = 0; k < i; ++k) s -= a[i * n + k] * y[k];
      y[i] = s / a[i * n + i];
    }
    std::vector<double> x(n);
    for (std::size_t ii = n; ii-- > 0;) {
      double s = y[ii];
      for (std::size_t k = ii + 1; k < n; ++k) s -= a[k * n + ii] * x[k];
      x[ii] = s / a[ii * n + ii];
    }
    return x;
  }
  throw PipelineError("train_regressor", "normal equations are singular");
}

double median(std::vector<double> v) {
  const std::size_t n = v.size();
  std::nth_element(v.begin(), v.begin() + n / 2, v.end());
  const double hi = v[n / 2];
  if (n % 2 == 1) return hi;
  return (*std::max_element(v.begin(), v.begin() + n / 2) + hi) / 2.0;
}

}  // namespace

// ---- classifier -----------------------------------------------------------

void ClassifierModel::validate() const {
  if (n_features < 1) throw InvalidArgument("classifier: n_features must be >= 1");
  for (const auto& w : weights) {
    if (w.size() != static_cast<std::size_t>(n_features)) throw InvalidArgument("classifier: weight length mismatch");
    if (!all_finite(w)) throw InvalidArgument("classifier: non-finite weight");
  }
  if (!all_finite(bias)) throw InvalidArgument("classifier: non-finite bias");
  if (!means.empty() && (means.size() != static_cast<std::size_t>(n_features) || stds.size() != means.size())) {
    throw InvalidArgument("classifier: standardization length mismatch");
  }
}

std::array<double, 3> softmax(const std::array<double, 3>& logits) noexcept {
  const double m = std::max({logits[0], logits[1], logits[2]});
  std::array<double, 3> e{};
  double sum = 0.0;
  for (int c = 0; c < 3; ++c) sum += (e[c] = std::exp(logits[c] - m));
  for (auto& v : e) v /= sum;
  return e;
}

Severity argmax_severity(const std::array<double, 3>& p) noexcept {
  int best = 0;
  for (int c = 1; c < 3; ++c) {
    if (p[c] > p[best]) best = c;
  }
  return static_cast<Severity>(best);
}

namespace {

std::array<double, 3> logits_std(const ClassifierModel& m, std::span<const double> z) {
  std::array<double, 3> l = m.bias;
  for (int c = 0; c < 3; ++c) {
    for (std::size_t j = 0; j < z.size(); ++j) l[c] += m.weights[c][j] * z[j];
  }
  return l;
}

double classifier_loss(const ClassifierModel& m, const std::vector<std::vector<double>>& z,
                       std::span<const Severity> labels, double l2) {
  double loss = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const auto p = softmax(logits_std(m, z[i]));
    loss -= std::log(std::max(p[index_of(labels[i])], 1e-300));
  }
  loss /= static_cast<double>(z.size());
  double reg = 0.0;
  for (const auto& w : m.weights) {
    for (double v : w) reg += v * v;
  }
  return loss + 0.5 * l2 * reg;
}

}  // namespace

ClassifierModel train_classifier(std::span<const std::vector<double>> rows, std::span<const Severity> labels,
                                 const ClassifierOptions& opts) {
  const std::size_t p = check_matrix(rows, "train_classifier");
  if (labels.size() != rows.size()) throw InvalidArgument("train_classifier: rows and labels differ in count");
  if (!(opts.l2 >= 0.0) || !(opts.learning_rate > 0.0) || opts.epochs < 0) {
    throw InvalidArgument("train_classifier: l2 >= 0, learning_rate > 0 and epochs >= 0 required");
  }
  std::array<std::size_t, 3> counts{};
  for (Severity s : labels) ++counts[index_of(s)];
  for (Severity s : kSeverities) {
    if (counts[index_of(s)] == 0) {
      throw InvalidArgument("train_classifier: class '" + std::string(to_string(s)) + "' absent from training data");
    }
  }

  const Standardizer st = Standardizer::fit(rows);
  std::vector<std::vector<double>> z(rows.size(), std::vector<double>(p));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < p; ++j) z[i][j] = st.apply(j, rows[i][j]);
  }

  ClassifierModel m;
  m.n_features = static_cast<int>(p);
  m.means = st.mean;
  m.stds = st.sd;
  m.sample_count = rows.size();
  m.seed = opts.seed;
  std::mt19937_64 rng(opts.seed);
  std::normal_distribution<double> init(0.0, 0.01);
  for (auto& w : m.weights) {
    w.resize(p);
    for (auto& v : w) v = init(rng);
  }

  const double n = static_cast<double>(rows.size());
  double lr = opts.learning_rate;
  int backoffs = 0;
  double loss = classifier_loss(m, z, labels, opts.l2);
  m.loss_trace.push_back(loss);
  for (int epoch = 0; epoch < opts.epochs; ++epoch) {
    std::array<std::vector<double>, 3> gw;
    std::array<double, 3> gb{};
    for (auto& g : gw) g.assign(p, 0.0);
    for (std::size_t i = 0; i < z.size(); ++i) {
      const auto prob = softmax(logits_std(m, z[i]));
      for (int c = 0; c < 3; ++c) {
        const double d = (prob[c] - (index_of(labels[i]) == c ? 1.0 : 0.0)) / n;
        gb[c] += d;
        for (std::size_t j = 0; j < p; ++j) gw[c][j] += d * z[i][j];
      }
    }
    for (int c = 0; c < 3; ++c) {
      for (std::size_t j = 0; j < p; ++j) gw[c][j] += opts.l2 * m.weights[c][j];
    }

    bool accepted = false;
    while (!accepted) {
      ClassifierModel trial = m;
      for (int c = 0; c < 3; ++c) {
        trial.bias[c] -= lr * gb[c];
        for (std::size_t j = 0; j < p; ++j) trial.weights[c][j] -= lr * gw[c][j];
      }
      const double trial_loss = classifier_loss(trial, z, labels, opts.l2);
      if (trial_loss <= loss) {
        m = std::move(trial);
        loss = trial_loss;
        m.loss_trace.push_back(loss);
        accepted = true;
      } else if (backoffs < 20) {
        lr *= 0.5;
        ++backoffs;
      } else {
        break;
      }
    }
    if (!accepted) break;
  }
  return m;
}

Classification classify_row(const ClassifierModel& model, std::span<const double> row) {
  if (row.size() != static_cast<std::size_t>(model.n_features)) {
    throw InvalidArgument("classify: expected " + std::to_string(model.n_features) + " features, got " +
                          std::to_string(row.size()));
  }
  std::vector<double> z(row.begin(), row.end());
  if (!model.means.empty()) {
    for (std::size_t j = 0; j < z.size(); ++j) z[j] = model.stds[j] > 0.0 ? (z[j] - model.means[j]) / model.stds[j] : 0.0;
  }
  Classification out;
  out.probabilities = softmax(logits_std(model, z));
  out.cls = argmax_severity(out.probabilities);
  return out;
}

Classification classify(const ClassifierModel& model, const FeatureVector& vec) {
  if (vec.version != model.feature_version) {
    throw InvalidArgument("classify: feature version " + std::to_string(vec.version) + " does not match model version " +
                          std::to_string(model.feature_version));
  }
  return classify_row(model, vec.values);
}

Severity fuse_majority(std::optional<Severity> nail, std::optional<Severity> conj, std::optional<Severity> tongue) {
  const std::optional<Severity> arbiter = conj ? conj : nail ? nail : tongue;
  if (!arbiter) throw InvalidArgument("fuse_majority: all three regions are missing");
  const Severity n = nail.value_or(*arbiter);
  const Severity c = conj.value_or(*arbiter);
  const Severity t = tongue.value_or(*arbiter);
  return n == t ? n : c;
}

// ---- robust regression ----------------------------------------------------

void RegressorModel::validate() const {
  if (!all_finite(coefficients) || !std::isfinite(intercept)) throw InvalidArgument("regressor: non-finite coefficient");
  if (!(tau > 0.0) || !std::isfinite(tau)) throw InvalidArgument("regressor: tau must be > 0");
}

double huber_loss(double r, double delta) noexcept {
  const double a = std::abs(r);
  return a <= delta ? 0.5 * r * r : delta * (a - 0.5 * delta);
}

namespace {

struct WeightedProblem {
  const std::vector<std::vector<double>>& z;  // standardized, intercept column excluded
  std::span<const double> y;
  std::vector<std::size_t> active;             // columns with nonzero variance
  double ridge;

  std::size_t dim() const { return active.size() + 1; }

  std::vector<double> solve(std::span<const double> w) const {
    const std::size_t d = dim();
    std::vector<double> a(d * d, 0.0), b(d, 0.0);
    std::vector<double> x(d);
    for (std::size_t i = 0; i < z.size(); ++i) {
      x[0] = 1.0;
      for (std::size_t k = 0; k < active.size(); ++k) x[k + 1] = z[i][active[k]];
      for (std::size_t r = 0; r < d; ++r) {
        const double wx = w[i] * x[r];
        b[r] += wx * y[i];
        for (std::size_t c = 0; c <= r; ++c) a[r * d + c] += wx * x[c];
      }
    }
    for (std::size_t r = 0; r < d; ++r) {
      for (std::size_t c = r + 1; c < d; ++c) a[r * d + c] = a[c * d + r];
    }
    for (std::size_t r = 1; r < d; ++r) a[r * d + r] += ridge;
    return solve_spd(std::move(a), std::move(b), d);
  }

  std::vector<double> residuals(std::span<const double> beta) const {
    std::vector<double> r(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) {
      double f = beta[0];
      for (std::size_t k = 0; k < active.size(); ++k) f += beta[k + 1] * z[i][active[k]];
      r[i] = y[i] - f;
    }
    return r;
  }

  double objective(std::span<const double> beta, double delta) const {
    double o = 0.0;
    for (double r : residuals(beta)) o += huber_loss(r, delta);
    double pen = 0.0;
    for (std::size_t k = 1; k < beta.size(); ++k) pen += beta[k] * beta[k];
    return o + 0.5 * ridge * pen;
  }
};

}  // namespace

RegressorModel train_regressor(std::span<const std::vector<double>> rows, std::span<const double> hb, Severity cls,
                               const RegressorOptions& opts) {
  const std::size_t p = check_matrix(rows, "train_regressor");
  if (hb.size() != rows.size()) throw InvalidArgument("train_regressor: rows and targets differ in count");
  if (!all_finite(hb)) throw InvalidArgument("train_regressor: non-finite target");
  if (rows.size() < p + 2) {
    throw InvalidArgument("train_regressor: need at least " + std::to_string(p + 2) + " samples for class '" +
                          std::string(to_string(cls)) + "', got " + std::to_string(rows.size()));
  }
  if (!(opts.ridge >= 0.0) || opts.max_iters < 0 || !(opts.tol > 0.0)) {
    throw InvalidArgument("train_regressor: ridge >= 0, max_iters >= 0, tol > 0 required");
  }

  RegressorModel m;
  m.serves = cls;
  m.coefficients.assign(p, 0.0);

  const auto [lo, hi] = std::minmax_element(hb.begin(), hb.end());
  if (*hi - *lo <= 1e-12 * std::max(1.0, std::abs(*hi))) {
    m.intercept = std::accumulate(hb.begin(), hb.end(), 0.0) / static_cast<double>(hb.size());
    m.tau = 1.0;
    m.objective_trace.push_back(0.0);
    return m;
  }

  const Standardizer st = Standardizer::fit(rows);
  std::vector<std::vector<double>> z(rows.size(), std::vector<double>(p));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < p; ++j) z[i][j] = st.apply(j, rows[i][j]);
  }
  WeightedProblem prob{z, hb, {}, opts.ridge};
  for (std::size_t j = 0; j < p; ++j) {
    if (st.sd[j] > 0.0) prob.active.push_back(j);
  }

  std::vector<double> w(rows.size(), 1.0);
  std::vector<double> beta = prob.solve(w);

  double y_sd = 0.0;
  {
    const double ym = std::accumulate(hb.begin(), hb.end(), 0.0) / static_cast<double>(hb.size());
    for (double v : hb) y_sd += (v - ym) * (v - ym);
    y_sd = std::sqrt(y_sd / static_cast<double>(hb.size()));
  }
  const double tau_floor = 1e-12 * std::max(1.0, y_sd);
  auto mad_scale = [&](const std::vector<double>& r) {
    std::vector<double> dev = r;
    const double med = median(dev);
    for (double& d : dev) d = std::abs(d - med);
    return std::max(kMadScale * median(dev), tau_floor);
  };

  // Scale follows the current residuals but never grows: the Huber objective
  // is non-decreasing in delta, so the recorded trace stays monotone.
  m.tau = mad_scale(prob.residuals(beta));
  double delta = kHuberK * m.tau;
  double obj = prob.objective(beta, delta);
  m.objective_trace.push_back(obj);
  for (int it = 0; it < opts.max_iters; ++it) {
    const auto r = prob.residuals(beta);
    if (it > 0) {
      m.tau = std::min(m.tau, mad_scale(r));
      delta = kHuberK * m.tau;
      obj = prob.objective(beta, delta);
    }
    for (std::size_t i = 0; i < r.size(); ++i) {
      const double a = std::abs(r[i]);
      w[i] = a <= delta ? 1.0 : delta / a;
    }
    std::vector<double> next = prob.solve(w);
    const double next_obj = prob.objective(next, delta);
    if (next_obj > obj) break;
    double change = 0.0;
    for (std::size_t k = 0; k < next.size(); ++k) change = std::max(change, std::abs(next[k] - beta[k]));
    beta = std::move(next);
    obj = next_obj;
    m.objective_trace.push_back(obj);
    m.iterations = it + 1;
    if (change < opts.tol) break;
  }

  m.intercept = beta[0];
  for (std::size_t k = 0; k < prob.active.size(); ++k) {
    const std::size_t j = prob.active[k];
    m.coefficients[j] = beta[k + 1] / st.sd[j];
    m.intercept -= m.coefficients[j] * st.mean[j];
  }
  return m;
}

double predict(const RegressorModel& model, std::span<const double> row) {
  if (row.size() != model.coefficients.size()) {
    throw InvalidArgument("predict: expected " + std::to_string(model.coefficients.size()) + " features, got " +
                          std::to_string(row.size()));
  }
  double y = model.intercept;
  for (std::size_t j = 0; j < row.size(); ++j) y += model.coefficients[j] * row[j];
  return y;
}

// ---- calibration ----------------------------------------------------------

CalibrationParams fit_calibration(std::span<const std::pair<double, double>> history) {
  CalibrationParams c;
  c.n_points = static_cast<int>(history.size());
  if (history.empty()) return c;
  const double n = static_cast<double>(history.size());
  double mr = 0.0, ml = 0.0;
  for (const auto& [raw, lab] : history) {
    mr += raw;
    ml += lab;
  }
  mr /= n;
  ml /= n;
  double sxx = 0.0, sxy = 0.0;
  for (const auto& [raw, lab] : history) {
    sxx += (raw - mr) * (raw - mr);
    sxy += (raw - mr) * (lab - ml);
  }
  if (history.size() == 1 || sxx <= 1e-12 * std::max(1.0, mr * mr)) {
    c.a = 1.0;
    c.b = ml - mr;
    return c;
  }
  c.a = std::clamp(sxy / sxx, kMinCalibrationGain, kMaxCalibrationGain);
  c.b = ml - c.a * mr;
  return c;
}

// ---- diagnosis ------------------------------------------------------------

std::string_view to_string(DemographicGroup g) noexcept {
  switch (g) {
    case DemographicGroup::ChildUnder5: return "child_u5";
    case DemographicGroup::Child5to11: return "child_5_11";
    case DemographicGroup::Child12to14: return "child_12_14";
    case DemographicGroup::WomanNonPregnant: return "woman_nonpregnant";
    case DemographicGroup::WomanPregnant: return "woman_pregnant";
    case DemographicGroup::Man: return "man";
  }
  return "?";
}

DemographicGroup group_from_string(std::string_view s) {
  for (auto g : kDemographicGroups) {
    if (to_string(g) == s) return g;
  }
  throw InvalidArgument("unknown demographic group '" + std::string(s) + "'");
}

DemographicGroup group_for(const Demographics& d) noexcept {
  if (d.pregnant) return DemographicGroup::WomanPregnant;
  if (d.age_years < 5.0) return DemographicGroup::ChildUnder5;
  if (d.age_years < 12.0) return DemographicGroup::Child5to11;
  if (d.age_years < 15.0) return DemographicGroup::Child12to14;
  return d.sex == Sex::Female ? DemographicGroup::WomanNonPregnant : DemographicGroup::Man;
}

ThresholdTable::ThresholdTable(std::vector<ThresholdRow> rows) : rows_(std::move(rows)) {
  for (std::size_t i = 0; i < rows_.size(); ++i) {
    const auto& r = rows_[i];
    if (!(r.severe_below > 0.0) || !(r.severe_below < r.mild_below) || !std::isfinite(r.mild_below)) {
      throw InvalidArgument("threshold row '" + std::string(to_string(r.group)) +
                            "': need 0 < severe_below < mild_below");
    }
    for (std::size_t j = 0; j < i; ++j) {
      if (rows_[j].group == r.group) throw InvalidArgument("duplicate threshold row '" + std::string(to_string(r.group)) + "'");
    }
  }
}

ThresholdTable ThresholdTable::defaults() {
  return ThresholdTable({{DemographicGroup::ChildUnder5, 7.0, 11.0},
                         {DemographicGroup::Child5to11, 8.0, 11.5},
                         {DemographicGroup::Child12to14, 8.0, 12.0},
                         {DemographicGroup::WomanNonPregnant, 8.0, 12.0},
                         {DemographicGroup::WomanPregnant, 7.0, 11.0},
                         {DemographicGroup::Man, 8.0, 13.0}});
}

ThresholdTable ThresholdTable::from_csv(std::string_view text) {
  std::vector<ThresholdRow> rows;
  std::istringstream in{std::string(text)};
  std::string line;
  bool header = false;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos || line[first] == '#') continue;
    if (!header) {
      if (line != "group,severe_below,mild_below") {
        throw DataError("threshold table: expected header 'group,severe_below,mild_below'");
      }
      header = true;
      continue;
    }
    std::vector<std::string> f;
    std::istringstream ls(line);
    for (std::string cell; std::getline(ls, cell, ',');) f.push_back(cell);
    const std::string where = "threshold table line " + std::to_string(lineno);
    if (f.size() != 3) throw DataError(where + ": expected 3 fields");
    ThresholdRow r;
    try {
      r.group = group_from_string(f[0]);
    } catch (const InvalidArgument& e) {
      throw DataError(where + ": " + e.what());
    }
    for (int k = 0; k < 2; ++k) {
      double v = 0.0;
      const auto& s = f[k + 1];
      const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
      if (ec != std::errc() || p != s.data() + s.size()) throw DataError(where + ": bad number '" + s + "'");
      (k == 0 ? r.severe_below : r.mild_below) = v;
    }
    rows.push_back(r);
  }
  if (!header) throw DataError("threshold table: empty");
  ThresholdTable t;
  try {
    t = ThresholdTable(std::move(rows));
  } catch (const InvalidArgument& e) {
    throw DataError(std::string("threshold table: ") + e.what());
  }
  for (auto g : kDemographicGroups) {
    if (std::none_of(t.rows_.begin(), t.rows_.end(), [g](const ThresholdRow& r) { return r.group == g; })) {
      throw DataError("threshold table: missing row for '" + std::string(to_string(g)) + "'");
    }
  }
  return t;
}

ThresholdTable ThresholdTable::load(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  return from_csv(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

std::string ThresholdTable::to_csv() const {
  std::ostringstream os;
  os.precision(17);
  os << "group,severe_below,mild_below\n";
  for (const auto& r : rows_) os << to_string(r.group) << ',' << r.severe_below << ',' << r.mild_below << '\n';
  return os.str();
}

const ThresholdRow& ThresholdTable::row_for(DemographicGroup g) const {
  for (const auto& r : rows_) {
    if (r.group == g) return r;
  }
  throw NotFound("no threshold row for demographic group '" + std::string(to_string(g)) + "'");
}

Severity diagnose(double hb, const Demographics& d, const ThresholdTable& table) {
  const ThresholdRow& r = table.row_for(d);
  if (hb < r.severe_below) return Severity::Severe;
  if (hb < r.mild_below) return Severity::Mild;
  return Severity::NonAnaemic;
}

// ---- bundle ---------------------------------------------------------------

void ModelBundle::validate() const {
  if (bundle_version < 1) throw InvalidArgument("bundle: version must be >= 1");
  if (feature_version != kFeatureVersion) throw InvalidArgument("bundle: feature version mismatch");
  for (const auto& c : classifiers) {
    c.validate();
    if (c.feature_version != feature_version || c.n_features != kFeatureLength) {
      throw InvalidArgument("bundle: classifier feature layout mismatch");
    }
  }
  for (int i = 0; i < 3; ++i) {
    regressors[i].validate();
    if (regressors[i].coefficients.size() != 3u * kFeatureLength) throw InvalidArgument("bundle: regressor length mismatch");
    if (index_of(regressors[i].serves) != i) throw InvalidArgument("bundle: regressor order mismatch");
  }
  if (impute_means.size() != 3u * kFeatureLength || !all_finite(impute_means)) {
    throw InvalidArgument("bundle: impute_means must hold 84 finite values");
  }
}

HbPrediction predict_hb(const ModelBundle& bundle, const std::array<FeatureVector, 3>& features, Severity fused) {
  HbPrediction out;
  std::vector<double> row;
  row.reserve(3 * kFeatureLength);
  int valid = 0;
  for (int r = 0; r < 3; ++r) {
    const FeatureVector& f = features[r];
    if (f.valid) {
      if (f.version != bundle.feature_version) throw InvalidArgument("predict_hb: feature version mismatch");
      row.insert(row.end(), f.values.begin(), f.values.end());
      ++valid;
    } else {
      const auto begin = bundle.impute_means.begin() + r * kFeatureLength;
      row.insert(row.end(), begin, begin + kFeatureLength);
      out.reduced_confidence = true;
    }
  }
  if (valid == 0) throw InvalidArgument("predict_hb: no valid region features");
  out.hb = predict(bundle.regressors[index_of(fused)], row);
  return out;
}

namespace {

constexpr char kBundleMagic[4] = {'H', 'B', 'B', 'N'};

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f64(std::vector<std::uint8_t>& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
}

double get_f64(const std::uint8_t* p) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

struct BlobWriter {
  json index = json::array();
  std::vector<double> data;
  void add(const std::string& name, std::span<const double> v) {
    index.push_back({{"name", name}, {"count", v.size()}});
    data.insert(data.end(), v.begin(), v.end());
  }
};

}  // namespace

std::vector<std::uint8_t> serialize_bundle(const ModelBundle& b) {
  b.validate();
  BlobWriter blobs;
  json manifest;
  manifest["format"] = kBundleFormat;
  manifest["bundle_version"] = b.bundle_version;
  manifest["feature_version"] = b.feature_version;
  manifest["feature_layout_hash"] = hex64(feature_layout_hash());
  manifest["trained_at"] = b.trained_at;
  manifest["thresholds"] = b.thresholds.to_csv();
  manifest["heldout_patients"] = b.heldout_patients;
  manifest["heldout_spearman"] = b.heldout_spearman;
  json cls = json::array();
  for (Region r : kRegions) {
    const auto& c = b.classifiers[index_of(r)];
    const std::string prefix = "classifier." + std::string(to_string(r));
    cls.push_back({{"region", to_string(r)}, {"sample_count", c.sample_count}, {"seed", c.seed}});
    blobs.add(prefix + ".means", c.means);
    blobs.add(prefix + ".stds", c.stds);
    for (Severity s : kSeverities) blobs.add(prefix + ".weights." + std::string(to_string(s)), c.weights[index_of(s)]);
    blobs.add(prefix + ".bias", c.bias);
  }
  manifest["classifiers"] = cls;
  json reg = json::array();
  for (Severity s : kSeverities) {
    const auto& r = b.regressors[index_of(s)];
    const std::string prefix = "regressor." + std::string(to_string(s));
    reg.push_back({{"class", to_string(s)}, {"tau", r.tau}, {"intercept", r.intercept}, {"iterations", r.iterations}});
    blobs.add(prefix + ".coefficients", r.coefficients);
  }
  manifest["regressors"] = reg;
  blobs.add("impute_means", b.impute_means);
  manifest["blobs"] = blobs.index;

  const std::string text = manifest.dump();
  std::vector<std::uint8_t> out(kBundleMagic, kBundleMagic + 4);
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  for (double v : blobs.data) put_f64(out, v);
  return out;
}

ModelBundle deserialize_bundle(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kBundleMagic, 4) != 0) throw DataError("bundle: bad magic");
  std::uint32_t len = 0;
  for (int i = 0; i < 4; ++i) len |= static_cast<std::uint32_t>(bytes[4 + i]) << (8 * i);
  if (bytes.size() < 8u + len) throw DataError("bundle: truncated manifest");
  try {
    const json manifest = json::parse(bytes.begin() + 8, bytes.begin() + 8 + len);
    if (manifest.at("format").get<int>() != kBundleFormat) throw DataError("bundle: unsupported format");
    if (manifest.at("feature_layout_hash").get<std::string>() != hex64(feature_layout_hash())) {
      throw DataError("bundle: feature layout does not match this build");
    }

    std::map<std::string, std::vector<double>> blobs;
    std::size_t off = 8u + len;
    for (const auto& e : manifest.at("blobs")) {
      const std::size_t count = e.at("count").get<std::size_t>();
      if (bytes.size() < off + 8 * count) throw DataError("bundle: truncated blob data");
      std::vector<double> v(count);
      for (std::size_t i = 0; i < count; ++i) v[i] = get_f64(bytes.data() + off + 8 * i);
      off += 8 * count;
      blobs[e.at("name").get<std::string>()] = std::move(v);
    }
    if (off != bytes.size()) throw DataError("bundle: trailing bytes");
    auto blob = [&](const std::string& name) -> std::vector<double>& {
      const auto it = blobs.find(name);
      if (it == blobs.end()) throw DataError("bundle: missing blob '" + name + "'");
      return it->second;
    };

    ModelBundle b;
    b.bundle_version = manifest.at("bundle_version").get<int>();
    b.feature_version = manifest.at("feature_version").get<int>();
    b.trained_at = manifest.at("trained_at").get<std::int64_t>();
    b.thresholds = ThresholdTable::from_csv(manifest.at("thresholds").get<std::string>());
    b.heldout_patients = manifest.at("heldout_patients").get<std::vector<std::string>>();
    b.heldout_spearman = manifest.at("heldout_spearman").get<double>();
    for (const auto& c : manifest.at("classifiers")) {
      const Region r = region_from_string(c.at("region").get<std::string>());
      auto& m = b.classifiers[index_of(r)];
      const std::string prefix = "classifier." + std::string(to_string(r));
      m.feature_version = b.feature_version;
      m.sample_count = c.at("sample_count").get<std::size_t>();
      m.seed = c.at("seed").get<std::uint64_t>();
      m.means = blob(prefix + ".means");
      m.stds = blob(prefix + ".stds");
      for (Severity s : kSeverities) m.weights[index_of(s)] = blob(prefix + ".weights." + std::string(to_string(s)));
      const auto& bias = blob(prefix + ".bias");
      if (bias.size() != 3) throw DataError("bundle: classifier bias must hold 3 values");
      std::copy(bias.begin(), bias.end(), m.bias.begin());
      m.n_features = static_cast<int>(m.weights[0].size());
    }
    for (const auto& r : manifest.at("regressors")) {
      const Severity s = severity_from_string(r.at("class").get<std::string>());
      auto& m = b.regressors[index_of(s)];
      m.serves = s;
      m.tau = r.at("tau").get<double>();
      m.intercept = r.at("intercept").get<double>();
      m.iterations = r.at("iterations").get<int>();
      m.coefficients = blob("regressor." + std::string(to_string(s)) + ".coefficients");
    }
    b.impute_means = blob("impute_means");
    b.validate();
    return b;
  } catch (const json::exception& e) {
    throw DataError(std::string("bundle: malformed manifest: ") + e.what());
  } catch (const InvalidArgument& e) {
    throw DataError(std::string("bundle: ") + e.what());
  }
}

void save_bundle(const ModelBundle& bundle, const std::filesystem::path& path) {
  io::write_file(path, serialize_bundle(bundle));
}

ModelBundle load_bundle(const std::filesystem::path& path) { return deserialize_bundle(io::read_file(path)); }

// ---- metrics --------------------------------------------------------------

double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw InvalidArgument("pearson: need two equal-length series of >= 2");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

namespace {

std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> rank(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double r = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[idx[k]] = r;
    i = j + 1;
  }
  return rank;
}

}  // namespace

double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw InvalidArgument("spearman: need two equal-length series of >= 2");
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  return pearson(rx, ry);
}

EvalMetrics compute_metrics(std::span<const double> predicted_hb, std::span<const double> true_hb,
                            std::span<const Severity> predicted_cls, std::span<const Severity> true_cls) {
  const std::size_t n = predicted_hb.size();
  if (true_hb.size() != n || predicted_cls.size() != n || true_cls.size() != n) {
    throw InvalidArgument("compute_metrics: series differ in length");
  }
  EvalMetrics m;
  m.n = n;
  if (n == 0) return m;
  int correct = 0;
  double abs_err = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    ++m.confusion[index_of(true_cls[i])][index_of(predicted_cls[i])];
    if (true_cls[i] == predicted_cls[i]) ++correct;
    abs_err += std::abs(predicted_hb[i] - true_hb[i]);
  }
  m.accuracy = static_cast<double>(correct) / static_cast<double>(n);
  m.mae = abs_err / static_cast<double>(n);
  m.spearman = n >= 2 ? spearman(predicted_hb, true_hb) : 0.0;
  return m;
}

}  // namespace hbscreen
