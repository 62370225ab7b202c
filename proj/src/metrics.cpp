#include "glmar/metrics.hpp"

#include "glmar/errors.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace glmar {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

Eigen::VectorXd truth_row(const Truth& t, const BlockRef& ref) {
  return ref.block == Block::W ? Eigen::VectorXd(t.W.row(ref.row).transpose())
                               : Eigen::VectorXd(t.A.row(ref.row).transpose());
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError(path.string() + ": cannot open for writing");
  return out;
}

double upper_normal_tail(double z) { return 0.5 * std::erfc(z / std::sqrt(2.0)); }

}  // namespace

void ReplicateSet::validate() const {
  if (reps.empty()) throw std::invalid_argument(method + ": empty replicate set");
  const Layout lay = reps.front().layout;
  for (const auto& r : reps)
    if (r.layout.N != lay.N || r.layout.K != lay.K || r.layout.P != lay.P ||
        r.mean.size() != static_cast<Eigen::Index>(lay.dim()))
      throw std::invalid_argument(method + ": replicates disagree on (N, K, P)");
  if (static_cast<int>(mask.voxel_count()) != lay.N) throw std::invalid_argument(method + ": mask size differs from N");
  if (truth.W.rows() != lay.K || truth.W.cols() != lay.N || truth.A.rows() != lay.P || truth.A.cols() != lay.N)
    throw std::invalid_argument(method + ": truth shape differs from the replicates");
}

std::string BlockRef::label() const { return (block == Block::W ? "W" : "A") + std::to_string(row + 1); }

std::vector<BlockRef> coefficient_blocks(const Layout& layout) {
  std::vector<BlockRef> out;
  for (int k = 0; k < layout.K; ++k) out.push_back({Block::W, k});
  for (int p = 0; p < layout.P; ++p) out.push_back({Block::A, p});
  return out;
}

MoranWeights::MoranWeights(const Mask& mask) {
  centroids_.reserve(mask.voxel_count());
  for (std::size_t v = 0; v < mask.voxel_count(); ++v) centroids_.push_back(mask.centroid(v));
  for (std::size_t i = 0; i < size(); ++i)
    for (std::size_t j = i + 1; j < size(); ++j) total_ += 2.0 * weight(i, j);
}

double MoranWeights::weight(std::size_t i, std::size_t j) const {
  if (i == j) return 0.0;
  const auto& a = centroids_[i];
  const auto& b = centroids_[j];
  const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return 1.0 / std::sqrt(dx * dx + dy * dy + dz * dz);
}

double morans_i(std::span<const double> image, const MoranWeights& weights) {
  const std::size_t N = image.size();
  if (N != weights.size()) throw std::invalid_argument("Moran's I: image length differs from the mask");
  double mean = 0.0;
  for (double v : image) mean += v;
  mean /= static_cast<double>(N);
  std::vector<double> d(N);
  double ss = 0.0;
  for (std::size_t i = 0; i < N; ++i) {
    d[i] = image[i] - mean;
    ss += d[i] * d[i];
  }
  if (!(ss > 0.0)) throw std::domain_error("Moran's I undefined (zero variance)");
  double cross = 0.0;
  for (std::size_t i = 0; i < N; ++i) {
    double row = 0.0;
    for (std::size_t j = i + 1; j < N; ++j) row += weights.weight(i, j) * d[j];
    cross += d[i] * row;
  }
  return static_cast<double>(N) / weights.total() * (2.0 * cross) / ss;
}

double pearson(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  if (a.size() != b.size()) throw std::invalid_argument("pearson: lengths differ");
  if (a.size() < 2) return kNaN;
  const Eigen::ArrayXd da = a.array() - a.mean();
  const Eigen::ArrayXd db = b.array() - b.mean();
  const double den = std::sqrt(da.square().sum() * db.square().sum());
  return den > 0.0 ? (da * db).sum() / den : kNaN;
}

BlockStats summary_stats(const ReplicateSet& set, const BlockRef& ref, const MoranWeights& weights) {
  set.validate();
  const Eigen::VectorXd t = truth_row(set.truth, ref);
  const auto J = static_cast<double>(set.reps.size());
  const auto N = static_cast<double>(t.size());

  BlockStats s;
  s.ref = ref;
  Eigen::VectorXd mean_est = Eigen::VectorXd::Zero(t.size());
  double sq = 0.0, var = 0.0, corr = 0.0, moran = 0.0;
  bool variances = true;
  for (const auto& r : set.reps) {
    const Eigen::VectorXd est = r.mean_row(ref.block, ref.row);
    mean_est += est;
    sq += (est - t).squaredNorm();
    corr += pearson(est, t);
    try {
      moran += morans_i({est.data(), static_cast<std::size_t>(est.size())}, weights);
    } catch (const std::domain_error&) {
      moran = kNaN;
    }
    if (r.has_variance()) var += r.variance_row(ref.block, ref.row).sum();
    else variances = false;
  }
  mean_est /= J;
  s.asbias = (mean_est - t).squaredNorm() / N;
  s.amse = sq / (N * J);
  if (variances) s.avar = var / (N * J);
  s.correlation = corr / J;
  s.amoran = moran / J;
  return s;
}

std::vector<BlockStats> summary_stats(const ReplicateSet& set, const MoranWeights& weights) {
  std::vector<BlockStats> out;
  for (const auto& ref : coefficient_blocks(set.layout())) out.push_back(summary_stats(set, ref, weights));
  return out;
}

std::vector<double> truth_moran(const Truth& truth, const MoranWeights& weights) {
  std::vector<double> out;
  auto add = [&](const Eigen::VectorXd& v) {
    try {
      out.push_back(morans_i({v.data(), static_cast<std::size_t>(v.size())}, weights));
    } catch (const std::domain_error&) {
      out.push_back(kNaN);
    }
  };
  for (Eigen::Index k = 0; k < truth.W.rows(); ++k) add(truth.W.row(k).transpose());
  for (Eigen::Index p = 0; p < truth.A.rows(); ++p) add(truth.A.row(p).transpose());
  return out;
}

void Contrast::validate(int K) const {
  if (c.size() != K)
    throw std::invalid_argument("contrast has " + std::to_string(c.size()) + " weights, model has K = " +
                                std::to_string(K));
  if (c.isZero(0.0)) throw std::invalid_argument("contrast is zero");
  if (!(gamma_p > 0.0 && gamma_p < 1.0)) throw std::invalid_argument("gamma_p must lie in (0, 1)");
  if (rule == EffectRule::TopQuantile && !(gamma_e > 0.0 && gamma_e < 1.0))
    throw std::invalid_argument("top-quantile fraction must lie in (0, 1)");
}

Contrast named_contrast(const std::string& name) {
  Contrast out;
  out.c.resize(5);
  if (name == "fame") {
    out.c << -1, -1, 1, 1, 0;
    out.c /= 2.0;
  } else if (name == "face") {
    out.c << 1, 1, 1, 1, 0;
    out.c /= 4.0;
    out.rule = EffectRule::AboveGlobalMean;
    out.gamma_e = 1.0;
    out.gamma_p = 0.95;
  } else {
    throw std::invalid_argument("unknown contrast '" + name + "' (expected fame or face)");
  }
  return out;
}

double effect_threshold(const Contrast& contrast, const Eigen::VectorXd& point_effect) {
  switch (contrast.rule) {
    case EffectRule::Fixed:
      return contrast.gamma_e;
    case EffectRule::TopQuantile: {
      std::vector<double> v(point_effect.begin(), point_effect.end());
      std::sort(v.begin(), v.end());
      const double pos = (1.0 - contrast.gamma_e) * static_cast<double>(v.size() - 1);
      const auto lo = static_cast<std::size_t>(std::floor(pos));
      const auto hi = std::min(lo + 1, v.size() - 1);
      return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
    }
    case EffectRule::AboveGlobalMean: {
      const double m = point_effect.mean();
      return m + std::abs(m) * contrast.gamma_e / 100.0;
    }
  }
  return kNaN;
}

namespace {

PPM finish_ppm(PPM out, double gamma_p) {
  out.active.resize(static_cast<std::size_t>(out.probability.size()));
  for (Eigen::Index n = 0; n < out.probability.size(); ++n) out.active[static_cast<std::size_t>(n)] = out.probability[n] > gamma_p;
  return out;
}

}  // namespace

PPM ppm_from_draws(const Eigen::MatrixXd& effect_draws, const Eigen::VectorXd& point_effect,
                   const Contrast& contrast) {
  if (effect_draws.rows() == 0) throw std::invalid_argument("PPM: no retained draws");
  if (effect_draws.cols() != point_effect.size()) throw std::invalid_argument("PPM: draw width differs from N");
  PPM out;
  out.gamma_e = effect_threshold(contrast, point_effect);
  out.probability.resize(effect_draws.cols());
  for (Eigen::Index n = 0; n < effect_draws.cols(); ++n)
    out.probability[n] = static_cast<double>((effect_draws.col(n).array() > out.gamma_e).count()) /
                         static_cast<double>(effect_draws.rows());
  return finish_ppm(std::move(out), contrast.gamma_p);
}

PPM ppm_gaussian(const Eigen::VectorXd& effect_mean, const Eigen::VectorXd& effect_var, const Contrast& contrast) {
  if (effect_mean.size() != effect_var.size()) throw std::invalid_argument("PPM: mean and variance lengths differ");
  PPM out;
  out.gamma_e = effect_threshold(contrast, effect_mean);
  out.probability.resize(effect_mean.size());
  for (Eigen::Index n = 0; n < effect_mean.size(); ++n) {
    const double sd = std::sqrt(effect_var[n]);
    const double diff = effect_mean[n] - out.gamma_e;
    if (sd > 0.0) out.probability[n] = upper_normal_tail(-diff / sd);
    else out.probability[n] = diff > 0.0 ? 1.0 : 0.0;
  }
  return finish_ppm(std::move(out), contrast.gamma_p);
}

Eigen::MatrixXd contrast_draws(const Eigen::MatrixXd& w_draws, const Layout& layout, const Eigen::VectorXd& c) {
  if (c.size() != layout.K) throw std::invalid_argument("contrast length differs from K");
  if (w_draws.cols() < static_cast<Eigen::Index>(layout.K) * layout.N)
    throw std::invalid_argument("draw matrix lacks the W block");
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(w_draws.rows(), layout.N);
  for (int k = 0; k < layout.K; ++k)
    out += c[k] * w_draws.middleCols(static_cast<Eigen::Index>(layout.w(k, 0)), layout.N);
  return out;
}

Eigen::VectorXd contrast_variance(const std::vector<Eigen::MatrixXd>& w_cov, const Eigen::VectorXd& c) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(w_cov.size()));
  for (std::size_t n = 0; n < w_cov.size(); ++n) {
    if (w_cov[n].rows() != c.size()) throw std::invalid_argument("contrast length differs from K");
    out[static_cast<Eigen::Index>(n)] = c.dot(w_cov[n] * c);
  }
  return out;
}

Eigen::VectorXd contrast_mean(const Eigen::MatrixXd& W, const Eigen::VectorXd& c) {
  if (W.rows() != c.size()) throw std::invalid_argument("contrast length differs from K");
  return W.transpose() * c;
}

std::vector<CurvePoint> sensitivity_curve(const Eigen::VectorXd& probability, const std::vector<bool>& truth_active,
                                          const std::vector<double>& thresholds) {
  if (static_cast<std::size_t>(probability.size()) != truth_active.size())
    throw std::invalid_argument("sensitivity: probability and truth lengths differ");
  const auto positives = std::count(truth_active.begin(), truth_active.end(), true);
  if (positives == 0) throw std::invalid_argument("sensitivity: truth activation set is empty");
  std::vector<CurvePoint> out;
  for (double th : thresholds) {
    long hit = 0;
    for (std::size_t n = 0; n < truth_active.size(); ++n)
      if (truth_active[n] && probability[static_cast<Eigen::Index>(n)] > th) ++hit;
    out.push_back({th, static_cast<double>(hit) / static_cast<double>(positives)});
  }
  return out;
}

std::vector<double> default_thresholds() {
  std::vector<double> out;
  for (int i = 0; i <= 10; ++i) out.push_back(0.9 + 0.01 * i);
  return out;
}

Comparison compare_report(const ReplicateSet& a, const ReplicateSet& b, const MoranWeights& weights) {
  a.validate();
  b.validate();
  const Layout la = a.layout(), lb = b.layout();
  if (la.N != lb.N || la.K != lb.K || la.P != lb.P) throw std::invalid_argument("compared sets differ in (N, K, P)");
  if (a.reps.size() != b.reps.size())
    throw std::invalid_argument("compared sets have " + std::to_string(a.reps.size()) + " and " +
                                std::to_string(b.reps.size()) + " replicates");
  if (!(a.mask == b.mask) || a.truth.W != b.truth.W || a.truth.A != b.truth.A)
    throw std::invalid_argument("compared sets use different masks or truths");

  Comparison out;
  out.method_a = a.method;
  out.method_b = b.method;
  double sum_all = 0.0, sum_w = 0.0;
  for (const auto& ref : coefficient_blocks(la)) {
    const auto sa = summary_stats(a, ref, weights);
    const auto sb = summary_stats(b, ref, weights);
    BlockComparison bc;
    bc.ref = ref;
    bc.amse_ratio = sa.amse / sb.amse;
    bc.amoran_a = sa.amoran;
    bc.amoran_b = sb.amoran;
    double corr = 0.0;
    for (std::size_t j = 0; j < a.reps.size(); ++j)
      corr += pearson(a.reps[j].mean_row(ref.block, ref.row), b.reps[j].mean_row(ref.block, ref.row));
    bc.estimate_correlation = corr / static_cast<double>(a.reps.size());
    sum_all += bc.amse_ratio;
    if (ref.block == Block::W) sum_w += bc.amse_ratio;
    out.blocks.push_back(bc);
  }
  out.mean_ratio_all = sum_all / static_cast<double>(out.blocks.size());
  out.mean_ratio_w = sum_w / la.K;

  const bool variances = std::all_of(a.reps.begin(), a.reps.end(), [](auto& r) { return r.has_variance(); }) &&
                         std::all_of(b.reps.begin(), b.reps.end(), [](auto& r) { return r.has_variance(); });
  if (variances) {
    for (int k = 0; k < la.K; ++k) {
      Eigen::VectorXd acc = Eigen::VectorXd::Zero(la.N);
      for (std::size_t j = 0; j < a.reps.size(); ++j)
        acc += (a.reps[j].variance_row(Block::W, k).array() / b.reps[j].variance_row(Block::W, k).array())
                   .log()
                   .matrix();
      out.log_variance_ratio.push_back(acc / static_cast<double>(a.reps.size()));
    }
  }
  return out;
}

namespace {

std::string cell(double v) { return std::isnan(v) ? "" : format_double(v); }

nlohmann::json opt_json(double v) { return std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v); }

void check_tables(const std::vector<std::vector<BlockStats>>& methods, const std::vector<std::string>& names) {
  if (methods.empty() || methods.size() != names.size()) throw std::invalid_argument("table: need one name per method");
  for (const auto& m : methods)
    if (m.size() != methods.front().size()) throw std::invalid_argument("table: methods cover different blocks");
}

}  // namespace

void write_table_csv(const std::filesystem::path& path, const std::vector<double>& true_moran,
                     const std::vector<std::vector<BlockStats>>& methods, const std::vector<std::string>& names) {
  check_tables(methods, names);
  auto out = open_out(path);
  out << "method,statistic";
  for (const auto& s : methods.front()) out << ',' << s.ref.label();
  out << '\n';
  out << "true,Moran's I";
  for (double v : true_moran) out << ',' << cell(v);
  out << '\n';

  using Getter = double (*)(const BlockStats&);
  const std::vector<std::pair<const char*, Getter>> rows = {
      {"ASBIAS", [](const BlockStats& s) { return s.asbias; }},
      {"AMSE", [](const BlockStats& s) { return s.amse; }},
      {"AVAR", [](const BlockStats& s) { return s.avar.value_or(kNaN); }},
      {"Correlation", [](const BlockStats& s) { return s.correlation; }},
      {"Moran's I", [](const BlockStats& s) { return s.amoran; }},
  };
  for (std::size_t m = 0; m < methods.size(); ++m)
    for (const auto& [stat, get] : rows) {
      out << names[m] << ',' << stat;
      for (const auto& s : methods[m]) out << ',' << cell(get(s));
      out << '\n';
    }
  for (std::size_t m = 1; m < methods.size(); ++m)
    for (const auto& [stat, get] : rows) {
      out << names[m] << " % of " << names[0] << ',' << stat;
      for (std::size_t b = 0; b < methods[m].size(); ++b)
        out << ',' << cell(100.0 * get(methods[m][b]) / get(methods[0][b]));
      out << '\n';
    }
}

void write_table_json(const std::filesystem::path& path, const std::vector<double>& true_moran,
                      const std::vector<std::vector<BlockStats>>& methods, const std::vector<std::string>& names) {
  check_tables(methods, names);
  nlohmann::json doc;
  for (std::size_t b = 0; b < methods.front().size(); ++b)
    doc["true_moran"][methods.front()[b].ref.label()] = opt_json(b < true_moran.size() ? true_moran[b] : kNaN);
  for (std::size_t m = 0; m < methods.size(); ++m)
    for (const auto& s : methods[m]) {
      auto& j = doc["methods"][names[m]][s.ref.label()];
      j["asbias"] = s.asbias;
      j["amse"] = s.amse;
      j["avar"] = s.avar ? nlohmann::json(*s.avar) : nlohmann::json(nullptr);
      j["correlation"] = opt_json(s.correlation);
      j["moran"] = opt_json(s.amoran);
    }
  open_out(path) << doc.dump(2) << '\n';
}

void write_comparison_json(const std::filesystem::path& path, const Comparison& c) {
  nlohmann::json doc;
  doc["method_a"] = c.method_a;
  doc["method_b"] = c.method_b;
  doc["mean_amse_ratio_all"] = c.mean_ratio_all;
  doc["mean_amse_ratio_w"] = c.mean_ratio_w;
  for (const auto& b : c.blocks) {
    auto& j = doc["blocks"][b.ref.label()];
    j["amse_ratio"] = b.amse_ratio;
    j["estimate_correlation"] = opt_json(b.estimate_correlation);
    j["moran_a"] = opt_json(b.amoran_a);
    j["moran_b"] = opt_json(b.amoran_b);
  }
  open_out(path) << doc.dump(2) << '\n';
}

void write_curve_csv(const std::filesystem::path& path, const std::vector<CurvePoint>& curve) {
  auto out = open_out(path);
  out << "threshold,sensitivity\n";
  for (const auto& p : curve) out << format_double(p.threshold) << ',' << format_double(p.sensitivity) << '\n';
}

void write_grid_csv(const std::filesystem::path& path, const Mask& mask, const Eigen::VectorXd& values) {
  if (mask.dimensionality() != 2) throw std::invalid_argument("grid output needs a 2-D mask");
  if (values.size() != static_cast<Eigen::Index>(mask.voxel_count())) throw std::invalid_argument("grid: wrong length");
  auto out = open_out(path);
  const int rows = mask.dims()[0], cols = mask.dims()[1];
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      if (c > 0) out << ',';
      const long v = mask.voxel_at({r, c, 0});
      if (v >= 0) out << cell(values[v]);
    }
    out << '\n';
  }
}

void write_pgm(const std::filesystem::path& path, const Mask& mask, const Eigen::VectorXd& values, double lo,
               double hi) {
  if (mask.dimensionality() != 2) throw std::invalid_argument("PGM output needs a 2-D mask");
  if (values.size() != static_cast<Eigen::Index>(mask.voxel_count())) throw std::invalid_argument("PGM: wrong length");
  if (!(hi > lo)) hi = lo + 1.0;
  const int rows = mask.dims()[0], cols = mask.dims()[1];
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(path.string() + ": cannot open for writing");
  out << "P5\n" << cols << ' ' << rows << "\n255\n";
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      const long v = mask.voxel_at({r, c, 0});
      unsigned char px = 0;
      if (v >= 0) {
        const double x = std::clamp((values[v] - lo) / (hi - lo), 0.0, 1.0);
        px = static_cast<unsigned char>(1 + std::lround(254.0 * x));
      }
      out.put(static_cast<char>(px));
    }
}

}  // namespace glmar
