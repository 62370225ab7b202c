#include "glmar/simulate.hpp"

#include "glmar/errors.hpp"
#include "glmar/io.hpp"
#include "glmar/summary.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SparseCholesky>

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <random>
#include <stdexcept>

#ifndef GLMAR_DATA_DIR
#define GLMAR_DATA_DIR "data"
#endif

namespace glmar {

namespace {

constexpr std::uint64_t kTruthStream = 0x7472757468ULL;
constexpr std::uint64_t kNoiseStream = 0x6e6f697365ULL;

std::mt19937_64 stream(std::uint64_t seed, std::uint64_t tag, std::uint64_t index = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(tag), static_cast<std::uint32_t>(tag >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  return std::mt19937_64(seq);
}

Eigen::VectorXd vec(std::initializer_list<double> xs) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v[i++] = x;
  return v;
}

std::filesystem::path data_dir() {
  if (const char* env = std::getenv("GLMAR_DATA_DIR")) return env;
  return GLMAR_DATA_DIR;
}

}  // namespace

void SimScenario::validate() const {
  if (K < 1 || P < 1) throw std::invalid_argument("scenario " + name + ": K and P must be positive");
  if (alpha.size() != K) throw std::invalid_argument("scenario " + name + ": alpha needs K entries");
  if (beta.size() != P) throw std::invalid_argument("scenario " + name + ": beta needs P entries");
  if (!(alpha.array() > 0).all() || !(beta.array() > 0).all())
    throw std::invalid_argument("scenario " + name + ": precisions must be positive");
  if (lambda.fixed ? !(lambda.value > 0) : !(lambda.shape > 0 && lambda.scale > 0))
    throw std::invalid_argument("scenario " + name + ": lambda specification must be positive");
  if (J < 1) throw std::invalid_argument("scenario " + name + ": J must be at least 1");
}

namespace {

double parse_real(const std::string& s, const std::string& where) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw DataError(where + ": cannot parse number '" + s + "'");
  return v;
}

Eigen::VectorXd parse_list(const std::string& s, const std::string& where) {
  std::vector<double> xs;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto b = item.find_first_not_of(' ');
    const auto e = item.find_last_not_of(' ');
    xs.push_back(parse_real(b == std::string::npos ? "" : item.substr(b, e - b + 1), where));
  }
  return Eigen::Map<Eigen::VectorXd>(xs.data(), static_cast<Eigen::Index>(xs.size()));
}

std::string join(const Eigen::VectorXd& v) {
  std::string out;
  for (Eigen::Index i = 0; i < v.size(); ++i) out += (i ? "," : "") + format_double(v[i]);
  return out;
}

}  // namespace

SimScenario read_scenario(const std::filesystem::path& path) {
  SimScenario sc;
  const auto base = path.parent_path();
  bool have_K = false, have_P = false;
  for (const auto& [k, v] : read_key_values(path)) {
    const std::string where = path.string() + " (" + k + ")";
    if (k == "name") sc.name = v;
    else if (k == "K") sc.K = static_cast<int>(parse_real(v, where)), have_K = true;
    else if (k == "P") sc.P = static_cast<int>(parse_real(v, where)), have_P = true;
    else if (k == "alpha") sc.alpha = parse_list(v, where);
    else if (k == "beta") sc.beta = parse_list(v, where);
    else if (k == "J") sc.J = static_cast<int>(parse_real(v, where));
    else if (k == "seed") sc.seed = static_cast<std::uint64_t>(std::stoull(v));
    else if (k == "design") sc.design_path = base / v;
    else if (k == "mask") sc.mask_path = base / v;
    else if (k == "lambda") {
      std::istringstream ls(v);
      std::string kind, x, y;
      ls >> kind >> x >> y;
      if (kind == "fixed" && !x.empty() && y.empty()) {
        sc.lambda.fixed = true;
        sc.lambda.value = parse_real(x, where);
      } else if (kind == "gamma" && !y.empty()) {
        sc.lambda.fixed = false;
        sc.lambda.shape = parse_real(x, where);
        sc.lambda.scale = parse_real(y, where);
      } else {
        throw DataError(where + ": expected 'fixed <value>' or 'gamma <shape> <scale>'");
      }
    } else {
      throw DataError(path.string() + ": unknown key '" + k + "'");
    }
  }
  if (!have_K || !have_P) throw DataError(path.string() + ": K and P are required");
  if (sc.design_path.empty() || sc.mask_path.empty()) throw DataError(path.string() + ": design and mask are required");
  try {
    sc.validate();
  } catch (const std::invalid_argument& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  return sc;
}

void write_scenario(const std::filesystem::path& path, const SimScenario& sc) {
  std::ofstream out(path);
  if (!out) throw DataError(path.string() + ": cannot open for writing");
  out << "name=" << sc.name << "\nK=" << sc.K << "\nP=" << sc.P << "\nalpha=" << join(sc.alpha)
      << "\nbeta=" << join(sc.beta) << "\nlambda=";
  if (sc.lambda.fixed) out << "fixed " << format_double(sc.lambda.value);
  else out << "gamma " << format_double(sc.lambda.shape) << ' ' << format_double(sc.lambda.scale);
  out << "\ndesign=" << std::filesystem::absolute(sc.design_path).string()
      << "\nmask=" << std::filesystem::absolute(sc.mask_path).string() << "\nJ=" << sc.J << "\nseed=" << sc.seed
      << '\n';
}

SimScale parse_scale(const std::string& s) {
  if (s == "desk") return SimScale::Desk;
  if (s == "full") return SimScale::Full;
  throw std::invalid_argument("unknown scale '" + s + "' (expected desk or full)");
}

std::vector<SimScenario> preset_scenarios(SimScale scale) {
  const auto dir = data_dir();
  const auto mask = dir / "masks" / (scale == SimScale::Desk ? "desk_20x20.txt" : "brain_53x63.txt");
  const int J = scale == SimScale::Desk ? 20 : 100;
  std::vector<SimScenario> out(3);

  auto& s1 = out[0];
  s1.name = "study1";
  s1.K = 5;
  s1.P = 1;
  s1.alpha = Eigen::VectorXd::Ones(5);
  s1.beta = vec({1000.0});
  s1.lambda = {false, 0.0, 10.0, 10.0};
  s1.design_path = dir / "designs" / "design_k5.csv";

  auto& s2 = out[1];
  s2.name = "study2";
  s2.K = 13;
  s2.P = 3;
  s2.alpha = vec({0.1, 0.1, 0.1, 0.5, 0.5, 0.5, 1.0, 1.0, 1.0, 2.0, 2.0, 2.0, 1.0});
  s2.beta = vec({1000.0, 2000.0, 5000.0});
  s2.lambda = {false, 0.0, 10.0, 10.0};
  s2.design_path = dir / "designs" / "design_k13.csv";

  auto& s3 = out[2];
  s3.name = "study3";
  s3.K = 5;
  s3.P = 1;
  s3.alpha = vec({100.0, 100.0, 100.0, 100.0, 0.01});
  s3.beta = vec({400.0});
  s3.lambda = {true, 0.1, 0.0, 0.0};
  s3.design_path = dir / "designs" / "design_k5.csv";

  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i].mask_path = mask;
    out[i].J = J;
    out[i].seed = 1000 + i;
  }
  return out;
}

SimScenario preset(const std::string& name, SimScale scale) {
  for (auto& s : preset_scenarios(scale))
    if (s.name == name) return s;
  throw std::invalid_argument("unknown preset '" + name + "' (expected study1, study2 or study3)");
}

GroundTruth draw_truth(const SimScenario& sc, const SpatialKernel& kernel) {
  sc.validate();
  const int N = static_cast<int>(kernel.size());
  const Eigen::SparseMatrix<double> S = kernel.S;
  Eigen::SimplicialLLT<Eigen::SparseMatrix<double>> chol(S);
  if (chol.info() != Eigen::Success) throw NumericalError("sparse Cholesky of S failed");

  auto rng = stream(sc.seed, kTruthStream);
  std::normal_distribution<double> norm(0.0, 1.0);
  // S symmetric, so x = S^-1 z has covariance (S^T S)^-1.
  auto gmrf_row = [&](double precision) {
    Eigen::VectorXd z(N);
    for (auto& v : z) v = norm(rng);
    return Eigen::VectorXd(chol.solve(z) / std::sqrt(precision));
  };
  GroundTruth t;
  t.W.resize(sc.K, N);
  t.A.resize(sc.P, N);
  for (int k = 0; k < sc.K; ++k) t.W.row(k) = gmrf_row(sc.alpha[k]).transpose();
  for (int p = 0; p < sc.P; ++p) t.A.row(p) = gmrf_row(sc.beta[p]).transpose();
  t.lambda.resize(N);
  if (sc.lambda.fixed) {
    t.lambda.setConstant(sc.lambda.value);
  } else {
    std::gamma_distribution<double> g(sc.lambda.shape, sc.lambda.scale);
    for (auto& v : t.lambda) v = g(rng);
  }
  t.noise_seed = sc.seed;
  return t;
}

Eigen::MatrixXd ar_stationary_covariance(const Eigen::VectorXd& a, double sigma2) {
  const int P = static_cast<int>(a.size());
  Eigen::MatrixXd Phi = Eigen::MatrixXd::Zero(P, P);
  Phi.row(0) = a.transpose();
  for (int i = 1; i < P; ++i) Phi(i, i - 1) = 1.0;
  Eigen::EigenSolver<Eigen::MatrixXd> es(Phi, false);
  if (es.eigenvalues().cwiseAbs().maxCoeff() >= 1.0) return {};
  // vec(G) = (I - Phi (x) Phi)^-1 vec(Q)
  const int P2 = P * P;
  Eigen::MatrixXd M = Eigen::MatrixXd::Identity(P2, P2);
  for (int i = 0; i < P; ++i)
    for (int j = 0; j < P; ++j)
      for (int k = 0; k < P; ++k)
        for (int l = 0; l < P; ++l) M(i * P + k, j * P + l) -= Phi(i, j) * Phi(k, l);
  Eigen::VectorXd q = Eigen::VectorXd::Zero(P2);
  q[0] = sigma2;
  const Eigen::VectorXd g = M.partialPivLu().solve(q);
  Eigen::MatrixXd G(P, P);
  for (int i = 0; i < P; ++i)
    for (int k = 0; k < P; ++k) G(i, k) = g[i * P + k];
  return 0.5 * (G + G.transpose());
}

Replicate generate_replicate(const GroundTruth& truth, const Eigen::MatrixXd& Xfull,
                             const std::vector<std::string>& regressor_names, int P, int rep) {
  const int T = static_cast<int>(Xfull.rows());
  const int N = static_cast<int>(truth.W.cols());
  if (truth.W.rows() != Xfull.cols()) throw std::invalid_argument("design has a different K from the truth");
  if (truth.A.rows() != P) throw std::invalid_argument("truth has a different P");
  if (T <= P) throw std::invalid_argument("need T > P");

  Replicate out;
  out.data.P = P;
  out.data.Xfull = Xfull;
  out.data.regressor_names = regressor_names;
  out.data.Y.resize(T, N);
  auto rng = stream(truth.noise_seed, kNoiseStream, static_cast<std::uint64_t>(rep));
  std::normal_distribution<double> norm(0.0, 1.0);

  std::vector<double> e(static_cast<std::size_t>(T));
  for (int n = 0; n < N; ++n) {
    const Eigen::VectorXd a = truth.A.col(n);
    const double sd = 1.0 / std::sqrt(truth.lambda[n]);
    const Eigen::MatrixXd G = ar_stationary_covariance(a, sd * sd);
    auto innovation = [&] { return sd * norm(rng); };
    if (G.size() > 0) {
      // G is the covariance of (e_{P-1}, ..., e_0).
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(G);
      const Eigen::MatrixXd root =
          eig.eigenvectors() * eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
      Eigen::VectorXd z(P);
      for (auto& v : z) v = norm(rng);
      const Eigen::VectorXd init = root * z;
      for (int i = 0; i < P; ++i) e[static_cast<std::size_t>(P - 1 - i)] = init[i];
    } else {
      out.explosive_voxels.push_back(n);
      std::vector<double> warm(static_cast<std::size_t>(11 * P), 0.0);
      for (int t = P; t < 11 * P; ++t) {
        double v = innovation();
        for (int p = 1; p <= P; ++p) v += a[p - 1] * warm[static_cast<std::size_t>(t - p)];
        warm[static_cast<std::size_t>(t)] = v;
      }
      for (int i = 0; i < P; ++i) e[static_cast<std::size_t>(i)] = warm[static_cast<std::size_t>(10 * P + i)];
    }
    for (int t = P; t < T; ++t) {
      double v = innovation();
      for (int p = 1; p <= P; ++p) v += a[p - 1] * e[static_cast<std::size_t>(t - p)];
      e[static_cast<std::size_t>(t)] = v;
    }
    const Eigen::VectorXd mean = Xfull * truth.W.col(n);
    for (int t = 0; t < T; ++t) out.data.Y(t, n) = mean[t] + e[static_cast<std::size_t>(t)];
  }
  return out;
}

}  // namespace glmar
