#pragma once

// Config-driven experiment runner behind the `pointpert` executable.
//
// Config: INI with sections [manifold] [points] [frame] [ranges] [tolerances] [symbols].
// Every file written under the output directory is a pure function of the config, the seed
// and the thread-independent numerics, so repeated runs are byte-identical.
//
// Exit codes: 0 ok, 1 some items failed, 2 config error, 3 resource limit, 4 every item failed.

#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Eigenvalues>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <boost/version.hpp>
#include <json.hpp>

#include "pointpert/csv.hpp"
#include "pointpert/errors.hpp"
#include "pointpert/extension.hpp"
#include "pointpert/fit.hpp"
#include "pointpert/green.hpp"
#include "pointpert/measures.hpp"
#include "pointpert/spectra.hpp"
#include "pointpert/weyl.hpp"

namespace pointpert::cli {

inline constexpr const char* kVersion = "0.1.0";

enum ExitCode : int { ok = 0, partial = 1, config_error = 2, resource_error = 3, total_failure = 4 };

/// Schema violation; the message starts with the offending field path.
class ConfigError : public Error {
 public:
  using Error::Error;
};

using spectra::Manifold;
using spectra::PointSet;

struct FrameSpec {
  std::string preset = "trivial";  ///< trivial | diagonal | mixed | matrix
  std::vector<double> thetas;
  double mixing = kPi / 4.0;
  ComplexMatrix c, s;  ///< matrix preset
};

struct Ranges {
  double shells_x = 10.0;
  double weyl_x_min = 10.0, weyl_x_max = 50.0, weyl_gamma = 1.0, weyl_step = 0.5;
  std::vector<double> density_gammas{1.0, 2.0, 4.0, 8.0};
  double secular_x_min = 10.0, secular_x_max = 20.0;
  std::vector<double> h_inv{40.0, 80.0, 160.0};
  std::vector<double> upsilon{4.0, 16.0, 64.0, 256.0};
  double window_gamma = 0.125;
  double measure_x_min = 30.0, measure_x_max = 30.5;
};

struct Tolerances {
  double frame = extension::kFrameTolerance;
  double green = 1e-11;
  int root_grid = 24;
  double membership = 1e-6;
};

struct SymbolSpec {
  int radius = 3;
  measures::Cutoff chi = measures::Cutoff::bump(1.0, 0.5);
  std::vector<double> deltas{0.05, 0.1, 0.2, 0.4};
};

struct Config {
  Manifold manifold{ManifoldKind::torus2};
  std::vector<Point> points;
  std::optional<ComplexVector> beta;
  FrameSpec frame;
  Ranges ranges;
  Tolerances tol;
  SymbolSpec symbols;
  std::string text;  ///< raw bytes, hashed into the manifest
};

namespace detail {

inline std::vector<std::string> split_ws(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  for (std::string t; in >> t;) out.push_back(t);
  return out;
}

inline double to_number(const std::string& field, const std::string& text) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used != text.size() || !std::isfinite(v)) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw ConfigError(field + ": expected a finite number, got '" + text + "'");
  }
}

inline std::vector<double> to_numbers(const std::string& field, const std::string& text) {
  std::vector<double> out;
  for (const auto& t : split_ws(text)) out.push_back(to_number(field, t));
  return out;
}

/// "a b; c d" -> rows.
inline RealMatrix to_matrix(const std::string& field, const std::string& text) {
  std::vector<std::vector<double>> rows;
  std::stringstream in(text);
  for (std::string r; std::getline(in, r, ';');) rows.push_back(to_numbers(field, r));
  const auto n = rows.size();
  if (n == 0) throw ConfigError(field + ": empty matrix");
  RealMatrix m(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    if (rows[i].size() != n) throw ConfigError(field + ": matrix must be square, row " + std::to_string(i) + " has " + std::to_string(rows[i].size()) + " entries for " + std::to_string(n) + " rows");
    for (std::size_t j = 0; j < n; ++j) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  }
  return m;
}

/// Typed accessors that remember which keys were consumed.
class Section {
 public:
  Section(std::string name, const boost::property_tree::ptree* tree) : name_(std::move(name)), tree_(tree) {}

  std::optional<std::string> raw(const std::string& key) {
    used_.insert(key);
    if (!tree_) return std::nullopt;
    auto v = tree_->get_optional<std::string>(boost::property_tree::ptree::path_type(key, '\0'));
    if (!v) return std::nullopt;
    return *v;
  }
  std::string path(const std::string& key) const { return name_ + "." + key; }

  double number(const std::string& key, double fallback) {
    auto v = raw(key);
    return v ? to_number(path(key), *v) : fallback;
  }
  int integer(const std::string& key, int fallback) {
    const double v = number(key, fallback);
    if (v != std::floor(v) || std::fabs(v) > 1e9) throw ConfigError(path(key) + ": expected an integer");
    return static_cast<int>(v);
  }
  std::vector<double> numbers(const std::string& key, std::vector<double> fallback) {
    auto v = raw(key);
    return v ? to_numbers(path(key), *v) : fallback;
  }
  std::string text(const std::string& key, std::string fallback) {
    auto v = raw(key);
    return v ? *v : fallback;
  }

  void reject_unknown() const {
    if (!tree_) return;
    for (const auto& [k, child] : *tree_)
      if (!used_.count(k)) throw ConfigError(name_ + "." + k + ": unknown key");
  }

 private:
  std::string name_;
  const boost::property_tree::ptree* tree_;
  std::set<std::string> used_;
};

inline void require(bool ok, const std::string& field, const std::string& what) {
  if (!ok) throw ConfigError(field + ": " + what);
}

}  // namespace detail

inline Config parse_config_text(const std::string& text) {
  namespace pt = boost::property_tree;
  pt::ptree root;
  try {
    std::istringstream in(text);
    pt::ini_parser::read_ini(in, root);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError("config: line " + std::to_string(e.line()) + ": " + e.message());
  }
  static const std::set<std::string> sections{"manifold", "points", "frame", "ranges", "tolerances", "symbols"};
  for (const auto& [k, child] : root) {
    if (!sections.count(k)) throw ConfigError(k + ": unknown section");
    if (!child.data().empty()) throw ConfigError(k + ": key outside any section");
  }
  auto section = [&](const std::string& n) {
    auto it = root.find(n);
    return detail::Section(n, it == root.not_found() ? nullptr : &it->second);
  };
  using detail::require;
  Config cfg;
  cfg.text = text;

  auto man = section("manifold");
  const auto kind = man.raw("kind");
  require(kind.has_value(), "manifold.kind", "required (torus2, torus3 or sphere2)");
  try {
    cfg.manifold = Manifold(spectra::parse_manifold_kind(*kind));
  } catch (const Error&) {
    throw ConfigError("manifold.kind: unknown manifold '" + *kind + "' (torus2, torus3 or sphere2)");
  }
  man.reject_unknown();
  const int dim = cfg.manifold.dimension();
  const std::size_t coords = cfg.manifold.is_torus() ? static_cast<std::size_t>(dim) : 2;

  auto pts = section("points");
  for (int i = 0;; ++i) {
    const std::string key = "p" + std::to_string(i);
    const auto v = pts.raw(key);
    if (!v) break;
    const auto xs = detail::to_numbers(pts.path(key), *v);
    require(xs.size() == coords, pts.path(key), "expected " + std::to_string(coords) + " coordinates, got " + std::to_string(xs.size()));
    Point p{};
    for (std::size_t j = 0; j < coords; ++j) p.x[j] = xs[j];
    cfg.points.push_back(p);
  }
  require(!cfg.points.empty(), "points.p0", "at least one point is required");
  try {
    PointSet check(cfg.manifold, cfg.points);
  } catch (const PreconditionError& e) {
    throw ConfigError(std::string("points: ") + e.what());
  }
  const auto n = static_cast<Eigen::Index>(cfg.points.size());
  if (auto b = pts.raw("beta")) {
    const auto xs = detail::to_numbers("points.beta", *b);
    require(xs.size() == 2 * cfg.points.size(), "points.beta", "expected " + std::to_string(2 * n) + " numbers (re im per point)");
    ComplexVector beta(n);
    for (Eigen::Index i = 0; i < n; ++i) beta(i) = Complex(xs[static_cast<std::size_t>(2 * i)], xs[static_cast<std::size_t>(2 * i + 1)]);
    require(beta.squaredNorm() > 0.0, "points.beta", "must be nonzero");
    cfg.beta = beta;
  }
  pts.reject_unknown();

  auto tol = section("tolerances");
  cfg.tol.frame = tol.number("frame", cfg.tol.frame);
  cfg.tol.green = tol.number("green", cfg.tol.green);
  cfg.tol.root_grid = tol.integer("root_grid", cfg.tol.root_grid);
  cfg.tol.membership = tol.number("membership", cfg.tol.membership);
  require(cfg.tol.frame > 0.0, "tolerances.frame", "must be positive");
  require(cfg.tol.green > 0.0, "tolerances.green", "must be positive");
  require(cfg.tol.root_grid >= 2, "tolerances.root_grid", "must be at least 2");
  require(cfg.tol.membership > 0.0, "tolerances.membership", "must be positive");
  tol.reject_unknown();

  auto fr = section("frame");
  cfg.frame.preset = fr.text("preset", "trivial");
  const auto& preset = cfg.frame.preset;
  if (preset == "diagonal" || preset == "mixed") {
    cfg.frame.thetas = fr.numbers("thetas", {});
    require(cfg.frame.thetas.size() == cfg.points.size(), "frame.thetas", "expected one angle per point (" + std::to_string(n) + ")");
    if (preset == "mixed") cfg.frame.mixing = fr.number("mixing", cfg.frame.mixing);
  } else if (preset == "matrix") {
    auto read = [&](const std::string& key, bool required) -> RealMatrix {
      const auto v = fr.raw(key);
      require(v.has_value() || !required, fr.path(key), "required for preset 'matrix'");
      if (!v) return RealMatrix::Zero(n, n);
      const RealMatrix m = detail::to_matrix(fr.path(key), *v);
      require(m.rows() == n, fr.path(key), "must be " + std::to_string(n) + " x " + std::to_string(n));
      return m;
    };
    const RealMatrix cr = read("c_re", true), ci = read("c_im", false), sr = read("s_re", true), si = read("s_im", false);
    cfg.frame.c = cr.cast<Complex>() + Complex(0, 1) * ci.cast<Complex>();
    cfg.frame.s = sr.cast<Complex>() + Complex(0, 1) * si.cast<Complex>();
  } else if (preset != "trivial") {
    throw ConfigError("frame.preset: unknown preset '" + preset + "' (trivial, diagonal, mixed, matrix)");
  }
  fr.reject_unknown();

  auto rg = section("ranges");
  auto& r = cfg.ranges;
  r.shells_x = rg.number("shells_x", r.shells_x);
  r.weyl_x_min = rg.number("weyl_x_min", r.weyl_x_min);
  r.weyl_x_max = rg.number("weyl_x_max", r.weyl_x_max);
  r.weyl_gamma = rg.number("weyl_gamma", r.weyl_gamma);
  r.weyl_step = rg.number("weyl_step", r.weyl_step);
  r.density_gammas = rg.numbers("density_gammas", r.density_gammas);
  r.secular_x_min = rg.number("secular_x_min", r.secular_x_min);
  r.secular_x_max = rg.number("secular_x_max", r.secular_x_max);
  r.h_inv = rg.numbers("h_inv", r.h_inv);
  r.upsilon = rg.numbers("upsilon", r.upsilon);
  r.window_gamma = rg.number("window_gamma", r.window_gamma);
  r.measure_x_min = rg.number("measure_x_min", r.measure_x_min);
  r.measure_x_max = rg.number("measure_x_max", r.measure_x_max);
  require(r.shells_x >= 0.0, "ranges.shells_x", "must be >= 0");
  require(r.weyl_x_min > 0.0 && r.weyl_x_max > r.weyl_x_min, "ranges.weyl_x_max", "need 0 < weyl_x_min < weyl_x_max");
  require(r.weyl_gamma > 0.0, "ranges.weyl_gamma", "must be positive");
  require(r.weyl_step > 0.0, "ranges.weyl_step", "must be positive");
  require(!r.density_gammas.empty(), "ranges.density_gammas", "must list at least one width");
  for (double g : r.density_gammas) require(g > 0.0, "ranges.density_gammas", "widths must be positive");
  require(r.secular_x_min > 0.0 && r.secular_x_max > r.secular_x_min, "ranges.secular_x_max", "need 0 < secular_x_min < secular_x_max");
  require(!r.h_inv.empty(), "ranges.h_inv", "must list at least one value");
  for (double x : r.h_inv) require(x >= 1.0, "ranges.h_inv", "values must be >= 1");
  require(!r.upsilon.empty(), "ranges.upsilon", "must list at least one value");
  for (double u : r.upsilon) require(u > 0.0, "ranges.upsilon", "values must be positive");
  require(r.window_gamma > 0.0, "ranges.window_gamma", "must be positive");
  require(r.measure_x_min > 0.0 && r.measure_x_max > r.measure_x_min, "ranges.measure_x_max", "need 0 < measure_x_min < measure_x_max");
  rg.reject_unknown();

  auto sy = section("symbols");
  cfg.symbols.radius = sy.integer("radius", cfg.symbols.radius);
  require(cfg.symbols.radius >= 0 && cfg.symbols.radius <= 10, "symbols.radius", "must lie in [0, 10]");
  const auto profile = sy.text("profile", "bump");
  const double center = sy.number("center", 1.0), width = sy.number("width", 0.5), flat = sy.number("flat", 0.5);
  if (profile == "bump") {
    cfg.symbols.chi = measures::Cutoff::bump(center, width);
  } else if (profile == "plateau") {
    cfg.symbols.chi = measures::Cutoff::plateau(center, width, flat);
  } else {
    throw ConfigError("symbols.profile: unknown profile '" + profile + "' (bump, plateau)");
  }
  try {
    cfg.symbols.chi.validate();
  } catch (const PreconditionError& e) {
    throw ConfigError(std::string("symbols: ") + e.what());
  }
  cfg.symbols.deltas = sy.numbers("deltas", cfg.symbols.deltas);
  require(!cfg.symbols.deltas.empty(), "symbols.deltas", "must list at least one radius");
  for (double d : cfg.symbols.deltas) require(d >= 0.0, "symbols.deltas", "radii must be >= 0");
  sy.reject_unknown();
  return cfg;
}

inline Config parse_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("config: cannot read '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

/// exp(i phi K), K with ones off the diagonal.
inline ComplexMatrix mixing_unitary(Eigen::Index n, double phi) {
  RealMatrix k = RealMatrix::Ones(n, n) - RealMatrix::Identity(n, n);
  Eigen::SelfAdjointEigenSolver<RealMatrix> es(k);
  Eigen::VectorXcd d(n);
  for (Eigen::Index i = 0; i < n; ++i) d(i) = std::polar(1.0, phi * es.eigenvalues()(i));
  const ComplexMatrix v = es.eigenvectors().cast<Complex>();
  return v * d.asDiagonal() * v.adjoint();
}

/// The configured frame; Lagrangian violations become config errors naming the identity.
inline extension::LagrangianFrame build_frame(const Config& cfg) {
  const auto n = static_cast<Eigen::Index>(cfg.points.size());
  const auto& f = cfg.frame;
  if (f.preset == "trivial") return extension::LagrangianFrame::trivial(n);
  if (f.preset == "diagonal") return extension::LagrangianFrame::real_rotation(RealMatrix::Identity(n, n), f.thetas);
  if (f.preset == "mixed") return extension::LagrangianFrame::unitary_rotation(mixing_unitary(n, f.mixing), f.thetas);
  try {
    return extension::LagrangianFrame::validate(f.c, f.s, cfg.tol.frame);
  } catch (const FrameValidationError& e) {
    std::string msg = "frame: not Lagrangian:";
    if (!(e.unitarity_residual() <= cfg.tol.frame))
      msg += " C*C + S*S = Id fails (residual " + csv::format(e.unitarity_residual()) + ")";
    if (!(e.symmetry_residual() <= cfg.tol.frame))
      msg += " C*S = S*C fails (residual " + csv::format(e.symmetry_residual()) + ")";
    throw ConfigError(msg + ", tolerance " + csv::format(cfg.tol.frame));
  }
}

inline ComplexVector beta_for(const Config& cfg, std::uint64_t seed) {
  if (cfg.beta) return *cfg.beta;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  ComplexVector b(static_cast<Eigen::Index>(cfg.points.size()));
  for (Eigen::Index i = 0; i < b.size(); ++i) b(i) = Complex(g(rng), g(rng));
  return b / b.norm();
}

inline std::string sha256_hex(const std::string& bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1) throw Error("sha256 failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 15];
  }
  return out;
}

struct Options {
  std::filesystem::path config;
  std::filesystem::path out = "out";
  unsigned threads = 1;
  std::uint64_t seed = 0;
  bool verbose = false;
};

/// Outcome of one subcommand.
struct Outcome {
  std::size_t items = 0;
  std::size_t failures = 0;
  std::vector<std::string> files;
  std::vector<std::string> notes;
};

using json = nlohmann::ordered_json;

class Runner {
 public:
  Runner(Config cfg, Options opt)
      : cfg_(std::move(cfg)), opt_(std::move(opt)), points_(cfg_.manifold, cfg_.points) {}

  static const std::vector<std::string>& subcommands() {
    static const std::vector<std::string> s{"shells", "weyl", "secular", "green", "quasimode", "measure", "all"};
    return s;
  }

  /// Runs one subcommand (or all) and writes the manifest; returns the exit status.
  int run(const std::string& sub) {
    if (std::find(subcommands().begin(), subcommands().end(), sub) == subcommands().end())
      throw ConfigError("subcommand: unknown '" + sub + "'");
    frame_.emplace(build_frame(cfg_));
    std::filesystem::create_directories(opt_.out);
    std::vector<std::string> order = sub == "all" ? std::vector<std::string>{"shells", "weyl", "secular", "green", "quasimode", "measure"}
                                                  : std::vector<std::string>{sub};
    Outcome total;
    json skipped = json::array();
    for (const auto& s : order) {
      if (sub == "all" && !cfg_.manifold.is_torus() && (s == "secular" || s == "measure")) {
        skipped.push_back({{"subcommand", s}, {"reason", "Green matrices and Wigner pairings are torus-only"}});
        continue;
      }
      log("running " + s);
      const Outcome o = dispatch(s);
      total.items += o.items;
      total.failures += o.failures;
      total.files.insert(total.files.end(), o.files.begin(), o.files.end());
    }
    int code = ok;
    if (total.failures > 0) code = total.failures == total.items ? total_failure : partial;
    write_manifest(sub, total, skipped, code);
    return code;
  }

 private:
  void log(const std::string& s) const {
    if (opt_.verbose) std::cerr << "[pointpert] " << s << '\n';
  }

  Outcome dispatch(const std::string& s) {
    if (s == "shells") return shells();
    if (s == "weyl") return weyl_diagnostics();
    if (s == "secular") return secular();
    if (s == "green") return green_norms();
    if (s == "quasimode") return quasimode();
    return measure();
  }

  std::ofstream open(const std::string& name, Outcome& o) {
    o.files.push_back(name);
    std::ofstream f(opt_.out / name, std::ios::binary);
    if (!f) throw Error("cannot write " + (opt_.out / name).string());
    return f;
  }

  void write_json(const std::string& name, const json& j, Outcome& o) {
    auto f = open(name, o);
    f << j.dump(2) << '\n';
  }

  // Natural size of ||G||^2 and its tails: sum |beta|^2 h^(3-d).
  double hscale(double h) const { return std::pow(h, 3 - cfg_.manifold.dimension()); }

  Outcome shells() {
    Outcome o;
    const auto sh = spectra::enumerate_shells(cfg_.manifold, cfg_.ranges.shells_x);
    auto f = open("shells.csv", o);
    csv::Writer w(f, {"lambda", "lambda_sq_integer", "multiplicity"});
    for (const auto& s : sh) w.row({s.lambda(), s.lambda_sq, s.multiplicity});
    o.items = sh.size();
    return o;
  }

  Outcome weyl_diagnostics() {
    Outcome o;
    const auto& r = cfg_.ranges;
    const auto& m = cfg_.manifold;
    const double gmax = std::max(r.weyl_gamma, *std::max_element(r.density_gammas.begin(), r.density_gammas.end()));
    const weyl::SpectralProfile prof(m, points_, r.weyl_x_max + gmax);
    const std::size_t n = points_.size();
    const double e = m.dimension() - 1.0;
    {
      auto f = open("weyl.csv", o);
      csv::Writer w(f, {"X", "gamma", "defect", "normalized_defect", "backend", "q_index", "p_index"});
      const auto steps = static_cast<std::int64_t>(std::floor((r.weyl_x_max - r.weyl_x_min) / r.weyl_step + 1e-9));
      for (std::int64_t k = 0; k <= steps; ++k) {
        const double x = r.weyl_x_min + static_cast<double>(k) * r.weyl_step;
        const double scale = r.weyl_gamma * std::pow(x, e);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = i; j < n; ++j) {
            const double d = i == j ? prof.window_defect(i, x, r.weyl_gamma) : prof.window(i, j, x, r.weyl_gamma);
            w.row({x, r.weyl_gamma, d, d / scale, std::string(m.name()), static_cast<std::int64_t>(i), static_cast<std::int64_t>(j)});
          }
      }
      o.items += w.rows();
    }
    json summary;
    summary["backend"] = m.name();
    summary["looping_set"] = m.looping_set() == spectra::LoopingSet::measure_zero ? "measure_zero" : "full";
    summary["gamma"] = r.weyl_gamma;
    // Dyadic windows [x_min 2^k, x_min 2^(k+1)] clipped to the range.
    std::vector<std::pair<double, double>> dyadic;
    for (double a = r.weyl_x_min; a < r.weyl_x_max; a *= 2.0) dyadic.emplace_back(a, std::min(2.0 * a, r.weyl_x_max));
    json pts = json::array();
    for (std::size_t i = 0; i < n; ++i) {
      json p;
      p["q_index"] = i;
      const auto rs = prof.remainder_sup(i, r.weyl_x_min, r.weyl_x_max);
      p["remainder_sup_ratio"] = rs.value;
      p["remainder_sup_at"] = rs.at;
      json win = json::array();
      std::vector<double> starts;
      for (const auto& [a, b] : dyadic) {
        const auto sup = prof.defect_sup(i, r.weyl_gamma, a, b);
        win.push_back({{"x_lo", a}, {"x_hi", b}, {"mean_abs_normalized_defect", prof.defect_mean(i, r.weyl_gamma, a, b)},
                       {"sup_abs_normalized_defect", sup.value}, {"sup_at", sup.at}});
        starts.push_back(a);
      }
      p["dyadic_windows"] = win;
      const auto eps = prof.epsilon_profile(i, r.weyl_gamma, starts, r.weyl_x_max);
      json ej = json::array();
      for (std::size_t k = 0; k < eps.size(); ++k) ej.push_back({{"from", starts[k]}, {"sup_abs_normalized_defect", eps[k]}});
      p["epsilon_profile"] = ej;
      pts.push_back(p);
    }
    summary["points"] = pts;
    const auto zm = prof.zero_mass_windows(r.weyl_gamma, r.weyl_x_min, r.weyl_x_max);
    double measure = 0.0;
    for (const auto& z : zm) measure += z.to - z.from;
    summary["zero_mass_windows"] = {{"count", zm.size()}, {"total_length", measure}};
    const ComplexVector beta = beta_for(cfg_, opt_.seed);
    json dens = json::array();
    std::optional<double> first;
    for (double g : r.density_gammas) {
      const auto d = prof.density_range(beta, g, r.weyl_x_min, r.weyl_x_max);
      dens.push_back({{"gamma", g}, {"min_lower_ratio", d.lower_ratio}, {"max_upper_ratio", d.upper_ratio}});
      if (!first && d.lower_ratio >= 1.0) first = g;
    }
    summary["density_scan"] = dens;
    summary["first_gamma_with_lower_ratio_ge_1"] = first ? json(*first) : json(nullptr);
    write_json("weyl_summary.json", summary, o);
    return o;
  }

  extension::GreenOptions green_options() const {
    extension::GreenOptions g;
    g.tol = cfg_.tol.green;
    return g;
  }

  Outcome secular() {
    Outcome o;
    if (!cfg_.manifold.is_torus()) throw UnsupportedError("secular: Green matrices are implemented on flat tori only");
    const auto& r = cfg_.ranges;
    const extension::GreenEvaluator ev(cfg_.manifold, points_, r.secular_x_max * r.secular_x_max, green_options());
    const auto scan = extension::find_new_eigenvalues(*frame_, ev, r.secular_x_min * r.secular_x_min,
                                                      r.secular_x_max * r.secular_x_max, cfg_.tol.root_grid);
    auto f = open("secular.csv", o);
    csv::Writer w(f, {"eta_star", "lambda_star", "residual", "gap_left", "gap_right", "membership_residual", "error"});
    for (const auto& root : scan.roots) {
      ++o.items;
      double memb = std::nan("");
      std::string err;
      try {
        memb = green::secular_eigenfunction(*frame_, ev, root.eta_star).membership_residual;
        if (!(memb <= cfg_.tol.membership)) err = "boundary coordinates leave the frame (residual " + csv::format(memb) + ")";
      } catch (const Error& e) {
        err = e.what();
      }
      if (!err.empty()) ++o.failures;
      w.row({root.eta_star, root.sqrt_eta_star(), root.residual, root.gap_left, root.gap_right, memb, err});
    }
    json summary{{"gaps", scan.gaps}, {"roots", scan.roots.size()}, {"warnings", scan.warnings}, {"tail_bound", ev.tail_bound()}};
    write_json("secular_summary.json", summary, o);
    return o;
  }

  Outcome green_norms() {
    Outcome o;
    const ComplexVector beta = beta_for(cfg_, opt_.seed);
    auto f = open("green.csv", o);
    csv::Writer w(f, {"h_inv_target", "eta", "h", "cutoff", "norm_sq", "partial", "tail_estimate", "tail_bound",
                      "norm_sq_scaled", "error"});
    for (double x : cfg_.ranges.h_inv) {
      ++o.items;
      const double eta = green::mid_gap_eta(cfg_.manifold, x);
      const double h = 1.0 / std::sqrt(eta);
      try {
        const green::GreenCombination g(cfg_.manifold, points_, beta, h);
        const auto nn = g.l2_norm_sq();
        w.row({x, eta, h, g.cutoff(), nn.value, nn.partial, nn.tail_estimate, nn.tail_bound,
               nn.value / (beta.squaredNorm() * hscale(h)), std::string()});
      } catch (const ResourceError&) {
        throw;
      } catch (const Error& e) {
        ++o.failures;
        const double nan = std::nan("");
        w.row({x, eta, h, nan, nan, nan, nan, nan, nan, std::string(e.what())});
      }
    }
    return o;
  }

  Outcome quasimode() {
    Outcome o;
    const auto& r = cfg_.ranges;
    const ComplexVector beta = beta_for(cfg_, opt_.seed);
    auto f = open("quasimode.csv", o);
    csv::Writer w(f, {"h_inv_target", "eta", "upsilon", "gamma", "r", "complement_mass", "defect_norm",
                      "normalized_c", "raw_c", "residual", "error"});
    json fits = json::array();
    const double nan = std::nan("");
    for (double x : r.h_inv) {
      const double eta = green::mid_gap_eta(cfg_.manifold, x);
      const double h = 1.0 / std::sqrt(eta);
      std::optional<green::GreenCombination> g;
      std::string gerr;
      try {
        g.emplace(cfg_.manifold, points_, beta, h);
      } catch (const ResourceError&) {
        throw;
      } catch (const Error& e) {
        gerr = e.what();
      }
      std::vector<double> us, ys;
      for (double u : r.upsilon) {
        ++o.items;
        const double rad = r.window_gamma * u;
        if (!g) {
          ++o.failures;
          w.row({x, eta, u, r.window_gamma, rad, nan, nan, nan, nan, nan, gerr});
          continue;
        }
        const double comp = g->complement_mass(rad);
        const double raw = comp * g->l2_norm_sq().value * u / (beta.squaredNorm() * hscale(h));
        double res = nan;
        std::string err;
        try {
          res = green::quasimode_residual(*g, g->window(rad));
        } catch (const Error& e) {
          err = e.what();
          ++o.failures;
        }
        w.row({x, eta, u, r.window_gamma, rad, comp, std::sqrt(comp), comp * u, raw, res, err});
        if (comp > 0.0) {
          us.push_back(u);
          ys.push_back(std::sqrt(comp));
        }
      }
      json fj{{"h_inv_target", x}, {"eta", eta}};
      if (us.size() >= 2) {
        const auto fit = loglog_fit(us, ys);
        fj["slope_defect_norm_vs_upsilon"] = fit.slope;
        fj["slope_stderr"] = fit.slope_stderr;
      }
      fits.push_back(fj);
    }
    write_json("quasimode_summary.json", json{{"fits", fits}}, o);
    return o;
  }

  Outcome measure() {
    Outcome o;
    measures::require_torus(cfg_.manifold);
    const auto& r = cfg_.ranges;
    const extension::GreenEvaluator ev(cfg_.manifold, points_, r.measure_x_max * r.measure_x_max, green_options());
    const auto family = measures::symbol_family(cfg_.manifold.dimension(), cfg_.symbols.radius, cfg_.symbols.chi);
    measures::MeasureOptions mo;
    mo.deltas = cfg_.symbols.deltas;
    mo.grid = cfg_.tol.root_grid;
    mo.threads = opt_.threads;
    const auto scan = measures::measure_scan(*frame_, ev, r.measure_x_min, r.measure_x_max, family, mo);
    auto f = open("measure.csv", o);
    csv::Writer w(f, {"eta_star", "h", "delta", "support_defect", "invariance_defect", "symbol_id", "error"});
    const double nan = std::nan("");
    std::vector<double> hinv, inv;
    std::vector<std::vector<double>> supp(mo.deltas.size());
    for (const auto& row : scan.rows) {
      ++o.items;
      if (!row.report) {
        ++o.failures;
        w.row({row.root.eta_star, 1.0 / row.root.sqrt_eta_star(), nan, nan, nan, std::string(), row.error});
        continue;
      }
      const auto& rep = *row.report;
      for (std::size_t k = 0; k < rep.deltas.size(); ++k) {
        w.row({row.root.eta_star, row.h, rep.deltas[k], 1.0 - rep.shell_concentration[k], rep.invariance_defect,
               rep.invariance_symbol, std::string()});
        supp[k].push_back(1.0 - rep.shell_concentration[k]);
      }
      hinv.push_back(1.0 / row.h);
      inv.push_back(rep.invariance_defect);
    }
    json summary{{"roots", scan.rows.size()}, {"failures", scan.failures}, {"warnings", scan.warnings},
                 {"symbols", family.size()}};
    // Trend fits need four roots spread over a factor 1.5 in 1/h; zero defects are left out.
    auto fit = [&](const std::vector<double>& y) -> json {
      std::vector<double> xs, ys;
      for (std::size_t i = 0; i < y.size(); ++i)
        if (y[i] > 0.0) {
          xs.push_back(hinv[i]);
          ys.push_back(y[i]);
        }
      if (xs.size() < 4 || *std::max_element(xs.begin(), xs.end()) < 1.5 * *std::min_element(xs.begin(), xs.end()))
        return nullptr;
      const auto f2 = loglog_fit(xs, ys);
      return {{"slope_vs_h_inv", f2.slope}, {"slope_stderr", f2.slope_stderr}, {"points", f2.points}};
    };
    json sj = json::array();
    for (std::size_t k = 0; k < mo.deltas.size(); ++k) sj.push_back({{"delta", mo.deltas[k]}, {"fit", fit(supp[k])}});
    summary["support_defect_fits"] = sj;
    summary["invariance_defect_fit"] = fit(inv);
    write_json("measure_summary.json", summary, o);
    return o;
  }

  void write_manifest(const std::string& sub, const Outcome& total, const json& skipped, int code) {
    json files = json::array();
    for (const auto& name : total.files) {
      std::ifstream in(opt_.out / name, std::ios::binary);
      std::stringstream ss;
      ss << in.rdbuf();
      files.push_back({{"name", name}, {"sha256", sha256_hex(ss.str())}});
    }
    json man;
    man["tool"] = "pointpert";
    man["version"] = kVersion;
    man["subcommand"] = sub;
    man["config_sha256"] = sha256_hex(cfg_.text);
    man["seed"] = opt_.seed;
    man["threads"] = opt_.threads;
    man["libraries"] = {{"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                      std::to_string(EIGEN_MINOR_VERSION)},
                        {"boost", BOOST_LIB_VERSION},
                        {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                              std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                              std::to_string(NLOHMANN_JSON_VERSION_PATCH)}};
    man["items"] = total.items;
    man["failures"] = total.failures;
    man["exit_code"] = code;
    man["skipped"] = skipped;
    man["files"] = files;
    std::ofstream f(opt_.out / "manifest.json", std::ios::binary);
    f << man.dump(2) << '\n';
  }

  Config cfg_;
  Options opt_;
  PointSet points_;
  std::optional<extension::LagrangianFrame> frame_;
};

/// Parse, validate and run; every error is mapped to an exit status with a message on `err`.
inline int run(const std::string& subcommand, const Options& opt, std::ostream& err = std::cerr) {
  try {
    Config cfg = parse_config(opt.config);
    Runner runner(std::move(cfg), opt);
    return runner.run(subcommand);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return config_error;
  } catch (const UnsupportedError& e) {
    err << "unsupported: " << e.what() << '\n';
    return config_error;
  } catch (const ResourceError& e) {
    err << "resource limit: " << e.what() << '\n';
    return resource_error;
  } catch (const PreconditionError& e) {
    err << "invalid input: " << e.what() << '\n';
    return config_error;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return total_failure;
  }
}

}  // namespace pointpert::cli
