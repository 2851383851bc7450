#pragma once

// Experiment runner: spec parsing, the six experiment kinds, and staged
// artifact emission (CSV, JSON, gnuplot scripts, manifest).
//
// Spec files are flat `key = value` text grouped under [experiment],
// [model], [prior] and [run] headers; '#' starts a comment.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <utility>
#include <vector>

#include <json.hpp>

#include "polar_denoise/audit.hpp"
#include "polar_denoise/binary_io.hpp"
#include "polar_denoise/dynamics.hpp"
#include "polar_denoise/error.hpp"
#include "polar_denoise/kernel.hpp"
#include "polar_denoise/parallel.hpp"
#include "polar_denoise/posterior.hpp"
#include "polar_denoise/prior.hpp"
#include "polar_denoise/rng.hpp"
#include "polar_denoise/scorematch.hpp"
#include "polar_denoise/version.hpp"

namespace polar_denoise::experiment {

using Json = nlohmann::ordered_json;

/// Malformed spec or bad invocation (exit code 1).
class SpecError : public Error {
 public:
  using Error::Error;
};

/// An experiment-level check failed (exit code 2).
class AssertionFailure : public Error {
 public:
  using Error::Error;
};

enum class Kind {
  concentration_table,
  sampler_vs_oracle,
  drift_profile,
  robustness_theorem2,
  image_reconstruction,
  specfun_audit,
};

inline std::string to_string(Kind k) {
  switch (k) {
    case Kind::concentration_table: return "concentration_table";
    case Kind::sampler_vs_oracle: return "sampler_vs_oracle";
    case Kind::drift_profile: return "drift_profile";
    case Kind::robustness_theorem2: return "robustness_theorem2";
    case Kind::image_reconstruction: return "image_reconstruction";
    case Kind::specfun_audit: return "specfun_audit";
  }
  return "unknown";
}

inline Kind parse_kind(const std::string& s) {
  for (Kind k : {Kind::concentration_table, Kind::sampler_vs_oracle, Kind::drift_profile, Kind::robustness_theorem2,
                 Kind::image_reconstruction, Kind::specfun_audit}) {
    if (to_string(k) == s) return k;
  }
  throw SpecError("unknown experiment kind '" + s + "'");
}

// ---------------------------------------------------------------------------
// Spec text

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, sep)) out.push_back(trim(cur));
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

inline std::optional<double> to_real(const std::string& s) {
  double v = 0.0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  if (first != last && *first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || first == last) return std::nullopt;
  return v;
}

}  // namespace detail

struct Entry {
  std::string value;
  int line = 0;
};

/// One [section] of a spec with typed, use-tracked accessors.
class Section {
 public:
  Section() = default;
  Section(std::string name, std::map<std::string, Entry> entries)
      : name_(std::move(name)), entries_(std::move(entries)) {}

  const std::string& name() const noexcept { return name_; }
  bool has(const std::string& key) const { return entries_.count(key) != 0; }

  std::string text(const std::string& key) const { return entry(key).value; }
  std::string text(const std::string& key, const std::string& fallback) const {
    return has(key) ? text(key) : fallback;
  }

  double real(const std::string& key) const {
    const auto& e = entry(key);
    const auto v = detail::to_real(e.value);
    if (!v || !std::isfinite(*v)) fail(key, e, "expected a finite number");
    return *v;
  }
  double real(const std::string& key, double fallback) const { return has(key) ? real(key) : fallback; }

  /// Non-negative integer; scientific notation such as 1e4 is accepted.
  std::uint64_t count(const std::string& key) const {
    const auto& e = entry(key);
    const auto v = detail::to_real(e.value);
    if (!v || *v < 0.0 || *v != std::floor(*v) || *v > 9007199254740992.0) {
      fail(key, e, "expected a non-negative integer");
    }
    return static_cast<std::uint64_t>(*v);
  }
  std::uint64_t count(const std::string& key, std::uint64_t fallback) const {
    return has(key) ? count(key) : fallback;
  }

  std::uint64_t seed(const std::string& key, std::uint64_t fallback) const {
    if (!has(key)) return fallback;
    const auto& e = entry(key);
    std::uint64_t v = 0;
    const auto [ptr, ec] = std::from_chars(e.value.data(), e.value.data() + e.value.size(), v);
    if (ec != std::errc() || ptr != e.value.data() + e.value.size() || e.value.empty()) {
      fail(key, e, "expected an unsigned 64-bit integer");
    }
    return v;
  }

  bool flag(const std::string& key, bool fallback) const {
    if (!has(key)) return fallback;
    const auto& e = entry(key);
    if (e.value == "true" || e.value == "yes" || e.value == "1") return true;
    if (e.value == "false" || e.value == "no" || e.value == "0") return false;
    fail(key, e, "expected true or false");
  }

  std::vector<double> reals(const std::string& key) const {
    const auto& e = entry(key);
    std::vector<double> out;
    for (const auto& part : detail::split(e.value, ',')) {
      const auto v = detail::to_real(part);
      if (!v || !std::isfinite(*v)) fail(key, e, "expected a comma-separated list of numbers");
      out.push_back(*v);
    }
    if (out.empty()) fail(key, e, "empty list");
    return out;
  }

  /// Rows separated by ';', entries by ','.
  std::vector<std::vector<double>> rows(const std::string& key) const {
    const auto& e = entry(key);
    std::vector<std::vector<double>> out;
    for (const auto& row : detail::split(e.value, ';')) {
      std::vector<double> r;
      for (const auto& part : detail::split(row, ',')) {
        const auto v = detail::to_real(part);
        if (!v || !std::isfinite(*v)) fail(key, e, "expected rows of numbers separated by ';'");
        r.push_back(*v);
      }
      out.push_back(std::move(r));
    }
    return out;
  }

  void forget_usage() const { used_.clear(); }

  /// Every key not yet read, parsed as a number; marks them used.
  ShapeParams remaining_numbers() const {
    ShapeParams out;
    for (const auto& [key, e] : entries_) {
      if (used_.count(key)) continue;
      used_.insert(key);
      const auto v = detail::to_real(e.value);
      if (!v) fail(key, e, "expected a number");
      out[key] = *v;
    }
    return out;
  }

  /// Throws on any key that no accessor has read.
  void reject_unused() const {
    for (const auto& [key, e] : entries_) {
      if (!used_.count(key)) {
        throw SpecError("line " + std::to_string(e.line) + ": unknown key '" + key + "' in [" + name_ + "]");
      }
    }
  }

 private:
  const Entry& entry(const std::string& key) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) throw SpecError("missing required key '" + key + "' in [" + name_ + "]");
    used_.insert(key);
    return it->second;
  }

  [[noreturn]] void fail(const std::string& key, const Entry& e, const std::string& what) const {
    throw SpecError("line " + std::to_string(e.line) + ": [" + name_ + "] " + key + " = '" + e.value + "': " + what);
  }

  std::string name_;
  std::map<std::string, Entry> entries_;
  mutable std::set<std::string> used_;
};

struct ExperimentSpec {
  std::string name;
  Kind kind = Kind::specfun_audit;
  std::string outputs = "outputs";
  std::uint64_t repetitions = 1;
  std::uint64_t seed = 0;
  Section model;
  Section prior;
  Section run;
  std::string text;  // verbatim spec, hashed into the manifest
};

inline std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xF];
  return s;
}

inline ExperimentSpec parse_spec(const std::string& text) {
  std::map<std::string, std::map<std::string, Entry>> sections;
  std::string current;
  std::istringstream is(text);
  std::string raw;
  int line_no = 0;
  while (std::getline(is, raw)) {
    ++line_no;
    if (const auto hash = raw.find('#'); hash != std::string::npos) raw.erase(hash);
    const std::string line = detail::trim(raw);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']' || line.size() < 3) {
        throw SpecError("line " + std::to_string(line_no) + ": malformed section header '" + line + "'");
      }
      current = detail::trim(std::string_view(line).substr(1, line.size() - 2));
      if (current != "experiment" && current != "model" && current != "prior" && current != "run") {
        throw SpecError("line " + std::to_string(line_no) + ": unknown section [" + current + "]");
      }
      if (sections.count(current)) {
        throw SpecError("line " + std::to_string(line_no) + ": duplicate section [" + current + "]");
      }
      sections[current];
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw SpecError("line " + std::to_string(line_no) + ": expected 'key = value', got '" + line + "'");
    }
    if (current.empty()) throw SpecError("line " + std::to_string(line_no) + ": key outside any section");
    const std::string key = detail::trim(std::string_view(line).substr(0, eq));
    const std::string value = detail::trim(std::string_view(line).substr(eq + 1));
    if (key.empty()) throw SpecError("line " + std::to_string(line_no) + ": empty key");
    if (value.empty()) throw SpecError("line " + std::to_string(line_no) + ": empty value for '" + key + "'");
    auto& sec = sections[current];
    if (sec.count(key)) throw SpecError("line " + std::to_string(line_no) + ": duplicate key '" + key + "'");
    sec[key] = Entry{value, line_no};
  }
  if (!sections.count("experiment")) throw SpecError("missing [experiment] section");

  Section exp("experiment", sections["experiment"]);
  ExperimentSpec spec;
  spec.name = exp.text("name");
  for (char c : spec.name) {
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.')) {
      throw SpecError("experiment name may only contain letters, digits, '_', '-' and '.'");
    }
  }
  if (spec.name.empty() || spec.name.front() == '.') throw SpecError("experiment name must not start with '.'");
  spec.kind = parse_kind(exp.text("kind"));
  spec.outputs = exp.text("outputs", spec.outputs);
  spec.repetitions = exp.count("repetitions", 1);
  if (spec.repetitions < 1) throw SpecError("repetitions must be >= 1");
  spec.seed = exp.seed("seed", 0);
  exp.reject_unused();
  spec.model = Section("model", sections["model"]);
  spec.prior = Section("prior", sections["prior"]);
  spec.run = Section("run", sections["run"]);
  spec.text = text;
  return spec;
}

inline ExperimentSpec load_spec(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw SpecError("cannot open spec file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_spec(ss.str());
}

// ---------------------------------------------------------------------------
// Artifacts

/// RFC-4180 table with CRLF line endings.
class CsvTable {
 public:
  explicit CsvTable(std::vector<std::string> header = {}) : header_(std::move(header)) {}

  static std::string escape(const std::string& cell) {
    if (cell.find_first_of(",\"\r\n") == std::string::npos) return cell;
    std::string out = "\"";
    for (char c : cell) {
      if (c == '"') out += '"';
      out += c;
    }
    return out + "\"";
  }

  static std::string cell(double v) { return io::format_double(v); }
  static std::string cell(const std::string& v) { return v; }
  static std::string cell(const char* v) { return v; }
  static std::string cell(bool v) { return v ? "true" : "false"; }
  template <typename T>
    requires std::is_integral_v<T>
  static std::string cell(T v) { return std::to_string(v); }

  template <typename... Ts>
  void add(const Ts&... values) {
    rows_.push_back({cell(values)...});
  }
  void add_row(std::vector<std::string> row) { rows_.push_back(std::move(row)); }
  std::size_t size() const noexcept { return rows_.size(); }

  std::string str() const {
    std::string out;
    auto emit = [&](const std::vector<std::string>& row) {
      for (std::size_t i = 0; i < row.size(); ++i) {
        if (i) out += ',';
        out += escape(row[i]);
      }
      out += "\r\n";
    };
    if (!header_.empty()) emit(header_);
    for (const auto& r : rows_) emit(r);
    return out;
  }

 private:
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

struct Check {
  std::string name;
  double value = 0.0;
  double limit = 0.0;
  std::string relation;  // "<=" or ">="
  bool passed = false;
};

struct RunOptions {
  std::optional<std::string> out_root;
  std::optional<std::uint64_t> seed;
  unsigned jobs = 1;
};

struct RunResult {
  std::filesystem::path directory;
  std::vector<std::string> artifacts;
  std::vector<Check> checks;
  bool passed() const {
    return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.passed; });
  }
};

/// Per-run state shared by the kind implementations.
class Context {
 public:
  // Holds its own copy so key-usage tracking starts fresh on every run.
  Context(const ExperimentSpec& spec, std::uint64_t seed, unsigned jobs) : spec_(spec), seed_(seed), jobs_(jobs) {
    for (const Section* sec : {&spec_.model, &spec_.prior, &spec_.run}) sec->forget_usage();
  }

  const ExperimentSpec& spec() const noexcept { return spec_; }
  std::uint64_t seed() const noexcept { return seed_; }
  unsigned jobs() const noexcept { return jobs_; }
  /// Seed for repetition `rep`; repetition 0 uses the experiment seed itself.
  std::uint64_t repetition_seed(std::uint64_t rep) const { return seed_ + rep; }

  void add_file(std::string name, std::string content) { files_.emplace_back(std::move(name), std::move(content)); }
  void add_csv(const std::string& name, const CsvTable& t) { add_file(name, t.str()); }
  void add_json(const std::string& name, const Json& j) { add_file(name, j.dump(2) + "\n"); }

  void check_at_most(std::string name, double value, double limit) {
    checks_.push_back({std::move(name), value, limit, "<=", value <= limit});
  }
  void check_at_least(std::string name, double value, double limit) {
    checks_.push_back({std::move(name), value, limit, ">=", value >= limit});
  }

  Json& summary() noexcept { return summary_; }
  const std::vector<std::pair<std::string, std::string>>& files() const noexcept { return files_; }
  const std::vector<Check>& checks() const noexcept { return checks_; }

 private:
  ExperimentSpec spec_;
  std::uint64_t seed_;
  unsigned jobs_;
  std::vector<std::pair<std::string, std::string>> files_;
  std::vector<Check> checks_;
  Json summary_ = Json::object();
};

// ---------------------------------------------------------------------------
// Shared spec interpretation

namespace detail {

inline ModelConfig read_model(const Section& m, int dim) {
  const double sigma = m.real("sigma", 1.0);
  if (!(sigma > 0.0)) throw InvalidParameter("sigma", "must be > 0");
  ModelConfig cfg(KernelParams(dim, sigma));
  if (m.has("stop_threshold") && m.text("stop_threshold") != "auto") cfg.stop_threshold = m.real("stop_threshold");
  cfg.max_steps = m.count("max_steps", cfg.max_steps);
  cfg.dt_max = m.real("dt_max", cfg.dt_max);
  cfg.dt_scale = m.real("dt_scale", cfg.dt_scale);
  cfg.snap_radius = m.real("snap_radius", cfg.snap_radius);
  cfg.validate();
  return cfg;
}

inline bool auto_threshold(const Section& m) { return m.has("stop_threshold") && m.text("stop_threshold") == "auto"; }

inline Point pad(const std::vector<double>& v, int dim, const char* what) {
  if (v.size() > static_cast<std::size_t>(dim)) {
    throw InvalidParameter(what, "has " + std::to_string(v.size()) + " entries for dimension " + std::to_string(dim));
  }
  Point p(static_cast<std::size_t>(dim), 0.0);
  std::copy(v.begin(), v.end(), p.begin());
  return p;
}

/// Builds the prior for ambient dimension `dim` (0: take it from the data).
inline EmpiricalPrior read_prior(const Section& p, int dim, std::uint64_t default_seed) {
  const int sources = p.has("generator") + p.has("file") + p.has("idx") + p.has("atoms");
  if (sources != 1) throw SpecError("[prior] needs exactly one of generator, file, idx, atoms");
  if (p.has("atoms")) {
    const auto rows = p.rows("atoms");
    std::size_t width = 0;
    for (const auto& r : rows) width = std::max(width, r.size());
    const int d = dim > 0 ? dim : static_cast<int>(width);
    std::vector<double> flat;
    for (const auto& r : rows) {
      const auto padded = pad(r, d, "atoms");
      flat.insert(flat.end(), padded.begin(), padded.end());
    }
    return EmpiricalPrior(d, std::move(flat), std::nullopt, "atoms:inline");
  }
  if (p.has("file")) {
    auto prior = load_prior(p.text("file"));
    if (dim > 0 && prior.dim() != dim) {
      throw DimensionMismatch("prior file has dimension " + std::to_string(prior.dim()) + ", model wants " +
                              std::to_string(dim));
    }
    return prior;
  }
  if (p.has("idx")) {
    const auto resolution = static_cast<int>(p.count("resolution", 3));
    if (resolution > 4) throw InvalidParameter("resolution", "desk scale allows at most 2^4 = 16 pixels per side");
    auto images = load_idx(p.text("idx"));
    const auto limit = std::min<std::size_t>(p.count("n", images.size()), images.size());
    images.erase(images.begin() + static_cast<std::ptrdiff_t>(limit), images.end());
    for (auto& im : images) im = discretize(im, resolution);
    std::optional<std::vector<std::string>> labels;
    if (p.has("labels")) {
      const auto raw = load_idx_labels(p.text("labels"));
      if (raw.size() < limit) throw DimensionMismatch("label file has fewer entries than images");
      labels.emplace();
      for (std::size_t i = 0; i < limit; ++i) labels->push_back(std::to_string(raw[i]));
    }
    return prior_from_images(images, std::move(labels), "idx:" + p.text("idx"));
  }
  const std::string gen = p.text("generator");
  const auto n = static_cast<std::size_t>(p.count("n", 2));
  const std::uint64_t seed = p.seed("seed", default_seed);
  if (gen == "digits") {
    const auto resolution = static_cast<int>(p.count("resolution", 3));
    if (resolution > 4) throw InvalidParameter("resolution", "desk scale allows at most 2^4 = 16 pixels per side");
    std::vector<std::string> labels;
    auto images = synthetic_digit_images(resolution, n, seed, &labels);
    return prior_from_images(images, std::move(labels),
                             "synthetic:digits resolution=" + std::to_string(resolution) + " n=" + std::to_string(n) +
                                 " seed=" + std::to_string(seed));
  }
  if (dim < 3) throw SpecError("[model] dim is required for synthetic generators");
  return generate_synthetic(parse_synthetic_kind(gen), dim, n, seed, p.remaining_numbers());
}

inline std::string label_of(const EmpiricalPrior& prior, std::size_t i) {
  return prior.labels() ? (*prior.labels())[i] : std::to_string(i);
}

inline std::size_t count_stop(const std::vector<StopReason>& reasons, StopReason r) {
  return static_cast<std::size_t>(std::count(reasons.begin(), reasons.end(), r));
}

inline Json stop_counts(const std::vector<StopReason>& reasons) {
  Json j = Json::object();
  for (StopReason r : {StopReason::threshold_hit, StopReason::step_cap, StopReason::singularity_floor}) {
    j[to_string(r)] = count_stop(reasons, r);
  }
  return j;
}

/// M^2 = 2 (d-2) log(r / (2 snap_radius)): the accumulated squared drift
/// grows like 2 (d-2) log(r0 / rho) while the distance rho to an isolated
/// atom shrinks from r0, so this threshold trips near twice the snap radius.
inline double radial_log_threshold(int dim, double r, double snap_radius) {
  const double ratio = r / (2.0 * snap_radius);
  if (!(ratio > 1.0)) throw InvalidParameter("stop_threshold", "auto needs the start farther than 2 * snap_radius");
  return std::sqrt(2.0 * (dim - 2) * std::log(ratio));
}

inline std::string grid_csv(std::span<const double> pixels, std::size_t side) {
  CsvTable t;
  for (std::size_t i = 0; i < side; ++i) {
    std::vector<std::string> row;
    for (std::size_t j = 0; j < side; ++j) row.push_back(CsvTable::cell(pixels[i * side + j]));
    t.add_row(std::move(row));
  }
  return t.str();
}

inline std::string gnuplot_header(const std::string& title) {
  return "# gnuplot helper; run with: gnuplot -p <this file>\nset datafile separator ','\nset key autotitle "
         "columnhead\nset title '" +
         title + "'\n";
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Experiment kinds

inline void run_concentration_table(Context& ctx) {
  const auto& s = ctx.spec();
  const auto dims = s.run.reals("dims");
  const double radius = s.run.real("radius", 1.0);
  const double delta = s.run.real("delta", 0.1);
  const std::vector<double> obs = s.run.has("observation") ? s.run.reals("observation") : std::vector<double>{};
  const double sigma = s.model.real("sigma", 1.0);
  s.run.reject_unused();
  s.model.reject_unused();

  CsvTable table({"d", "sigma", "epsilon", "delta", "lhs_mass", "rhs_bound", "margin", "off_mass", "green_ratio",
                  "power_ratio"});
  Json rows = Json::array();
  double min_margin = std::numeric_limits<double>::infinity();
  bool prior_checked = false;
  for (double dd : dims) {
    if (dd != std::floor(dd) || dd < 3) throw InvalidParameter("dims", "entries must be integers >= 3");
    const int d = static_cast<int>(dd);
    const auto prior = detail::read_prior(s.prior, d, ctx.seed());
    if (!prior_checked) {
      s.prior.reject_unused();
      prior_checked = true;
    }
    const KernelParams kernel(d, sigma);
    const Point y = detail::pad(obs, d, "observation");
    const auto cert = concentration_certificate(prior, kernel, y, radius, delta);
    const auto dom = monotone_domination_check(prior, kernel, y, (1.0 + delta) * radius);
    const double off = std::exp(cert.log_off_mass);
    table.add(d, sigma, cert.epsilon_used, delta, cert.lhs_mass, cert.rhs_bound, cert.margin, off, dom.green_ratio,
              dom.power_ratio);
    rows.push_back({{"d", d},
                    {"sigma", sigma},
                    {"epsilon", cert.epsilon_used},
                    {"delta", delta},
                    {"lhs", cert.lhs_mass},
                    {"rhs", cert.rhs_bound},
                    {"margin", cert.margin},
                    {"off_mass", off},
                    {"domination_holds", dom.holds}});
    min_margin = std::min(min_margin, cert.margin);
    ctx.check_at_least("domination_d" + std::to_string(d), dom.green_ratio - dom.power_ratio, -kCertificateSlack);
  }
  ctx.check_at_least("min_margin", min_margin, -kCertificateSlack);
  ctx.add_csv("concentration.csv", table);
  ctx.add_json("concentration.json", rows);
  ctx.summary()["min_margin"] = min_margin;
  ctx.add_file("concentration.gp", detail::gnuplot_header("Posterior ball mass vs lower bound") +
                                       "set xlabel 'd'\nplot 'concentration.csv' using 1:5 with linespoints, "
                                       "'' using 1:6 with linespoints\n");
}

inline void run_sampler_vs_oracle(Context& ctx) {
  const auto& s = ctx.spec();
  const int dim = static_cast<int>(s.model.count("dim"));
  const auto trajectories = static_cast<std::size_t>(s.run.count("trajectories", 10000));
  const auto obs = s.run.reals("observation");
  const double tolerance = s.run.real("tolerance", 0.05);
  auto cfg = detail::read_model(s.model, dim);
  const auto prior = std::make_shared<const EmpiricalPrior>(detail::read_prior(s.prior, dim, ctx.seed()));
  s.run.reject_unused();
  s.model.reject_unused();
  s.prior.reject_unused();
  if (trajectories < 1) throw InvalidParameter("trajectories", "must be >= 1");

  const Point y = detail::pad(obs, dim, "observation");
  const auto weights = posterior_weights(*prior, cfg.kernel, y);
  const auto drift = exact_drift(prior, cfg.kernel);
  const std::size_t n = prior->size();

  CsvTable hist({"repetition", "atom", "label", "posterior_weight", "exact_sample_freq", "sde_freq", "sde_count"});
  Json reps = Json::array();
  double worst = 0.0;
  for (std::uint64_t rep = 0; rep < s.repetitions; ++rep) {
    cfg.seed = ctx.repetition_seed(rep);
    const auto paths = reverse_sample_batch(*drift, y, cfg, trajectories, ctx.jobs());
    std::vector<std::size_t> counts(n + 1, 0);  // last bin: not snapped
    std::vector<StopReason> reasons;
    for (const auto& t : paths) {
      ++counts[t.endpoint_snapped ? *t.endpoint_snapped : n];
      reasons.push_back(t.stop_reason);
    }
    const auto exact = posterior_sample(weights, trajectories, cfg.seed);
    std::vector<std::size_t> exact_counts(n, 0);
    for (auto i : exact) ++exact_counts[i];

    const double total = static_cast<double>(trajectories);
    double tv = counts[n] / total;
    double tv_exact = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      tv += std::abs(counts[i] / total - weights.weight(i));
      tv_exact += std::abs(exact_counts[i] / total - weights.weight(i));
      hist.add(rep, i, detail::label_of(*prior, i), weights.weight(i), exact_counts[i] / total, counts[i] / total,
               counts[i]);
    }
    hist.add(rep, "none", "", 0.0, 0.0, counts[n] / total, counts[n]);
    tv *= 0.5;
    tv_exact *= 0.5;
    worst = std::max(worst, tv);
    reps.push_back({{"repetition", rep},
                    {"seed", cfg.seed},
                    {"tv_distance", tv},
                    {"exact_sampler_tv", tv_exact},
                    {"unsnapped", counts[n]},
                    {"stop_reasons", detail::stop_counts(reasons)}});
  }
  ctx.check_at_most("tv_distance", worst, tolerance);
  Json out = {{"tv_distance", worst},
              {"tolerance", tolerance},
              {"trajectories", trajectories},
              {"observation", y},
              {"posterior_weights", weights.weights()},
              {"repetitions", reps}};
  ctx.add_csv("histogram.csv", hist);
  ctx.add_json("sampler_vs_oracle.json", out);
  ctx.summary()["tv_distance"] = worst;
  ctx.add_file("histogram.gp", detail::gnuplot_header("Snapped endpoints vs closed-form posterior") +
                                   "set style data histograms\nset style fill solid 0.5\n"
                                   "plot 'histogram.csv' using 4:xtic(2), '' using 6\n");
}

inline void run_drift_profile(Context& ctx) {
  const auto& s = ctx.spec();
  const int dim = static_cast<int>(s.model.count("dim"));
  const double sigma = s.model.real("sigma", 1.0);
  const auto probes = static_cast<std::size_t>(s.run.count("probes", 100));
  const auto radii = s.run.has("shell_radius") ? s.run.reals("shell_radius") : std::vector<double>{1.0};
  const double max_rel = s.run.real("max_rel_error", std::nan(""));  // NaN: no check
  const double max_norm_dev = s.run.real("max_norm_deviation", std::nan(""));  // NaN: no check
  const auto prior = std::make_shared<const EmpiricalPrior>(detail::read_prior(s.prior, dim, ctx.seed()));
  s.run.reject_unused();
  s.model.reject_unused();
  s.prior.reject_unused();
  const KernelParams kernel(dim, sigma);
  const auto exact = exact_drift(prior, kernel);
  const auto leading = leading_order_drift(prior, kernel);

  // Probe k: a uniformly chosen atom plus radius * (uniform unit vector).
  struct Row {
    std::size_t atom;
    double radius, distance, exact_norm, leading_norm, rel_error, norm_ratio;
  };
  std::vector<Row> rows(probes * radii.size());
  parallel_for(rows.size(), ctx.jobs(), [&](std::size_t k) {
    Rng rng = make_stream(ctx.seed(), streams::experiment + k);
    std::uniform_int_distribution<std::size_t> pick(0, prior->size() - 1);
    const std::size_t atom = pick(rng);
    const double radius = radii[k / probes];
    Point y(static_cast<std::size_t>(dim));
    polar_denoise::detail::fill_unit_direction(rng, y);
    const auto x = prior->atom(atom);
    for (std::size_t j = 0; j < y.size(); ++j) y[j] = x[j] + radius * y[j];
    const auto e = (*exact)(y);
    const auto l = (*leading)(y);
    const double dist = prior->nearest(y).second;
    const double en = vec::norm(e.drift);
    rows[k] = {atom,
               radius,
               dist,
               en,
               vec::norm(l.drift),
               vec::distance(e.drift, l.drift) / en,
               en * dist / (dim - 2.0)};
  });

  CsvTable table({"probe", "atom", "shell_radius", "distance", "exact_norm", "leading_norm", "rel_vector_error",
                  "norm_times_distance_over_d_minus_2"});
  double worst_rel = 0.0, worst_dev = 0.0;
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const auto& r = rows[k];
    table.add(k, r.atom, r.radius, r.distance, r.exact_norm, r.leading_norm, r.rel_error, r.norm_ratio);
    worst_rel = std::max(worst_rel, r.rel_error);
    worst_dev = std::max(worst_dev, std::abs(r.norm_ratio - 1.0));
  }
  if (!std::isnan(max_rel)) ctx.check_at_most("max_rel_vector_error", worst_rel, max_rel);
  if (!std::isnan(max_norm_dev)) ctx.check_at_most("max_norm_deviation", worst_dev, max_norm_dev);
  ctx.add_csv("drift_profile.csv", table);
  ctx.add_json("drift_profile.json",
               {{"dim", dim}, {"sigma", sigma}, {"probes", rows.size()}, {"max_rel_vector_error", worst_rel},
                {"max_norm_deviation", worst_dev}});
  ctx.summary()["max_rel_vector_error"] = worst_rel;
  ctx.add_file("drift_profile.gp", detail::gnuplot_header("Exact vs leading-order drift") +
                                       "set xlabel 'distance'\nset logscale y\n"
                                       "plot 'drift_profile.csv' using 4:7 with points\n");
}

inline void run_robustness_theorem2(Context& ctx) {
  const auto& s = ctx.spec();
  const int dim = static_cast<int>(s.model.count("dim"));
  auto cfg = detail::read_model(s.model, dim);
  const auto runs = static_cast<std::size_t>(s.run.count("runs", 1000));
  const auto obs = s.run.reals("observation");
  const double delta = s.run.real("delta", 0.2);
  const double relative = s.run.real("relative_magnitude", 0.05);
  const auto mode = parse_perturbation_mode(s.run.text("perturbation", "additive_gaussian_field"));
  const double length_scale = s.run.real("length_scale", 1.0);
  const auto probe_points = static_cast<std::size_t>(s.run.count("probe_points", 64));
  const double min_fraction = s.run.real("min_fraction", 0.9);
  const bool path_error = s.run.flag("path_error", false);
  const auto prior = std::make_shared<const EmpiricalPrior>(detail::read_prior(s.prior, dim, ctx.seed()));
  s.run.reject_unused();
  s.model.reject_unused();
  s.prior.reject_unused();
  if (runs < 1) throw InvalidParameter("runs", "must be >= 1");
  if (probe_points < 1) throw InvalidParameter("probe_points", "must be >= 1");

  const Point y = detail::pad(obs, dim, "observation");
  const auto [nearest, r] = prior->nearest(y);
  if (detail::auto_threshold(s.model)) cfg.stop_threshold = detail::radial_log_threshold(dim, r, cfg.snap_radius);
  const double tube = 10.0 * cfg.snap_radius;
  const auto base = exact_drift(prior, cfg.kernel);

  // Probe shell: the sphere of radius r about the nearest atom.
  double min_b = std::numeric_limits<double>::infinity();
  {
    Rng rng = make_stream(ctx.seed(), streams::experiment);
    Point p(static_cast<std::size_t>(dim));
    const auto x = prior->atom(nearest);
    for (std::size_t k = 0; k < probe_points; ++k) {
      polar_denoise::detail::fill_unit_direction(rng, p);
      for (std::size_t j = 0; j < p.size(); ++j) p[j] = x[j] + r * p[j];
      min_b = std::min(min_b, vec::norm((*base)(p).drift));
    }
  }
  const double magnitude = relative * min_b;

  struct Outcome {
    StopReason reason;
    std::size_t steps;
    double duration, final_l2sq, endpoint_distance, distance_from_y, path_l2_error;
    std::optional<std::size_t> snapped;
    bool in_tube, in_ball;
  };
  CsvTable table({"repetition", "run", "stop_reason", "steps", "duration", "final_l2sq", "endpoint_distance",
                  "snapped_atom", "in_tube", "in_ball", "success", "path_l2_error"});
  Json reps = Json::array();
  double worst = 1.0;
  for (std::uint64_t rep = 0; rep < s.repetitions; ++rep) {
    cfg.seed = ctx.repetition_seed(rep);
    const auto field = perturb_drift(base, mode, magnitude, cfg.seed, length_scale);
    std::vector<Outcome> out(runs);
    parallel_for(runs, ctx.jobs(), [&](std::size_t k) {
      const auto t =
          reverse_sample(*field, y, cfg, k, path_error ? PathRecording::full : PathRecording::endpoints);
      Outcome o{};
      o.reason = t.stop_reason;
      o.steps = t.steps;
      o.duration = t.duration();
      o.final_l2sq = t.final_l2sq();
      o.endpoint_distance = prior->nearest(t.endpoint).second;
      o.distance_from_y = vec::distance(t.endpoint, y);
      o.snapped = t.endpoint_snapped;
      o.in_tube = o.endpoint_distance <= tube;
      o.in_ball = o.distance_from_y <= (1.0 + delta) * r;
      o.path_l2_error =
          path_error ? drift_l2_error_along_paths(*field, *base, {t}, tube).front() : std::nan("");
      out[k] = o;
    });
    std::size_t successes = 0;
    std::vector<StopReason> reasons;
    for (std::size_t k = 0; k < runs; ++k) {
      const auto& o = out[k];
      const bool ok = o.in_tube && o.in_ball;
      successes += ok;
      reasons.push_back(o.reason);
      table.add(rep, k, to_string(o.reason), o.steps, o.duration, o.final_l2sq, o.endpoint_distance,
                o.snapped ? std::to_string(*o.snapped) : std::string(), o.in_tube, o.in_ball, ok,
                path_error ? CsvTable::cell(o.path_l2_error) : std::string());
    }
    const double fraction = successes / static_cast<double>(runs);
    worst = std::min(worst, fraction);
    reps.push_back({{"repetition", rep},
                    {"seed", cfg.seed},
                    {"fraction", fraction},
                    {"stop_reasons", detail::stop_counts(reasons)}});
  }
  ctx.check_at_least("success_fraction", worst, min_fraction);
  ctx.add_csv("runs.csv", table);
  ctx.add_json("robustness.json", {{"fraction", worst},
                                   {"min_fraction", min_fraction},
                                   {"runs", runs},
                                   {"observation_distance", r},
                                   {"delta", delta},
                                   {"tube_radius", tube},
                                   {"stop_threshold", cfg.stop_threshold},
                                   {"perturbation", mode == PerturbationMode::smooth_bias ? "smooth_bias"
                                                                                           : "additive_gaussian_field"},
                                   {"perturbation_magnitude", magnitude},
                                   {"min_drift_on_probe_shell", min_b},
                                   {"repetitions", reps}});
  ctx.summary()["fraction"] = worst;
  ctx.add_file("runs.gp", detail::gnuplot_header("Endpoint distance to the atoms") +
                              "set logscale y\nplot 'runs.csv' using 2:7 with points\n");
}

inline void run_image_reconstruction(Context& ctx) {
  const auto& s = ctx.spec();
  const auto runs = static_cast<std::size_t>(s.run.count("runs", 100));
  const auto snapshots = static_cast<std::size_t>(s.run.count("snapshots", 3));
  const std::string corruption = s.run.text("corruption", "left_half_noise");
  const auto grid_runs = static_cast<std::size_t>(s.run.count("grid_runs", 1));
  const double min_accuracy = s.run.real("min_accuracy", std::nan(""));  // NaN: no check
  if (corruption != "left_half_noise" && corruption != "forward") {
    throw InvalidParameter("corruption", "must be left_half_noise or forward");
  }
  const auto prior = std::make_shared<const EmpiricalPrior>(detail::read_prior(s.prior, 0, ctx.seed()));
  if (prior->size() > 2000) throw InvalidParameter("n", "desk scale allows at most 2000 atoms");
  const int dim = prior->dim();
  const auto side = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(dim))));
  if (side * side != static_cast<std::size_t>(dim) || side > 16) {
    throw InvalidParameter("prior", "image priors must be square grids of at most 16 x 16 pixels");
  }
  auto cfg = detail::read_model(s.model, dim);
  s.run.reject_unused();
  s.model.reject_unused();
  s.prior.reject_unused();
  const auto drift = exact_drift(prior, cfg.kernel);

  struct Outcome {
    std::size_t source;
    Point corrupted;
    std::vector<Point> snaps;
    Point endpoint;
    std::size_t endpoint_atom;
    double endpoint_distance, max_pixel_deviation;
    StopReason reason;
    bool snapped;
  };
  CsvTable table({"repetition", "run", "source_atom", "source_label", "endpoint_atom", "endpoint_label", "correct",
                  "stop_reason", "endpoint_distance", "max_pixel_deviation"});
  Json reps = Json::array();
  double worst = 1.0;
  for (std::uint64_t rep = 0; rep < s.repetitions; ++rep) {
    cfg.seed = ctx.repetition_seed(rep);
    std::vector<Outcome> out(runs);
    parallel_for(runs, ctx.jobs(), [&](std::size_t k) {
      Outcome o{};
      Rng rng = make_stream(cfg.seed, streams::forward_corruption + k);
      std::uniform_int_distribution<std::size_t> pick(0, prior->size() - 1);
      o.source = pick(rng);
      const auto x = prior->atom(o.source);
      o.corrupted.assign(x.begin(), x.end());
      if (corruption == "left_half_noise") {
        std::uniform_real_distribution<double> noise(0.0, 1.0);
        for (std::size_t i = 0; i < side; ++i) {
          for (std::size_t j = 0; j < side / 2; ++j) o.corrupted[i * side + j] = noise(rng);
        }
      } else {
        std::exponential_distribution<double> exponential(1.0);
        std::normal_distribution<double> normal;
        const double scale = cfg.kernel.sigma() * std::sqrt(exponential(rng));
        for (auto& v : o.corrupted) v += scale * normal(rng);
      }
      const auto t = reverse_sample(*drift, o.corrupted, cfg, k, PathRecording::full);
      // Snapshot j sits where the accumulated squared drift first reaches j / (K+1) of its final value.
      const double final_acc = t.final_l2sq();
      std::size_t idx = 0;
      for (std::size_t j = 1; j <= snapshots; ++j) {
        const double target = final_acc * static_cast<double>(j) / static_cast<double>(snapshots + 1);
        while (idx + 1 < t.size() && t.accumulated_l2sq[idx] < target) ++idx;
        const auto p = t.point(idx);
        o.snaps.emplace_back(p.begin(), p.end());
      }
      o.reason = t.stop_reason;
      o.snapped = t.endpoint_snapped.has_value();
      std::tie(o.endpoint_atom, o.endpoint_distance) = prior->nearest(t.endpoint);
      if (o.snapped) {
        const auto a = prior->atom(*t.endpoint_snapped);
        o.endpoint.assign(a.begin(), a.end());
      } else {
        o.endpoint = t.endpoint;
      }
      double dev = 0.0;
      for (std::size_t j = 0; j < t.endpoint.size(); ++j) dev = std::max(dev, std::abs(t.endpoint[j] - x[j]));
      o.max_pixel_deviation = dev;
      out[k] = std::move(o);
    });
    std::size_t correct = 0;
    for (std::size_t k = 0; k < runs; ++k) {
      const auto& o = out[k];
      const std::string src_label = detail::label_of(*prior, o.source);
      const std::string end_label = detail::label_of(*prior, o.endpoint_atom);
      const bool ok = src_label == end_label;
      correct += ok;
      table.add(rep, k, o.source, src_label, o.endpoint_atom, end_label, ok, to_string(o.reason),
                o.endpoint_distance, o.max_pixel_deviation);
      if (k < grid_runs) {
        const std::string stem = "rep" + std::to_string(rep) + "_run" + std::to_string(k);
        ctx.add_file(stem + "_corrupted.csv", detail::grid_csv(o.corrupted, side));
        for (std::size_t j = 0; j < o.snaps.size(); ++j) {
          ctx.add_file(stem + "_snapshot" + std::to_string(j + 1) + ".csv", detail::grid_csv(o.snaps[j], side));
        }
        ctx.add_file(stem + "_endpoint.csv", detail::grid_csv(o.endpoint, side));
      }
    }
    const double accuracy = correct / static_cast<double>(runs);
    worst = std::min(worst, accuracy);
    reps.push_back({{"repetition", rep}, {"seed", cfg.seed}, {"accuracy", accuracy}});
  }
  if (!std::isnan(min_accuracy)) ctx.check_at_least("accuracy", worst, min_accuracy);
  ctx.add_csv("runs.csv", table);
  ctx.add_json("reconstruction.json", {{"accuracy", worst},
                                       {"runs", runs},
                                       {"snapshots", snapshots},
                                       {"corruption", corruption},
                                       {"side", side},
                                       {"atoms", prior->size()},
                                       {"prior_source", prior->source()},
                                       {"repetitions", reps}});
  ctx.summary()["accuracy"] = worst;
  if (grid_runs > 0 && runs > 0) {
    ctx.add_file("endpoint.gp", detail::gnuplot_header("Reconstructed image, repetition 0, run 0") +
                                    "set key off\nset yrange [] reverse\n"
                                    "plot 'rep0_run0_endpoint.csv' matrix with image\n");
  }
}

inline void run_specfun_audit_kind(Context& ctx) {
  ctx.spec().run.reject_unused();
  ctx.spec().model.reject_unused();
  ctx.spec().prior.reject_unused();
  const auto rows = audit::run_specfun_audit();
  CsvTable table({"check", "nu", "z", "value", "reference", "scaled_error", "tolerance", "passed"});
  double worst = 0.0;
  std::size_t failures = 0;
  for (const auto& r : rows) {
    table.add(r.check, r.order, r.argument, r.value, r.reference, r.error, r.tolerance, r.passed);
    if (r.tolerance > 0.0) worst = std::max(worst, r.error / r.tolerance);
    failures += !r.passed;
  }
  ctx.check_at_most("audit_failures", static_cast<double>(failures), 0.0);
  ctx.add_csv("specfun_audit.csv", table);
  ctx.add_json("specfun_audit.json", {{"checks", rows.size()}, {"failures", failures}, {"worst_error_over_tol", worst}});
  ctx.summary()["failures"] = failures;
  ctx.add_file("specfun_audit.gp", detail::gnuplot_header("Scaled error per check") +
                                       "set logscale y\nplot 'specfun_audit.csv' using 0:($6+1e-18) with points\n");
}

// ---------------------------------------------------------------------------
// Orchestration

/// Runs the experiment and writes <out_root>/<name>/. Artifacts are staged
/// in a sibling directory and moved into place only on success; on any
/// exception, including a failed check, nothing is left behind.
inline RunResult run(const ExperimentSpec& spec, const RunOptions& options = {}) {
  namespace fs = std::filesystem;
  if (options.jobs < 1) throw SpecError("--jobs must be >= 1");
  const std::uint64_t seed = options.seed.value_or(spec.seed);
  Context ctx(spec, seed, options.jobs);
  switch (spec.kind) {
    case Kind::concentration_table: run_concentration_table(ctx); break;
    case Kind::sampler_vs_oracle: run_sampler_vs_oracle(ctx); break;
    case Kind::drift_profile: run_drift_profile(ctx); break;
    case Kind::robustness_theorem2: run_robustness_theorem2(ctx); break;
    case Kind::image_reconstruction: run_image_reconstruction(ctx); break;
    case Kind::specfun_audit: run_specfun_audit_kind(ctx); break;
  }

  RunResult result;
  result.checks = ctx.checks();

  Json manifest = {{"name", spec.name},
                   {"kind", to_string(spec.kind)},
                   {"spec_hash", "fnv1a64:" + hex64(fnv1a64(spec.text))},
                   {"seed", seed},
                   {"repetitions", spec.repetitions},
                   {"version", kVersion}};
  Json artifacts = Json::array();
  for (const auto& [name, content] : ctx.files()) {
    artifacts.push_back({{"file", name}, {"bytes", content.size()}, {"fnv1a64", hex64(fnv1a64(content))}});
  }
  manifest["artifacts"] = artifacts;
  Json checks = Json::array();
  for (const auto& c : result.checks) {
    checks.push_back(
        {{"name", c.name}, {"value", c.value}, {"relation", c.relation}, {"limit", c.limit}, {"passed", c.passed}});
  }
  manifest["checks"] = checks;
  manifest["summary"] = ctx.summary();

  if (!result.passed()) {
    std::string what = "experiment '" + spec.name + "' failed its checks:";
    for (const auto& c : result.checks) {
      if (!c.passed) {
        what += " " + c.name + " = " + io::format_double(c.value) + " (required " + c.relation + " " +
                io::format_double(c.limit) + ")";
      }
    }
    throw AssertionFailure(what);
  }

  const fs::path root = options.out_root.value_or(spec.outputs);
  const fs::path final_dir = root / spec.name;
  const fs::path staging = root / ("." + spec.name + ".partial");
  std::error_code ec;
  fs::remove_all(staging, ec);
  try {
    fs::create_directories(staging);
    auto write = [&](const std::string& name, const std::string& content) {
      std::ofstream f(staging / name, std::ios::binary);
      f.write(content.data(), static_cast<std::streamsize>(content.size()));
      if (!f) throw FormatError(FormatErrorKind::io_failure, 0, "cannot write " + (staging / name).string());
    };
    for (const auto& [name, content] : ctx.files()) write(name, content);
    write("manifest.json", manifest.dump(2) + "\n");
    fs::remove_all(final_dir);
    fs::rename(staging, final_dir);
  } catch (...) {
    fs::remove_all(staging, ec);
    throw;
  }
  result.directory = final_dir;
  for (const auto& f : ctx.files()) result.artifacts.push_back(f.first);
  result.artifacts.push_back("manifest.json");
  return result;
}

}  // namespace polar_denoise::experiment
