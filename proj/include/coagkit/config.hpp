#pragma once

// Experiment configuration: JSON text -> schema check -> typed config.
// Every failure is a ConfigError whose message names the field (as a JSON
// pointer) and, where it can be located, the line in the source text.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "coalescent.hpp"
#include "deterministic.hpp"
#include "errors.hpp"
#include "io.hpp"
#include "kernels.hpp"
#include "measures.hpp"
#include "numeric.hpp"
#include "rng.hpp"
#include "schema.hpp"
#include "truncation.hpp"
#include <coagkit/schema_text.hpp>

namespace coagkit {

inline constexpr int kConfigSchemaVersion = 1;
inline constexpr const char* kToolVersion = "1.0.0";

namespace detail {

/// Line (1-based) where the value at JSON pointer `pointer` starts in
/// well-formed JSON `text`; 0 when it cannot be found.
class LineLocator {
 public:
  LineLocator(std::string_view text, std::string_view pointer) : s_(text) {
    std::size_t p = 1;
    while (p <= pointer.size() && !pointer.empty()) {
      const std::size_t q = pointer.find('/', p);
      std::string tok(pointer.substr(p, q == std::string_view::npos ? std::string_view::npos : q - p));
      std::string un;
      for (std::size_t i = 0; i < tok.size(); ++i) {
        if (tok[i] == '~' && i + 1 < tok.size()) {
          un += tok[i + 1] == '1' ? '/' : '~';
          ++i;
        } else {
          un += tok[i];
        }
      }
      target_.push_back(un);
      if (q == std::string_view::npos) break;
      p = q + 1;
    }
  }

  std::size_t find() {
    try {
      value(0);
    } catch (...) {
      return 0;
    }
    return found_;
  }

 private:
  void ws() {
    while (i_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[i_]))) {
      if (s_[i_] == '\n') ++line_;
      ++i_;
    }
  }
  std::string string() {
    std::string out;
    ++i_;
    while (i_ < s_.size() && s_[i_] != '"') {
      if (s_[i_] == '\\') ++i_;
      if (i_ < s_.size()) out += s_[i_++];
    }
    ++i_;
    return out;
  }
  // Walks one value; `depth` is how many pointer tokens matched so far.
  void value(std::size_t depth) {
    ws();
    if (found_ == 0 && depth == target_.size() && matched_) found_ = line_;
    if (i_ >= s_.size()) throw 0;
    const char c = s_[i_];
    if (c == '{') {
      ++i_;
      ws();
      if (s_[i_] == '}') {
        ++i_;
        return;
      }
      for (;;) {
        ws();
        const std::string key = string();
        ws();
        ++i_;  // ':'
        const bool on_path = matched_ && depth < target_.size() && key == target_[depth];
        const bool saved = matched_;
        matched_ = on_path;
        value(on_path ? depth + 1 : depth);
        matched_ = saved;
        ws();
        if (s_[i_++] == '}') return;
      }
    } else if (c == '[') {
      ++i_;
      ws();
      if (s_[i_] == ']') {
        ++i_;
        return;
      }
      for (std::size_t idx = 0;; ++idx) {
        const bool on_path = matched_ && depth < target_.size() && std::to_string(idx) == target_[depth];
        const bool saved = matched_;
        matched_ = on_path;
        value(on_path ? depth + 1 : depth);
        matched_ = saved;
        ws();
        if (s_[i_++] == ']') return;
      }
    } else if (c == '"') {
      string();
    } else {
      while (i_ < s_.size() && s_[i_] != ',' && s_[i_] != '}' && s_[i_] != ']' &&
             !std::isspace(static_cast<unsigned char>(s_[i_])))
        ++i_;
    }
  }

  std::string_view s_;
  std::vector<std::string> target_;
  std::size_t i_ = 0;
  std::size_t line_ = 1;
  std::size_t found_ = 0;
  bool matched_ = true;
};

inline std::string where(std::string_view text, const std::string& pointer) {
  const std::string field = pointer.empty() ? "/" : pointer;
  if (text.empty()) return field;
  const std::size_t line = LineLocator(text, pointer).find();
  return line > 0 ? "line " + std::to_string(line) + ", " + field : field;
}

} // namespace detail

inline const SchemaValidator& config_schema() {
  static const SchemaValidator v(nlohmann::json::parse(schema_text::config));
  return v;
}

inline const SchemaValidator& summary_schema() {
  static const SchemaValidator v(nlohmann::json::parse(schema_text::summary));
  return v;
}

struct InitialSpec {
  enum class Type { Atoms, Monodisperse, Sample };
  Type type = Type::Atoms;
  std::vector<Atom> atoms;
  double mass = 1.0;
  double weight = 1.0;
  std::size_t n = 1;  // particle-number scale for stochastic runs
  double epsilon_mass = 0.0;

  /// mu0 for the deterministic equation.
  DiscreteMeasure measure() const {
    if (type == Type::Monodisperse) return DiscreteMeasure::make({{mass, weight}}, epsilon_mass);
    return DiscreteMeasure::make(atoms, epsilon_mass);
  }

  /// X^n_0 for particle-number scale n: round(n w) copies of each atom, or
  /// round(n |mu0|) i.i.d. draws from mu0 / |mu0| for Type::Sample, so that
  /// n^-1 X^n_0 approximates mu0 in every case.
  ParticleSystem particles(std::size_t scale, std::uint64_t seed, std::uint64_t stream) const {
    const auto mu = measure();
    const double n = static_cast<double>(scale);
    ParticleSystem p;
    if (type != Type::Sample) {
      for (const auto& a : mu.atoms())
        p.masses.insert(p.masses.end(), static_cast<std::size_t>(std::llround(n * a.weight)), a.mass);
      return p;
    }
    const double total = mu.norm();
    if (!(total > 0)) throw InvalidArgument("cannot sample from a zero measure");
    std::vector<double> cdf;
    CompensatedSum acc;
    for (const auto& a : mu.atoms()) {
      acc += a.weight;
      cdf.push_back(acc.value() / total);
    }
    CounterRng rng(seed, stream);
    const auto count = static_cast<std::size_t>(std::llround(n * total));
    for (std::size_t i = 0; i < count; ++i) {
      const double u = rng.uniform();
      auto it = std::lower_bound(cdf.begin(), cdf.end(), u);
      if (it == cdf.end()) --it;
      p.masses.push_back(mu.atoms()[static_cast<std::size_t>(it - cdf.begin())].mass);
    }
    return p;
  }
};

struct NonuniqSpec {
  int n_max = 20;
  std::optional<double> x_alpha;
  double tol = 1e-11;
};

struct StudySpec {
  std::vector<std::size_t> n_list;
  double delta = 0.1;
  std::optional<double> d0_x_max;
  int d0_levels = 8;
  double reference_lambda_tol = 1e-6;
};

struct OutputSpec {
  bool events = false;
  bool trajectory = true;
  bool plot = false;
};

struct ExperimentConfig {
  std::string kind;
  nlohmann::json raw;
  std::string hash;  // FNV-1a of the canonical dump of `raw`
  std::optional<Kernel> kernel;
  std::optional<InitialSpec> initial;
  std::vector<Truncation> truncations;
  double t_end = 1.0;
  std::vector<double> grid;  // starts at 0, ends at t_end
  std::size_t replicas = 1;
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> threads;
  SolveOptions solver;
  double lambda_tol = 1e-4;
  NonuniqSpec nonuniq;
  StudySpec study;
  OutputSpec output;
};

namespace detail {

inline void require(const nlohmann::json& j, const char* key, const std::string& kind) {
  if (!j.contains(key)) throw ConfigError("/" + std::string(key) + ": required for kind '" + kind + "'");
}

inline ExperimentConfig build_config(const nlohmann::json& j) {
  ExperimentConfig c;
  c.raw = j;
  c.hash = io::hex64(io::fnv1a(j.dump()));
  c.kind = j.at("kind").get<std::string>();
  const std::string& kind = c.kind;

  // Converts library argument errors into config errors at a field.
  auto at_field = [](const std::string& field, auto&& fn) {
    try {
      return fn();
    } catch (const InvalidArgument& e) {
      std::string msg = field;
      if (e.index()) msg += "/" + std::to_string(*e.index());
      throw ConfigError(msg + ": " + e.what());
    }
  };

  if (kind != "nonuniq") {
    require(j, "kernel", kind);
    require(j, "initial", kind);
  }
  require(j, "time", kind);
  if (kind == "solve" && !j.contains("truncation") && !j.contains("truncations"))
    throw ConfigError("/truncation: kind 'solve' needs 'truncation' or 'truncations'");
  if (kind == "couple" || kind == "concentrate") require(j, "truncation", kind);
  if (kind == "family") require(j, "truncations", kind);
  if (kind == "converge" || kind == "concentrate") {
    require(j, "study", kind);
    if (!j.at("study").contains("n_list")) throw ConfigError("/study/n_list: required for kind '" + kind + "'");
  }
  if (j.contains("truncation") && j.contains("truncations"))
    throw ConfigError("/truncations: give either 'truncation' or 'truncations', not both");

  if (j.contains("kernel")) {
    c.kernel = at_field("/kernel", [&] { return Kernel::from_json(j.at("kernel")); });
    if (j.contains("phi")) {
      const auto phi = at_field("/phi", [&] { return SublinearFn::from_json(j.at("phi")); });
      const double margin = j.value("phi_margin", 1.0);
      c.kernel = at_field("/phi", [&] { return c.kernel->with_phi(phi, margin); });
      const auto rep = at_field("/phi", [&] { return verify_domination(*c.kernel, 40000); });
      if (!rep.passed)
        throw ConfigError("/phi: K <= margin phi phi fails: ratio " + io::format_double(rep.max_ratio) + " at (" +
                          io::format_double(rep.worst_pair.first) + ", " + io::format_double(rep.worst_pair.second) +
                          ")");
    } else if (j.contains("phi_margin")) {
      throw ConfigError("/phi_margin: only meaningful together with /phi");
    }
  }

  if (j.contains("initial")) {
    const auto& ji = j.at("initial");
    InitialSpec s;
    const std::string type = ji.at("type").get<std::string>();
    s.type = type == "atoms" ? InitialSpec::Type::Atoms
             : type == "monodisperse" ? InitialSpec::Type::Monodisperse
                                      : InitialSpec::Type::Sample;
    if (s.type == InitialSpec::Type::Monodisperse) {
      if (ji.contains("atoms")) throw ConfigError("/initial/atoms: not used by type 'monodisperse'");
      s.mass = ji.value("mass", 1.0);
      s.weight = ji.value("weight", 1.0);
    } else {
      if (!ji.contains("atoms")) throw ConfigError("/initial/atoms: required for type '" + type + "'");
      if (ji.contains("mass") || ji.contains("weight"))
        throw ConfigError("/initial: 'mass' and 'weight' belong to type 'monodisperse'");
      for (const auto& a : ji.at("atoms")) s.atoms.push_back({a.at(0).get<double>(), a.at(1).get<double>()});
    }
    s.n = ji.value("n", std::size_t{1});
    s.epsilon_mass = ji.value("epsilon_mass", 0.0);
    at_field("/initial/atoms", [&] { return s.measure(); });
    c.initial = std::move(s);
  }

  if (j.contains("truncation"))
    c.truncations.push_back(at_field("/truncation", [&] { return Truncation::from_json(j.at("truncation")); }));
  if (j.contains("truncations")) {
    const auto& arr = j.at("truncations");
    for (std::size_t i = 0; i < arr.size(); ++i)
      c.truncations.push_back(
          at_field("/truncations/" + std::to_string(i), [&] { return Truncation::from_json(arr.at(i)); }));
    for (std::size_t i = 1; i < c.truncations.size(); ++i)
      if (!c.truncations[i - 1].subset_of(c.truncations[i]))
        throw ConfigError("/truncations/" + std::to_string(i) + ": truncations must be nested and ascending");
  }
  for (std::size_t i = 0; i < c.truncations.size(); ++i) {
    const auto& jt = j.contains("truncation") ? j.at("truncation") : j.at("truncations").at(i);
    const std::string type = jt.at("type").get<std::string>();
    const std::string field = j.contains("truncation") ? "/truncation" : "/truncations/" + std::to_string(i);
    if (type == "interval" && !jt.contains("x_max")) throw ConfigError(field + ": type 'interval' needs x_max");
    if (type == "integers" && !jt.contains("n")) throw ConfigError(field + ": type 'integers' needs n");
    if (type == "set" && !jt.contains("masses")) throw ConfigError(field + ": type 'set' needs masses");
  }

  const auto& jt = j.at("time");
  c.t_end = jt.at("t_end").get<double>();
  if (jt.contains("grid") && jt.contains("samples"))
    throw ConfigError("/time: give either 'grid' or 'samples', not both");
  if (jt.contains("grid")) {
    c.grid = jt.at("grid").get<std::vector<double>>();
    if (c.grid.front() != 0.0) c.grid.insert(c.grid.begin(), 0.0);
    if (c.grid.back() < c.t_end) c.grid.push_back(c.t_end);
    for (std::size_t i = 1; i < c.grid.size(); ++i)
      if (!(c.grid[i] > c.grid[i - 1])) throw ConfigError("/time/grid: must be strictly increasing");
    if (c.grid.back() > c.t_end) throw ConfigError("/time/grid: times beyond t_end");
  } else {
    c.grid = linspace(0.0, c.t_end, jt.value("samples", std::size_t{20}));
  }

  c.replicas = j.value("replicas", std::size_t{1});
  if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("threads")) c.threads = j.at("threads").get<unsigned>();

  if (j.contains("solver")) {
    const auto& js = j.at("solver");
    c.solver.method = js.value("method", std::string("rk")) == "picard" ? SolveOptions::Method::Picard
                                                                          : SolveOptions::Method::Rk;
    c.solver.atol = js.value("atol", c.solver.atol);
    c.solver.rtol = js.value("rtol", c.solver.rtol);
    c.solver.max_atoms = js.value("max_atoms", c.solver.max_atoms);
    c.lambda_tol = js.value("lambda_tol", c.lambda_tol);
  }
  c.solver.sample_times = c.grid;

  if (j.contains("nonuniq")) {
    const auto& jn = j.at("nonuniq");
    c.nonuniq.n_max = jn.value("n_max", c.nonuniq.n_max);
    if (c.nonuniq.n_max % 2 != 0) throw ConfigError("/nonuniq/n_max: must be even");
    if (jn.contains("x_alpha")) {
      c.nonuniq.x_alpha = jn.at("x_alpha").get<double>();
      if (!(*c.nonuniq.x_alpha < 2))
        throw ConfigError("/nonuniq/x_alpha: x_n = alpha^n needs alpha < 2 for finite initial mass");
    }
    c.nonuniq.tol = jn.value("tol", c.nonuniq.tol);
  }

  if (j.contains("study")) {
    const auto& js = j.at("study");
    if (js.contains("n_list")) {
      c.study.n_list = js.at("n_list").get<std::vector<std::size_t>>();
      for (std::size_t i = 1; i < c.study.n_list.size(); ++i)
        if (!(c.study.n_list[i] > c.study.n_list[i - 1]))
          throw ConfigError("/study/n_list/" + std::to_string(i) + ": n_list must be strictly increasing");
    }
    c.study.delta = js.value("delta", c.study.delta);
    if (js.contains("d0_x_max")) c.study.d0_x_max = js.at("d0_x_max").get<double>();
    c.study.d0_levels = js.value("d0_levels", c.study.d0_levels);
    c.study.reference_lambda_tol = js.value("reference_lambda_tol", c.study.reference_lambda_tol);
  }
  if (kind == "concentrate") {
    if (c.truncations.size() != 1) throw ConfigError("/truncation: kind 'concentrate' needs exactly one truncation");
    const auto& b = c.truncations.front();
    bool integral = b.kind() == Truncation::Kind::Set;
    for (double m : b.masses()) integral = integral && m == std::round(m);
    if (!integral) throw ConfigError("/truncation: kind 'concentrate' needs a finite set of integer masses");
    const auto mu0 = c.initial->measure();
    for (const auto& a : mu0.atoms())
      if (a.mass != std::round(a.mass)) throw ConfigError("/initial: kind 'concentrate' needs integer masses");
  }

  if (j.contains("output")) {
    const auto& jo = j.at("output");
    c.output.events = jo.value("events", c.output.events);
    c.output.trajectory = jo.value("trajectory", c.output.trajectory);
    c.output.plot = jo.value("plot", c.output.plot);
  }
  return c;
}

} // namespace detail

/// Parses, schema-checks and builds a config. Throws ConfigError.
inline ExperimentConfig parse_config(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    std::size_t line = 1, col = 1;
    for (std::size_t i = 0; i + 1 < e.byte && i < text.size(); ++i) {
      if (text[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    throw ConfigError("line " + std::to_string(line) + ", column " + std::to_string(col) + ": malformed JSON (" +
                      e.what() + ")");
  }
  const auto issues = config_schema().validate(j);
  if (!issues.empty()) {
    std::string msg;
    for (const auto& i : issues) msg += detail::where(text, i.path) + ": " + i.message + "\n";
    msg.pop_back();
    throw ConfigError(msg);
  }
  try {
    return detail::build_config(j);
  } catch (const ConfigError& e) {
    // Messages from build_config start with the field pointer.
    const std::string what = e.what();
    const auto colon = what.find(": ");
    if (!what.empty() && what[0] == '/' && colon != std::string::npos) {
      const std::string field = what.substr(0, colon);
      // Fall back to the deepest prefix that can be located in the text.
      std::string probe = field;
      for (;;) {
        const std::size_t line = detail::LineLocator(text, probe).find();
        if (line > 0 || probe.empty()) {
          if (line > 0) throw ConfigError("line " + std::to_string(line) + ", " + what);
          break;
        }
        probe = probe.substr(0, probe.rfind('/'));
      }
    }
    throw;
  }
}

inline ExperimentConfig load_config(const std::string& path) {
  std::string text;
  try {
    text = io::read_file(path);
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  return parse_config(text);
}

} // namespace coagkit
