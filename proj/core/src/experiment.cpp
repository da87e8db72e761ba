#include "dstiefel/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include "dstiefel/errors.hpp"
#include "dstiefel/metrics.hpp"

namespace dstiefel {
namespace fs = std::filesystem;

const std::vector<std::string>& trace_columns() {
  static const std::vector<std::string> columns{
      "t",        "metric_total",    "grad_norm",       "primal_consensus", "dual_gap", "x_consensus_l2",
      "y_consensus_l2", "tracker_drift_u", "tracker_drift_v", "phi_hat",       "comms",    "wall_ms"};
  return columns;
}

// --- config parsing ----------------------------------------------------------

json parse_config_text(const std::string& text) {
  try {
    return json::parse(text, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::parse_error& e) {
    std::size_t line = 1, col = 1;
    const std::size_t stop = std::min<std::size_t>(e.byte == 0 ? 0 : e.byte - 1, text.size());
    for (std::size_t i = 0; i < stop; ++i) {
      if (text[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    throw ConfigError("config parse error at line " + std::to_string(line) + ", column " +
                      std::to_string(col) + ": " + e.what());
  }
}

json load_config_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

namespace {

std::vector<std::string> split_dotted(const std::string& key) {
  std::vector<std::string> parts;
  std::stringstream ss(key);
  std::string part;
  while (std::getline(ss, part, '.')) {
    if (part.empty()) throw ConfigError("malformed dotted key '" + key + "'");
    parts.push_back(part);
  }
  if (parts.empty()) throw ConfigError("empty dotted key");
  return parts;
}

json* find_dotted(json& root, const std::string& key) {
  json* cur = &root;
  for (const auto& part : split_dotted(key)) {
    if (!cur->is_object() || !cur->contains(part)) return nullptr;
    cur = &(*cur)[part];
  }
  return cur;
}

}  // namespace

void apply_override(json& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override '" + assignment + "' is not of the form key=value");
  }
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::parse_error&) {
    value = raw;
  }
  json* cur = &config;
  const auto parts = split_dotted(key);
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    if (!cur->is_object()) throw ConfigError("override '" + key + "': '" + parts[i] + "' is not an object");
    cur = &(*cur)[parts[i]];
    if (cur->is_null()) *cur = json::object();
  }
  if (!cur->is_object()) throw ConfigError("override '" + key + "': parent is not an object");
  (*cur)[parts.back()] = std::move(value);
}

namespace {

enum class FieldType { kNumber, kInteger, kBool, kString, kObject, kIntOrAuto, kIntOrK };

struct Field {
  std::string name;
  FieldType type;
  json fallback;  // null = required
};

std::string describe_type(FieldType t) {
  switch (t) {
    case FieldType::kNumber: return "a number";
    case FieldType::kInteger: return "an integer";
    case FieldType::kBool: return "a boolean";
    case FieldType::kString: return "a string";
    case FieldType::kObject: return "an object";
    case FieldType::kIntOrAuto: return "an integer or \"auto\"";
    case FieldType::kIntOrK: return "1 or \"k\"";
  }
  return "?";
}

bool matches(const json& v, FieldType t) {
  switch (t) {
    case FieldType::kNumber: return v.is_number();
    case FieldType::kInteger: return v.is_number_integer();
    case FieldType::kBool: return v.is_boolean();
    case FieldType::kString: return v.is_string();
    case FieldType::kObject: return v.is_object();
    case FieldType::kIntOrAuto: return v.is_number_integer() || (v.is_string() && v == "auto");
    case FieldType::kIntOrK: return (v.is_number_integer() && v == 1) || (v.is_string() && v == "k");
  }
  return false;
}

json check_section(const json& in, const std::string& path, const std::vector<Field>& fields) {
  if (!in.is_object()) throw ConfigError("field '" + path + "' must be an object");
  json out = json::object();
  for (auto it = in.begin(); it != in.end(); ++it) {
    const bool known = std::any_of(fields.begin(), fields.end(), [&](const Field& f) { return f.name == it.key(); });
    if (!known) throw ConfigError("unknown field '" + path + "." + it.key() + "'");
  }
  for (const auto& f : fields) {
    const std::string where = path + "." + f.name;
    if (!in.contains(f.name)) {
      if (f.fallback.is_null()) throw ConfigError("missing required field '" + where + "'");
      out[f.name] = f.fallback;
      continue;
    }
    const json& v = in.at(f.name);
    if (!matches(v, f.type)) throw ConfigError("field '" + where + "' must be " + describe_type(f.type));
    out[f.name] = v;
  }
  return out;
}

const json kRequired = nullptr;

std::vector<Field> problem_param_fields(const std::string& kind) {
  if (kind == "synthetic_bilinear") {
    return {{"d", FieldType::kInteger, 10},
            {"r", FieldType::kInteger, 2},
            {"mu", FieldType::kNumber, 1.0},
            {"heterogeneity", FieldType::kNumber, 0.5},
            {"samples_per_node", FieldType::kInteger, 1},
            {"sample_noise", FieldType::kNumber, 0.5}};
  }
  std::vector<Field> common{{"samples", FieldType::kInteger, 240},
                            {"d", FieldType::kInteger, 10},
                            {"separation", FieldType::kNumber, 3.0},
                            {"noise", FieldType::kNumber, 1.0},
                            {"logit_scale", FieldType::kNumber, 1.0}};
  if (kind == "dro_weighting") {
    common.push_back({"classes", FieldType::kInteger, 3});
    common.push_back({"loss", FieldType::kString, "softmax-cross-entropy"});
    return common;
  }
  if (kind == "fair_classification") {
    common.push_back({"rho", FieldType::kNumber, 0.1});
    return common;
  }
  throw ConfigError("field 'problem.kind': unknown problem kind '" + kind +
                    "' (expected synthetic_bilinear, dro_weighting or fair_classification)");
}

std::vector<Field> topology_param_fields(const std::string& kind) {
  if (kind == "ring" || kind == "complete") return {};
  if (kind == "torus") return {{"rows", FieldType::kInteger, kRequired}, {"cols", FieldType::kInteger, kRequired}};
  if (kind == "erdos_renyi") {
    return {{"p", FieldType::kNumber, kRequired},
            {"seed", FieldType::kInteger, kRequired},
            {"max_attempts", FieldType::kInteger, 1000}};
  }
  throw ConfigError("field 'topology.kind': unknown topology '" + kind +
                    "' (expected ring, complete, torus or erdos_renyi)");
}

}  // namespace

json resolve_config(const json& config) {
  if (!config.is_object()) throw ConfigError("config root must be an object");
  for (auto it = config.begin(); it != config.end(); ++it) {
    static const std::vector<std::string> kTop{"schema_version", "problem", "topology", "solver",
                                               "sweep",          "output",  "probes",   "workers"};
    if (std::find(kTop.begin(), kTop.end(), it.key()) == kTop.end()) {
      throw ConfigError("unknown field '" + it.key() + "'");
    }
  }
  json out = json::object();
  const json version = config.value("schema_version", json(kConfigSchemaVersion));
  if (!version.is_number_integer() || version.get<int>() != kConfigSchemaVersion) {
    throw ConfigError("field 'schema_version' must be " + std::to_string(kConfigSchemaVersion));
  }
  out["schema_version"] = kConfigSchemaVersion;

  if (!config.contains("problem")) throw ConfigError("missing required field 'problem'");
  const json& problem = config.at("problem");
  check_section(problem, "problem",
                {{"kind", FieldType::kString, kRequired},
                 {"seed", FieldType::kInteger, kRequired},
                 {"params", FieldType::kObject, json::object()}});
  {
    json resolved = json::object();
    const std::string kind = problem.at("kind");
    resolved["kind"] = kind;
    resolved["seed"] = problem.at("seed");
    resolved["params"] =
        check_section(problem.value("params", json::object()), "problem.params", problem_param_fields(kind));
    out["problem"] = resolved;
  }

  if (!config.contains("topology")) throw ConfigError("missing required field 'topology'");
  const json& topo = config.at("topology");
  {
    if (!topo.is_object()) throw ConfigError("field 'topology' must be an object");
    for (auto it = topo.begin(); it != topo.end(); ++it) {
      if (it.key() != "kind" && it.key() != "n" && it.key() != "params") {
        throw ConfigError("unknown field 'topology." + it.key() + "'");
      }
    }
    if (!topo.contains("kind") || !topo.at("kind").is_string()) {
      throw ConfigError("field 'topology.kind' must be a string");
    }
    const std::string kind = topo.at("kind");
    json resolved = json::object();
    resolved["kind"] = kind;
    resolved["params"] =
        check_section(topo.value("params", json::object()), "topology.params", topology_param_fields(kind));
    if (kind == "torus") {
      const int n = resolved["params"]["rows"].get<int>() * resolved["params"]["cols"].get<int>();
      if (topo.contains("n") && topo.at("n") != n) {
        throw ConfigError("field 'topology.n' must equal rows * cols for a torus");
      }
      resolved["n"] = n;
    } else {
      if (!topo.contains("n") || !topo.at("n").is_number_integer()) {
        throw ConfigError("field 'topology.n' must be an integer");
      }
      resolved["n"] = topo.at("n");
    }
    if (resolved["n"].get<int>() < 1) throw ConfigError("field 'topology.n' must be >= 1");
    out["topology"] = resolved;
  }

  if (!config.contains("solver")) throw ConfigError("missing required field 'solver'");
  out["solver"] = check_section(config.at("solver"), "solver",
                                {{"mode", FieldType::kString, kRequired},
                                 {"alpha", FieldType::kNumber, 0.5},
                                 {"beta", FieldType::kNumber, 0.01},
                                 {"eta", FieldType::kNumber, 0.1},
                                 {"k", FieldType::kIntOrAuto, "auto"},
                                 {"T", FieldType::kInteger, 100},
                                 {"batch_size", FieldType::kInteger, 1},
                                 {"project_dual", FieldType::kBool, true},
                                 {"v_mixing_power", FieldType::kIntOrK, "k"},
                                 {"seed", FieldType::kInteger, kRequired},
                                 {"init_perturbation", FieldType::kNumber, 0.0},
                                 {"divergence_threshold", FieldType::kNumber, 1e6}});
  parse_mode(out["solver"]["mode"].get<std::string>());

  out["output"] = check_section(config.value("output", json::object()), "output",
                                {{"dir", FieldType::kString, "traces"},
                                 {"format", FieldType::kString, "csv"},
                                 {"prefix", FieldType::kString, "trace"},
                                 {"timing", FieldType::kBool, false},
                                 {"node_gradient_column", FieldType::kBool, false}});
  const std::string format = out["output"]["format"];
  if (format != "csv" && format != "jsonl") {
    throw ConfigError("field 'output.format' must be \"csv\" or \"jsonl\"");
  }

  out["probes"] = check_section(config.value("probes", json::object()), "probes",
                                {{"seed", FieldType::kInteger, out["problem"]["seed"]},
                                 {"lipschitz_pairs", FieldType::kInteger, 10000},
                                 {"gradient_probes", FieldType::kInteger, 200},
                                 {"retraction_trials", FieldType::kInteger, 200}});

  const json workers = config.value("workers", json(1));
  if (!workers.is_number_integer() || workers.get<int>() < 1) {
    throw ConfigError("field 'workers' must be a positive integer");
  }
  out["workers"] = workers;

  json sweep = json::object();
  if (config.contains("sweep")) {
    const json& s = config.at("sweep");
    if (!s.is_object()) throw ConfigError("field 'sweep' must be an object of dotted key -> list");
    for (auto it = s.begin(); it != s.end(); ++it) {
      const std::string where = "sweep." + it.key();
      if (!it.value().is_array() || it.value().empty()) {
        throw ConfigError("field '" + where + "' must be a non-empty list");
      }
      if (it.key().rfind("sweep", 0) == 0 || find_dotted(out, it.key()) == nullptr) {
        throw ConfigError("field '" + where + "': '" + it.key() + "' is not a sweepable config key");
      }
      sweep[it.key()] = it.value();
    }
  }
  out["sweep"] = sweep;
  return out;
}

std::vector<SweepPoint> expand_sweep(const json& resolved) {
  std::vector<std::pair<std::string, json>> axes;
  for (auto it = resolved.at("sweep").begin(); it != resolved.at("sweep").end(); ++it) {
    axes.emplace_back(it.key(), it.value());
  }
  std::vector<SweepPoint> points{SweepPoint{resolved, {}}};
  for (const auto& [key, values] : axes) {
    std::vector<SweepPoint> next;
    for (const auto& base : points) {
      for (const auto& v : values) {
        SweepPoint p = base;
        *find_dotted(p.config, key) = v;
        p.values.emplace_back(key, v);
        next.push_back(std::move(p));
      }
    }
    points = std::move(next);
  }
  // Substituted values must still type-check.
  for (auto& p : points) {
    json sweep = p.config["sweep"];
    json check = p.config;
    check.erase("sweep");
    p.config = resolve_config(check);
    p.config["sweep"] = sweep;
  }
  return points;
}

std::unique_ptr<MinimaxProblem> build_problem(const json& spec, int nodes) {
  const std::string kind = spec.at("kind");
  const json& params = spec.at("params");
  const auto seed = spec.at("seed").get<std::uint64_t>();
  if (kind == "synthetic_bilinear") {
    SyntheticBilinearParams p;
    p.nodes = nodes;
    p.d = params.at("d").get<int>();
    p.r = params.at("r").get<int>();
    p.mu = params.at("mu").get<double>();
    p.heterogeneity = params.at("heterogeneity").get<double>();
    const int spn = params.at("samples_per_node").get<int>();
    if (spn < 1) throw ConfigError("field 'problem.params.samples_per_node' must be >= 1");
    p.samples_per_node = static_cast<std::size_t>(spn);
    p.sample_noise = params.at("sample_noise").get<double>();
    p.seed = seed;
    return synthetic_bilinear(p);
  }
  const int samples = params.at("samples").get<int>();
  if (samples < 1) throw ConfigError("field 'problem.params.samples' must be >= 1");
  if (kind == "dro_weighting") {
    Dataset data = make_gaussian_blobs(seed, static_cast<std::size_t>(samples), params.at("d").get<int>(),
                                       params.at("classes").get<int>(), params.at("separation").get<double>(),
                                       params.at("noise").get<double>());
    return dro_weighting(std::move(data), nodes, parse_loss_kind(params.at("loss")),
                         params.at("logit_scale").get<double>());
  }
  if (kind == "fair_classification") {
    Dataset data = make_gaussian_blobs(seed, static_cast<std::size_t>(samples), params.at("d").get<int>(), 3,
                                       params.at("separation").get<double>(), params.at("noise").get<double>());
    return fair_classification(std::move(data), nodes, params.at("rho").get<double>(),
                               params.at("logit_scale").get<double>());
  }
  throw ConfigError("unknown problem kind '" + kind + "'");
}

Topology build_topology(const json& spec) {
  const std::string kind = spec.at("kind");
  const int n = spec.at("n").get<int>();
  const json& params = spec.at("params");
  if (kind == "ring") return Topology::ring(n);
  if (kind == "complete") return Topology::complete(n);
  if (kind == "torus") return Topology::torus(params.at("rows").get<int>(), params.at("cols").get<int>());
  if (kind == "erdos_renyi") {
    return Topology::erdos_renyi(n, params.at("p").get<double>(), params.at("seed").get<std::uint64_t>(),
                                 params.at("max_attempts").get<int>());
  }
  throw ConfigError("unknown topology kind '" + kind + "'");
}

SolverConfig build_solver_config(const json& s, int auto_k) {
  SolverConfig cfg;
  cfg.alpha = s.at("alpha").get<double>();
  cfg.beta = s.at("beta").get<double>();
  cfg.eta = s.at("eta").get<double>();
  cfg.k = s.at("k").is_string() ? auto_k : s.at("k").get<int>();
  cfg.iterations = s.at("T").get<int>();
  const int q = s.at("batch_size").get<int>();
  cfg.batch_size = q < 1 ? 0 : static_cast<std::size_t>(q);
  cfg.project_dual = s.at("project_dual").get<bool>();
  cfg.v_mixing = s.at("v_mixing_power").is_string() ? VMixing::kSameAsK : VMixing::kSingleRound;
  cfg.seed = s.at("seed").get<std::uint64_t>();
  cfg.init_perturbation = s.at("init_perturbation").get<double>();
  cfg.divergence_threshold = s.at("divergence_threshold").get<double>();
  return cfg;
}

json RunConstants::to_json() const {
  return {{"L_hat", lipschitz},
          {"L11", lipschitz_detail.l11},
          {"L12", lipschitz_detail.l12},
          {"L21", lipschitz_detail.l21},
          {"L22", lipschitz_detail.l22},
          {"lipschitz_pairs", lipschitz_detail.pairs},
          {"D_hat", gradient_bound},
          {"M_hat", retraction_constant},
          {"lambda2", lambda2},
          {"lambda_n", lambda_n},
          {"required_k", required_k},
          {"k", k}};
}

RunConstants compute_constants(const MinimaxProblem& problem, const MixingMatrix& w, const json& resolved) {
  const json& probes = resolved.at("probes");
  const auto seed = probes.at("seed").get<std::uint64_t>();
  RunConstants c;
  c.lipschitz_detail = probe_lipschitz(problem, seed, probes.at("lipschitz_pairs").get<int>());
  c.lipschitz = c.lipschitz_detail.l;
  c.gradient_bound = probe_gradient_bound(problem, seed + 1, probes.at("gradient_probes").get<int>());
  c.retraction_constant = estimate_retraction_constant(problem.primal_rows(), problem.primal_cols(), seed + 2,
                                                       probes.at("retraction_trials").get<int>());
  c.lambda2 = w.lambda2();
  c.lambda_n = w.lambda_n();
  c.required_k = required_k(std::max(0.0, w.lambda2()), w.size());
  c.k = w.k();
  return c;
}

std::string to_string(const Issue& issue) {
  return std::string(issue.severity == Issue::Severity::kError ? "error" : "warning") + ": " + issue.field +
         ": " + issue.message;
}

std::vector<Issue> theory_warnings(const SolverConfig& cfg, Mode mode, const RunConstants& c, Eigen::Index r,
                                   int n) {
  std::vector<Issue> out;
  auto warn = [&](std::string field, std::string msg) {
    out.push_back({Issue::Severity::kWarning, std::move(field), std::move(msg)});
  };
  std::ostringstream os;
  const bool decentralized = mode != Mode::kCentralized;
  if (decentralized && cfg.k < c.required_k) {
    os << "k = " << cfg.k << " is below required_k = " << c.required_k << " (condition k >= ceil(log_lambda2(1/(2 sqrt(n)))) with lambda2 = "
       << c.lambda2 << ", n = " << n << ")";
    warn("solver.k", os.str());
    os.str("");
  }
  if (decentralized && c.retraction_constant > 0.0 && cfg.alpha > 1.0 / c.retraction_constant) {
    os << "alpha = " << cfg.alpha << " exceeds 1/M_hat = " << 1.0 / c.retraction_constant
       << " (condition alpha <= 1/M)";
    warn("solver.alpha", os.str());
    os.str("");
  }
  if (mode != Mode::kDrcsConsensusOnly && c.lipschitz > 0.0 && cfg.eta > 1.0 / c.lipschitz) {
    os << "eta = " << cfg.eta << " exceeds 1/L_hat = " << 1.0 / c.lipschitz << " (condition eta <= 1/L)";
    warn("solver.eta", os.str());
    os.str("");
  }
  if ((mode == Mode::kDrgda || mode == Mode::kDrsgda) && c.gradient_bound > 0.0) {
    const double delta2 = 1.0 / 6.0;
    const double delta1 = delta2 / (5.0 * std::sqrt(static_cast<double>(r)));
    const double cap = cfg.alpha * delta1 / (10.0 * c.gradient_bound);
    if (cfg.beta > cap) {
      os << "beta = " << cfg.beta << " exceeds alpha*delta1/(10 D_hat) = " << cap << " (delta1 = " << delta1
         << ", D_hat = " << c.gradient_bound << ")";
      warn("solver.beta", os.str());
    }
  }
  return out;
}

namespace {

struct PreparedPoint {
  SweepPoint point;
  std::shared_ptr<const MinimaxProblem> problem;
  std::shared_ptr<const MixingMatrix> mixing;
  std::shared_ptr<const RunConstants> constants;
  Mode mode = Mode::kDrgda;
  SolverConfig cfg;
  std::vector<Issue> issues;
};

void structural_checks(PreparedPoint& pp) {
  const json& s = pp.point.config.at("solver");
  auto error = [&](std::string field, std::string msg) {
    pp.issues.push_back({Issue::Severity::kError, std::move(field), std::move(msg)});
  };
  const SolverConfig& cfg = pp.cfg;
  if (!(cfg.alpha > 0.0 && cfg.alpha <= 1.0)) {
    error("solver.alpha", "alpha = " + s.at("alpha").dump() + " must lie in (0, 1] (consensus step requires alpha in (0,1])");
  }
  if (!(cfg.beta > 0.0)) error("solver.beta", "beta = " + s.at("beta").dump() + " must be > 0");
  if (!(cfg.eta > 0.0)) error("solver.eta", "eta = " + s.at("eta").dump() + " must be > 0");
  if (cfg.k < 1) error("solver.k", "k = " + s.at("k").dump() + " must be >= 1");
  if (cfg.iterations < 1) error("solver.T", "T must be >= 1");
  if (!(cfg.divergence_threshold > 0.0)) error("solver.divergence_threshold", "must be > 0");
  if (!(cfg.init_perturbation >= 0.0)) error("solver.init_perturbation", "must be >= 0");
  if (pp.mode == Mode::kDrsgda) {
    if (cfg.batch_size < 1) {
      error("solver.batch_size", "batch_size must be >= 1");
    } else if (pp.problem) {
      for (int i = 0; i < pp.problem->node_count(); ++i) {
        if (cfg.batch_size > pp.problem->sample_count(i)) {
          error("solver.batch_size", "batch_size = " + std::to_string(cfg.batch_size) + " exceeds the " +
                                         std::to_string(pp.problem->sample_count(i)) + " local samples");
          break;
        }
      }
    }
  }
}

/// Builds problem, network and constants for each point; caches by spec.
std::vector<PreparedPoint> prepare(const std::vector<SweepPoint>& points) {
  std::map<std::string, std::shared_ptr<const MinimaxProblem>> problems;
  std::map<std::string, std::shared_ptr<const MixingMatrix>> networks;
  std::map<std::string, std::shared_ptr<const RunConstants>> constants;
  std::vector<PreparedPoint> out;
  for (const auto& point : points) {
    PreparedPoint pp;
    pp.point = point;
    const json& cfg = point.config;
    pp.mode = parse_mode(cfg.at("solver").at("mode"));
    const int n = cfg.at("topology").at("n").get<int>();
    const std::string problem_key = cfg.at("problem").dump() + "|" + std::to_string(n);
    const std::string net_key = cfg.at("topology").dump();
    try {
      if (!problems.count(problem_key)) problems[problem_key] = build_problem(cfg.at("problem"), n);
      pp.problem = problems[problem_key];
    } catch (const Error& e) {
      pp.issues.push_back({Issue::Severity::kError, "problem", e.what()});
    }
    try {
      if (!networks.count(net_key)) {
        networks[net_key] = std::make_shared<const MixingMatrix>(build_metropolis(build_topology(cfg.at("topology"))));
      }
      pp.mixing = networks[net_key];
    } catch (const Error& e) {
      pp.issues.push_back({Issue::Severity::kError, "topology", e.what()});
    }
    int auto_k = 1;
    if (pp.mixing) auto_k = required_k(std::max(0.0, pp.mixing->lambda2()), pp.mixing->size());
    pp.cfg = build_solver_config(cfg.at("solver"), auto_k);
    structural_checks(pp);
    if (pp.problem && pp.mixing) {
      const std::string key = problem_key + "|" + net_key + "|" + cfg.at("probes").dump();
      try {
        if (!constants.count(key)) {
          constants[key] = std::make_shared<const RunConstants>(compute_constants(*pp.problem, *pp.mixing, cfg));
        }
        RunConstants c = *constants[key];
        c.k = pp.cfg.k;
        pp.constants = std::make_shared<const RunConstants>(c);
        pp.cfg.metric_weight = c.lipschitz;
        for (auto& w : theory_warnings(pp.cfg, pp.mode, c, pp.problem->primal_cols(), n)) {
          pp.issues.push_back(std::move(w));
        }
      } catch (const Error& e) {
        pp.issues.push_back({Issue::Severity::kError, "probes", e.what()});
      }
    }
    pp.cfg.record_timing = cfg.at("output").at("timing").get<bool>();
    out.push_back(std::move(pp));
  }
  return out;
}

std::string sweep_label(const SweepPoint& p) {
  std::string label;
  for (const auto& [key, value] : p.values) {
    if (!label.empty()) label += ", ";
    label += key + "=" + value.dump();
  }
  return label;
}

bool has_errors(const std::vector<Issue>& issues) {
  return std::any_of(issues.begin(), issues.end(),
                     [](const Issue& i) { return i.severity == Issue::Severity::kError; });
}

}  // namespace

std::vector<Issue> validate_config(const json& config) {
  std::vector<SweepPoint> points;
  try {
    points = expand_sweep(resolve_config(config));
  } catch (const Error& e) {
    return {{Issue::Severity::kError, "config", e.what()}};
  }
  std::vector<Issue> out;
  for (auto& pp : prepare(points)) {
    const std::string label = sweep_label(pp.point);
    for (auto& issue : pp.issues) {
      if (!label.empty()) issue.message += " [sweep " + label + "]";
      out.push_back(std::move(issue));
    }
  }
  return out;
}

std::string trace_file_name(const json& resolved, const SweepPoint& point) {
  std::string name = resolved.at("output").at("prefix").get<std::string>();
  for (const auto& [key, value] : point.values) {
    std::string v = value.is_string() ? value.get<std::string>() : value.dump();
    for (char& ch : v) {
      if (!(std::isalnum(static_cast<unsigned char>(ch)) || ch == '.' || ch == '-' || ch == '+' || ch == '_')) ch = '_';
    }
    name += "__" + key + "=" + v;
  }
  return name + (resolved.at("output").at("format") == "jsonl" ? ".jsonl" : ".csv");
}

namespace {

std::vector<double> record_values(const TraceRecord& r, bool node_gradient_column) {
  std::vector<double> v{static_cast<double>(r.t),
                        r.metric.total,
                        r.metric.grad_norm,
                        r.metric.primal_consensus,
                        r.metric.dual_gap,
                        r.x_consensus_l2,
                        r.y_consensus_l2,
                        r.tracker_drift_u,
                        r.tracker_drift_v,
                        r.phi_hat,
                        static_cast<double>(r.comms),
                        r.wall_ms};
  if (node_gradient_column) v.push_back(r.mean_node_grad_norm);
  return v;
}

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (v == std::floor(v) && std::abs(v) < 1e15) {
    std::ostringstream os;
    os << static_cast<long long>(v);
    return os.str();
  }
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void write_trace(const fs::path& path, const json& header, const RunResult& result, const std::string& format,
                 bool node_gradient_column) {
  std::vector<std::string> columns = trace_columns();
  if (node_gradient_column) columns.push_back("mean_node_grad_norm");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write trace file '" + path.string() + "'");
  if (format == "jsonl") {
    json h = header;
    h["columns"] = columns;
    out << json{{"header", h}}.dump() << "\n";
    for (const auto& r : result.records) {
      const auto values = record_values(r, node_gradient_column);
      json row = json::object();
      for (std::size_t c = 0; c < columns.size(); ++c) {
        if (columns[c] == "t" || columns[c] == "comms") {
          row[columns[c]] = static_cast<long long>(values[c]);
        } else {
          row[columns[c]] = values[c];
        }
      }
      out << row.dump() << "\n";
    }
    if (result.error) out << json{{"error", *result.error}}.dump() << "\n";
  } else {
    out << "# dstiefel-trace v" << kTraceSchemaVersion << "\n";
    out << "# header: " << header.dump() << "\n";
    for (std::size_t c = 0; c < columns.size(); ++c) out << (c ? "," : "") << columns[c];
    out << "\n";
    for (const auto& r : result.records) {
      const auto values = record_values(r, node_gradient_column);
      for (std::size_t c = 0; c < values.size(); ++c) out << (c ? "," : "") << format_number(values[c]);
      out << "\n";
    }
    if (result.error) out << "# error: " << *result.error << "\n";
  }
  if (!out) throw Error("failed writing trace file '" + path.string() + "'");
}

RunOutcome run_experiment(const json& config, const fs::path& out_dir) {
  RunOutcome outcome;
  std::vector<SweepPoint> points;
  json resolved;
  try {
    resolved = resolve_config(config);
    points = expand_sweep(resolved);
  } catch (const Error& e) {
    outcome.exit_code = 2;
    outcome.messages.push_back(std::string("error: ") + e.what());
    return outcome;
  }

  std::vector<PreparedPoint> prepared = prepare(points);
  bool fatal = false;
  for (const auto& pp : prepared) {
    const std::string label = sweep_label(pp.point);
    for (const auto& issue : pp.issues) {
      outcome.messages.push_back(to_string(issue) + (label.empty() ? "" : " [sweep " + label + "]"));
    }
    fatal = fatal || has_errors(pp.issues);
  }
  if (fatal) {
    outcome.exit_code = 2;
    return outcome;
  }

  const fs::path dir = out_dir.empty() ? fs::path(resolved.at("output").at("dir").get<std::string>()) : out_dir;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) {
    outcome.exit_code = 2;
    outcome.messages.push_back("error: cannot create output directory '" + dir.string() + "'");
    return outcome;
  }

  const std::string format = resolved.at("output").at("format");
  const bool node_column = resolved.at("output").at("node_gradient_column").get<bool>();
  std::vector<fs::path> paths(prepared.size());
  std::vector<std::string> failures(prepared.size());
  std::vector<bool> failed(prepared.size(), false);
  std::atomic<std::size_t> next{0};

  auto worker = [&] {
    for (std::size_t i = next++; i < prepared.size(); i = next++) {
      const PreparedPoint& pp = prepared[i];
      const fs::path path = dir / trace_file_name(resolved, pp.point);
      paths[i] = path;
      try {
        RunResult result = run(*pp.problem, *pp.mixing, pp.cfg, pp.mode);
        json sweep = json::object();
        for (const auto& [key, value] : pp.point.values) sweep[key] = value;
        json cfg = pp.point.config;
        cfg.erase("sweep");
        const json header{{"format", "dstiefel-trace"},
                          {"schema_version", kTraceSchemaVersion},
                          {"code_version", kCodeVersion},
                          {"config", cfg},
                          {"sweep_point", sweep},
                          {"mode", to_string(pp.mode)},
                          {"resolved_k", pp.cfg.k},
                          {"metric_weight", pp.cfg.metric_weight},
                          {"constants", pp.constants->to_json()},
                          {"problem", pp.problem->describe()},
                          {"topology",
                           {{"kind", pp.point.config.at("topology").at("kind")},
                            {"n", pp.mixing->size()},
                            {"lambda2", pp.mixing->lambda2()},
                            {"lambda_n", pp.mixing->lambda_n()}}},
                          {"empirical_D", result.empirical_gradient_bound},
                          {"status", result.error ? "error" : "ok"}};
        write_trace(path, header, result, format, node_column);
        if (result.error) {
          failed[i] = true;
          failures[i] = *result.error;
        }
      } catch (const std::exception& e) {
        failed[i] = true;
        failures[i] = e.what();
      }
    }
  };

  const int workers = std::min<int>(resolved.at("workers").get<int>(), static_cast<int>(prepared.size()));
  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
  }

  for (std::size_t i = 0; i < prepared.size(); ++i) {
    outcome.traces.push_back(paths[i]);
    if (failed[i]) {
      outcome.exit_code = 1;
      outcome.messages.push_back("run failed (" + paths[i].string() + "): " + failures[i]);
    }
  }
  return outcome;
}

// --- reading and summarizing ---------------------------------------------------

std::optional<std::size_t> TraceData::column(const std::string& name) const {
  const auto it = std::find(columns.begin(), columns.end(), name);
  if (it == columns.end()) return std::nullopt;
  return static_cast<std::size_t>(it - columns.begin());
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_cell(const std::string& cell, const fs::path& path, std::size_t line) {
  if (cell == "nan") return std::numeric_limits<double>::quiet_NaN();
  if (cell == "inf") return std::numeric_limits<double>::infinity();
  if (cell == "-inf") return -std::numeric_limits<double>::infinity();
  char* end = nullptr;
  const double v = std::strtod(cell.c_str(), &end);
  if (cell.empty() || end != cell.c_str() + cell.size()) {
    throw Error(path.string() + ":" + std::to_string(line) + ": malformed value '" + cell + "'");
  }
  return v;
}

void check_required_columns(const TraceData& data, const fs::path& path) {
  for (const auto& c : trace_columns()) {
    if (!data.column(c)) throw Error(path.string() + ": missing column '" + c + "'");
  }
}

}  // namespace

TraceData read_trace(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open trace '" + path.string() + "'");
  TraceData data;
  std::string line;
  std::size_t lineno = 0;
  const bool jsonl = path.extension() == ".jsonl";
  if (jsonl) {
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      json j;
      try {
        j = json::parse(line);
      } catch (const json::parse_error&) {
        throw Error(path.string() + ":" + std::to_string(lineno) + ": malformed JSON line (truncated trace?)");
      }
      if (lineno == 1) {
        if (!j.contains("header")) throw Error(path.string() + ": first line must carry the header");
        data.header = j.at("header");
        data.columns = data.header.at("columns").get<std::vector<std::string>>();
        continue;
      }
      if (j.contains("error")) {
        data.run_error = j.at("error").get<std::string>();
        continue;
      }
      std::vector<double> row;
      for (const auto& c : data.columns) {
        if (!j.contains(c)) throw Error(path.string() + ":" + std::to_string(lineno) + ": missing '" + c + "'");
        row.push_back(j.at(c).is_null() ? std::numeric_limits<double>::quiet_NaN() : j.at(c).get<double>());
      }
      data.rows.push_back(std::move(row));
    }
    if (data.header.is_null()) throw Error(path.string() + ": empty trace");
  } else {
    bool have_columns = false;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.rfind("# header: ", 0) == 0) {
        try {
          data.header = json::parse(line.substr(10));
        } catch (const json::parse_error&) {
          throw Error(path.string() + ":" + std::to_string(lineno) + ": malformed header");
        }
        continue;
      }
      if (line.rfind("# error: ", 0) == 0) {
        data.run_error = line.substr(9);
        continue;
      }
      if (line.empty() || line[0] == '#') continue;
      if (!have_columns) {
        data.columns = split_csv(line);
        have_columns = true;
        continue;
      }
      const auto cells = split_csv(line);
      if (cells.size() != data.columns.size()) {
        throw Error(path.string() + ":" + std::to_string(lineno) + ": expected " +
                    std::to_string(data.columns.size()) + " columns, found " + std::to_string(cells.size()) +
                    " (truncated trace?)");
      }
      std::vector<double> row;
      row.reserve(cells.size());
      for (const auto& cell : cells) row.push_back(parse_cell(cell, path, lineno));
      data.rows.push_back(std::move(row));
    }
    if (data.header.is_null() || !have_columns) throw Error(path.string() + ": missing header (truncated trace?)");
  }
  check_required_columns(data, path);
  return data;
}

std::optional<int> iterations_to_threshold(const TraceData& trace, double threshold) {
  const std::size_t t_col = *trace.column("t");
  const std::size_t m_col = *trace.column("metric_total");
  for (const auto& row : trace.rows) {
    if (row[m_col] <= threshold) return static_cast<int>(row[t_col]);
  }
  return std::nullopt;
}

std::vector<TraceSummary> summarize(const std::vector<fs::path>& paths) {
  std::vector<TraceSummary> good, bad;
  for (const auto& path : paths) {
    TraceSummary s;
    s.path = path.string();
    try {
      const TraceData trace = read_trace(path);
      s.run_error = trace.run_error;
      s.reach_1e1 = iterations_to_threshold(trace, 1e-1);
      s.reach_1e2 = iterations_to_threshold(trace, 1e-2);
      s.iterations = static_cast<int>(trace.rows.size());
      if (trace.rows.empty()) throw Error(path.string() + ": trace has no rows");
      const auto& last = trace.rows.back();
      s.final_total = last[*trace.column("metric_total")];
      s.final_grad_norm = last[*trace.column("grad_norm")];
      s.final_primal_consensus = last[*trace.column("primal_consensus")];
      s.final_dual_gap = last[*trace.column("dual_gap")];
      s.total_comms = static_cast<long long>(last[*trace.column("comms")]);
      double wall = 0.0;
      for (const auto& row : trace.rows) wall += row[*trace.column("wall_ms")];
      s.mean_wall_ms = wall / static_cast<double>(trace.rows.size());
      good.push_back(std::move(s));
    } catch (const std::exception& e) {
      s.error = e.what();
      bad.push_back(std::move(s));
    }
  }
  std::stable_sort(good.begin(), good.end(), [](const TraceSummary& a, const TraceSummary& b) {
    const double fa = std::isnan(a.final_total) ? std::numeric_limits<double>::infinity() : a.final_total;
    const double fb = std::isnan(b.final_total) ? std::numeric_limits<double>::infinity() : b.final_total;
    return fa < fb;
  });
  good.insert(good.end(), bad.begin(), bad.end());
  return good;
}

namespace {

std::string reach_text(const std::optional<int>& v) { return v ? std::to_string(*v) : "not reached"; }

json reach_json(const std::optional<int>& v) { return v ? json(*v) : json("not reached"); }

}  // namespace

std::string render_summary_text(const std::vector<TraceSummary>& summaries) {
  std::size_t width = 8;
  for (const auto& s : summaries) width = std::max(width, s.path.size() + 2);
  const int w = static_cast<int>(width);
  std::ostringstream os;
  os << std::left << std::setw(w) << "trace" << std::setw(14) << "t(M<=1e-1)" << std::setw(14) << "t(M<=1e-2)"
     << std::setw(14) << "final_M" << std::setw(14) << "grad_norm" << std::setw(14) << "consensus"
     << std::setw(14) << "dual_gap" << std::setw(12) << "wall_ms" << "comms\n";
  for (const auto& s : summaries) {
    os << std::setw(w) << s.path;
    if (s.error) {
      os << "ERROR: " << *s.error << "\n";
      continue;
    }
    os << std::setw(14) << reach_text(s.reach_1e1) << std::setw(14) << reach_text(s.reach_1e2) << std::setprecision(6)
       << std::setw(14) << s.final_total << std::setw(14) << s.final_grad_norm << std::setw(14)
       << s.final_primal_consensus << std::setw(14) << s.final_dual_gap << std::setw(12) << s.mean_wall_ms
       << s.total_comms;
    if (s.run_error) os << "  (run error: " << *s.run_error << ")";
    os << "\n";
  }
  return os.str();
}

json render_summary_json(const std::vector<TraceSummary>& summaries) {
  json out = json::array();
  for (const auto& s : summaries) {
    json j{{"path", s.path}};
    if (s.error) {
      j["error"] = *s.error;
    } else {
      j["iterations"] = s.iterations;
      j["iterations_to_1e-1"] = reach_json(s.reach_1e1);
      j["iterations_to_1e-2"] = reach_json(s.reach_1e2);
      j["final_metric_total"] = s.final_total;
      j["final_grad_norm"] = s.final_grad_norm;
      j["final_primal_consensus"] = s.final_primal_consensus;
      j["final_dual_gap"] = s.final_dual_gap;
      j["mean_wall_ms"] = s.mean_wall_ms;
      j["total_comms"] = s.total_comms;
      if (s.run_error) j["run_error"] = *s.run_error;
    }
    out.push_back(std::move(j));
  }
  return out;
}

}  // namespace dstiefel
