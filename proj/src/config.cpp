#include "iconify/config.hpp"

#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace iconify {

namespace {

std::string join(const std::vector<std::string>& items, const char* sep) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) out += (i ? sep : "") + items[i];
  return out;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::optional<std::uint64_t> parse_uint(const std::string& s) {
  if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos) return std::nullopt;
  errno = 0;
  const unsigned long long v = std::strtoull(s.c_str(), nullptr, 10);
  if (errno == ERANGE) return std::nullopt;
  return v;
}

std::optional<double> parse_real(const std::string& s) {
  if (s.empty()) return std::nullopt;
  char* end = nullptr;
  errno = 0;
  const double v = std::strtod(s.c_str(), &end);
  if (*end != '\0' || errno == ERANGE) return std::nullopt;
  return v;
}

std::optional<std::vector<std::size_t>> parse_uint_list(const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    auto v = parse_uint(trim(item));
    if (!v) return std::nullopt;
    out.push_back(*v);
  }
  if (out.empty()) return std::nullopt;
  return out;
}

std::string format_real(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string format_list(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

ModelKind parse_model(const std::string& s) {
  if (s == "cyclegan") return ModelKind::cyclegan;
  if (s == "unit") return ModelKind::unit;
  throw std::invalid_argument("expected cyclegan or unit");
}

struct Binder {
  std::vector<std::string>& problems;

  template <typename F>
  void apply(const std::string& key, const std::string& value, F&& assign) {
    try {
      if (!assign(value)) problems.push_back(key + ": invalid value '" + value + "'");
    } catch (const std::exception& e) {
      problems.push_back(key + ": invalid value '" + value + "' (" + e.what() + ")");
    }
  }
};

using Setter = std::function<bool(RunConfig&, const std::string&)>;

Setter uint_field(std::size_t RunConfig::*field) {
  return [field](RunConfig& c, const std::string& v) {
    auto n = parse_uint(v);
    if (n) c.*field = *n;
    return n.has_value();
  };
}

Setter net_uint(std::size_t NetConfig::*field) {
  return [field](RunConfig& c, const std::string& v) {
    auto n = parse_uint(v);
    if (n) c.net.*field = *n;
    return n.has_value();
  };
}

Setter weight(double LossWeights::*field) {
  return [field](RunConfig& c, const std::string& v) {
    auto d = parse_real(v);
    if (d) c.weights.*field = *d;
    return d.has_value();
  };
}

Setter adam_real(double AdamHyper::*field) {
  return [field](RunConfig& c, const std::string& v) {
    auto d = parse_real(v);
    if (d) c.adam.*field = *d;
    return d.has_value();
  };
}

Setter text(std::string RunConfig::*field) {
  return [field](RunConfig& c, const std::string& v) {
    c.*field = v;
    return true;
  };
}

/// Every accepted key. The preset is applied separately, before these.
const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"run.model", [](RunConfig& c, const std::string& v) { c.model = parse_model(v); return true; }},
      {"run.preset", [](RunConfig&, const std::string& v) { parse_preset(v); return true; }},
      {"run.seed",
       [](RunConfig& c, const std::string& v) {
         auto n = parse_uint(v);
         if (n) c.seed = *n;
         return n.has_value();
       }},
      {"run.output_dir", text(&RunConfig::output_dir)},
      {"schedule.resolutions",
       [](RunConfig& c, const std::string& v) {
         auto l = parse_uint_list(v);
         if (l) c.resolutions = *l;
         return l.has_value();
       }},
      {"schedule.total_iterations", uint_field(&RunConfig::total_iterations)},
      {"schedule.stage_iterations",
       [](RunConfig& c, const std::string& v) {
         auto l = parse_uint_list(v);
         if (l) c.stage_iterations = *l;
         return l.has_value();
       }},
      {"weights.lambda_cyc", weight(&LossWeights::lambda_cyc)},
      {"weights.lambda_idt", weight(&LossWeights::lambda_idt)},
      {"weights.lambda_kl", weight(&LossWeights::lambda_kl)},
      {"weights.lambda_rec", weight(&LossWeights::lambda_rec)},
      {"network.ngf", net_uint(&NetConfig::ngf)},
      {"network.ndf", net_uint(&NetConfig::ndf)},
      {"network.n_res_blocks", net_uint(&NetConfig::n_res_blocks)},
      {"network.disc_downsamples", net_uint(&NetConfig::disc_downsamples)},
      {"optim.lr", adam_real(&AdamHyper::lr)},
      {"optim.beta1", adam_real(&AdamHyper::beta1)},
      {"optim.beta2", adam_real(&AdamHyper::beta2)},
      {"optim.eps", adam_real(&AdamHyper::eps)},
      {"optim.batch_size", uint_field(&RunConfig::batch_size)},
      {"optim.pool_capacity", uint_field(&RunConfig::pool_capacity)},
      {"data.x", text(&RunConfig::data_x)},
      {"data.y", text(&RunConfig::data_y)},
      {"data.x_filter", text(&RunConfig::filter_x)},
      {"data.y_filter", text(&RunConfig::filter_y)},
      {"data.synthetic_count", uint_field(&RunConfig::synthetic_count)},
      {"data.synthetic_size", uint_field(&RunConfig::synthetic_size)},
  };
  return table;
}

void check_values(const RunConfig& c, std::vector<std::string>& problems) {
  try {
    c.weights.validate();
  } catch (const std::exception& e) {
    problems.push_back(std::string("weights: ") + e.what());
  }
  try {
    c.schedule();
  } catch (const std::exception& e) {
    problems.push_back(std::string("schedule: ") + e.what());
  }
  if (c.net.ngf == 0) problems.push_back("network.ngf: must be positive");
  if (c.net.ndf == 0) problems.push_back("network.ndf: must be positive");
  if (c.net.n_res_blocks < 2) problems.push_back("network.n_res_blocks: must be at least 2");
  if (c.net.disc_downsamples == 0) problems.push_back("network.disc_downsamples: must be positive");
  if (!(c.adam.lr > 0.0)) problems.push_back("optim.lr: must be positive");
  if (!(c.adam.beta1 >= 0.0 && c.adam.beta1 < 1.0)) problems.push_back("optim.beta1: must be in [0, 1)");
  if (!(c.adam.beta2 >= 0.0 && c.adam.beta2 < 1.0)) problems.push_back("optim.beta2: must be in [0, 1)");
  if (!(c.adam.eps > 0.0)) problems.push_back("optim.eps: must be positive");
  if (c.batch_size == 0) problems.push_back("optim.batch_size: must be positive");
  if (c.synthetic_count == 0) problems.push_back("data.synthetic_count: must be positive");
  if (c.synthetic_size == 0 || c.synthetic_size % 4 != 0) {
    problems.push_back("data.synthetic_size: must be a positive multiple of 4");
  }
}

}  // namespace

ConfigError::ConfigError(std::vector<std::string> problems)
    : std::runtime_error("config: " + join(problems, "; ")), problems_(std::move(problems)) {}

const char* to_string(ModelKind k) { return k == ModelKind::cyclegan ? "cyclegan" : "unit"; }

StageSchedule RunConfig::schedule() const {
  if (stage_iterations.empty()) return StageSchedule::from_total(resolutions, total_iterations);
  if (stage_iterations.size() != resolutions.size()) {
    throw std::invalid_argument("stage_iterations has " + std::to_string(stage_iterations.size()) +
                                " entries for " + std::to_string(resolutions.size()) + " resolutions");
  }
  StageSchedule s;
  for (std::size_t i = 0; i < resolutions.size(); ++i) s.stages.push_back({resolutions[i], stage_iterations[i]});
  s.validate();
  return s;
}

RunConfig parse_run_config(const std::string& text) {
  std::vector<std::string> problems;
  std::vector<std::pair<std::string, std::string>> entries;
  std::map<std::string, std::size_t> first_line;
  std::string section;

  std::istringstream in(text);
  std::string raw;
  for (std::size_t line_no = 1; std::getline(in, raw); ++line_no) {
    const std::string line = trim(raw);
    if (line.empty() || line[0] == '#' || line[0] == ';') continue;
    const std::string where = "line " + std::to_string(line_no);
    if (line.front() == '[') {
      if (line.back() != ']') {
        problems.push_back(where + ": malformed section header");
        continue;
      }
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      problems.push_back(where + ": expected key = value");
      continue;
    }
    const std::string key = section + "." + trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (section.empty()) {
      problems.push_back(trim(line.substr(0, eq)) + ": key outside of any section (" + where + ")");
      continue;
    }
    if (auto it = first_line.find(key); it != first_line.end()) {
      problems.push_back(key + ": duplicate key (" + where + ", first on line " + std::to_string(it->second) + ")");
      continue;
    }
    first_line[key] = line_no;
    if (!setters().count(key)) {
      problems.push_back(key + ": unknown key");
      continue;
    }
    entries.emplace_back(key, value);
  }

  RunConfig cfg;
  Binder bind{problems};
  for (const auto& [key, value] : entries) {
    if (key != "run.preset") continue;
    bind.apply(key, value, [&](const std::string& v) {
      cfg.preset = parse_preset(v);
      cfg.weights = preset_weights(cfg.preset);
      return true;
    });
  }
  for (const auto& [key, value] : entries) {
    if (key == "run.preset") continue;
    bind.apply(key, value, [&](const std::string& v) { return setters().at(key)(cfg, v); });
  }
  if (problems.empty()) check_values(cfg, problems);
  if (!problems.empty()) throw ConfigError(std::move(problems));
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError({"cannot open config file " + path.string()});
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

std::string serialize_run_config(const RunConfig& c) {
  std::ostringstream out;
  out << "[run]\n"
      << "model = " << to_string(c.model) << "\n"
      << "preset = " << to_string(c.preset) << "\n"
      << "seed = " << c.seed << "\n"
      << "output_dir = " << c.output_dir << "\n\n"
      << "[schedule]\n"
      << "resolutions = " << format_list(c.resolutions) << "\n"
      << "total_iterations = " << c.total_iterations << "\n";
  if (!c.stage_iterations.empty()) out << "stage_iterations = " << format_list(c.stage_iterations) << "\n";
  out << "\n[weights]\n"
      << "lambda_cyc = " << format_real(c.weights.lambda_cyc) << "\n"
      << "lambda_idt = " << format_real(c.weights.lambda_idt) << "\n"
      << "lambda_kl = " << format_real(c.weights.lambda_kl) << "\n"
      << "lambda_rec = " << format_real(c.weights.lambda_rec) << "\n\n"
      << "[network]\n"
      << "ngf = " << c.net.ngf << "\n"
      << "ndf = " << c.net.ndf << "\n"
      << "n_res_blocks = " << c.net.n_res_blocks << "\n"
      << "disc_downsamples = " << c.net.disc_downsamples << "\n\n"
      << "[optim]\n"
      << "lr = " << format_real(c.adam.lr) << "\n"
      << "beta1 = " << format_real(c.adam.beta1) << "\n"
      << "beta2 = " << format_real(c.adam.beta2) << "\n"
      << "eps = " << format_real(c.adam.eps) << "\n"
      << "batch_size = " << c.batch_size << "\n"
      << "pool_capacity = " << c.pool_capacity << "\n\n"
      << "[data]\n"
      << "x = " << c.data_x << "\n"
      << "y = " << c.data_y << "\n"
      << "x_filter = " << c.filter_x << "\n"
      << "y_filter = " << c.filter_y << "\n"
      << "synthetic_count = " << c.synthetic_count << "\n"
      << "synthetic_size = " << c.synthetic_size << "\n";
  return out.str();
}

}  // namespace iconify
