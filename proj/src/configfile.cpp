#include "tokenforce/configfile.hpp"

#include <cctype>
#include <fstream>
#include <sstream>

namespace tokenforce {

using nlohmann::json;

namespace {

std::string trim(std::string_view s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

std::string strip_comment(const std::string& line) {
  bool in_string = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (c == '"' && (i == 0 || line[i - 1] != '\\')) in_string = !in_string;
    if (c == '#' && !in_string) return line.substr(0, i);
  }
  return line;
}

std::vector<std::string> split_path(const std::string& dotted) {
  std::vector<std::string> parts;
  std::stringstream ss(dotted);
  std::string part;
  while (std::getline(ss, part, '.')) {
    require(!part.empty(), "config: empty section path component in [" +
                               dotted + "]");
    parts.push_back(part);
  }
  return parts;
}

json parse_value(const std::string& raw) {
  json parsed = json::parse(raw, nullptr, /*allow_exceptions=*/false);
  if (!parsed.is_discarded()) return parsed;
  return json(raw);  // bare word
}

bool bare_safe(const std::string& s) {
  if (s.empty()) return false;
  for (char c : s) {
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_' && c != '-') {
      return false;
    }
  }
  // a bare word must not re-parse as a different json type
  return json::parse(s, nullptr, false).is_discarded();
}

void write_section(std::ostream& out, const std::string& path,
                   const json& section, bool& first) {
  std::vector<std::pair<std::string, const json*>> children;
  bool has_values = false;
  for (auto it = section.begin(); it != section.end(); ++it) {
    if (it.value().is_object()) {
      children.emplace_back(it.key(), &it.value());
    } else {
      has_values = true;
    }
  }
  if (has_values || (section.empty() && !path.empty())) {
    if (!first) out << "\n";
    first = false;
    if (!path.empty()) out << "[" << path << "]\n";
    for (auto it = section.begin(); it != section.end(); ++it) {
      if (it.value().is_object()) continue;
      if (it.value().is_string() && bare_safe(it.value().get<std::string>())) {
        out << it.key() << " = " << it.value().get<std::string>() << "\n";
      } else {
        out << it.key() << " = " << it.value().dump() << "\n";
      }
    }
  }
  for (const auto& [key, child] : children) {
    write_section(out, path.empty() ? key : path + "." + key, *child, first);
  }
}

int get_int(const json& section, const std::string& key, int fallback) {
  if (!section.contains(key)) return fallback;
  require(section.at(key).is_number(), "config: " + key + " must be a number");
  return section.at(key).get<int>();
}

int require_int(const json& section, const std::string& key,
                const std::string& where) {
  require(section.contains(key), "config: missing " + key + " in " + where);
  require(section.at(key).is_number(), "config: " + key + " must be a number");
  return section.at(key).get<int>();
}

double get_double(const json& section, const std::string& key,
                  double fallback) {
  if (!section.contains(key)) return fallback;
  require(section.at(key).is_number(), "config: " + key + " must be a number");
  return section.at(key).get<double>();
}

std::uint64_t require_seed(const json& section, const std::string& key,
                           const std::string& where) {
  require(section.contains(key), "config: missing " + key + " in " + where);
  return section.at(key).get<std::uint64_t>();
}

Schedule schedule_from_json(const json& value, const std::string& key) {
  require(value.is_array(), "config: " + key + " must be a breakpoint list");
  std::vector<std::pair<double, double>> points;
  for (const auto& p : value) {
    require(p.is_array() && p.size() == 2,
            "config: " + key + " entries must be [rho, value] pairs");
    points.emplace_back(p.at(0).get<double>(), p.at(1).get<double>());
  }
  return Schedule(points);
}

json schedule_to_json(const Schedule& s) {
  json out = json::array();
  for (const auto& [bp, v] : s.points()) {
    out.push_back(json::array({bp, v}));
  }
  return out;
}

}  // namespace

json parse_config_text(const std::string& text) {
  json tree = json::object();
  json* section = &tree;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string content = trim(strip_comment(line));
    if (content.empty()) continue;
    if (content.front() == '[') {
      require(content.back() == ']', "config line " + std::to_string(line_no) +
                                         ": unterminated section header");
      section = &tree;
      for (const std::string& part :
           split_path(trim(content.substr(1, content.size() - 2)))) {
        section = &(*section)[part];
        if (section->is_null()) *section = json::object();
        require(section->is_object(),
                "config line " + std::to_string(line_no) +
                    ": section path collides with a value");
      }
      continue;
    }
    const std::size_t eq = content.find('=');
    require(eq != std::string::npos, "config line " + std::to_string(line_no) +
                                         ": expected key = value");
    const std::string key = trim(content.substr(0, eq));
    const std::string value = trim(content.substr(eq + 1));
    require(!key.empty(), "config line " + std::to_string(line_no) +
                              ": empty key");
    require(!value.empty(), "config line " + std::to_string(line_no) +
                                ": empty value for " + key);
    (*section)[key] = parse_value(value);
  }
  return tree;
}

json parse_config_file(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), "cannot open config file " + path);
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_config_text(buffer.str());
}

std::string write_config_text(const json& tree) {
  require(tree.is_object(), "config tree must be an object");
  std::ostringstream out;
  bool first = true;
  write_section(out, "", tree, first);
  return out.str();
}

AttackConfig attack_config_from_json(const std::string& method,
                                     const json& section) {
  AttackConfig cfg;
  cfg.method = method;
  if (method == "gcg") {
    GcgConfig c;
    c.grad_top_k = get_int(section, "grad_top_k", c.grad_top_k);
    c.width = get_int(section, "width", c.width);
    cfg.params = c;
  } else if (method == "random") {
    RandomConfig c;
    c.candidates = get_int(section, "candidates", c.candidates);
    cfg.params = c;
  } else if (method == "oss53") {
    Oss53Config c;
    c.candidates = get_int(section, "candidates", c.candidates);
    c.cosine_top_k = get_int(section, "cosine_top_k", c.cosine_top_k);
    c.temperature = get_double(section, "temperature", c.temperature);
    c.momentum = get_double(section, "momentum", c.momentum);
    c.switch_fraction = get_double(section, "switch_fraction", c.switch_fraction);
    c.total_steps = get_int(section, "total_steps", c.total_steps);
    c.gamma = get_double(section, "gamma", c.gamma);
    if (section.contains("negate_direction")) {
      c.negate_direction = section.at("negate_direction").get<bool>();
    }
    cfg.params = c;
  } else if (method == "oss2") {
    Oss2Config c;
    c.grad_top_k = get_int(section, "grad_top_k", c.grad_top_k);
    c.merge_depth = get_int(section, "merge_depth", c.merge_depth);
    c.warmup_fraction = get_double(section, "warmup_fraction", c.warmup_fraction);
    c.cycle_fraction = get_double(section, "cycle_fraction", c.cycle_fraction);
    if (section.contains("width_schedule")) {
      c.width = schedule_from_json(section.at("width_schedule"), "width_schedule");
    }
    if (section.contains("perturb_schedule")) {
      c.perturb_strength =
          schedule_from_json(section.at("perturb_schedule"), "perturb_schedule");
    }
    cfg.params = c;
  } else if (method == "adc_lsgm") {
    AdcLsgmConfig c;
    c.momentum = get_double(section, "momentum", c.momentum);
    c.ema_rate = get_double(section, "ema_rate", c.ema_rate);
    c.restarts = get_int(section, "restarts", c.restarts);
    c.learning_rate = get_double(section, "learning_rate", c.learning_rate);
    c.gamma = get_double(section, "gamma", c.gamma);
    c.loss_coeff = get_double(section, "loss_coeff", c.loss_coeff);
    cfg.params = c;
  } else {
    std::string known;
    for (const auto& id : method_ids()) known += " " + id;
    fail_input("unknown method '" + method + "'; registered methods:" + known);
  }
  cfg.validate();
  return cfg;
}

json attack_config_to_json(const AttackConfig& cfg) {
  json j{{"method", cfg.method}};
  if (const auto* c = std::get_if<GcgConfig>(&cfg.params)) {
    j["grad_top_k"] = c->grad_top_k;
    j["width"] = c->width;
  } else if (const auto* c = std::get_if<RandomConfig>(&cfg.params)) {
    j["candidates"] = c->candidates;
  } else if (const auto* c = std::get_if<Oss53Config>(&cfg.params)) {
    j["candidates"] = c->candidates;
    j["cosine_top_k"] = c->cosine_top_k;
    j["temperature"] = c->temperature;
    j["momentum"] = c->momentum;
    j["switch_fraction"] = c->switch_fraction;
    j["total_steps"] = c->total_steps;
    j["gamma"] = c->gamma;
    j["negate_direction"] = c->negate_direction;
  } else if (const auto* c = std::get_if<Oss2Config>(&cfg.params)) {
    j["grad_top_k"] = c->grad_top_k;
    j["merge_depth"] = c->merge_depth;
    j["warmup_fraction"] = c->warmup_fraction;
    j["cycle_fraction"] = c->cycle_fraction;
    j["width_schedule"] = schedule_to_json(c->width);
    j["perturb_schedule"] = schedule_to_json(c->perturb_strength);
  } else if (const auto* c = std::get_if<AdcLsgmConfig>(&cfg.params)) {
    j["momentum"] = c->momentum;
    j["ema_rate"] = c->ema_rate;
    j["restarts"] = c->restarts;
    j["learning_rate"] = c->learning_rate;
    j["gamma"] = c->gamma;
    j["loss_coeff"] = c->loss_coeff;
  }
  return j;
}

VocabSpec vocab_from_config(const json& tree) {
  require(tree.contains("vocab"), "config: missing [vocab] section");
  const json& v = tree.at("vocab");
  const int size = require_int(v, "size", "[vocab]");
  TokenSeq control;
  if (v.contains("control_ids")) {
    control = v.at("control_ids").get<TokenSeq>();
  }
  const int dim = get_int(v, "embedding_dim", 1);
  return VocabSpec(size, std::move(control), dim);
}

ContextTemplate template_from_config(const json& tree) {
  require(tree.contains("template"), "config: missing [template] section");
  const json& t = tree.at("template");
  ContextTemplate tmpl;
  if (t.contains("segments")) {
    for (const auto& seg : t.at("segments")) {
      require(seg.is_array() && seg.size() == 2,
              "config: segments entries must be [role, tokens] pairs");
      tmpl.segments.push_back(
          {seg.at(0).get<std::string>(), seg.at(1).get<TokenSeq>()});
    }
  }
  tmpl.suffix_slot = get_int(t, "suffix_slot",
                             static_cast<int>(tmpl.segments.size()));
  tmpl.suffix_len = require_int(t, "suffix_len", "[template]");
  return tmpl;
}

ModelSpec model_spec_from_config(const std::string& id, const json& section,
                                 const VocabSpec& vocab) {
  ModelSpec spec;
  spec.id = id;
  spec.arch.layers = get_int(section, "layers", spec.arch.layers);
  spec.arch.heads = get_int(section, "heads", spec.arch.heads);
  const int dim = get_int(section, "embed_dim", 32);
  spec.arch.vocab = VocabSpec(vocab.size, vocab.control_ids, dim);
  spec.arch.max_seq = get_int(section, "max_seq", spec.arch.max_seq);
  spec.seed = require_seed(section, "seed", "[models." + id + "]");
  if (section.contains("held_out")) {
    spec.held_out = section.at("held_out").get<bool>();
  }
  return spec;
}

TargetsSettings targets_settings_from_config(const json& tree) {
  require(tree.contains("targets"), "config: missing [targets] section");
  const json& t = tree.at("targets");
  TargetsSettings s;
  s.length = require_int(t, "length", "[targets]");
  s.count = require_int(t, "count", "[targets]");
  s.sample_seed = require_seed(t, "seed", "[targets]");
  s.train_count = get_int(t, "train_count", 0);
  s.split_seed = t.value("split_seed", std::uint64_t{0});
  return s;
}

ExperimentPlan plan_from_config(const json& tree,
                                std::vector<TargetSpec> all_targets) {
  ExperimentPlan plan;
  const VocabSpec vocab = vocab_from_config(tree);
  plan.tmpl = template_from_config(tree);
  if (tree.contains("template") && tree.at("template").contains("restricted")) {
    plan.restricted = tree.at("template").at("restricted").get<bool>();
  }

  require(tree.contains("models"), "config: missing [models.*] sections");
  for (auto it = tree.at("models").begin(); it != tree.at("models").end();
       ++it) {
    plan.models.push_back(model_spec_from_config(it.key(), it.value(), vocab));
  }

  require(tree.contains("attacks"), "config: missing [attacks.*] sections");
  for (auto it = tree.at("attacks").begin(); it != tree.at("attacks").end();
       ++it) {
    const json& section = it.value();
    require(section.contains("method"),
            "config: [attacks." + it.key() + "] is missing method =");
    plan.methods.push_back(attack_config_from_json(
        section.at("method").get<std::string>(), section));
  }

  const TargetsSettings ts = targets_settings_from_config(tree);
  require(static_cast<int>(all_targets.size()) > ts.train_count,
          "config: train_count must leave held-out targets");
  auto [train, held] =
      split_targets(std::move(all_targets), ts.train_count, ts.split_seed);
  plan.train_targets = std::move(train);
  plan.held_out_targets = std::move(held);

  require(tree.contains("run"), "config: missing [run] section");
  const json& run = tree.at("run");
  require(run.contains("budget"), "config: missing budget in [run]");
  plan.budget = run.at("budget").get<Flops>();
  plan.seeds_per_run = get_int(run, "seeds", 1);
  plan.base_seed = run.value("base_seed", std::uint64_t{0});
  return plan;
}

SweepSettings sweep_settings_from_config(const json& tree) {
  require(tree.contains("sweep"), "config: missing [sweep] section");
  const json& s = tree.at("sweep");
  SweepSettings out;
  require(s.contains("method"), "config: missing method in [sweep]");
  out.method = s.at("method").get<std::string>();
  out.trials = get_int(s, "trials", 1);
  out.seed = s.value("seed", std::uint64_t{0});
  require(s.contains("grid") && s.at("grid").is_object(),
          "config: missing [sweep.grid] section");
  for (auto it = s.at("grid").begin(); it != s.at("grid").end(); ++it) {
    require(it.value().is_array(),
            "config: sweep grid entries must be value lists");
    out.grid.emplace_back(it.key(), it.value().get<std::vector<double>>());
  }
  return out;
}

}  // namespace tokenforce
