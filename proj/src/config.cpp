#include "redo/config.hpp"

#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>

namespace fs = std::filesystem;

namespace redo {

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

// strips a trailing comment that is not inside quotes
std::string strip_comment(const std::string& s) {
  bool quoted = false;
  for (std::size_t k = 0; k < s.size(); ++k) {
    if (s[k] == '"') quoted = !quoted;
    if (s[k] == '#' && !quoted) return s.substr(0, k);
  }
  return s;
}

template <class T>
T number(const std::string& key, const std::string& v) {
  T out{};
  const char* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end) throw ConfigError(key + ": expected a number, got '" + v + "'");
  return out;
}

bool boolean(const std::string& key, const std::string& v) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

using Setter = std::function<void(RunConfig&, const std::string&)>;

#define INT_KEY(name, field) {name, [](RunConfig& c, const std::string& v) { c.field = number<int>(name, v); }}
#define LONG_KEY(name, field) {name, [](RunConfig& c, const std::string& v) { c.field = number<long>(name, v); }}
#define REAL_KEY(name, field) {name, [](RunConfig& c, const std::string& v) { c.field = number<double>(name, v); }}
#define STR_KEY(name, field) {name, [](RunConfig& c, const std::string& v) { c.field = v; }}

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      INT_KEY("network.image_size", net.image_size),
      INT_KEY("network.channels", net.channels),
      INT_KEY("network.regions", net.regions),
      INT_KEY("network.latent_dim", net.latent_dim),
      INT_KEY("network.ch_f", net.ch_f),
      INT_KEY("network.ch_g", net.ch_g),
      INT_KEY("network.ch_d", net.ch_d),
      INT_KEY("train.batch_size", train.batch_size),
      LONG_KEY("train.max_steps", train.max_steps),
      REAL_KEY("train.lr_f", train.lr_f),
      REAL_KEY("train.lr_gdd", train.lr_gdd),
      REAL_KEY("train.adam_beta1", train.adam_beta1),
      REAL_KEY("train.adam_beta2", train.adam_beta2),
      REAL_KEY("train.adam_eps", train.adam_eps),
      REAL_KEY("train.weight_decay_f", train.weight_decay_f),
      REAL_KEY("train.init_gain", train.init_gain),
      {"train.seed", [](RunConfig& c, const std::string& v) { c.train.seed = number<std::uint64_t>("train.seed", v); }},
      LONG_KEY("train.checkpoint_every", train.checkpoint_every),
      LONG_KEY("train.eval_every", train.eval_every),
      INT_KEY("train.eval_batch", train.eval_batch),
      {"restart.enabled", [](RunConfig& c, const std::string& v) { c.train.restart.enabled = boolean("restart.enabled", v); }},
      INT_KEY("restart.max_restarts", train.restart.max_restarts),
      REAL_KEY("restart.collapse_epsilon", train.restart.collapse_epsilon),
      INT_KEY("restart.collapse_patience", train.restart.collapse_patience),
      LONG_KEY("restart.probe_window", train.restart.probe_window),
      {"loss.lambda_z",
       [](RunConfig& c, const std::string& v) {
         if (v == "auto") {
           c.train.loss.mode = LossWeights::Mode::Auto;
         } else {
           c.train.loss.mode = LossWeights::Mode::Explicit;
           c.train.loss.lambda_z = number<double>("loss.lambda_z", v);
         }
       }},
      {"loss.preset",
       [](RunConfig& c, const std::string& v) {
         if (v == "default") c.train.loss.preset = LambdaPreset::Default;
         else if (v == "lfw") c.train.loss.preset = LambdaPreset::Lfw;
         else throw ConfigError("loss.preset: expected default or lfw, got '" + v + "'");
       }},
      STR_KEY("data.path", data.path),
      STR_KEY("data.images", data.images),
      STR_KEY("data.masks", data.masks),
      STR_KEY("data.split", data.split),
      {"data.split_seed", [](RunConfig& c, const std::string& v) { c.data.split_seed = number<std::uint64_t>("data.split_seed", v); }},
      STR_KEY("output.dir", out_dir),
      {"output.panels", [](RunConfig& c, const std::string& v) { c.panels = boolean("output.panels", v); }},
      INT_KEY("output.panel_count", panel_count),
  };
  return table;
}

#undef INT_KEY
#undef LONG_KEY
#undef REAL_KEY
#undef STR_KEY

}  // namespace

std::map<std::string, std::string> parse_config_text(const std::string& text, const std::string& source) {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string where = source + ":" + std::to_string(lineno) + ": ";
    line = trim(strip_comment(line));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + "unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      if (section.empty()) throw ConfigError(where + "empty section name");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected key = value");
    const std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError(where + "missing key");
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
    else if (!value.empty() && (value.front() == '"' || value.back() == '"')) throw ConfigError(where + "unbalanced quotes");
    const std::string full = section.empty() ? key : section + "." + key;
    if (out.contains(full)) throw ConfigError(where + "duplicate key " + full);
    out[full] = value;
  }
  return out;
}

RunConfig run_config_from_text(const std::string& text, const std::string& source) {
  RunConfig c;
  for (const auto& [key, value] : parse_config_text(text, source)) {
    auto it = setters().find(key);
    if (it == setters().end()) throw ConfigError(source + ": unknown key " + key);
    it->second(c, value);
  }
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return run_config_from_text(os.str(), path);
}

std::optional<std::string> resolve_config_path(const std::string& flag) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv("REDO_CONFIG"); env && *env) return std::string(env);
  return std::nullopt;
}

void RunConfig::validate() const {
  try {
    net.validate();
    train.validate();
    train.loss.resolve(net.regions, net.latent_dim);
  } catch (const ContractError& e) {
    throw ConfigError(e.what());
  }
  if (panel_count < 1) throw ConfigError("output.panel_count must be >= 1");
  if (data.path.empty() == data.images.empty()) throw ConfigError("set exactly one of data.path and data.images");
  if (!data.path.empty() && !fs::is_directory(data.path)) throw ConfigError("data.path does not exist: " + data.path);
  if (!data.images.empty() && !fs::is_directory(data.images))
    throw ConfigError("data.images does not exist: " + data.images);
  if (!data.masks.empty() && !fs::is_directory(data.masks)) throw ConfigError("data.masks does not exist: " + data.masks);
  if (data.split == "manifest") {
    if (data.path.empty()) throw ConfigError("data.split = manifest needs data.path");
  } else if (data.split != "flowers") {
    std::istringstream parts(data.split);
    std::string p;
    int count = 0;
    double sum = 0;
    while (std::getline(parts, p, ',')) {
      const double f = number<double>("data.split", trim(p));
      if (f < 0) throw ConfigError("data.split fractions must be non-negative");
      sum += f;
      ++count;
    }
    if (count != 3 || std::abs(sum - 1.0) > 1e-6)
      throw ConfigError("data.split must be manifest, flowers or three fractions summing to 1");
  }
  if (out_dir.empty()) throw ConfigError("output.dir must not be empty");
}

std::string to_config_text(const RunConfig& c) {
  std::ostringstream o;
  o.precision(17);
  o << "[network]\nimage_size = " << c.net.image_size << "\nchannels = " << c.net.channels << "\nregions = " << c.net.regions
    << "\nlatent_dim = " << c.net.latent_dim << "\nch_f = " << c.net.ch_f << "\nch_g = " << c.net.ch_g
    << "\nch_d = " << c.net.ch_d << "\n\n";
  const TrainConfig& t = c.train;
  o << "[train]\nbatch_size = " << t.batch_size << "\nmax_steps = " << t.max_steps << "\nlr_f = " << t.lr_f
    << "\nlr_gdd = " << t.lr_gdd << "\nadam_beta1 = " << t.adam_beta1 << "\nadam_beta2 = " << t.adam_beta2
    << "\nadam_eps = " << t.adam_eps << "\nweight_decay_f = " << t.weight_decay_f << "\ninit_gain = " << t.init_gain
    << "\nseed = " << t.seed << "\ncheckpoint_every = " << t.checkpoint_every << "\neval_every = " << t.eval_every
    << "\neval_batch = " << t.eval_batch << "\n\n";
  o << "[restart]\nenabled = " << (t.restart.enabled ? "true" : "false") << "\nmax_restarts = " << t.restart.max_restarts
    << "\ncollapse_epsilon = " << t.restart.collapse_epsilon << "\ncollapse_patience = " << t.restart.collapse_patience
    << "\nprobe_window = " << t.restart.probe_window << "\n\n";
  o << "[loss]\nlambda_z = ";
  if (t.loss.mode == LossWeights::Mode::Auto) o << "auto";
  else o << t.loss.lambda_z;
  o << "\npreset = " << (t.loss.preset == LambdaPreset::Lfw ? "lfw" : "default") << "\n\n";
  o << "[data]\n";
  if (!c.data.path.empty()) o << "path = \"" << c.data.path << "\"\n";
  if (!c.data.images.empty()) o << "images = \"" << c.data.images << "\"\n";
  if (!c.data.masks.empty()) o << "masks = \"" << c.data.masks << "\"\n";
  o << "split = \"" << c.data.split << "\"\nsplit_seed = " << c.data.split_seed << "\n\n";
  o << "[output]\ndir = \"" << c.out_dir << "\"\npanels = " << (c.panels ? "true" : "false")
    << "\npanel_count = " << c.panel_count << "\n";
  return o.str();
}

}  // namespace redo
