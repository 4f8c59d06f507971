#include "framegen/run_config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <sstream>

#include "framegen/errors.hpp"
#include "framegen/model/model.hpp"
#include "framegen/util.hpp"

namespace framegen {

namespace {

struct Field {
  std::string section;
  std::string key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

std::string qualified(const std::string& section, const std::string& key) { return section + "." + key; }

[[noreturn]] void bad_value(const std::string& name, const std::string& value, const char* expected) {
  throw ConfigError("[" + name + "] expects " + expected + ", got '" + value + "'");
}

template <typename T>
T parse_number(const std::string& name, const std::string& value) {
  T out{};
  const auto* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc{} || ptr != end) bad_value(name, value, "a number");
  return out;
}

bool parse_bool(const std::string& name, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  bad_value(name, value, "true/false");
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

std::string join(const std::vector<std::string>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) out += (i ? "," : "") + xs[i];
  return out;
}

template <typename T>
Field number(std::string section, std::string key, T RunConfig::*member) {
  const auto name = qualified(section, key);
  return {std::move(section), std::move(key), [name, member](RunConfig& c, const std::string& v) {
            c.*member = parse_number<T>(name, v);
          },
          [member](const RunConfig& c) {
            if constexpr (std::is_floating_point_v<T>) return fmt(c.*member);
            else return std::to_string(c.*member);
          }};
}

template <typename T>
Field model_number(std::string key, T ModelConfig::*member) {
  const auto name = qualified("model", key);
  return {"model", std::move(key),
          [name, member](RunConfig& c, const std::string& v) { c.model.*member = parse_number<T>(name, v); },
          [member](const RunConfig& c) { return std::to_string(c.model.*member); }};
}

template <typename T>
Field optim_number(std::string key, T AdamWConfig::*member) {
  const auto name = qualified("optim", key);
  return {"optim", std::move(key),
          [name, member](RunConfig& c, const std::string& v) { c.optim.*member = parse_number<T>(name, v); },
          [member](const RunConfig& c) { return fmt(c.optim.*member); }};
}

Field flag(std::string section, std::string key, bool RunConfig::*member) {
  const auto name = qualified(section, key);
  return {std::move(section), std::move(key),
          [name, member](RunConfig& c, const std::string& v) { c.*member = parse_bool(name, v); },
          [member](const RunConfig& c) { return std::string(c.*member ? "true" : "false"); }};
}

Field text(std::string section, std::string key, std::string RunConfig::*member) {
  return {std::move(section), std::move(key), [member](RunConfig& c, const std::string& v) { c.*member = v; },
          [member](const RunConfig& c) { return c.*member; }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      model_number("image_size", &ModelConfig::image_size),
      model_number("channels", &ModelConfig::channels),
      model_number("latent_factor", &ModelConfig::latent_factor),
      model_number("d_model", &ModelConfig::d_model),
      model_number("n_heads", &ModelConfig::n_heads),
      model_number("n_blocks", &ModelConfig::n_blocks),
      model_number("patch", &ModelConfig::patch),
      model_number("text_len", &ModelConfig::text_len),
      model_number("mlp_ratio", &ModelConfig::mlp_ratio),
      model_number("t_max", &ModelConfig::t_max),

      number("schedule", "beta_start", &RunConfig::beta_start),
      number("schedule", "beta_end", &RunConfig::beta_end),

      optim_number("lr", &AdamWConfig::lr),
      optim_number("beta1", &AdamWConfig::beta1),
      optim_number("beta2", &AdamWConfig::beta2),
      optim_number("eps", &AdamWConfig::eps),
      optim_number("weight_decay", &AdamWConfig::weight_decay),
      number("optim", "grad_clip", &RunConfig::grad_clip),

      number("train", "steps", &RunConfig::steps),
      number("train", "batch_size", &RunConfig::batch_size),
      number("train", "cfg_drop", &RunConfig::cfg_drop),
      number("train", "checkpoint_every", &RunConfig::checkpoint_every),
      number("train", "seed", &RunConfig::seed),

      {"sample", "omega",
       [](RunConfig& c, const std::string& v) {
         if (v == "auto") c.omega.reset();
         else c.omega = parse_number<double>("sample.omega", v);
       },
       [](const RunConfig& c) { return fmt(c.effective_omega()); }},
      number("sample", "steps", &RunConfig::sample_steps),
      flag("sample", "clip_x0", &RunConfig::clip_x0),
      number("sample", "seed", &RunConfig::sample_seed),

      {"mask", "strategy",
       [](RunConfig& c, const std::string& v) {
         const auto m = parse_mask(v);
         if (!m) bad_value("mask.strategy", v, "one of a, b, c, none");
         c.mask = *m;
       },
       [](const RunConfig& c) { return std::string(mask_name(c.mask)); }},
      flag("mask", "c_blocks_diagonal", &RunConfig::c_blocks_diagonal),

      flag("lora", "enabled", &RunConfig::lora),
      number("lora", "rank", &RunConfig::lora_rank),
      number("lora", "alpha", &RunConfig::lora_alpha),
      {"lora", "targets",
       [](RunConfig& c, const std::string& v) {
         c.lora_targets.clear();
         for (const auto& p : split(v, ',')) {
           if (!trim(p).empty()) c.lora_targets.emplace_back(trim(p));
         }
       },
       [](const RunConfig& c) { return join(c.effective_lora_targets()); }},
      text("lora", "base_checkpoint", &RunConfig::base_checkpoint),

      {"data", "task",
       [](RunConfig& c, const std::string& v) {
         const auto t = parse_task(v);
         if (!t) bad_value("data.task", v, "one of canny, depth, subject");
         c.task = *t;
       },
       [](const RunConfig& c) { return std::string(task_name(c.task)); }},
      text("data", "dir", &RunConfig::data_dir),
      number("data", "n", &RunConfig::data_n),
      number("data", "seed", &RunConfig::data_seed),
      number("data", "heldout_n", &RunConfig::heldout_n),
      number("data", "heldout_seed", &RunConfig::heldout_seed),
      text("data", "vocab", &RunConfig::vocab_path),
  };
  return table;
}

}  // namespace

double RunConfig::effective_omega() const {
  if (omega) return *omega;
  return task == Task::Subject ? 6.0 : 2.0;
}

std::vector<std::string> RunConfig::effective_lora_targets() const {
  return lora_targets.empty() ? Model::default_lora_targets() : lora_targets;
}

DiffusionSchedule RunConfig::schedule() const { return DiffusionSchedule::linear(model.t_max, beta_start, beta_end); }

void RunConfig::validate() const {
  auto m = model;
  if (m.vocab_size == 0) m.vocab_size = 2;  // filled from the vocabulary later
  m.validate();
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
    throw ConfigError("[schedule] needs 0 < beta_start <= beta_end < 1");
  }
  if (optim.lr < 0.0) throw ConfigError("[optim.lr] must be >= 0");
  if (!(optim.beta1 >= 0.0 && optim.beta1 < 1.0 && optim.beta2 >= 0.0 && optim.beta2 < 1.0)) {
    throw ConfigError("[optim.beta1/beta2] must lie in [0, 1)");
  }
  if (optim.eps <= 0.0) throw ConfigError("[optim.eps] must be > 0");
  if (optim.weight_decay < 0.0) throw ConfigError("[optim.weight_decay] must be >= 0");
  if (grad_clip < 0.0) throw ConfigError("[optim.grad_clip] must be >= 0");
  if (batch_size == 0) throw ConfigError("[train.batch_size] must be > 0");
  if (!(cfg_drop >= 0.0 && cfg_drop <= 1.0)) throw ConfigError("[train.cfg_drop] must lie in [0, 1]");
  if (sample_steps == 0 || sample_steps > model.t_max) throw ConfigError("[sample.steps] must be in [1, t_max]");
  if (lora && lora_rank == 0) throw ConfigError("[lora.rank] must be > 0");
  if (model.image_size < 8) throw ConfigError("[model.image_size] must be >= 8");
}

RunConfig RunConfig::parse(std::string_view text) {
  std::map<std::string, const Field*> index;
  for (const auto& f : fields()) index[qualified(f.section, f.key)] = &f;
  RunConfig c;
  std::string section;
  std::size_t line_no = 0;
  for (const auto& raw : split(text, '\n')) {
    ++line_no;
    auto line = std::string(raw);
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto t = std::string(trim(line));
    if (t.empty()) continue;
    if (t.front() == '[') {
      if (t.back() != ']') throw ConfigError("line " + std::to_string(line_no) + ": unterminated section header");
      section = std::string(trim(std::string_view(t).substr(1, t.size() - 2)));
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(line_no) + ": expected 'key = value'");
    const auto key = std::string(trim(std::string_view(t).substr(0, eq)));
    const auto value = std::string(trim(std::string_view(t).substr(eq + 1)));
    const auto it = index.find(qualified(section, key));
    if (it == index.end()) {
      throw ConfigError("line " + std::to_string(line_no) + ": unknown key '" + key + "' in section [" + section + "]");
    }
    it->second->set(c, value);
  }
  c.validate();
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse(ss.str());
}

std::string RunConfig::to_ini() const {
  std::ostringstream os;
  std::string section;
  for (const auto& f : fields()) {
    if (f.section != section) {
      os << (section.empty() ? "" : "\n") << "[" << f.section << "]\n";
      section = f.section;
    }
    os << f.key << " = " << f.get(*this) << "\n";
  }
  return os.str();
}

std::string RunConfig::hash() const { return hex64(fnv1a64(to_ini())); }

void write_run_metadata(const std::filesystem::path& dir, const RunConfig& config) {
  std::filesystem::create_directories(dir);
  std::ofstream cfg(dir / "config.ini", std::ios::trunc);
  cfg << "# resolved configuration, " << kToolVersion << "\n" << config.to_ini();
  std::ofstream ver(dir / "VERSION", std::ios::trunc);
  ver << kToolVersion << "\n";
  if (!cfg || !ver) throw IoError("cannot write run metadata to " + dir.string());
}

}  // namespace framegen
