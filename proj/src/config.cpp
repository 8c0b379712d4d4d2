#include "ralb/config.hpp"

#include "ralb/captions.hpp"
#include "ralb/datagen.hpp"
#include "ralb/errors.hpp"
#include "ralb/evaluation.hpp"
#include "ralb/fraction.hpp"
#include "ralb/training.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

namespace ralb::cfg {

using nlohmann::json;
using nlohmann::ordered_json;

attack::AttackSpec AttackBudget::spec() const {
  attack::AttackSpec s;
  if (norm == "linf") s.norm = attack::Norm::Linf;
  else if (norm == "l2") s.norm = attack::Norm::L2;
  else throw ConfigError("attack norm must be 'linf' or 'l2', got '" + norm + "'");
  try {
    s.epsilon = parse_fraction(epsilon);
    s.step_size = parse_fraction(step_size);
  } catch (const ArgumentError& e) {
    throw ConfigError(std::string("attack budget: ") + e.what());
  }
  s.steps = steps;
  s.random_start = random_start;
  return s;
}

EncoderConfig StudyConfig::desk_model() {
  EncoderConfig c;
  c.embed_dim = 256;
  return c;
}

void StudyConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError("config: " + what);
  };
  model.validate();
  require(workers >= 1, "workers must be >= 1");
  require(data.resolution >= 8, "data.resolution must be >= 8");
  require(data.resolution == model.image_height && data.resolution == model.image_width,
          "data.resolution must match model.image_height/image_width");
  require(data.pretrain_size >= 2 && data.finetune_size >= 2 && data.eval_size >= 1,
          "data sizes too small");
  require(data.rich_fraction >= 0.0 && data.rich_fraction <= 1.0, "data.rich_fraction must be in [0, 1]");
  for (const auto& c : data.train_classes) data::parse_shape(c);
  for (const auto& c : data.zeroshot_classes) data::parse_shape(c);
  for (const auto& c : data.attribute_classes) data::parse_texture(c);
  data::DatasetSplit{data.train_classes, data.zeroshot_classes, data::TaskKind::ObjectLabel}.validate();
  require(!data.train_classes.empty(), "data.train_classes is empty");
  require(pretrain.epochs >= 1 && pretrain.batch_size >= 2 && pretrain.lr > 0.0,
          "pretrain needs epochs >= 1, batch_size >= 2, lr > 0");
  require(finetune.epochs >= 1 && finetune.batch_size >= 2 && finetune.lr > 0.0,
          "finetune needs epochs >= 1, batch_size >= 2, lr > 0");
  require(finetune.lambda >= 0.0, "finetune.lambda must be >= 0");
  for (const auto& m : finetune.methods) {
    const auto method = train::parse_method(m);
    require(method != train::Method::CleanPretrain, "finetune.methods may not contain 'pretrain'");
  }
  finetune.attack.spec().validate();
  deviation.attack.spec().validate();
  const auto presets = eval::attack_preset_names();
  for (const auto& a : eval.attacks)
    require(std::find(presets.begin(), presets.end(), a) != presets.end(), "unknown attack preset '" + a + "'");
  if (eval.epsilon) {
    try {
      require(parse_fraction(*eval.epsilon) > 0.0f, "eval.epsilon must be > 0");
    } catch (const ArgumentError& e) {
      throw ConfigError(std::string("eval.epsilon: ") + e.what());
    }
  }
  require(!eval.subsample || *eval.subsample >= 1, "eval.subsample must be >= 1");
  require(eval.chunk >= 1, "eval.chunk must be >= 1");
  require(deviation.samples >= 2 && deviation.batch_size >= 2, "deviation needs samples, batch_size >= 2");
  for (const auto& o : deviation.objectives) attack::parse_objective(o);
  for (const auto& m : ablation.modes) parse_ablation_kind(m);
  for (double l : sweep.lambdas) require(l >= 0.0, "sweep.lambdas must be >= 0");
}

namespace {

ordered_json budget_json(const AttackBudget& b) {
  return {{"norm", b.norm},
          {"epsilon", b.epsilon},
          {"step_size", b.step_size},
          {"steps", b.steps},
          {"random_start", b.random_start}};
}

// Reads known keys from one JSON object and rejects the rest.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError("config: '" + path_ + "' must be an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError("config: " + where(key) + ": " + e.what());
    }
  }

  template <typename T>
  void get(const char* key, std::optional<T>& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    if (j_.at(key).is_null()) {
      out.reset();
      return;
    }
    T v{};
    get(key, v);
    out = v;
  }

  // Budget fields accept a number or a fraction string.
  void get_budget_text(const char* key, std::string& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    const json& v = j_.at(key);
    if (v.is_string()) out = v.get<std::string>();
    else if (v.is_number()) out = v.dump();
    else throw ConfigError("config: " + where(key) + " must be a number or a fraction string");
  }

  void get_budget_text(const char* key, std::optional<std::string>& out) {
    if (j_.contains(key) && j_.at(key).is_null()) {
      seen_.insert(key);
      out.reset();
      return;
    }
    std::string v = out.value_or("");
    get_budget_text(key, v);
    if (j_.contains(key)) out = v;
  }

  Reader sub(const char* key) {
    seen_.insert(key);
    static const json empty = json::object();
    return Reader(j_.contains(key) ? j_.at(key) : empty, where(key));
  }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) throw ConfigError("config: unknown key '" + where(k.c_str()) + "'");
  }

 private:
  std::string where(const char* key) const { return path_.empty() ? key : path_ + "." + key; }
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void read_budget(Reader r, AttackBudget& b) {
  r.get("norm", b.norm);
  r.get_budget_text("epsilon", b.epsilon);
  r.get_budget_text("step_size", b.step_size);
  r.get("steps", b.steps);
  r.get("random_start", b.random_start);
  r.finish();
}

}  // namespace

ordered_json to_json(const StudyConfig& c) {
  ordered_json j;
  j["seed"] = c.seed;
  j["workers"] = c.workers;
  const EncoderConfig& m = c.model;
  j["model"] = {{"image_height", m.image_height}, {"image_width", m.image_width},
                {"channels", m.channels},         {"patch", m.patch},
                {"patch_dim", m.patch_dim},       {"vision_hidden", m.vision_hidden},
                {"max_tokens", m.max_tokens},     {"vocab_size", m.vocab_size},
                {"token_dim", m.token_dim},       {"text_hidden", m.text_hidden},
                {"embed_dim", m.embed_dim}};
  j["data"] = {{"resolution", c.data.resolution},
               {"pretrain_size", c.data.pretrain_size},
               {"rich_fraction", c.data.rich_fraction},
               {"finetune_size", c.data.finetune_size},
               {"eval_size", c.data.eval_size},
               {"train_classes", c.data.train_classes},
               {"zeroshot_classes", c.data.zeroshot_classes},
               {"attribute_classes", c.data.attribute_classes}};
  j["pretrain"] = {{"epochs", c.pretrain.epochs},
                   {"batch_size", c.pretrain.batch_size},
                   {"lr", c.pretrain.lr},
                   {"weight_decay", c.pretrain.weight_decay}};
  j["finetune"] = {{"epochs", c.finetune.epochs},
                   {"batch_size", c.finetune.batch_size},
                   {"lr", c.finetune.lr},
                   {"weight_decay", c.finetune.weight_decay},
                   {"lambda", c.finetune.lambda},
                   {"attack", budget_json(c.finetune.attack)},
                   {"methods", c.finetune.methods}};
  j["eval"] = {{"attacks", c.eval.attacks},
               {"epsilon", c.eval.epsilon ? ordered_json(*c.eval.epsilon) : ordered_json(nullptr)},
               {"subsample", c.eval.subsample ? ordered_json(*c.eval.subsample) : ordered_json(nullptr)},
               {"chunk", c.eval.chunk}};
  j["deviation"] = {{"samples", c.deviation.samples},
                    {"batch_size", c.deviation.batch_size},
                    {"objectives", c.deviation.objectives},
                    {"attack", budget_json(c.deviation.attack)}};
  j["ablation"] = {{"modes", c.ablation.modes}};
  j["sweep"] = {{"lambdas", c.sweep.lambdas}};
  return j;
}

StudyConfig from_json(const json& j) {
  StudyConfig c;
  Reader root(j, "");
  root.get("seed", c.seed);
  root.get("workers", c.workers);
  {
    Reader r = root.sub("model");
    EncoderConfig& m = c.model;
    r.get("image_height", m.image_height);
    r.get("image_width", m.image_width);
    r.get("channels", m.channels);
    r.get("patch", m.patch);
    r.get("patch_dim", m.patch_dim);
    r.get("vision_hidden", m.vision_hidden);
    r.get("max_tokens", m.max_tokens);
    r.get("vocab_size", m.vocab_size);
    r.get("token_dim", m.token_dim);
    r.get("text_hidden", m.text_hidden);
    r.get("embed_dim", m.embed_dim);
    r.finish();
  }
  {
    Reader r = root.sub("data");
    r.get("resolution", c.data.resolution);
    r.get("pretrain_size", c.data.pretrain_size);
    r.get("rich_fraction", c.data.rich_fraction);
    r.get("finetune_size", c.data.finetune_size);
    r.get("eval_size", c.data.eval_size);
    r.get("train_classes", c.data.train_classes);
    r.get("zeroshot_classes", c.data.zeroshot_classes);
    r.get("attribute_classes", c.data.attribute_classes);
    r.finish();
  }
  {
    Reader r = root.sub("pretrain");
    r.get("epochs", c.pretrain.epochs);
    r.get("batch_size", c.pretrain.batch_size);
    r.get("lr", c.pretrain.lr);
    r.get("weight_decay", c.pretrain.weight_decay);
    r.finish();
  }
  {
    Reader r = root.sub("finetune");
    r.get("epochs", c.finetune.epochs);
    r.get("batch_size", c.finetune.batch_size);
    r.get("lr", c.finetune.lr);
    r.get("weight_decay", c.finetune.weight_decay);
    r.get("lambda", c.finetune.lambda);
    read_budget(r.sub("attack"), c.finetune.attack);
    r.get("methods", c.finetune.methods);
    r.finish();
  }
  {
    Reader r = root.sub("eval");
    r.get("attacks", c.eval.attacks);
    r.get_budget_text("epsilon", c.eval.epsilon);
    r.get("subsample", c.eval.subsample);
    r.get("chunk", c.eval.chunk);
    r.finish();
  }
  {
    Reader r = root.sub("deviation");
    r.get("samples", c.deviation.samples);
    r.get("batch_size", c.deviation.batch_size);
    r.get("objectives", c.deviation.objectives);
    read_budget(r.sub("attack"), c.deviation.attack);
    r.finish();
  }
  {
    Reader r = root.sub("ablation");
    r.get("modes", c.ablation.modes);
    r.finish();
  }
  {
    Reader r = root.sub("sweep");
    r.get("lambdas", c.sweep.lambdas);
    r.finish();
  }
  root.finish();
  c.validate();
  return c;
}

StudyConfig load_config(const std::filesystem::path& path) {
  const std::string text = read_text(path);
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  return from_json(j);
}

std::uint64_t global_seed(std::uint64_t fallback) {
  const char* env = std::getenv("RALB_SEED");
  if (!env || !*env) return fallback;
  try {
    std::size_t used = 0;
    const unsigned long long v = std::stoull(env, &used, 10);
    if (used != std::string_view(env).size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw ConfigError(std::string("RALB_SEED must be a non-negative integer, got '") + env + "'");
  }
}

std::string hash_bytes(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream out;
  out << std::hex << std::setw(16) << std::setfill('0') << h;
  return out.str();
}

std::string hash_file(const std::filesystem::path& path) { return hash_bytes(read_text(path)); }

std::string hash_tree(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) return hash_file(dir);
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::recursive_directory_iterator(dir))
    if (e.is_regular_file()) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::string acc;
  for (const auto& f : files)
    acc += std::filesystem::relative(f, dir).generic_string() + ':' + hash_file(f) + '\n';
  return hash_bytes(acc);
}

ordered_json RunManifest::to_json() const {
  ordered_json j;
  j["tool_version"] = tool_version;
  j["command"] = command;
  j["config"] = config;
  ordered_json s = ordered_json::object();
  for (const auto& [k, v] : seeds) s[k] = v;
  j["seeds"] = s;
  ordered_json in = ordered_json::object();
  for (const auto& [k, v] : inputs) in[k] = v;
  j["inputs"] = in;
  return j;
}

RunManifest RunManifest::from_json(const ordered_json& j) {
  RunManifest m;
  try {
    m.tool_version = j.at("tool_version").get<std::string>();
    m.command = j.at("command").get<std::string>();
    m.config = j.at("config");
    for (const auto& [k, v] : j.at("seeds").items()) m.seeds[k] = v.get<std::uint64_t>();
    for (const auto& [k, v] : j.at("inputs").items()) m.inputs[k] = v.get<std::string>();
  } catch (const json::exception& e) {
    throw DataError(std::string("run manifest: ") + e.what());
  }
  return m;
}

void RunManifest::write(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  write_text(dir / "manifest.json", to_json().dump(2) + "\n");
}

RunManifest RunManifest::read(const std::filesystem::path& path) {
  try {
    return from_json(ordered_json::parse(read_text(path)));
  } catch (const json::parse_error& e) {
    throw DataError("run manifest " + path.string() + ": " + e.what());
  }
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("write failed: " + path.string());
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace ralb::cfg
