#include "ralb/cli.hpp"

#include "ralb/captions.hpp"
#include "ralb/checkpoint.hpp"
#include "ralb/config.hpp"
#include "ralb/dataset_io.hpp"
#include "ralb/errors.hpp"
#include "ralb/fraction.hpp"
#include "ralb/raw_tensor.hpp"
#include "ralb/recipes.hpp"
#include "ralb/rng.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

namespace ralb::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
};

// A config file, a run manifest (its "config" block is used), or nothing.
cfg::StudyConfig resolve_config(const Common& c) {
  json j = json::object();
  if (!c.config_path.empty()) {
    try {
      j = json::parse(cfg::read_text(c.config_path));
    } catch (const json::parse_error& e) {
      throw ConfigError("config " + c.config_path + ": " + e.what());
    }
    if (j.is_object() && j.contains("tool_version") && j.contains("config")) j = j["config"];
  }
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  if (!j.contains("seed")) j["seed"] = cfg::global_seed(0);
  if (c.seed) j["seed"] = *c.seed;
  if (c.workers) j["workers"] = *c.workers;
  return cfg::from_json(j);
}

void add_common(CLI::App* sub, Common& c, bool with_config = true) {
  if (with_config) sub->add_option("--config", c.config_path, "study config JSON or run manifest");
  sub->add_option("--seed", c.seed, "global seed (overrides config and RALB_SEED)");
  sub->add_option("--workers", c.workers, "worker threads; never changes results")->check(CLI::PositiveNumber);
}

cfg::RunManifest manifest_for(const std::string& command, const cfg::StudyConfig& config) {
  cfg::RunManifest m;
  m.command = command;
  m.config = cfg::to_json(config);
  m.seeds["global"] = config.seed;
  return m;
}

void record_input(cfg::RunManifest& m, const fs::path& p) { m.inputs[p.generic_string()] = cfg::hash_tree(p); }

// Manifest next to a single output file: <file>.manifest.json.
void write_file_manifest(const fs::path& file, const cfg::RunManifest& m) {
  cfg::write_text(fs::path(file.string() + ".manifest.json"), m.to_json().dump(2) + "\n");
}

float parse_budget(const std::string& text, const char* what) {
  try {
    return parse_fraction(text);
  } catch (const ArgumentError& e) {
    throw ArgumentError(std::string(what) + ": " + e.what());
  }
}

Vocabulary load_vocab(const fs::path& p) {
  if (!fs::exists(p)) throw DataError("vocabulary not found: " + p.string());
  return Vocabulary::load(p);
}

std::vector<double> parse_lambdas(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_budget(item, "--lambdas"));
  if (out.empty()) throw ArgumentError("--lambdas: empty list");
  return out;
}

eval::EvalDataset load_eval_dataset(const fs::path& dir, const cfg::StudyConfig& config) {
  const data::StoredDataset s = data::read_dataset(dir);
  // Fine-tuning only sees object labels, so attribute tasks count as zero-shot.
  (void)config;
  const bool zero_shot =
      s.partition == data::Partition::ZeroShot || s.split.task_kind == data::TaskKind::AttributeLabel;
  return study::eval_dataset(s.dataset.name.empty() ? dir.filename().string() : s.dataset.name, s.dataset,
                             zero_shot);
}

std::vector<eval::AttackPlan> plans_from(const std::vector<std::string>& attacks,
                                         const std::optional<std::string>& epsilon,
                                         const cfg::StudyConfig& config) {
  std::optional<float> eps;
  if (epsilon) eps = parse_budget(*epsilon, "--epsilon");
  else if (config.eval.epsilon) eps = parse_budget(*config.eval.epsilon, "eval.epsilon");
  std::vector<eval::AttackPlan> out;
  for (const auto& a : attacks.empty() ? config.eval.attacks : attacks) out.push_back(eval::attack_preset(a, eps));
  return out;
}

std::string fixed6(double v) {
  std::ostringstream o;
  o << std::fixed << std::setprecision(6) << v;
  return o.str();
}

// ---- subcommands ----

void cmd_gen_data(const Common& common, const fs::path& out_dir, std::ostream& out) {
  const cfg::StudyConfig config = resolve_config(common);
  const study::DeskData d = study::make_desk_data(config, config.seed);
  for (const study::NamedDataset* nd : {&d.pretrain, &d.finetune, &d.heldin, &d.zs_object, &d.zs_attribute}) {
    if (nd->dataset.size() == 0) continue;
    data::write_dataset(out_dir / nd->dataset.name, {nd->dataset, nd->split, nd->partition, nd->seed});
  }
  d.vocab.save(out_dir / "vocab.txt");
  manifest_for("gen-data", config).write(out_dir);
  out << "wrote datasets to " << out_dir.string() << '\n';
}

void cmd_pretrain(const Common& common, const fs::path& data_dir, const fs::path& out_dir, std::ostream& out) {
  const cfg::StudyConfig config = resolve_config(common);
  const Vocabulary vocab = load_vocab(data_dir / "vocab.txt");
  const data::StoredDataset s = data::read_dataset(data_dir / study::kPretrainSet);
  const train::TrainResult r = study::pretrain(config, s.dataset, vocab, config.seed);
  fs::create_directories(out_dir);
  save_checkpoint(out_dir / "model.ckpt", r.state);
  vocab.save(out_dir / "vocab.txt");
  cfg::write_text(out_dir / "train_log.jsonl", train::train_log_jsonl(r.log));
  cfg::RunManifest m = manifest_for("pretrain", config);
  record_input(m, data_dir / study::kPretrainSet);
  record_input(m, data_dir / "vocab.txt");
  m.write(out_dir);
  out << "pretrained " << r.log.size() << " steps, final loss " << (r.log.empty() ? 0.0f : r.log.back().outer_loss)
      << '\n';
}

struct FinetuneArgs {
  std::string method;
  std::optional<double> lambda;
  std::optional<int> epochs;
  std::optional<double> lr;
  std::string data_dir, init, out_dir, captions;
};

void cmd_finetune(const Common& common, const FinetuneArgs& a, std::ostream& out) {
  cfg::StudyConfig config = resolve_config(common);
  if (a.lambda) config.finetune.lambda = *a.lambda;
  if (a.epochs) config.finetune.epochs = *a.epochs;
  if (a.lr) config.finetune.lr = *a.lr;
  config.validate();
  const train::Method method = train::parse_method(a.method);
  if (method == train::Method::CleanPretrain) throw ArgumentError("finetune: use the pretrain subcommand");
  const fs::path data_dir(a.data_dir);
  const Vocabulary vocab = load_vocab(data_dir / "vocab.txt");
  data::StoredDataset s = data::read_dataset(data_dir / study::kFinetuneSet);
  if (!a.captions.empty()) {
    // Replace captions by id, e.g. with an ablated corpus.
    std::map<std::string, AnnotatedCaption> by_id;
    for (auto& c : read_captions(a.captions)) by_id.emplace(c.id, std::move(c));
    for (auto& c : s.dataset.captions) {
      auto it = by_id.find(c.id);
      if (it == by_id.end()) throw DataError("finetune: caption file has no entry for '" + c.id + "'");
      c = it->second;
    }
  }
  const ModelState init = load_checkpoint(a.init);
  const train::TrainResult r = study::finetune(config, init, s.dataset, vocab, method, config.seed);
  const fs::path out_dir(a.out_dir);
  fs::create_directories(out_dir);
  save_checkpoint(out_dir / "model.ckpt", r.state);
  vocab.save(out_dir / "vocab.txt");
  cfg::write_text(out_dir / "train_log.jsonl", train::train_log_jsonl(r.log));
  cfg::RunManifest m = manifest_for("finetune --method " + a.method, config);
  record_input(m, data_dir / study::kFinetuneSet);
  record_input(m, a.init);
  if (!a.captions.empty()) record_input(m, a.captions);
  m.write(out_dir);
  out << a.method << ": " << r.log.size() << " steps\n";
}

struct AttackArgs {
  std::string ckpt, dataset, vocab, attack = "pgd10-ce", out_dir;
  std::optional<std::string> epsilon;
};

void cmd_attack(const Common& common, const AttackArgs& a, std::ostream& out) {
  const cfg::StudyConfig config = resolve_config(common);
  const ModelState state = load_checkpoint(a.ckpt);
  const Vocabulary vocab = load_vocab(a.vocab.empty() ? fs::path(a.dataset).parent_path() / "vocab.txt" : fs::path(a.vocab));
  const data::StoredDataset s = data::read_dataset(a.dataset);
  const eval::AttackPlan plan = plans_from({a.attack}, a.epsilon, config).front();
  const Matrix templates = eval::template_embeddings(state, vocab, s.dataset.class_names);
  const auto opts = study::robust_options(config, config.seed);

  const Matrix& images = s.dataset.images;
  Matrix adv(images.rows(), images.cols());
  std::vector<bool> flipped;
  const auto chunk = static_cast<Eigen::Index>(opts.chunk);
  for (Eigen::Index lo = 0; lo < images.rows(); lo += chunk) {
    const auto len = std::min(chunk, images.rows() - lo);
    attack::SideData side;
    side.labels.assign(s.dataset.labels.begin() + lo, s.dataset.labels.begin() + lo + len);
    side.template_embs = templates;
    const auto ens = attack::ensemble_attack(state, images.middleRows(lo, len), side, plan.specs, opts.seed,
                                             static_cast<std::size_t>(lo));
    adv.middleRows(lo, len) = ens.batch.perturbed;
    flipped.insert(flipped.end(), ens.flipped.begin(), ens.flipped.end());
  }
  const auto clean_pred = attack::predict(state, images, templates);
  const auto adv_pred = attack::predict(state, adv, templates);

  const fs::path out_dir(a.out_dir);
  fs::create_directories(out_dir);
  const auto h = static_cast<std::uint32_t>(s.dataset.resolution.height);
  const auto w = static_cast<std::uint32_t>(s.dataset.resolution.width);
  write_raw_tensor(out_dir / "adversarial.rtns", {static_cast<std::uint32_t>(adv.rows()), h, w, 3},
                   std::span<const float>(adv.data(), static_cast<std::size_t>(adv.size())));
  std::string csv = "index,label,clean_pred,adv_pred,flipped\n";
  std::size_t n_flipped = 0;
  for (std::size_t i = 0; i < flipped.size(); ++i) {
    csv += std::to_string(i) + ',' + std::to_string(s.dataset.labels[i]) + ',' + std::to_string(clean_pred[i]) +
           ',' + std::to_string(adv_pred[i]) + ',' + (flipped[i] ? "1" : "0") + '\n';
    n_flipped += flipped[i];
  }
  cfg::write_text(out_dir / "attack.csv", csv);
  cfg::RunManifest m = manifest_for("attack --attack " + a.attack, config);
  record_input(m, a.ckpt);
  record_input(m, a.dataset);
  m.write(out_dir);
  out << plan.name << ": flipped " << n_flipped << " of " << flipped.size() << '\n';
}

struct EvalArgs {
  std::vector<std::string> ckpts, datasets, attacks;
  std::string data_dir, vocab, out_dir;
  std::optional<std::string> epsilon;
  std::optional<int> subsample;
};

void cmd_eval(const Common& common, const EvalArgs& a, std::ostream& out) {
  cfg::StudyConfig config = resolve_config(common);
  if (a.subsample) config.eval.subsample = *a.subsample;
  config.validate();
  std::map<std::string, ModelState> states;
  cfg::RunManifest m = manifest_for("eval", config);
  for (const auto& spec : a.ckpts) {
    const auto eq = spec.find('=');
    const std::string name = eq == std::string::npos ? fs::path(spec).parent_path().filename().string() : spec.substr(0, eq);
    const std::string path = eq == std::string::npos ? spec : spec.substr(eq + 1);
    if (name.empty()) throw ArgumentError("--ckpt: empty method name in '" + spec + "'");
    if (!states.emplace(name, load_checkpoint(path)).second) throw ArgumentError("--ckpt: duplicate name '" + name + "'");
    record_input(m, path);
  }
  std::vector<fs::path> dirs;
  for (const auto& d : a.datasets) dirs.emplace_back(d);
  if (!a.data_dir.empty()) {
    for (const char* name : {study::kHeldInSet, study::kZeroShotObjectSet, study::kZeroShotAttributeSet})
      if (fs::exists(fs::path(a.data_dir) / name)) dirs.push_back(fs::path(a.data_dir) / name);
  }
  if (dirs.empty()) throw ArgumentError("eval: give --data or at least one --dataset");
  std::vector<eval::EvalDataset> datasets;
  for (const auto& d : dirs) {
    datasets.push_back(load_eval_dataset(d, config));
    record_input(m, d);
  }
  const fs::path vocab_path = !a.vocab.empty() ? fs::path(a.vocab)
                              : !a.data_dir.empty() ? fs::path(a.data_dir) / "vocab.txt"
                                                    : dirs.front().parent_path() / "vocab.txt";
  const Vocabulary vocab = load_vocab(vocab_path);
  const auto report = eval::compare_methods(states, vocab, datasets, plans_from(a.attacks, a.epsilon, config),
                                            study::robust_options(config, config.seed));
  const fs::path out_dir(a.out_dir);
  const std::string stem = "report-" + cfg::hash_bytes(m.to_json().dump());
  cfg::write_text(out_dir / (stem + ".csv"), report.to_csv());
  cfg::write_text(out_dir / (stem + ".json"), report.to_json());
  m.write(out_dir);
  out << report.to_csv();
}

struct DeviationArgs {
  std::string ckpt, dataset, vocab, out_dir;
  std::optional<std::string> epsilon;
  std::optional<int> samples;
};

void cmd_deviation(const Common& common, const DeviationArgs& a, std::ostream& out) {
  cfg::StudyConfig config = resolve_config(common);
  if (a.epsilon) config.deviation.attack.epsilon = *a.epsilon;
  config.validate();
  const ModelState state = load_checkpoint(a.ckpt);
  data::StoredDataset s = data::read_dataset(a.dataset);
  const Vocabulary vocab =
      load_vocab(a.vocab.empty() ? fs::path(a.dataset).parent_path() / "vocab.txt" : fs::path(a.vocab));
  const std::size_t n = std::min<std::size_t>(s.dataset.size(),
                                              static_cast<std::size_t>(a.samples.value_or(config.deviation.samples)));
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  const data::Dataset sample = s.dataset.subset(idx);
  const auto rows = attack::deviation_analysis(state, study::deviation_sample(state, sample, vocab),
                                               study::deviation_objectives(config), config.deviation.attack.spec(),
                                               static_cast<std::size_t>(config.deviation.batch_size), config.seed);
  const fs::path out_dir(a.out_dir);
  cfg::write_text(out_dir / "deviation.csv", attack::deviation_csv(rows));
  cfg::RunManifest m = manifest_for("analyze-deviation", config);
  record_input(m, a.ckpt);
  record_input(m, a.dataset);
  m.write(out_dir);
  out << attack::deviation_csv(rows);
}

void cmd_ablate(const Common& common, const std::string& mode, const std::string& in, const std::string& out_path,
                std::ostream& out) {
  const cfg::StudyConfig config = resolve_config(common);
  const AblationKind kind = parse_ablation_kind(mode);
  const auto corpus = read_captions(in);
  std::vector<AnnotatedCaption> result;
  for (std::size_t i = 0; i < corpus.size(); ++i)
    result.push_back(ablate(corpus[i], AblationMode{kind, derive_seed(config.seed, i)}));
  write_captions(out_path, result);
  cfg::RunManifest m = manifest_for("ablate-captions --mode " + mode, config);
  record_input(m, in);
  write_file_manifest(out_path, m);
  out << "wrote " << result.size() << " captions (" << mode << ")\n";
}

struct StatsArgs {
  std::string in, out_path, ckpt, dataset, vocab;
};

void cmd_caption_stats(const Common& common, const StatsArgs& a, std::ostream& out) {
  const cfg::StudyConfig config = resolve_config(common);
  const auto corpus = read_captions(a.in);
  cfg::RunManifest m = manifest_for("caption-stats", config);
  record_input(m, a.in);
  CaptionStats stats;
  if (a.ckpt.empty()) {
    stats = caption_stats(corpus, nullptr, nullptr, Matrix());
  } else {
    if (a.dataset.empty()) throw ArgumentError("caption-stats: --ckpt needs --dataset for the images");
    const ModelState state = load_checkpoint(a.ckpt);
    const data::StoredDataset s = data::read_dataset(a.dataset);
    const Vocabulary vocab =
        load_vocab(a.vocab.empty() ? fs::path(a.dataset).parent_path() / "vocab.txt" : fs::path(a.vocab));
    std::map<std::string, Eigen::Index> row_of;
    for (std::size_t i = 0; i < s.dataset.captions.size(); ++i)
      row_of.emplace(s.dataset.captions[i].id, static_cast<Eigen::Index>(i));
    Matrix images(static_cast<Eigen::Index>(corpus.size()), s.dataset.images.cols());
    for (std::size_t i = 0; i < corpus.size(); ++i) {
      auto it = row_of.find(corpus[i].id);
      if (it == row_of.end()) throw DataError("caption-stats: no image for caption '" + corpus[i].id + "'");
      images.row(static_cast<Eigen::Index>(i)) = s.dataset.images.row(it->second);
    }
    stats = caption_stats(corpus, &state, &vocab, images);
    record_input(m, a.ckpt);
    record_input(m, a.dataset);
  }
  cfg::write_text(a.out_path, caption_stats_csv(stats));
  write_file_manifest(a.out_path, m);
  out << "captions " << stats.count << ", mean length " << fixed6(stats.mean_length) << '\n';
}

struct SweepArgs {
  std::string lambdas, data_dir, init, out_dir;
};

void cmd_sweep(const Common& common, const SweepArgs& a, std::ostream& out) {
  cfg::StudyConfig config = resolve_config(common);
  if (!a.lambdas.empty()) config.sweep.lambdas = parse_lambdas(a.lambdas);
  config.validate();
  const fs::path data_dir(a.data_dir);
  const Vocabulary vocab = load_vocab(data_dir / "vocab.txt");
  const data::StoredDataset ft = data::read_dataset(data_dir / study::kFinetuneSet);
  std::vector<eval::EvalDataset> datasets;
  for (const char* name : {study::kHeldInSet, study::kZeroShotObjectSet, study::kZeroShotAttributeSet})
    if (fs::exists(data_dir / name)) datasets.push_back(load_eval_dataset(data_dir / name, config));
  if (datasets.empty()) throw DataError("sweep-lambda: no evaluation datasets under " + data_dir.string());
  const ModelState init = load_checkpoint(a.init);
  const auto plans = plans_from({}, std::nullopt, config);
  std::string csv = "lambda,clean_heldin,robust_heldin,clean_zero_shot,robust_zero_shot,attack,seed\n";
  for (double l : config.sweep.lambdas) {
    cfg::StudyConfig c = config;
    c.finetune.lambda = l;
    const auto r = study::finetune(c, init, ft.dataset, vocab, train::Method::QTAFT, config.seed);
    std::ostringstream name;
    name << l;
    const auto report = eval::compare_methods({{name.str(), r.state}}, vocab, datasets, plans,
                                              study::robust_options(config, config.seed));
    for (const auto& p : plans) {
      const auto& av = report.averages.at(name.str()).at(p.name);
      csv += name.str() + ',' + fixed6(av.clean_held_in) + ',' + fixed6(av.robust_held_in) + ',' +
             fixed6(av.clean_zero_shot) + ',' + fixed6(av.robust_zero_shot) + ',' + p.name + ',' +
             std::to_string(config.seed) + '\n';
    }
  }
  const fs::path out_dir(a.out_dir);
  cfg::write_text(out_dir / "lambda_sweep.csv", csv);
  cfg::RunManifest m = manifest_for("sweep-lambda", config);
  record_input(m, data_dir / study::kFinetuneSet);
  record_input(m, a.init);
  m.write(out_dir);
  out << csv;
}

void cmd_report(const Common& common, const std::string& out_dir, bool dry_run, std::ostream& out,
                std::ostream& err) {
  const cfg::StudyConfig config = resolve_config(common);
  study::StudyOptions opts;
  opts.dry_run = dry_run;
  opts.log = [&err](const std::string& line) { err << line << '\n'; };
  const auto stages = study::recipe_full_study(config, out_dir, opts);
  if (dry_run) {
    out << "stage plan (dry run, nothing executed):\n";
    for (std::size_t i = 0; i < stages.size(); ++i) out << "  " << (i + 1) << ". " << stages[i] << '\n';
  } else {
    out << "completed " << stages.size() << " stages; reports in " << out_dir << '\n';
  }
}

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Caption-guided adversarial fine-tuning of a dual-encoder model (desk scale)", "ralb"};
  app.require_subcommand(1);
  app.set_version_flag("--version", cfg::kToolVersion);

  Common common;
  std::string out_dir, data_dir;

  auto* gen = app.add_subcommand("gen-data", "generate the synthetic datasets and vocabulary");
  add_common(gen, common);
  gen->add_option("--out", out_dir, "output directory")->required();

  auto* pre = app.add_subcommand("pretrain", "clean contrastive pretraining");
  add_common(pre, common);
  pre->add_option("--data", data_dir, "gen-data output directory")->required();
  pre->add_option("--out", out_dir, "output directory")->required();

  FinetuneArgs fa;
  auto* fin = app.add_subcommand("finetune", "adversarial fine-tuning of the image encoder");
  add_common(fin, common);
  fin->add_option("--method", fa.method, "qt-aft | qt-aft-label | fare | tecoa")->required();
  fin->add_option("--lambda", fa.lambda, "weight of the caption term");
  fin->add_option("--epochs", fa.epochs, "training epochs");
  fin->add_option("--lr", fa.lr, "initial learning rate");
  fin->add_option("--data", fa.data_dir, "gen-data output directory")->required();
  fin->add_option("--init", fa.init, "pretrained checkpoint")->required();
  fin->add_option("--captions", fa.captions, "caption JSONL replacing the fine-tuning captions by id");
  fin->add_option("--out", fa.out_dir, "output directory")->required();

  AttackArgs aa;
  auto* att = app.add_subcommand("attack", "craft adversarial examples for one dataset");
  add_common(att, common);
  att->add_option("--ckpt", aa.ckpt, "checkpoint")->required();
  att->add_option("--dataset", aa.dataset, "dataset directory")->required();
  att->add_option("--vocab", aa.vocab, "vocabulary (default: next to the dataset)");
  att->add_option("--attack", aa.attack, "attack preset");
  att->add_option("--epsilon", aa.epsilon, "budget, e.g. 4/255 or 0.0157");
  att->add_option("--out", aa.out_dir, "output directory")->required();

  EvalArgs ea;
  auto* ev = app.add_subcommand("eval", "clean and robust zero-shot evaluation");
  add_common(ev, common);
  ev->add_option("--ckpt", ea.ckpts, "NAME=PATH (repeatable)")->required();
  ev->add_option("--data", ea.data_dir, "gen-data output directory (uses its eval sets)");
  ev->add_option("--dataset", ea.datasets, "dataset directory (repeatable)");
  ev->add_option("--vocab", ea.vocab, "vocabulary file");
  ev->add_option("--attack", ea.attacks, "attack preset (repeatable)");
  ev->add_option("--epsilon", ea.epsilon, "budget override, e.g. 4/255");
  ev->add_option("--subsample", ea.subsample, "seeded subsample size per dataset");
  ev->add_option("--out", ea.out_dir, "output directory")->required();

  DeviationArgs da;
  auto* dev = app.add_subcommand("analyze-deviation", "cosine deviation of AEs per attack objective");
  add_common(dev, common);
  dev->add_option("--ckpt", da.ckpt, "checkpoint")->required();
  dev->add_option("--dataset", da.dataset, "dataset directory with captions")->required();
  dev->add_option("--vocab", da.vocab, "vocabulary file");
  dev->add_option("--samples", da.samples, "number of samples");
  dev->add_option("--epsilon", da.epsilon, "budget, e.g. 4/255");
  dev->add_option("--out", da.out_dir, "output directory")->required();

  std::string mode, in_path, out_path;
  auto* abl = app.add_subcommand("ablate-captions", "word-class caption transforms");
  add_common(abl, common);
  abl->add_option("--mode", mode, "full | nouns-only | no-adj-adv | no-nouns | no-function-words | shuffle")
      ->required();
  abl->add_option("--in", in_path, "input caption JSONL")->required();
  abl->add_option("--out", out_path, "output caption JSONL")->required();

  StatsArgs sa;
  auto* st = app.add_subcommand("caption-stats", "caption length and image-caption similarity histograms");
  add_common(st, common);
  st->add_option("--in", sa.in, "caption JSONL")->required();
  st->add_option("--out", sa.out_path, "output CSV")->required();
  st->add_option("--ckpt", sa.ckpt, "checkpoint for similarities");
  st->add_option("--dataset", sa.dataset, "dataset with the captioned images");
  st->add_option("--vocab", sa.vocab, "vocabulary file");

  SweepArgs wa;
  auto* sw = app.add_subcommand("sweep-lambda", "QT-AFT runs over a list of lambda values");
  add_common(sw, common);
  sw->add_option("--lambdas", wa.lambdas, "comma-separated, e.g. 0,1,10,100");
  sw->add_option("--data", wa.data_dir, "gen-data output directory")->required();
  sw->add_option("--init", wa.init, "pretrained checkpoint")->required();
  sw->add_option("--out", wa.out_dir, "output directory")->required();

  bool dry_run = false;
  auto* rep = app.add_subcommand("report", "run the full desk study and write every table");
  add_common(rep, common);
  rep->add_option("--out", out_dir, "output directory")->required();
  rep->add_flag("--dry-run", dry_run, "print the stage plan and exit");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::CallForVersion&) {
    out << cfg::kToolVersion << '\n';
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n";
    const CLI::App* failing = &app;
    for (const auto* sub : app.get_subcommands())
      if (sub->parsed()) failing = sub;
    err << failing->help();
    return kUsage;
  }

  try {
    if (gen->parsed()) cmd_gen_data(common, out_dir, out);
    else if (pre->parsed()) cmd_pretrain(common, data_dir, out_dir, out);
    else if (fin->parsed()) cmd_finetune(common, fa, out);
    else if (att->parsed()) cmd_attack(common, aa, out);
    else if (ev->parsed()) cmd_eval(common, ea, out);
    else if (dev->parsed()) cmd_deviation(common, da, out);
    else if (abl->parsed()) cmd_ablate(common, mode, in_path, out_path, out);
    else if (st->parsed()) cmd_caption_stats(common, sa, out);
    else if (sw->parsed()) cmd_sweep(common, wa, out);
    else if (rep->parsed()) cmd_report(common, out_dir, dry_run, out, err);
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << '\n';
    return kNumericError;
  } catch (const DomainError& e) {
    // Undefined math inside a run (e.g. a diverged model's zero-norm embedding).
    err << "numeric error: " << e.what() << '\n';
    return kNumericError;
  } catch (const StateError& e) {
    err << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const ArgumentError& e) {
    err << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kUsage;
  } catch (const UnsupportedError& e) {
    err << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    err << "data error: " << e.what() << '\n';
    return kDataError;
  }
  return kOk;
}

}  // namespace ralb::cli
