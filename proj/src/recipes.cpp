#include "ralb/recipes.hpp"

#include "ralb/captions.hpp"
#include "ralb/checkpoint.hpp"
#include "ralb/errors.hpp"
#include "ralb/fraction.hpp"
#include "ralb/rng.hpp"

#include <cmath>
#include <iomanip>
#include <map>
#include <sstream>

namespace ralb::study {

namespace {

// Stream tags for derive_seed; one per independent random use.
enum StreamTag : std::uint64_t {
  kPretrainData = 1,
  kFinetuneData,
  kHeldInData,
  kZeroShotObjectData,
  kZeroShotAttributeData,
  kInit,
  kPretrainRun,
  kFinetuneRun,
  kEval,
  kDeviation,
  kShuffle,
};

std::vector<std::string> all_shapes(const cfg::StudyConfig& c) {
  std::vector<std::string> out = c.data.train_classes;
  out.insert(out.end(), c.data.zeroshot_classes.begin(), c.data.zeroshot_classes.end());
  return out;
}

NamedDataset generate(std::size_t n, const data::DatasetSplit& split, data::Partition p,
                      std::uint64_t seed, const std::string& name, int resolution,
                      data::CaptionStyle style = data::CaptionStyle::Rich) {
  NamedDataset d;
  d.split = split;
  d.partition = p;
  d.seed = seed;
  d.dataset = data::generate_dataset(n, split, seed, p, style, {resolution, resolution});
  d.dataset.name = name;
  return d;
}

std::string fmt(double v) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(6) << v;
  return out.str();
}

std::string lambda_text(double l) {
  std::ostringstream out;
  out << l;
  return out.str();
}

}  // namespace

Vocabulary desk_vocabulary(const cfg::StudyConfig& config) {
  std::vector<std::string> corpus;
  for (const auto& spec : data::all_specs()) {
    corpus.push_back(data::caption_of(spec, data::CaptionStyle::Rich).raw_text);
    corpus.push_back(data::caption_of(spec, data::CaptionStyle::Short).raw_text);
  }
  for (const auto& t : data::class_templates(all_shapes(config))) corpus.push_back(t);
  for (const auto& t : data::class_templates(config.data.attribute_classes)) corpus.push_back(t);
  corpus.push_back(",");  // nouns-only captions are comma separated
  Vocabulary v = Vocabulary::build(corpus);
  if (static_cast<int>(v.size()) > config.model.vocab_size)
    throw ConfigError("desk vocabulary has " + std::to_string(v.size()) +
                      " words but model.vocab_size is " + std::to_string(config.model.vocab_size));
  return v;
}

DeskData make_desk_data(const cfg::StudyConfig& c, std::uint64_t seed) {
  c.validate();
  const int res = c.data.resolution;
  const data::DatasetSplit pre_split{all_shapes(c), {}, data::TaskKind::ObjectLabel};
  const data::DatasetSplit obj_split{c.data.train_classes, c.data.zeroshot_classes,
                                     data::TaskKind::ObjectLabel};
  const data::DatasetSplit attr_split{c.data.attribute_classes, {}, data::TaskKind::AttributeLabel};

  DeskData d;
  d.pretrain = generate(static_cast<std::size_t>(c.data.pretrain_size), pre_split, data::Partition::Train,
                        derive_seed(seed, kPretrainData), kPretrainSet, res);
  const auto n_rich = static_cast<std::size_t>(std::llround(c.data.rich_fraction * c.data.pretrain_size));
  for (std::size_t i = n_rich; i < d.pretrain.dataset.size(); ++i) {
    AnnotatedCaption shortened = data::caption_of(d.pretrain.dataset.specs[i], data::CaptionStyle::Short);
    shortened.id = d.pretrain.dataset.captions[i].id;
    d.pretrain.dataset.captions[i] = std::move(shortened);
  }
  d.finetune = generate(static_cast<std::size_t>(c.data.finetune_size), obj_split, data::Partition::Train,
                        derive_seed(seed, kFinetuneData), kFinetuneSet, res);
  const auto n_eval = static_cast<std::size_t>(c.data.eval_size);
  d.heldin = generate(n_eval, obj_split, data::Partition::Train, derive_seed(seed, kHeldInData),
                      kHeldInSet, res);
  if (!c.data.zeroshot_classes.empty())
    d.zs_object = generate(n_eval, obj_split, data::Partition::ZeroShot,
                           derive_seed(seed, kZeroShotObjectData), kZeroShotObjectSet, res);
  if (!c.data.attribute_classes.empty())
    d.zs_attribute = generate(n_eval, attr_split, data::Partition::Train,
                              derive_seed(seed, kZeroShotAttributeData), kZeroShotAttributeSet, res);
  d.vocab = desk_vocabulary(c);
  return d;
}

std::vector<TokenSequence> tokenize_all(const std::vector<AnnotatedCaption>& captions,
                                        const Vocabulary& vocab) {
  std::vector<TokenSequence> out;
  out.reserve(captions.size());
  for (const auto& c : captions) out.push_back(tokenize(c.raw_text, vocab));
  return out;
}

train::TrainingData training_data(const data::Dataset& d, const Vocabulary& vocab) {
  train::TrainingData td;
  td.images = d.images;
  td.labels = d.labels;
  td.captions = tokenize_all(d.captions, vocab);
  for (const auto& t : data::class_templates(d.class_names)) td.class_templates.push_back(tokenize(t, vocab));
  return td;
}

train::TrainConfig pretrain_config(const cfg::StudyConfig& c, std::uint64_t seed) {
  train::TrainConfig t = train::TrainConfig::desk(train::Method::CleanPretrain);
  t.epochs = c.pretrain.epochs;
  t.batch_size = c.pretrain.batch_size;
  t.lr0 = static_cast<float>(c.pretrain.lr);
  t.weight_decay = static_cast<float>(c.pretrain.weight_decay);
  t.seed = derive_seed(seed, kPretrainRun);
  return t;
}

train::TrainConfig finetune_config(const cfg::StudyConfig& c, train::Method method, std::uint64_t seed) {
  train::TrainConfig t = train::TrainConfig::desk(method);
  t.epochs = c.finetune.epochs;
  t.batch_size = c.finetune.batch_size;
  t.lr0 = static_cast<float>(c.finetune.lr);
  t.weight_decay = static_cast<float>(c.finetune.weight_decay);
  t.lambda = static_cast<float>(c.finetune.lambda);
  t.attack = c.finetune.attack.spec();
  t.seed = derive_seed(seed, kFinetuneRun);
  return t;
}

train::TrainResult pretrain(const cfg::StudyConfig& c, const data::Dataset& d, const Vocabulary& vocab,
                            std::uint64_t seed) {
  ModelState init = init_model(c.model, derive_seed(seed, kInit));
  return train::train(std::move(init), training_data(d, vocab), pretrain_config(c, seed));
}

train::TrainResult finetune(const cfg::StudyConfig& c, const ModelState& pretrained, const data::Dataset& d,
                            const Vocabulary& vocab, train::Method method, std::uint64_t seed) {
  ModelState start = pretrained.has_snapshot() ? pretrained : snapshot(pretrained);
  return train::train(std::move(start), training_data(d, vocab), finetune_config(c, method, seed));
}

eval::EvalDataset eval_dataset(const std::string& name, const data::Dataset& d, bool zero_shot) {
  return {name, d.class_names, d.images, d.labels, zero_shot};
}

std::vector<eval::EvalDataset> eval_datasets(const DeskData& data) {
  std::vector<eval::EvalDataset> out{eval_dataset(kHeldInSet, data.heldin.dataset, false)};
  if (data.zs_object.dataset.size() > 0)
    out.push_back(eval_dataset(kZeroShotObjectSet, data.zs_object.dataset, true));
  if (data.zs_attribute.dataset.size() > 0)
    out.push_back(eval_dataset(kZeroShotAttributeSet, data.zs_attribute.dataset, true));
  return out;
}

std::vector<eval::AttackPlan> attack_plans(const cfg::StudyConfig& c) {
  std::optional<float> eps;
  if (c.eval.epsilon) eps = parse_fraction(*c.eval.epsilon);
  std::vector<eval::AttackPlan> plans;
  for (const auto& a : c.eval.attacks) plans.push_back(eval::attack_preset(a, eps));
  return plans;
}

eval::RobustOptions robust_options(const cfg::StudyConfig& c, std::uint64_t seed) {
  eval::RobustOptions o;
  o.seed = derive_seed(seed, kEval);
  if (c.eval.subsample) o.subsample = static_cast<std::size_t>(*c.eval.subsample);
  o.chunk = static_cast<std::size_t>(c.eval.chunk);
  o.workers = static_cast<std::size_t>(c.workers);
  return o;
}

attack::DeviationSample deviation_sample(const ModelState& state, const data::Dataset& d,
                                         const Vocabulary& vocab) {
  attack::DeviationSample s;
  s.images = d.images;
  s.labels = d.labels;
  std::vector<TokenSequence> templates;
  for (const auto& t : data::class_templates(d.class_names)) templates.push_back(tokenize(t, vocab));
  s.template_embs = encode_texts(state, templates).emb;
  s.caption_embs = encode_texts(state, tokenize_all(d.captions, vocab)).emb;
  return s;
}

std::vector<attack::AttackObjective> deviation_objectives(const cfg::StudyConfig& c) {
  std::vector<attack::AttackObjective> out;
  for (const auto& name : c.deviation.objectives)
    out.push_back({attack::parse_objective(name), static_cast<float>(c.finetune.lambda)});
  return out;
}

void rethrow_in_stage(const std::string& stage) {
  const std::string prefix = "stage '" + stage + "' failed: ";
  try {
    throw;
  } catch (const NumericError& e) {
    throw NumericError(prefix + e.what());
  } catch (const ConfigError& e) {
    throw ConfigError(prefix + e.what());
  } catch (const ArgumentError& e) {
    throw ArgumentError(prefix + e.what());
  } catch (const DataError& e) {
    throw DataError(prefix + e.what());
  } catch (const std::exception& e) {
    throw DataError(prefix + e.what());
  }
}

std::vector<std::string> study_plan(const cfg::StudyConfig& c) {
  std::vector<std::string> s{"gen-data", "pretrain"};
  for (const auto& m : c.finetune.methods) s.push_back("finetune:" + m);
  s.push_back("eval");
  s.push_back("analyze-deviation");
  for (const auto& m : c.ablation.modes) s.push_back("ablate-captions:" + m);
  s.push_back("caption-stats");
  for (double l : c.sweep.lambdas) s.push_back("sweep-lambda:" + lambda_text(l));
  return s;
}

namespace {

std::string averages_row(const eval::EvalReport& report, const std::string& method, const std::string& attack) {
  const eval::MethodAverages& a = report.averages.at(method).at(attack);
  return fmt(a.clean_held_in) + ',' + fmt(a.robust_held_in) + ',' + fmt(a.clean_zero_shot) + ',' +
         fmt(a.robust_zero_shot);
}

}  // namespace

std::vector<std::string> recipe_full_study(const cfg::StudyConfig& c, const std::filesystem::path& out,
                                           const StudyOptions& options) {
  c.validate();
  const std::vector<std::string> plan = study_plan(c);
  if (options.dry_run) return plan;
  auto log = [&](const std::string& line) {
    if (options.log) options.log(line);
  };
  const std::uint64_t seed = c.seed;
  std::filesystem::create_directories(out / "checkpoints");
  std::filesystem::create_directories(out / "logs");

  cfg::RunManifest manifest;
  manifest.command = "report";
  manifest.config = cfg::to_json(c);
  manifest.seeds["global"] = seed;
  manifest.write(out);

  std::vector<std::string> done;
  auto stage = [&](const std::string& name, auto&& body) {
    log("[stage] " + name);
    try {
      body();
    } catch (...) {
      rethrow_in_stage(name);
    }
    done.push_back(name);
  };

  DeskData data;
  stage("gen-data", [&] {
    data = make_desk_data(c, seed);
    data.vocab.save(out / "vocab.txt");
  });

  ModelState pretrained;
  stage("pretrain", [&] {
    const auto r = pretrain(c, data.pretrain.dataset, data.vocab, seed);
    pretrained = r.state;
    save_checkpoint(out / "checkpoints" / "pretrained.ckpt", pretrained);
    cfg::write_text(out / "logs" / "pretrain.jsonl", train::train_log_jsonl(r.log));
  });

  // Fine-tuned states keyed by run name; identical runs are shared.
  std::map<std::string, ModelState> runs;
  const train::TrainingData base_td = training_data(data.finetune.dataset, data.vocab);
  auto run_finetune = [&](const std::string& key, train::Method method, double lambda,
                          const std::vector<TokenSequence>* captions) {
    if (runs.count(key)) return;
    train::TrainConfig tc = finetune_config(c, method, seed);
    tc.lambda = static_cast<float>(lambda);
    train::TrainingData td = base_td;
    if (captions) td.captions = *captions;
    const auto r = train::train(snapshot(pretrained), td, tc);
    runs.emplace(key, r.state);
    cfg::write_text(out / "logs" / (key + ".jsonl"), train::train_log_jsonl(r.log));
  };
  auto qt_key = [](double lambda, const std::string& mode) {
    return "qt-aft_lambda" + lambda_text(lambda) + "_" + mode;
  };

  std::map<std::string, ModelState> methods{{"pretrained", pretrained}};
  for (const auto& m : c.finetune.methods) {
    stage("finetune:" + m, [&] {
      const train::Method method = train::parse_method(m);
      const std::string key = method == train::Method::QTAFT ? qt_key(c.finetune.lambda, "full") : m;
      run_finetune(key, method, c.finetune.lambda, nullptr);
      methods.emplace(m, runs.at(key));
      save_checkpoint(out / "checkpoints" / (m + ".ckpt"), runs.at(key));
    });
  }

  const auto datasets = eval_datasets(data);
  const auto plans = attack_plans(c);
  const auto ropts = robust_options(c, seed);
  stage("eval", [&] {
    const eval::EvalReport report = eval::compare_methods(methods, data.vocab, datasets, plans, ropts);
    cfg::write_text(out / "table2_eval.csv", report.to_csv());
    cfg::write_text(out / "table2_eval.json", report.to_json());
  });

  stage("analyze-deviation", [&] {
    NamedDataset sample = generate(static_cast<std::size_t>(c.deviation.samples),
                                   data.finetune.split, data::Partition::Train,
                                   derive_seed(seed, kDeviation), "deviation", c.data.resolution);
    const auto rows = attack::deviation_analysis(
        pretrained, deviation_sample(pretrained, sample.dataset, data.vocab), deviation_objectives(c),
        c.deviation.attack.spec(), static_cast<std::size_t>(c.deviation.batch_size),
        derive_seed(seed, kDeviation));
    cfg::write_text(out / "table1_deviation.csv", attack::deviation_csv(rows));
  });

  std::string ablation_csv = "mode,clean_heldin,robust_heldin,clean_zero_shot,robust_zero_shot,attack,seed\n";
  for (const auto& mode_name : c.ablation.modes) {
    stage("ablate-captions:" + mode_name, [&] {
      const AblationKind kind = parse_ablation_kind(mode_name);
      std::vector<TokenSequence> caps;
      for (std::size_t i = 0; i < data.finetune.dataset.captions.size(); ++i) {
        const AblationMode mode{kind, derive_seed(seed, kShuffle, i)};
        caps.push_back(tokenize(apply_ablation(data.finetune.dataset.captions[i], mode), data.vocab));
      }
      const std::string key = qt_key(c.finetune.lambda, mode_name);
      run_finetune(key, train::Method::QTAFT, c.finetune.lambda, &caps);
      const eval::EvalReport r =
          eval::compare_methods({{mode_name, runs.at(key)}}, data.vocab, datasets, plans, ropts);
      for (const auto& p : plans)
        ablation_csv += mode_name + ',' + averages_row(r, mode_name, p.name) + ',' + p.name + ',' +
                        std::to_string(seed) + '\n';
    });
  }
  if (!c.ablation.modes.empty()) cfg::write_text(out / "table3_caption_ablation.csv", ablation_csv);

  stage("caption-stats", [&] {
    const CaptionStats stats = caption_stats(data.finetune.dataset.captions, &pretrained, &data.vocab,
                                             data.finetune.dataset.images);
    cfg::write_text(out / "fig3_caption_stats.csv", caption_stats_csv(stats));
  });

  std::string sweep_csv = "lambda,clean_heldin,robust_heldin,clean_zero_shot,robust_zero_shot,attack,seed\n";
  for (double l : c.sweep.lambdas) {
    stage("sweep-lambda:" + lambda_text(l), [&] {
      const std::string key = qt_key(l, "full");
      run_finetune(key, train::Method::QTAFT, l, nullptr);
      const eval::EvalReport r = eval::compare_methods({{key, runs.at(key)}}, data.vocab, datasets, plans, ropts);
      for (const auto& p : plans)
        sweep_csv += lambda_text(l) + ',' + averages_row(r, key, p.name) + ',' + p.name + ',' +
                     std::to_string(seed) + '\n';
    });
  }
  if (!c.sweep.lambdas.empty()) cfg::write_text(out / "lambda_sweep.csv", sweep_csv);
  return done;
}

}  // namespace ralb::study
