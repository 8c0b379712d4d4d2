#include "ralb/evaluation.hpp"

#include "ralb/core_math.hpp"
#include "ralb/datagen.hpp"
#include "ralb/errors.hpp"
#include "ralb/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <exception>
#include <iomanip>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>
#include <tuple>

namespace ralb::eval {

using attack::AttackSpec;
using attack::Norm;
using attack::ObjectiveKind;

Matrix template_embeddings(const ModelState& state, const Vocabulary& vocab,
                           const std::vector<std::string>& class_names) {
  std::vector<TokenSequence> tokens;
  for (const auto& t : data::class_templates(class_names)) tokens.push_back(tokenize(t, vocab));
  return encode_texts(state, tokens).emb;
}

AttackPlan attack_preset(std::string_view name, std::optional<float> epsilon) {
  auto pgd10 = [&](ObjectiveKind kind) {
    AttackSpec s;
    s.norm = Norm::Linf;
    s.epsilon = epsilon.value_or(4.0f / 255.0f);
    s.step_size = 1.0f / 255.0f;
    s.steps = 10;
    s.random_start = true;
    s.objective.kind = kind;
    return s;
  };
  AttackPlan p;
  p.name = std::string(name);
  if (name == "pgd10-ce") {
    p.specs = {pgd10(ObjectiveKind::SupLabel)};
  } else if (name == "pgd10-dlr") {
    p.specs = {pgd10(ObjectiveKind::DLR)};
  } else if (name == "ensemble") {
    p.specs = {pgd10(ObjectiveKind::SupLabel), pgd10(ObjectiveKind::DLR)};
  } else if (name == "cw") {
    p.specs = {pgd10(ObjectiveKind::CW)};
  } else if (name == "l2-pgd") {
    AttackSpec s = pgd10(ObjectiveKind::SupLabel);
    s.norm = Norm::L2;
    s.epsilon = epsilon.value_or(128.0f / 255.0f);
    s.step_size = s.epsilon > 0.0f ? s.epsilon / 4.0f : 32.0f / 255.0f;
    p.specs = {s};
  } else {
    throw ArgumentError("unknown attack preset '" + std::string(name) + "'");
  }
  return p;
}

std::vector<std::string> attack_preset_names() {
  return {"pgd10-ce", "pgd10-dlr", "ensemble", "cw", "l2-pgd"};
}

namespace {

void check_eval_inputs(const Matrix& images, const std::vector<std::int32_t>& labels,
                       const Matrix& template_embs) {
  if (images.rows() == 0) throw ArgumentError("eval: empty dataset");
  if (static_cast<Eigen::Index>(labels.size()) != images.rows())
    throw ArgumentError("eval: one label per image required");
  if (template_embs.rows() == 0) throw ArgumentError("eval: no class templates");
  for (auto y : labels)
    if (y < 0 || y >= template_embs.rows())
      throw ArgumentError("eval: templates do not cover label " + std::to_string(y));
}

std::vector<bool> correct_mask(const ModelState& state, const Matrix& images,
                               const std::vector<std::int32_t>& labels, const Matrix& templates,
                               std::size_t chunk) {
  std::vector<bool> ok;
  for (Eigen::Index lo = 0; lo < images.rows(); lo += static_cast<Eigen::Index>(chunk)) {
    const auto len = std::min<Eigen::Index>(static_cast<Eigen::Index>(chunk), images.rows() - lo);
    const auto pred = attack::predict(state, images.middleRows(lo, len), templates);
    for (Eigen::Index r = 0; r < len; ++r) ok.push_back(pred[r] == labels[lo + r]);
  }
  return ok;
}

double fraction(const std::vector<bool>& v) {
  const auto hits = std::count(v.begin(), v.end(), true);
  return static_cast<double>(hits) / static_cast<double>(v.size());
}

}  // namespace

double eval_clean(const ModelState& state, const Matrix& images,
                  const std::vector<std::int32_t>& labels, const Matrix& template_embs) {
  check_eval_inputs(images, labels, template_embs);
  return fraction(correct_mask(state, images, labels, template_embs, kDefaultChunk));
}

std::vector<std::size_t> draw_subsample(std::size_t n, std::size_t k, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  if (k >= n) return idx;
  Rng rng(derive_seed(seed, 0x5ab5));
  for (std::size_t i = 0; i < k; ++i) std::swap(idx[i], idx[i + rng.below(n - i)]);
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

RobustResult eval_robust(const ModelState& state, const Matrix& all_images,
                         const std::vector<std::int32_t>& all_labels, const Matrix& template_embs,
                         const AttackPlan& plan, const RobustOptions& options) {
  check_eval_inputs(all_images, all_labels, template_embs);
  if (plan.specs.empty()) throw ArgumentError("eval_robust: attack plan has no specs");
  if (options.chunk == 0) throw ArgumentError("eval_robust: chunk must be >= 1");

  RobustResult res;
  const auto n = static_cast<std::size_t>(all_images.rows());
  res.indices = options.subsample ? draw_subsample(n, *options.subsample, options.seed)
                                  : draw_subsample(n, n, options.seed);
  Matrix images(static_cast<Eigen::Index>(res.indices.size()), all_images.cols());
  std::vector<std::int32_t> labels;
  for (std::size_t k = 0; k < res.indices.size(); ++k) {
    images.row(static_cast<Eigen::Index>(k)) = all_images.row(static_cast<Eigen::Index>(res.indices[k]));
    labels.push_back(all_labels[res.indices[k]]);
  }

  res.clean_correct = correct_mask(state, images, labels, template_embs, options.chunk);

  // Chunks are independent (per-sample streams depend only on the global
  // index), so any worker count gives the same result.
  const auto chunk = static_cast<Eigen::Index>(options.chunk);
  const std::size_t n_chunks = (res.indices.size() + options.chunk - 1) / options.chunk;
  std::vector<attack::EnsembleResult> results(n_chunks);
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto work = [&] {
    for (std::size_t c = next++; c < n_chunks; c = next++) {
      try {
        const auto lo = static_cast<Eigen::Index>(c) * chunk;
        const auto len = std::min<Eigen::Index>(chunk, images.rows() - lo);
        attack::SideData side;
        side.labels.assign(labels.begin() + lo, labels.begin() + lo + len);
        side.template_embs = template_embs;
        results[c] = attack::ensemble_attack(state, images.middleRows(lo, len), side, plan.specs,
                                             options.seed, static_cast<std::size_t>(lo));
      } catch (...) {
        std::lock_guard<std::mutex> lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const std::size_t n_threads = std::min<std::size_t>(std::max<std::size_t>(options.workers, 1), n_chunks);
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < n_threads; ++t) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);

  for (std::size_t c = 0; c < n_chunks; ++c) {
    if (c == 0) res.substitutions = results[c].substitutions;
    for (std::size_t r = 0; r < results[c].flipped.size(); ++r)
      res.robust_correct.push_back(res.clean_correct[c * options.chunk + r] && !results[c].flipped[r]);
  }
  res.clean_accuracy = fraction(res.clean_correct);
  res.accuracy = fraction(res.robust_correct);
  return res;
}

const ReportRow& EvalReport::at(const std::string& method, const std::string& dataset,
                                const std::string& attack) const {
  for (const auto& r : rows)
    if (r.method == method && r.dataset == dataset && r.attack == attack) return r;
  throw ArgumentError("eval report: no row for " + method + "/" + dataset + "/" + attack);
}

std::string EvalReport::to_csv() const {
  std::ostringstream out;
  out << "method,dataset,zero_shot,attack,clean_acc,robust_acc,n,seed\n" << std::fixed
      << std::setprecision(6);
  for (const auto& r : rows)
    out << r.method << ',' << r.dataset << ',' << (r.zero_shot ? 1 : 0) << ',' << r.attack << ','
        << r.clean_accuracy << ',' << r.robust_accuracy << ',' << r.n << ',' << r.seed << '\n';
  return out.str();
}

std::string EvalReport::to_json() const {
  nlohmann::ordered_json j;
  auto rows_j = nlohmann::ordered_json::array();
  for (const auto& r : rows)
    rows_j.push_back({{"method", r.method},
                      {"dataset", r.dataset},
                      {"zero_shot", r.zero_shot},
                      {"attack", r.attack},
                      {"clean_acc", r.clean_accuracy},
                      {"robust_acc", r.robust_accuracy},
                      {"n", r.n},
                      {"seed", r.seed}});
  j["rows"] = std::move(rows_j);
  nlohmann::ordered_json avg;
  for (const auto& [method, per_attack] : averages)
    for (const auto& [attack, a] : per_attack)
      avg[method][attack] = {{"clean_held_in", a.clean_held_in},
                             {"robust_held_in", a.robust_held_in},
                             {"clean_zero_shot", a.clean_zero_shot},
                             {"robust_zero_shot", a.robust_zero_shot}};
  j["averages"] = std::move(avg);
  return j.dump(2) + "\n";
}

EvalReport compare_methods(const std::map<std::string, ModelState>& checkpoints,
                           const Vocabulary& vocab, const std::vector<EvalDataset>& datasets,
                           const std::vector<AttackPlan>& plans, const RobustOptions& options) {
  if (checkpoints.empty()) throw ArgumentError("compare_methods: no checkpoints");
  if (datasets.empty()) throw ArgumentError("compare_methods: no datasets");
  const EncoderConfig& config = checkpoints.begin()->second.config;
  for (const auto& [name, st] : checkpoints)
    if (!(st.config == config))
      throw ArgumentError("compare_methods: checkpoint '" + name + "' has a different encoder config");

  EvalReport report;
  // std::map iterates methods in name order.
  for (const auto& [method, state] : checkpoints) {
    for (const auto& ds : datasets) {
      const Matrix templates = template_embeddings(state, vocab, ds.class_names);
      for (const auto& plan : plans) {
        const RobustResult r = eval_robust(state, ds.images, ds.labels, templates, plan, options);
        report.rows.push_back({method, ds.name, ds.zero_shot, plan.name, r.clean_accuracy,
                               r.accuracy, r.indices.size(), options.seed});
      }
    }
  }
  std::sort(report.rows.begin(), report.rows.end(), [](const ReportRow& a, const ReportRow& b) {
    return std::tie(a.method, a.dataset, a.attack) < std::tie(b.method, b.dataset, b.attack);
  });
  for (const auto& [method, state] : checkpoints) {
    for (const auto& plan : plans) {
      MethodAverages a;
      int held = 0, zs = 0;
      for (const auto& r : report.rows) {
        if (r.method != method || r.attack != plan.name) continue;
        if (r.zero_shot) {
          a.clean_zero_shot += r.clean_accuracy;
          a.robust_zero_shot += r.robust_accuracy;
          ++zs;
        } else {
          a.clean_held_in += r.clean_accuracy;
          a.robust_held_in += r.robust_accuracy;
          ++held;
        }
      }
      if (held) a.clean_held_in /= held, a.robust_held_in /= held;
      if (zs) a.clean_zero_shot /= zs, a.robust_zero_shot /= zs;
      report.averages[method][plan.name] = a;
    }
  }
  return report;
}

}  // namespace ralb::eval
