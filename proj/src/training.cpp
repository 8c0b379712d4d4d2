#include "ralb/training.hpp"

#include "ralb/errors.hpp"
#include "ralb/optimizer.hpp"
#include "ralb/rng.hpp"

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>

namespace ralb::train {

using attack::AttackObjective;
using attack::ObjectiveKind;

Method parse_method(std::string_view name) {
  if (name == "qt-aft") return Method::QTAFT;
  if (name == "qt-aft-label") return Method::QTAFTLabel;
  if (name == "fare") return Method::FARE;
  if (name == "tecoa") return Method::TeCoA;
  if (name == "pretrain") return Method::CleanPretrain;
  throw ArgumentError("unknown training method '" + std::string(name) + "'");
}

std::string method_name(Method m) {
  switch (m) {
    case Method::QTAFT: return "qt-aft";
    case Method::QTAFTLabel: return "qt-aft-label";
    case Method::FARE: return "fare";
    case Method::TeCoA: return "tecoa";
    case Method::CleanPretrain: return "pretrain";
  }
  return "qt-aft";
}

namespace {

attack::AttackSpec training_attack() {
  attack::AttackSpec s;
  s.norm = attack::Norm::Linf;
  s.epsilon = 4.0f / 255.0f;
  s.step_size = 1.0f / 255.0f;
  s.steps = 10;
  // From x' = x with theta = theta_orig the Unsup gradient is exactly zero, so
  // a training attack without a random start never moves.
  s.random_start = true;
  return s;
}

bool contrastive(Method m) {
  return m == Method::QTAFT || m == Method::QTAFTLabel || m == Method::CleanPretrain;
}

}  // namespace

TrainConfig TrainConfig::desk(Method m) {
  TrainConfig c;
  c.method = m;
  c.attack = training_attack();
  return c;
}

TrainConfig TrainConfig::full_scale(Method m) {
  TrainConfig c = desk(m);
  c.epochs = 2;
  c.batch_size = 128;
  c.lr0 = 1e-5f;
  c.weight_decay = 1e-4f;
  c.lambda = 10.0f;
  return c;
}

void TrainConfig::validate() const {
  if (!(lr0 > 0.0f)) throw ConfigError("train: lr0 must be > 0");
  if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  if (contrastive(method) && batch_size < 2)
    throw ConfigError("train: contrastive method '" + method_name(method) + "' needs batch_size >= 2");
  if (!(lambda >= 0.0f)) throw ConfigError("train: lambda must be >= 0");
  if (!(weight_decay >= 0.0f)) throw ConfigError("train: weight_decay must be >= 0");
  attack.validate();
}

float cosine_lr(long step, long total_steps, float lr0) {
  if (total_steps < 1) throw ArgumentError("cosine_lr: total_steps must be >= 1");
  if (step < 0 || step > total_steps) throw ArgumentError("cosine_lr: step out of range");
  const double ratio = static_cast<double>(step) / static_cast<double>(total_steps);
  return static_cast<float>(lr0 * 0.5 * (1.0 + std::cos(3.14159265358979323846 * ratio)));
}

long steps_per_epoch(std::size_t n, int batch_size) {
  return batch_size > 0 ? static_cast<long>(n / static_cast<std::size_t>(batch_size)) : 0;
}

namespace {

// Bias vectors are exempt from weight decay.
std::vector<bool> decay_mask(const std::vector<Matrix*>& params) {
  std::vector<bool> mask;
  for (const Matrix* p : params) mask.push_back(p->rows() > 1);
  return mask;
}

struct MethodContext {
  AttackObjective objective;
  Matrix caption_embs;   // per image (QT-AFT)
  Matrix template_embs;  // per class (TeCoA, QT-AFT w/ label)
};

MethodContext method_context(const ModelState& state, const TrainingData& data,
                             const TrainConfig& cfg) {
  MethodContext ctx;
  ctx.objective.lambda = cfg.lambda;
  switch (cfg.method) {
    case Method::QTAFT:
      if (data.captions.size() != data.labels.size() && data.captions.size() != static_cast<std::size_t>(data.images.rows()))
        throw ArgumentError("train: qt-aft needs one caption per image");
      ctx.objective.kind = ObjectiveKind::QTAFT;
      ctx.caption_embs = encode_texts(state, data.captions).emb;
      break;
    case Method::QTAFTLabel:
      ctx.objective.kind = ObjectiveKind::QTAFT;
      break;
    case Method::FARE: ctx.objective.kind = ObjectiveKind::Unsup; break;
    case Method::TeCoA: ctx.objective.kind = ObjectiveKind::SupLabel; break;
    case Method::CleanPretrain: break;
  }
  if (cfg.method == Method::TeCoA || cfg.method == Method::QTAFTLabel) {
    if (data.class_templates.empty()) throw ArgumentError("train: method needs class templates");
    if (static_cast<Eigen::Index>(data.labels.size()) != data.images.rows())
      throw ArgumentError("train: method needs one label per image");
    ctx.template_embs = encode_texts(state, data.class_templates).emb;
  }
  return ctx;
}

attack::SideData batch_side(const MethodContext& ctx, const TrainingData& data, Method method,
                            const std::vector<std::size_t>& batch) {
  attack::SideData side;
  const auto b = static_cast<Eigen::Index>(batch.size());
  if (method == Method::TeCoA) {
    side.template_embs = ctx.template_embs;
    for (auto i : batch) side.labels.push_back(data.labels[i]);
  } else if (method == Method::QTAFT) {
    side.caption_embs.resize(b, ctx.caption_embs.cols());
    for (Eigen::Index k = 0; k < b; ++k)
      side.caption_embs.row(k) = ctx.caption_embs.row(static_cast<Eigen::Index>(batch[k]));
  } else if (method == Method::QTAFTLabel) {
    // Class template of each image stands in for its caption.
    side.caption_embs.resize(b, ctx.template_embs.cols());
    for (Eigen::Index k = 0; k < b; ++k)
      side.caption_embs.row(k) = ctx.template_embs.row(data.labels[batch[k]]);
  }
  return side;
}

Matrix gather(const Matrix& images, const std::vector<std::size_t>& batch) {
  Matrix out(static_cast<Eigen::Index>(batch.size()), images.cols());
  for (std::size_t k = 0; k < batch.size(); ++k)
    out.row(static_cast<Eigen::Index>(k)) = images.row(static_cast<Eigen::Index>(batch[k]));
  return out;
}

std::vector<std::int32_t> diagonal(std::size_t n) {
  std::vector<std::int32_t> t(n);
  std::iota(t.begin(), t.end(), 0);
  return t;
}

void check_finite(float v, const char* what) {
  if (!std::isfinite(v)) throw NumericError(std::string("train: non-finite ") + what);
}

// One adversarial outer step on fixed AEs; returns the loss before the update.
float adversarial_update(ModelState& state, AdamW& opt, const MethodContext& ctx,
                         const attack::SideData& side, const Matrix& x_clean, const Matrix& x_adv,
                         float lr) {
  const Matrix orig = ctx.objective.needs_snapshot()
                          ? encode_images(state, x_clean, VisionWeights::ThetaOrig).raw
                          : Matrix();
  ad::Tape tape;
  const VisionVars theta = bind_vision(tape, state.theta, true);
  ad::Var terms = attack::objective_terms(tape, state, tape.ref(x_adv), theta, orig, side, ctx.objective);
  ad::Var loss = ad::sum(terms);
  const float value = loss.value()(0, 0);
  check_finite(value, "outer loss");
  tape.backward(loss);
  std::vector<Matrix> grads;
  for (const auto& v : theta.t) grads.push_back(tape.grad(v));
  opt.step(grads, lr);
  return value;
}

std::vector<Matrix*> theta_params(ModelState& s) { return s.theta.tensors(); }

void require_adversarial_ready(const ModelState& state, const TrainConfig& cfg) {
  if (cfg.method == Method::CleanPretrain) return;
  if (!state.has_snapshot())
    throw StateError("train: adversarial fine-tuning needs theta_orig; call snapshot() first");
}

}  // namespace

float outer_loss(const ModelState& state, const TrainingData& data, const TrainConfig& cfg,
                 const Matrix& x_adv, const std::vector<std::size_t>& batch) {
  require_adversarial_ready(state, cfg);
  if (cfg.method == Method::CleanPretrain) throw ArgumentError("outer_loss: adversarial methods only");
  const MethodContext ctx = method_context(state, data, cfg);
  const attack::SideData side = batch_side(ctx, data, cfg.method, batch);
  const Matrix x_clean = gather(data.images, batch);
  const Matrix orig = ctx.objective.needs_snapshot()
                          ? encode_images(state, x_clean, VisionWeights::ThetaOrig).raw
                          : Matrix();
  ad::Tape tape;
  const VisionVars theta = bind_vision(tape, state.theta, false);
  return ad::sum(attack::objective_terms(tape, state, tape.ref(x_adv), theta, orig, side, ctx.objective))
      .value()(0, 0);
}

std::vector<float> fit_fixed_batch(ModelState& state, const TrainingData& data,
                                   const TrainConfig& cfg, const Matrix& x_adv,
                                   const std::vector<std::size_t>& batch, int steps, float lr) {
  cfg.validate();
  require_adversarial_ready(state, cfg);
  if (cfg.method == Method::CleanPretrain) throw ArgumentError("fit_fixed_batch: adversarial methods only");
  const MethodContext ctx = method_context(state, data, cfg);
  const attack::SideData side = batch_side(ctx, data, cfg.method, batch);
  const Matrix x_clean = gather(data.images, batch);
  auto params = theta_params(state);
  AdamW opt(params, decay_mask(params), {0.9f, 0.999f, 1e-8f, cfg.weight_decay});
  state.finetune_started = true;
  std::vector<float> losses;
  for (int s = 0; s < steps; ++s)
    losses.push_back(adversarial_update(state, opt, ctx, side, x_clean, x_adv, lr));
  return losses;
}

TrainResult train(ModelState state, const TrainingData& data, const TrainConfig& cfg) {
  cfg.validate();
  const auto n = static_cast<std::size_t>(data.images.rows());
  if (!data.labels.empty() && data.labels.size() != n)
    throw ArgumentError("train: labels do not match images");
  if ((cfg.method == Method::CleanPretrain || cfg.method == Method::QTAFT) && data.captions.size() != n)
    throw ArgumentError("train: method '" + method_name(cfg.method) + "' needs one caption per image");
  require_adversarial_ready(state, cfg);

  const auto start = std::chrono::steady_clock::now();
  const long per_epoch = steps_per_epoch(n, cfg.batch_size);
  const long total = per_epoch * cfg.epochs;
  TrainResult result;
  if (total == 0) {
    result.state = std::move(state);
    return result;
  }

  const bool pretrain = cfg.method == Method::CleanPretrain;
  MethodContext ctx;
  if (!pretrain) ctx = method_context(state, data, cfg);

  std::vector<Matrix*> params = theta_params(state);
  Matrix log_tau = Matrix::Constant(1, 1, state.temperature.log_tau());
  if (pretrain) {
    for (Matrix* p : state.phi.tensors()) params.push_back(p);
    params.push_back(&log_tau);
  }
  std::vector<bool> mask = decay_mask(params);
  if (pretrain) mask.back() = false;
  AdamW opt(params, mask, {0.9f, 0.999f, 1e-8f, cfg.weight_decay});

  long step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(epoch), 0xe90c));
    rng.shuffle(order);
    for (long b = 0; b < per_epoch; ++b, ++step) {
      const std::vector<std::size_t> batch(order.begin() + b * cfg.batch_size,
                                           order.begin() + (b + 1) * cfg.batch_size);
      const float lr = cfg.cosine_schedule ? cosine_lr(step, total, cfg.lr0) : cfg.lr0;
      const Matrix x = gather(data.images, batch);
      TrainLogRecord rec;
      rec.step = step;
      rec.lr = lr;

      if (pretrain) {
        std::vector<TokenSequence> caps;
        for (auto i : batch) caps.push_back(data.captions[i]);
        ad::Tape tape;
        const VisionVars theta = bind_vision(tape, state.theta, true);
        const TextVars phi = bind_text(tape, state.phi, true);
        ad::Var lt = tape.ref(log_tau, true);
        ad::Var img = ad::normalize_rows(vision_forward(state.config, theta, tape.ref(x)));
        ad::Var txt = ad::normalize_rows(text_forward(state.config, phi, caps));
        ad::Var logits = ad::div_scalar(ad::matmul_nt(img, txt), ad::exp(lt));
        const auto diag = diagonal(batch.size());
        ad::Var i2t = ad::sum(ad::cross_entropy_rows(logits, diag));
        ad::Var t2i = ad::sum(ad::cross_entropy_rows(ad::transpose(logits), diag));
        ad::Var loss = ad::scale(ad::add(i2t, t2i), 0.5f);
        rec.outer_loss = loss.value()(0, 0);
        check_finite(rec.outer_loss, "clip loss");
        tape.backward(loss);
        std::vector<Matrix> grads;
        for (const auto& v : theta.t) grads.push_back(tape.grad(v));
        for (const auto& v : phi.t) grads.push_back(tape.grad(v));
        grads.push_back(tape.grad(lt));
        opt.step(grads, lr);
        state.temperature.set_log_tau(log_tau(0, 0));
        log_tau(0, 0) = state.temperature.log_tau();
      } else {
        state.finetune_started = true;
        const attack::SideData side = batch_side(ctx, data, cfg.method, batch);
        attack::AttackSpec spec = cfg.attack;
        spec.objective = ctx.objective;
        const attack::AdversarialBatch adv =
            attack::pgd_attack(state, x, side, spec, derive_seed(cfg.seed, static_cast<std::uint64_t>(step), 0xa77));
        rec.inner_objective =
            std::accumulate(adv.best_objective.begin(), adv.best_objective.end(), 0.0f);
        rec.outer_loss = adversarial_update(state, opt, ctx, side, x, adv.perturbed, lr);
      }
      rec.wall_time =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      result.log.push_back(rec);
    }
  }
  result.state = std::move(state);
  return result;
}

std::vector<SweepRow> lambda_sweep(const ModelState& state, const TrainingData& data,
                                   const std::vector<float>& lambdas, const TrainConfig& config,
                                   const Vocabulary& vocab, const eval::EvalDataset& eval_set,
                                   const eval::AttackPlan& plan, const eval::RobustOptions& options) {
  if (lambdas.empty()) throw ArgumentError("lambda_sweep: empty lambda list");
  for (float l : lambdas)
    if (!(l >= 0.0f)) throw ArgumentError("lambda_sweep: lambda must be >= 0");
  std::vector<SweepRow> rows;
  for (float l : lambdas) {
    TrainConfig cfg = config;
    cfg.method = Method::QTAFT;
    cfg.lambda = l;
    const TrainResult r = train(state, data, cfg);
    const Matrix templates = eval::template_embeddings(r.state, vocab, eval_set.class_names);
    const auto robust = eval::eval_robust(r.state, eval_set.images, eval_set.labels, templates, plan, options);
    rows.push_back({l, eval::eval_clean(r.state, eval_set.images, eval_set.labels, templates),
                    robust.accuracy});
  }
  return rows;
}

std::string train_log_jsonl(const std::vector<TrainLogRecord>& log) {
  std::ostringstream out;
  for (const auto& r : log) {
    nlohmann::ordered_json j{{"step", r.step},
                             {"lr", r.lr},
                             {"inner_objective", r.inner_objective},
                             {"outer_loss", r.outer_loss},
                             {"wall_time", r.wall_time}};
    out << j.dump() << '\n';
  }
  return out.str();
}

}  // namespace ralb::train
