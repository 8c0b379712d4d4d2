#include "ralb/attacks.hpp"

#include "ralb/core_math.hpp"
#include "ralb/errors.hpp"
#include "ralb/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace ralb::attack {

bool AttackObjective::needs_labels() const {
  switch (kind) {
    case ObjectiveKind::SupLabel:
    case ObjectiveKind::UnsupPlusSupLabel:
    case ObjectiveKind::DLR:
    case ObjectiveKind::CW: return true;
    default: return false;
  }
}

bool AttackObjective::needs_captions() const {
  return kind == ObjectiveKind::SupCaps || kind == ObjectiveKind::QTAFT;
}

bool AttackObjective::needs_snapshot() const {
  return kind == ObjectiveKind::Unsup || kind == ObjectiveKind::UnsupPlusSupLabel ||
         kind == ObjectiveKind::QTAFT;
}

ObjectiveKind parse_objective(std::string_view name) {
  if (name == "tecoa" || name == "ce" || name == "sup-label") return ObjectiveKind::SupLabel;
  if (name == "fare" || name == "unsup") return ObjectiveKind::Unsup;
  if (name == "sup-caps") return ObjectiveKind::SupCaps;
  if (name == "unsup+sup-label") return ObjectiveKind::UnsupPlusSupLabel;
  if (name == "qt-aft") return ObjectiveKind::QTAFT;
  if (name == "dlr") return ObjectiveKind::DLR;
  if (name == "cw") return ObjectiveKind::CW;
  throw ArgumentError("unknown attack objective '" + std::string(name) + "'");
}

std::string objective_name(ObjectiveKind kind) {
  switch (kind) {
    case ObjectiveKind::SupLabel: return "tecoa";
    case ObjectiveKind::Unsup: return "fare";
    case ObjectiveKind::SupCaps: return "sup-caps";
    case ObjectiveKind::UnsupPlusSupLabel: return "unsup+sup-label";
    case ObjectiveKind::QTAFT: return "qt-aft";
    case ObjectiveKind::DLR: return "dlr";
    case ObjectiveKind::CW: return "cw";
  }
  return "tecoa";
}

void AttackSpec::validate() const {
  if (!(epsilon >= 0.0f) || !std::isfinite(epsilon)) throw ArgumentError("attack: epsilon must be >= 0");
  if (steps < 0) throw ArgumentError("attack: steps must be >= 0");
  if (steps > 0 && !(step_size > 0.0f)) throw ArgumentError("attack: step_size must be > 0");
  if (!(objective.lambda >= 0.0f)) throw ArgumentError("attack: lambda must be >= 0");
}

void project(Matrix& candidate, const Matrix& originals, Norm norm, float epsilon) {
  for (Eigen::Index r = 0; r < candidate.rows(); ++r) {
    RowVector delta = candidate.row(r) - originals.row(r);
    if (norm == Norm::Linf) {
      delta = delta.cwiseMax(-epsilon).cwiseMin(epsilon);
    } else {
      const float n = delta.norm();
      if (n > epsilon) delta *= (n > 0.0f ? epsilon / n : 0.0f);
    }
    candidate.row(r) = (originals.row(r) + delta).cwiseMax(0.0f).cwiseMin(1.0f);
  }
}

namespace {

constexpr std::uint64_t kRandomStartStream = 0x5a7a;

void random_start(Matrix& x, const Matrix& originals, const AttackSpec& spec, std::uint64_t seed,
                  std::size_t offset) {
  const auto d = x.cols();
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    Rng rng(derive_seed(seed, offset + static_cast<std::size_t>(r), kRandomStartStream));
    if (spec.norm == Norm::Linf) {
      for (Eigen::Index c = 0; c < d; ++c) x(r, c) += rng.uniform(-spec.epsilon, spec.epsilon);
    } else {
      RowVector dir(d);
      for (Eigen::Index c = 0; c < d; ++c) dir(c) = static_cast<float>(rng.normal());
      const float n = dir.norm();
      const double radius =
          spec.epsilon * std::pow(rng.uniform_double(), 1.0 / static_cast<double>(d));
      if (n > 0.0f) x.row(r) += dir * static_cast<float>(radius / n);
    }
  }
  project(x, originals, spec.norm, spec.epsilon);
}

Matrix ascent_direction(const Matrix& grad, Norm norm) {
  Matrix d(grad.rows(), grad.cols());
  if (norm == Norm::Linf) {
    // Exact zeros map to zero: no step on that coordinate.
    for (Eigen::Index i = 0; i < grad.size(); ++i) {
      const float g = grad.data()[i];
      d.data()[i] = static_cast<float>((g > 0.0f) - (g < 0.0f));
    }
  } else {
    for (Eigen::Index r = 0; r < grad.rows(); ++r) {
      const float n = grad.row(r).norm();
      d.row(r) = n > 0.0f ? RowVector(grad.row(r) / n) : RowVector::Zero(grad.cols());
    }
  }
  return d;
}

}  // namespace

AdversarialBatch pgd(const Matrix& images, const AttackSpec& spec, const BatchObjective& objective,
                     std::uint64_t seed, std::size_t index_offset) {
  spec.validate();
  AdversarialBatch out;
  out.originals = images;
  Matrix current = images;
  if (spec.random_start && spec.epsilon > 0.0f)
    random_start(current, images, spec, seed, index_offset);

  ObjectiveEval eval = objective(current, spec.steps > 0);
  if (static_cast<Eigen::Index>(eval.terms.size()) != images.rows())
    throw ArgumentError("pgd: objective must return one term per image");
  out.perturbed = current;
  out.best_objective = eval.terms;
  auto total = [&] { return std::accumulate(out.best_objective.begin(), out.best_objective.end(), 0.0f); };
  out.objective_trace.push_back(total());

  for (int step = 1; step <= spec.steps; ++step) {
    current += spec.step_size * ascent_direction(eval.grad, spec.norm);
    project(current, images, spec.norm, spec.epsilon);
    eval = objective(current, step < spec.steps);
    for (Eigen::Index r = 0; r < images.rows(); ++r) {
      if (eval.terms[r] > out.best_objective[r]) {
        out.best_objective[r] = eval.terms[r];
        out.perturbed.row(r) = current.row(r);
      }
    }
    out.objective_trace.push_back(total());
  }
  return out;
}

ad::Var zero_shot_logits(ad::Var image_embs, ad::Var template_embs) {
  return ad::scale(ad::matmul_nt(image_embs, template_embs), 1.0f / math::kEvalTemperature);
}

namespace {

void check_side(const SideData& side, const AttackObjective& obj, Eigen::Index batch,
                const ModelState& state) {
  if (obj.needs_labels()) {
    if (static_cast<Eigen::Index>(side.labels.size()) != batch)
      throw ArgumentError("attack: objective '" + objective_name(obj.kind) + "' needs one label per image");
    if (side.template_embs.rows() == 0)
      throw ArgumentError("attack: objective '" + objective_name(obj.kind) + "' needs class templates");
    for (auto y : side.labels)
      if (y < 0 || y >= side.template_embs.rows()) throw ArgumentError("attack: label out of range");
  }
  if (obj.needs_captions() && side.caption_embs.rows() != batch)
    throw ArgumentError("attack: objective '" + objective_name(obj.kind) + "' needs one caption per image");
  if (obj.needs_snapshot() && !state.has_snapshot())
    throw StateError("attack: objective '" + objective_name(obj.kind) + "' needs theta_orig (snapshot)");
}

std::vector<std::int32_t> diagonal_targets(Eigen::Index n) {
  std::vector<std::int32_t> t(static_cast<std::size_t>(n));
  std::iota(t.begin(), t.end(), 0);
  return t;
}

}  // namespace

ad::Var objective_terms(ad::Tape& tape, const ModelState& state, ad::Var images,
                        const VisionVars& theta, const Matrix& clean_orig_raw,
                        const SideData& side, const AttackObjective& obj) {
  check_side(side, obj, images.rows(), state);
  ad::Var raw = vision_forward(state.config, theta, images);
  ad::Var emb = ad::normalize_rows(raw);

  auto label_logits = [&] { return zero_shot_logits(emb, tape.ref(side.template_embs)); };
  auto unsup = [&] {
    if (clean_orig_raw.rows() != images.rows() || clean_orig_raw.cols() != raw.cols())
      throw ArgumentError("attack: clean reference embeddings do not match the batch");
    return ad::sq_dist_rows(raw, tape.ref(clean_orig_raw));
  };
  auto sup_caps = [&] {
    ad::Var sims = ad::matmul_nt(emb, tape.ref(side.caption_embs));
    ad::Var logits = ad::scale(sims, 1.0f / state.temperature.tau());
    return ad::cross_entropy_rows(logits, diagonal_targets(images.rows()));
  };

  switch (obj.kind) {
    case ObjectiveKind::SupLabel: return ad::cross_entropy_rows(label_logits(), side.labels);
    case ObjectiveKind::DLR: return ad::dlr_rows(label_logits(), side.labels);
    case ObjectiveKind::CW: return ad::margin_rows(label_logits(), side.labels);
    case ObjectiveKind::Unsup: return unsup();
    case ObjectiveKind::SupCaps: return sup_caps();
    case ObjectiveKind::UnsupPlusSupLabel:
      return ad::add(unsup(), ad::scale(ad::cross_entropy_rows(label_logits(), side.labels), obj.lambda));
    case ObjectiveKind::QTAFT: return ad::add(unsup(), ad::scale(sup_caps(), obj.lambda));
  }
  throw UnsupportedError("attack: unknown objective");
}

namespace {

Matrix clean_reference(const ModelState& state, const Matrix& images, const AttackObjective& obj) {
  if (!obj.needs_snapshot()) return {};
  if (!state.has_snapshot()) throw StateError("attack: objective needs theta_orig (snapshot)");
  return encode_images(state, images, VisionWeights::ThetaOrig).raw;
}

}  // namespace

float qt_aft_inner_loss(const ModelState& state, const Matrix& x_adv, const Matrix& x_clean,
                        const std::vector<TokenSequence>& captions, float lambda) {
  if (!state.has_snapshot()) throw StateError("qt_aft_inner_loss: theta_orig missing (snapshot first)");
  if (x_adv.rows() != x_clean.rows() || static_cast<Eigen::Index>(captions.size()) != x_adv.rows())
    throw ArgumentError("qt_aft_inner_loss: batch sizes differ");
  if (!(lambda >= 0.0f)) throw ArgumentError("qt_aft_inner_loss: lambda must be >= 0");
  SideData side;
  side.caption_embs = encode_texts(state, captions).emb;
  const AttackObjective obj{ObjectiveKind::QTAFT, lambda};
  const Matrix orig = clean_reference(state, x_clean, obj);
  ad::Tape tape;
  const VisionVars theta = bind_vision(tape, state.theta, false);
  ad::Var terms = objective_terms(tape, state, tape.ref(x_adv), theta, orig, side, obj);
  return ad::sum(terms).value()(0, 0);
}

AdversarialBatch pgd_attack(const ModelState& state, const Matrix& images, const SideData& side,
                            const AttackSpec& spec, std::uint64_t seed, std::size_t index_offset) {
  spec.validate();
  check_side(side, spec.objective, images.rows(), state);
  const Matrix orig = clean_reference(state, images, spec.objective);
  BatchObjective f = [&](const Matrix& x, bool want_grad) {
    ad::Tape tape;
    ad::Var xv = tape.ref(x, want_grad);
    const VisionVars theta = bind_vision(tape, state.theta, false);
    ad::Var terms = objective_terms(tape, state, xv, theta, orig, side, spec.objective);
    ObjectiveEval e;
    e.terms.assign(terms.value().data(), terms.value().data() + terms.rows());
    if (want_grad) {
      tape.backward(ad::sum(terms));
      e.grad = tape.grad(xv);
    }
    return e;
  };
  return pgd(images, spec, f, seed, index_offset);
}

std::vector<std::int32_t> predict(const ModelState& state, const Matrix& images,
                                  const Matrix& template_embs) {
  if (template_embs.rows() == 0) throw ArgumentError("predict: no class templates");
  const Matrix emb = encode_images(state, images).emb;
  const Matrix logits = (emb * template_embs.transpose()) / math::kEvalTemperature;
  std::vector<std::int32_t> out;
  for (Eigen::Index r = 0; r < logits.rows(); ++r)
    out.push_back(static_cast<std::int32_t>(math::argmax(row_span(logits, r))));
  return out;
}

EnsembleResult ensemble_attack(const ModelState& state, const Matrix& images, const SideData& side,
                               const std::vector<AttackSpec>& specs, std::uint64_t seed,
                               std::size_t index_offset) {
  if (specs.empty()) throw ArgumentError("ensemble_attack: no attack specs");
  for (const auto& s : specs) {
    s.validate();
    if (s.epsilon != specs.front().epsilon || s.norm != specs.front().norm)
      throw ArgumentError("ensemble_attack: all specs must share epsilon and norm");
    if (!s.objective.needs_labels())
      throw ArgumentError("ensemble_attack: members must be classification objectives");
  }
  EnsembleResult res;
  const auto n = images.rows();
  res.batch.originals = images;
  res.batch.perturbed = images;
  res.batch.best_objective.assign(static_cast<std::size_t>(n), 0.0f);
  res.flipped.assign(static_cast<std::size_t>(n), false);
  res.winning_spec.assign(static_cast<std::size_t>(n), -1);
  std::vector<float> best_margin(static_cast<std::size_t>(n), -INFINITY);

  for (std::size_t k = 0; k < specs.size(); ++k) {
    AttackSpec spec = specs[k];
    if (spec.objective.kind == ObjectiveKind::DLR && side.template_embs.rows() < 3) {
      spec.objective.kind = ObjectiveKind::CW;
      res.substitutions.push_back("spec " + std::to_string(k) + ": dlr -> cw (K = " +
                                  std::to_string(side.template_embs.rows()) + ")");
    }
    res.effective_specs.push_back(spec);
    const AdversarialBatch adv = pgd_attack(state, images, side, spec, seed, index_offset);
    const Matrix emb = encode_images(state, adv.perturbed).emb;
    const Matrix logits = (emb * side.template_embs.transpose()) / math::kEvalTemperature;
    for (Eigen::Index r = 0; r < n; ++r) {
      const auto i = static_cast<std::size_t>(r);
      if (res.flipped[i]) continue;
      const auto row = row_span(logits, r);
      const auto y = static_cast<std::size_t>(side.labels[i]);
      const bool flips = math::argmax(row) != y;
      const float margin = math::cw_margin_loss(row, y);
      if (flips || margin > best_margin[i]) {
        best_margin[i] = margin;
        res.batch.perturbed.row(r) = adv.perturbed.row(r);
        res.batch.best_objective[i] = adv.best_objective[i];
        res.winning_spec[i] = static_cast<int>(k);
        res.flipped[i] = flips;
      }
    }
  }
  return res;
}

}  // namespace ralb::attack
