#include "ralb/deviation.hpp"

#include "ralb/errors.hpp"

#include <algorithm>
#include <iomanip>
#include <sstream>

namespace ralb::attack {

namespace {

double mean_row_dot(const Matrix& a, const Matrix& b) {
  return static_cast<double>(a.cwiseProduct(b).rowwise().sum().cast<double>().mean());
}

Matrix label_rows(const Matrix& templates, const std::vector<std::int32_t>& labels) {
  Matrix out(static_cast<Eigen::Index>(labels.size()), templates.cols());
  for (std::size_t i = 0; i < labels.size(); ++i)
    out.row(static_cast<Eigen::Index>(i)) = templates.row(labels[i]);
  return out;
}

}  // namespace

std::vector<DeviationRow> deviation_analysis(const ModelState& input_state,
                                             const DeviationSample& sample,
                                             const std::vector<AttackObjective>& objectives,
                                             const AttackSpec& base, std::size_t batch_size,
                                             std::uint64_t seed) {
  const auto n = sample.images.rows();
  if (n == 0) throw ArgumentError("deviation_analysis: empty sample set");
  if (static_cast<Eigen::Index>(sample.labels.size()) != n || sample.caption_embs.rows() != n)
    throw ArgumentError("deviation_analysis: images, labels and captions must align");
  if (batch_size < 2) throw ArgumentError("deviation_analysis: batch size must be >= 2");
  // Unsup terms measure drift from the analyzed encoder's own clean embedding.
  ModelState state = input_state;
  state.theta_orig.reset();
  state.finetune_started = false;
  state = snapshot(std::move(state));

  const Matrix clean = encode_images(state, sample.images).emb;
  const Matrix labels = label_rows(sample.template_embs, sample.labels);

  std::vector<DeviationRow> rows;
  rows.push_back({"clean", mean_row_dot(clean, clean), mean_row_dot(clean, labels),
                  mean_row_dot(clean, sample.caption_embs), static_cast<std::size_t>(n), seed});

  for (const auto& obj : objectives) {
    AttackSpec spec = base;
    spec.objective = obj;
    Matrix adv(n, sample.images.cols());
    for (Eigen::Index lo = 0; lo < n; lo += static_cast<Eigen::Index>(batch_size)) {
      const auto len = std::min<Eigen::Index>(static_cast<Eigen::Index>(batch_size), n - lo);
      SideData side;
      side.labels.assign(sample.labels.begin() + lo, sample.labels.begin() + lo + len);
      side.template_embs = sample.template_embs;
      side.caption_embs = sample.caption_embs.middleRows(lo, len);
      const AdversarialBatch b = pgd_attack(state, sample.images.middleRows(lo, len), side, spec,
                                            seed, static_cast<std::size_t>(lo));
      adv.middleRows(lo, len) = b.perturbed;
    }
    const Matrix emb = encode_images(state, adv).emb;
    rows.push_back({objective_name(obj.kind), mean_row_dot(emb, clean), mean_row_dot(emb, labels),
                    mean_row_dot(emb, sample.caption_embs), static_cast<std::size_t>(n), seed});
  }
  return rows;
}

std::string deviation_csv(const std::vector<DeviationRow>& rows) {
  std::ostringstream out;
  out << "objective,sim_image,sim_label,sim_caption,n_samples,seed\n" << std::fixed
      << std::setprecision(6);
  for (const auto& r : rows)
    out << r.objective << ',' << r.sim_image << ',' << r.sim_label << ',' << r.sim_caption << ','
        << r.n_samples << ',' << r.seed << '\n';
  return out.str();
}

}  // namespace ralb::attack
