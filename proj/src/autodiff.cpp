#include "ralb/autodiff.hpp"

#include "ralb/core_math.hpp"
#include "ralb/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace ralb::ad {

const Matrix& Var::value() const { return tape_->value(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

Var Tape::leaf(Matrix value, bool requires_grad) {
  Node n;
  n.owned = std::move(value);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::ref(const Matrix& value, bool requires_grad) {
  Node n;
  n.external = &value;
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

const Matrix& Tape::value(int id) const {
  const Node& n = nodes_.at(static_cast<std::size_t>(id));
  return n.external ? *n.external : n.owned;
}

Var Tape::record(Matrix value, bool requires_grad, Backward backward) {
  Node n;
  n.owned = std::move(value);
  n.requires_grad = requires_grad;
  if (requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

void Tape::accumulate(int id, const Matrix& g) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (!n.requires_grad) return;
  if (n.grad.size() == 0) {
    n.grad = g;
  } else {
    n.grad += g;
  }
}

void Tape::backward(Var root) {
  if (root.tape() != this) throw ArgumentError("backward: variable belongs to another tape");
  if (root.rows() != 1 || root.cols() != 1) throw ArgumentError("backward: root must be 1x1");
  for (auto& n : nodes_) n.grad.resize(0, 0);
  if (!requires_grad(root.id())) return;
  nodes_[root.id()].grad = Matrix::Ones(1, 1);
  for (int id = root.id(); id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.backward || n.grad.size() == 0) continue;
    // Copy: the callback may accumulate into other nodes of this vector.
    const Matrix g = n.grad;
    n.backward(*this, g);
  }
}

Matrix Tape::grad(Var v) const {
  const Node& n = nodes_.at(static_cast<std::size_t>(v.id()));
  if (n.grad.size() == 0) return Matrix::Zero(v.rows(), v.cols());
  return n.grad;
}

namespace {

Tape& same_tape(Var a, Var b) {
  if (a.tape() == nullptr || a.tape() != b.tape())
    throw ArgumentError("autodiff: variables from different tapes");
  return *a.tape();
}

void check_same_shape(Var a, Var b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ArgumentError(std::string(op) + ": shape mismatch");
}

void check_targets(Var logits, const std::vector<std::int32_t>& targets, const char* op) {
  if (static_cast<Eigen::Index>(targets.size()) != logits.rows())
    throw ArgumentError(std::string(op) + ": one target per row required");
  for (auto t : targets)
    if (t < 0 || t >= logits.cols()) throw ArgumentError(std::string(op) + ": target out of range");
}

constexpr float kInvSqrt2 = 0.70710678118654752440f;
constexpr float kInvSqrt2Pi = 0.39894228040143267794f;

}  // namespace

Var matmul(Var a, Var b) {
  Tape& t = same_tape(a, b);
  if (a.cols() != b.rows()) throw ArgumentError("matmul: inner dimension mismatch");
  Matrix out;
  out.noalias() = a.value() * b.value();
  const int ia = a.id(), ib = b.id();
  return t.record(std::move(out), a.requires_grad() || b.requires_grad(),
                  [ia, ib](Tape& tp, const Matrix& g) {
                    if (tp.requires_grad(ia)) {
                      Matrix ga;
                      ga.noalias() = g * tp.value(ib).transpose();
                      tp.accumulate(ia, ga);
                    }
                    if (tp.requires_grad(ib)) {
                      Matrix gb;
                      gb.noalias() = tp.value(ia).transpose() * g;
                      tp.accumulate(ib, gb);
                    }
                  });
}

Var matmul_nt(Var a, Var b) {
  Tape& t = same_tape(a, b);
  if (a.cols() != b.cols()) throw ArgumentError("matmul_nt: inner dimension mismatch");
  Matrix out;
  out.noalias() = a.value() * b.value().transpose();
  const int ia = a.id(), ib = b.id();
  return t.record(std::move(out), a.requires_grad() || b.requires_grad(),
                  [ia, ib](Tape& tp, const Matrix& g) {
                    if (tp.requires_grad(ia)) {
                      Matrix ga;
                      ga.noalias() = g * tp.value(ib);
                      tp.accumulate(ia, ga);
                    }
                    if (tp.requires_grad(ib)) {
                      Matrix gb;
                      gb.noalias() = g.transpose() * tp.value(ia);
                      tp.accumulate(ib, gb);
                    }
                  });
}

Var add_bias(Var a, Var bias) {
  Tape& t = same_tape(a, bias);
  if (bias.rows() != 1 || bias.cols() != a.cols()) throw ArgumentError("add_bias: bias shape");
  Matrix out = a.value();
  out.rowwise() += bias.value().row(0);
  const int ia = a.id(), ib = bias.id();
  return t.record(std::move(out), a.requires_grad() || bias.requires_grad(),
                  [ia, ib](Tape& tp, const Matrix& g) {
                    tp.accumulate(ia, g);
                    if (tp.requires_grad(ib)) tp.accumulate(ib, g.colwise().sum());
                  });
}

Var add(Var a, Var b) {
  Tape& t = same_tape(a, b);
  check_same_shape(a, b, "add");
  const int ia = a.id(), ib = b.id();
  return t.record(a.value() + b.value(), a.requires_grad() || b.requires_grad(),
                  [ia, ib](Tape& tp, const Matrix& g) {
                    tp.accumulate(ia, g);
                    tp.accumulate(ib, g);
                  });
}

Var sub(Var a, Var b) {
  Tape& t = same_tape(a, b);
  check_same_shape(a, b, "sub");
  const int ia = a.id(), ib = b.id();
  return t.record(a.value() - b.value(), a.requires_grad() || b.requires_grad(),
                  [ia, ib](Tape& tp, const Matrix& g) {
                    tp.accumulate(ia, g);
                    if (tp.requires_grad(ib)) tp.accumulate(ib, -g);
                  });
}

Var scale(Var a, float s) {
  const int ia = a.id();
  return a.tape()->record(a.value() * s, a.requires_grad(),
                          [ia, s](Tape& tp, const Matrix& g) { tp.accumulate(ia, g * s); });
}

Var div_scalar(Var a, Var s) {
  Tape& t = same_tape(a, s);
  if (s.rows() != 1 || s.cols() != 1) throw ArgumentError("div_scalar: divisor must be 1x1");
  const float sv = s.value()(0, 0);
  if (sv == 0.0f) throw DomainError("div_scalar: division by zero");
  const int ia = a.id(), is = s.id();
  return t.record(a.value() / sv, a.requires_grad() || s.requires_grad(),
                  [ia, is, sv](Tape& tp, const Matrix& g) {
                    if (tp.requires_grad(ia)) tp.accumulate(ia, g / sv);
                    if (tp.requires_grad(is)) {
                      const float d = -(g.cwiseProduct(tp.value(ia))).sum() / (sv * sv);
                      tp.accumulate(is, Matrix::Constant(1, 1, d));
                    }
                  });
}

Var exp(Var a) {
  Matrix out = a.value().array().exp().matrix();
  const int ia = a.id();
  const int out_id = static_cast<int>(a.tape()->size());
  return a.tape()->record(std::move(out), a.requires_grad(),
                          [ia, out_id](Tape& tp, const Matrix& g) {
                            tp.accumulate(ia, g.cwiseProduct(tp.value(out_id)));
                          });
}

Var transpose(Var a) {
  const int ia = a.id();
  return a.tape()->record(a.value().transpose(), a.requires_grad(),
                          [ia](Tape& tp, const Matrix& g) {
                            tp.accumulate(ia, g.transpose());
                          });
}

Var sum(Var a) {
  const int ia = a.id();
  const auto r = a.rows(), c = a.cols();
  return a.tape()->record(Matrix::Constant(1, 1, a.value().sum()), a.requires_grad(),
                          [ia, r, c](Tape& tp, const Matrix& g) {
                            tp.accumulate(ia, Matrix::Constant(r, c, g(0, 0)));
                          });
}

Var reshape(Var a, Eigen::Index rows, Eigen::Index cols) {
  if (rows * cols != a.value().size()) throw ArgumentError("reshape: size mismatch");
  Matrix out = Eigen::Map<const Matrix>(a.value().data(), rows, cols);
  const int ia = a.id();
  const auto r0 = a.rows(), c0 = a.cols();
  return a.tape()->record(std::move(out), a.requires_grad(),
                          [ia, r0, c0](Tape& tp, const Matrix& g) {
                            tp.accumulate(ia, Eigen::Map<const Matrix>(g.data(), r0, c0));
                          });
}

Var gelu(Var a) {
  const Matrix& x = a.value();
  Matrix out(x.rows(), x.cols());
  const float* xp = x.data();
  float* op = out.data();
  for (Eigen::Index i = 0; i < x.size(); ++i)
    op[i] = 0.5f * xp[i] * (1.0f + std::erf(xp[i] * kInvSqrt2));
  const int ia = a.id();
  return a.tape()->record(std::move(out), a.requires_grad(), [ia](Tape& tp, const Matrix& g) {
    const Matrix& xv = tp.value(ia);
    Matrix d(xv.rows(), xv.cols());
    for (Eigen::Index i = 0; i < xv.size(); ++i) {
      const float v = xv.data()[i];
      const float cdf = 0.5f * (1.0f + std::erf(v * kInvSqrt2));
      const float pdf = kInvSqrt2Pi * std::exp(-0.5f * v * v);
      d.data()[i] = g.data()[i] * (cdf + v * pdf);
    }
    tp.accumulate(ia, d);
  });
}

Var normalize_rows(Var a) {
  const Matrix& x = a.value();
  Eigen::VectorXf norms = x.rowwise().norm();
  for (Eigen::Index r = 0; r < norms.size(); ++r)
    if (!(norms(r) > 0.0f)) throw DomainError("normalize_rows: zero-norm row");
  Matrix out = norms.cwiseInverse().asDiagonal() * x;
  const int ia = a.id();
  const int out_id = static_cast<int>(a.tape()->size());
  return a.tape()->record(
      std::move(out), a.requires_grad(), [ia, out_id, norms](Tape& tp, const Matrix& g) {
        const Matrix& y = tp.value(out_id);
        Eigen::VectorXf proj = (y.cwiseProduct(g)).rowwise().sum();
        Matrix d = g - proj.asDiagonal() * y;
        d = norms.cwiseInverse().asDiagonal() * d;
        tp.accumulate(ia, d);
      });
}

namespace {

// Flat source offset for every element of the patch matrix.
std::vector<std::int32_t> patch_index(int height, int width, int channels, int patch) {
  const int pw = width / patch;
  const int ph = height / patch;
  const int patch_len = patch * patch * channels;
  std::vector<std::int32_t> idx(static_cast<std::size_t>(ph * pw * patch_len));
  std::size_t k = 0;
  for (int py = 0; py < ph; ++py)
    for (int px = 0; px < pw; ++px)
      for (int i = 0; i < patch; ++i)
        for (int j = 0; j < patch; ++j)
          for (int c = 0; c < channels; ++c)
            idx[k++] = ((py * patch + i) * width + (px * patch + j)) * channels + c;
  return idx;
}

}  // namespace

Var patchify(Var images, int height, int width, int channels, int patch) {
  if (patch <= 0 || height % patch != 0 || width % patch != 0)
    throw ArgumentError("patchify: image size must be a multiple of the patch size");
  if (images.cols() != static_cast<Eigen::Index>(height) * width * channels)
    throw ArgumentError("patchify: image width does not match H*W*C");
  const auto idx = patch_index(height, width, channels, patch);
  const Eigen::Index batch = images.rows();
  const Eigen::Index per_image = static_cast<Eigen::Index>(idx.size());
  const Eigen::Index patch_len = static_cast<Eigen::Index>(patch) * patch * channels;
  const Eigen::Index num_patches = per_image / patch_len;
  Matrix out(batch * num_patches, patch_len);
  const Matrix& x = images.value();
  for (Eigen::Index b = 0; b < batch; ++b) {
    const float* src = x.data() + b * x.cols();
    float* dst = out.data() + b * per_image;
    for (Eigen::Index k = 0; k < per_image; ++k) dst[k] = src[idx[k]];
  }
  const int ia = images.id();
  const Eigen::Index cols = images.cols();
  return images.tape()->record(
      std::move(out), images.requires_grad(),
      [ia, idx, batch, per_image, cols](Tape& tp, const Matrix& g) {
        Matrix d = Matrix::Zero(batch, cols);
        for (Eigen::Index b = 0; b < batch; ++b) {
          const float* src = g.data() + b * per_image;
          float* dst = d.data() + b * cols;
          for (Eigen::Index k = 0; k < per_image; ++k) dst[idx[k]] += src[k];
        }
        tp.accumulate(ia, d);
      });
}

Var gather_rows(Var table, const std::vector<std::int32_t>& ids) {
  const Matrix& t = table.value();
  Matrix out(static_cast<Eigen::Index>(ids.size()), t.cols());
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] < 0 || ids[r] >= t.rows()) throw ArgumentError("gather_rows: id out of range");
    out.row(static_cast<Eigen::Index>(r)) = t.row(ids[r]);
  }
  const int ia = table.id();
  const auto rows = t.rows(), cols = t.cols();
  return table.tape()->record(std::move(out), table.requires_grad(),
                              [ia, ids, rows, cols](Tape& tp, const Matrix& g) {
                                Matrix d = Matrix::Zero(rows, cols);
                                for (std::size_t r = 0; r < ids.size(); ++r)
                                  d.row(ids[r]) += g.row(static_cast<Eigen::Index>(r));
                                tp.accumulate(ia, d);
                              });
}

Var segment_mean(Var a, const std::vector<std::int32_t>& offsets) {
  if (offsets.size() < 2 || offsets.front() != 0 || offsets.back() != a.rows())
    throw ArgumentError("segment_mean: offsets must span [0, rows]");
  const Eigen::Index segments = static_cast<Eigen::Index>(offsets.size()) - 1;
  Matrix out(segments, a.cols());
  for (Eigen::Index s = 0; s < segments; ++s) {
    const auto lo = offsets[s], hi = offsets[s + 1];
    if (hi <= lo) throw ArgumentError("segment_mean: empty segment");
    out.row(s) = a.value().middleRows(lo, hi - lo).colwise().sum() / static_cast<float>(hi - lo);
  }
  const int ia = a.id();
  const auto rows = a.rows(), cols = a.cols();
  return a.tape()->record(std::move(out), a.requires_grad(),
                          [ia, offsets, rows, cols, segments](Tape& tp, const Matrix& g) {
                            Matrix d(rows, cols);
                            for (Eigen::Index s = 0; s < segments; ++s) {
                              const auto lo = offsets[s], hi = offsets[s + 1];
                              const float inv = 1.0f / static_cast<float>(hi - lo);
                              for (auto r = lo; r < hi; ++r) d.row(r) = g.row(s) * inv;
                            }
                            tp.accumulate(ia, d);
                          });
}

Var sq_dist_rows(Var a, Var b) {
  Tape& t = same_tape(a, b);
  check_same_shape(a, b, "sq_dist_rows");
  Matrix out(a.rows(), 1);
  for (Eigen::Index r = 0; r < a.rows(); ++r)
    out(r, 0) = math::fare_distance(row_span(a.value(), r), row_span(b.value(), r));
  const int ia = a.id(), ib = b.id();
  return t.record(std::move(out), a.requires_grad() || b.requires_grad(),
                  [ia, ib](Tape& tp, const Matrix& g) {
                    Matrix diff = tp.value(ia) - tp.value(ib);
                    Matrix d = (2.0f * g.col(0)).asDiagonal() * diff;
                    tp.accumulate(ia, d);
                    if (tp.requires_grad(ib)) tp.accumulate(ib, -d);
                  });
}

Var cross_entropy_rows(Var logits, const std::vector<std::int32_t>& targets) {
  check_targets(logits, targets, "cross_entropy_rows");
  const Matrix& z = logits.value();
  Matrix out(z.rows(), 1);
  for (Eigen::Index r = 0; r < z.rows(); ++r)
    out(r, 0) = math::tecoa_ce_loss(row_span(z, r), static_cast<std::size_t>(targets[r]));
  const int ia = logits.id();
  return logits.tape()->record(
      std::move(out), logits.requires_grad(), [ia, targets](Tape& tp, const Matrix& g) {
        const Matrix& zv = tp.value(ia);
        Matrix d(zv.rows(), zv.cols());
        for (Eigen::Index r = 0; r < zv.rows(); ++r) {
          const float lse = math::log_sum_exp(row_span(zv, r));
          float rest = 0.0f;
          for (Eigen::Index c = 0; c < zv.cols(); ++c) {
            d(r, c) = std::exp(zv(r, c) - lse);
            if (c != targets[r]) rest += d(r, c);
          }
          // p_y - 1 written as -sum_{c != y} p_c so it does not round to 0.
          d(r, targets[r]) = -rest;
          d.row(r) *= g(r, 0);
        }
        tp.accumulate(ia, d);
      });
}

namespace {

// Descending order, lower index first on ties.
std::vector<Eigen::Index> sorted_desc(std::span<const float> z) {
  std::vector<Eigen::Index> order(z.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&z](Eigen::Index a, Eigen::Index b) { return z[a] > z[b]; });
  return order;
}

}  // namespace

Var dlr_rows(Var logits, const std::vector<std::int32_t>& targets) {
  check_targets(logits, targets, "dlr_rows");
  const Matrix& z = logits.value();
  Matrix out(z.rows(), 1);
  for (Eigen::Index r = 0; r < z.rows(); ++r)
    out(r, 0) = math::dlr_loss(row_span(z, r), static_cast<std::size_t>(targets[r]));
  const int ia = logits.id();
  return logits.tape()->record(
      std::move(out), logits.requires_grad(), [ia, targets](Tape& tp, const Matrix& g) {
        const Matrix& zv = tp.value(ia);
        Matrix d = Matrix::Zero(zv.rows(), zv.cols());
        for (Eigen::Index r = 0; r < zv.rows(); ++r) {
          const auto row = row_span(zv, r);
          const auto y = static_cast<std::size_t>(targets[r]);
          const auto other = math::runner_up(row, y);
          const auto order = sorted_desc(row);
          const float denom = row[order[0]] - row[order[2]];
          const float numer = row[y] - row[other];
          const float gr = g(r, 0);
          d(r, y) += -gr / denom;
          d(r, other) += gr / denom;
          d(r, order[0]) += gr * numer / (denom * denom);
          d(r, order[2]) -= gr * numer / (denom * denom);
        }
        tp.accumulate(ia, d);
      });
}

Var margin_rows(Var logits, const std::vector<std::int32_t>& targets) {
  check_targets(logits, targets, "margin_rows");
  const Matrix& z = logits.value();
  Matrix out(z.rows(), 1);
  for (Eigen::Index r = 0; r < z.rows(); ++r)
    out(r, 0) = math::cw_margin_loss(row_span(z, r), static_cast<std::size_t>(targets[r]));
  const int ia = logits.id();
  return logits.tape()->record(
      std::move(out), logits.requires_grad(), [ia, targets](Tape& tp, const Matrix& g) {
        const Matrix& zv = tp.value(ia);
        Matrix d = Matrix::Zero(zv.rows(), zv.cols());
        for (Eigen::Index r = 0; r < zv.rows(); ++r) {
          const auto y = static_cast<std::size_t>(targets[r]);
          const auto other = math::runner_up(row_span(zv, r), y);
          d(r, other) += g(r, 0);
          d(r, y) -= g(r, 0);
        }
        tp.accumulate(ia, d);
      });
}

}  // namespace ralb::ad
