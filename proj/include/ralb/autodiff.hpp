#pragma once

// Minimal reverse-mode automatic differentiation over row-major float
// matrices. A Tape records every operation of one forward pass; backward()
// walks it in reverse and accumulates gradients into the nodes that asked
// for them.

#include "ralb/tensor.hpp"

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

namespace ralb::ad {

class Tape;

// Handle to a node on a Tape. Cheap to copy; only valid while its Tape lives.
class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  bool requires_grad() const;
  Tape* tape() const { return tape_; }
  int id() const { return id_; }

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Owned leaf.
  Var leaf(Matrix value, bool requires_grad = false);
  // Leaf referencing external storage; `value` must outlive the tape.
  Var ref(const Matrix& value, bool requires_grad = false);

  // Seeds d(root)/d(root) = 1 and propagates. `root` must be 1x1.
  void backward(Var root);

  // Gradient accumulated at `v` (zeros if nothing flowed into it).
  Matrix grad(Var v) const;

  const Matrix& value(int id) const;
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  using Backward = std::function<void(Tape&, const Matrix& out_grad)>;
  // Records an op result. `backward` is dropped when no input needs gradients.
  Var record(Matrix value, bool requires_grad, Backward backward);
  void accumulate(int id, const Matrix& g);

 private:
  struct Node {
    Matrix owned;
    const Matrix* external = nullptr;
    Matrix grad;
    bool requires_grad = false;
    Backward backward;
  };
  std::vector<Node> nodes_;
};

// --- linear algebra ---
Var matmul(Var a, Var b);     // a * b
Var matmul_nt(Var a, Var b);  // a * b^T
Var add_bias(Var a, Var bias);  // bias is 1 x cols, broadcast over rows
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var scale(Var a, float s);
Var div_scalar(Var a, Var s);  // s is 1x1
Var exp(Var a);
Var transpose(Var a);
Var sum(Var a);  // -> 1x1
Var reshape(Var a, Eigen::Index rows, Eigen::Index cols);

// --- activations and normalization ---
Var gelu(Var a);
Var normalize_rows(Var a);

// --- layout ---
// (B x H*W*C) images in HWC order -> (B*num_patches x P*P*C) patches.
Var patchify(Var images, int height, int width, int channels, int patch);
Var gather_rows(Var table, const std::vector<std::int32_t>& ids);
// Row b of the output is the mean of rows [offsets[b], offsets[b+1]).
Var segment_mean(Var a, const std::vector<std::int32_t>& offsets);

// --- per-row losses (each returns rows x 1) ---
Var sq_dist_rows(Var a, Var b);
Var cross_entropy_rows(Var logits, const std::vector<std::int32_t>& targets);
Var dlr_rows(Var logits, const std::vector<std::int32_t>& targets);
Var margin_rows(Var logits, const std::vector<std::int32_t>& targets);

}  // namespace ralb::ad
