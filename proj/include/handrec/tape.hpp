#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "handrec/tensor.hpp"

namespace handrec {

// Handle to a value recorded on a Tape.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Define-by-run reverse-mode tape. A fresh tape is built per forward pass;
// nodes hold forward values (or a pointer to an external parameter tensor)
// and a backward closure that scatters the node's gradient to its parents.
//
// Gradients are only propagated through nodes that (a) transitively depend
// on a requires-grad leaf and (b) were touched while walking back from the
// loss, so constant subgraphs cost nothing at backward time.
class Tape {
 public:
  Var input(Tensor value, bool requires_grad = true) {
    nodes_.push_back(Node{std::move(value), nullptr, Tensor{}, nullptr,
                          requires_grad, false});
    return Var{int(nodes_.size()) - 1};
  }

  // Zero-copy leaf; `value` must outlive the tape (model parameters).
  Var external(const Tensor* value, bool requires_grad = true) {
    nodes_.push_back(Node{Tensor{}, value, Tensor{}, nullptr, requires_grad,
                          false});
    return Var{int(nodes_.size()) - 1};
  }

  Var constant(Tensor value) { return input(std::move(value), false); }

  using BackFn = std::function<void(Tape&, Var)>;

  // Record an op result. `needs` should be true iff any parent needs grad;
  // when false the backward closure is dropped entirely.
  Var record(Tensor value, bool needs, BackFn back) {
    nodes_.push_back(Node{std::move(value), nullptr, Tensor{},
                          needs ? std::move(back) : nullptr, needs, false});
    return Var{int(nodes_.size()) - 1};
  }

  bool needs_grad(Var v) const { return nodes_[size_t(v.id)].needs_grad; }

  const Tensor& val(Var v) const {
    const Node& n = nodes_[size_t(v.id)];
    return n.external ? *n.external : n.value;
  }

  // Gradient buffer for accumulation; allocates zeros on first touch.
  Tensor& grad_acc(Var v) {
    Node& n = nodes_[size_t(v.id)];
    if (!n.touched) {
      n.grad = Tensor(val(v).shape);
      n.touched = true;
    }
    return n.grad;
  }

  // Gradient view after backward; zeros if the leaf did not influence the
  // loss (matches the finite-difference answer).
  const Tensor& grad(Var v) {
    Node& n = nodes_[size_t(v.id)];
    if (!n.touched) {
      n.grad = Tensor(val(v).shape);
      n.touched = true;
    }
    return n.grad;
  }

  void backward(Var loss) {
    if (!loss.valid() || loss.id >= int(nodes_.size()))
      throw_invalid("backward: loss is not on this tape");
    if (val(loss).numel() != 1)
      throw_invalid("backward: loss must be scalar, got shape " +
                    val(loss).shape_str());
    grad_acc(loss).data[0] += 1.0;
    for (int i = loss.id; i >= 0; --i) {
      Node& n = nodes_[size_t(i)];
      if (n.touched && n.back) n.back(*this, Var{i});
    }
  }

  size_t size() const { return nodes_.size(); }

  void clear() { nodes_.clear(); }

 private:
  struct Node {
    Tensor value;
    const Tensor* external;
    Tensor grad;
    BackFn back;
    bool needs_grad;
    bool touched;
  };
  std::vector<Node> nodes_;
};

inline void axpy(Tensor& dst, const Tensor& src, Real a = 1.0) {
  for (size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += a * src.data[i];
}

}  // namespace handrec
