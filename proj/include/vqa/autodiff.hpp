#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "vqa/errors.hpp"
#include "vqa/tensor.hpp"

namespace vqa {

using NodeId = int32_t;
using NamedTensors = std::map<std::string, Tensor>;

namespace detail {

// Shared numeric kernels. Graph ops and the plain feature functions both call
// these, so eager and recorded paths produce identical bits. Accumulation is
// sequential; no reassociation.

// y = x^T W + b: bias first, then accumulate input rows in ascending order.
inline void affine_kernel(const Tensor& x, const Tensor& w, const Tensor& b,
                          Tensor& out) {
  const int64_t n = x.numel(), m = b.numel();
  for (int64_t j = 0; j < m; ++j) out[j] = b[j];
  for (int64_t i = 0; i < n; ++i) {
    const double xi = x[i];
    const double* wp = w.data() + i * m;
    for (int64_t j = 0; j < m; ++j) out[j] += xi * wp[j];
  }
}

inline void channel_mean_kernel(const Tensor& x, Tensor& out) {
  const int64_t c = x.dim(0), hw = x.dim(1) * x.dim(2);
  for (int64_t ch = 0; ch < c; ++ch) {
    double s = 0.0;
    const double* p = x.data() + ch * hw;
    for (int64_t i = 0; i < hw; ++i) s += p[i];
    out[ch] = s / static_cast<double>(hw);
  }
}

inline void channel_var_kernel(const Tensor& x, const Tensor& mean, Tensor& out) {
  const int64_t c = x.dim(0), hw = x.dim(1) * x.dim(2);
  for (int64_t ch = 0; ch < c; ++ch) {
    double s = 0.0;
    const double mu = mean[ch];
    const double* p = x.data() + ch * hw;
    for (int64_t i = 0; i < hw; ++i) {
      const double d = p[i] - mu;
      s += d * d;
    }
    out[ch] = s / static_cast<double>(hw);
  }
}

inline void channel_cov_kernel(const Tensor& x, const Tensor& y,
                               const Tensor& mx, const Tensor& my, Tensor& out) {
  const int64_t c = x.dim(0), hw = x.dim(1) * x.dim(2);
  for (int64_t ch = 0; ch < c; ++ch) {
    double s = 0.0;
    const double mux = mx[ch], muy = my[ch];
    const double* px = x.data() + ch * hw;
    const double* py = y.data() + ch * hw;
    for (int64_t i = 0; i < hw; ++i) s += (px[i] - mux) * (py[i] - muy);
    out[ch] = s / static_cast<double>(hw);
  }
}

inline void conv2d_kernel(const Tensor& x, const Tensor& w, const Tensor& b,
                          int64_t stride, int64_t pad, Tensor& out) {
  const int64_t cin = x.dim(0), h = x.dim(1), wd = x.dim(2);
  const int64_t cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const int64_t ho = out.dim(1), wo = out.dim(2);
  for (int64_t oc = 0; oc < cout; ++oc) {
    for (int64_t oy = 0; oy < ho; ++oy) {
      for (int64_t ox = 0; ox < wo; ++ox) {
        double acc = b[oc];
        for (int64_t ic = 0; ic < cin; ++ic) {
          const double* xp = x.data() + (ic * h) * wd;
          const double* wp = w.data() + ((oc * cin + ic) * kh) * kw;
          for (int64_t ky = 0; ky < kh; ++ky) {
            const int64_t iy = oy * stride - pad + ky;
            if (iy < 0 || iy >= h) continue;
            for (int64_t kx = 0; kx < kw; ++kx) {
              const int64_t ix = ox * stride - pad + kx;
              if (ix < 0 || ix >= wd) continue;
              acc += xp[iy * wd + ix] * wp[ky * kw + kx];
            }
          }
        }
        out.at3(oc, oy, ox) = acc;
      }
    }
  }
}

}  // namespace detail

// Reverse-mode autodiff over a static DAG of tensor ops.
//
// Build once (shape inference runs at build time), then run forward() with
// leaf bindings and backward() for parameter gradients. Nodes are stored in
// creation order, which is a topological order by construction; backward
// walks it exactly once in reverse.
class Graph {
 public:
  struct Node {
    std::string kind;
    std::string label;
    std::vector<NodeId> inputs;
    Shape shape;
    Tensor value;
    Tensor grad;
    bool has_value = false;
    bool needs_grad = false;
    bool trainable = false;
    bool is_leaf = false;
    std::string leaf_name;
    std::function<void(Graph&, NodeId)> fwd;
    std::function<void(Graph&, NodeId)> bwd;
  };

  NodeId input(const std::string& name, Shape shape) {
    return add_leaf(name, std::move(shape), Tensor(), false, false);
  }

  NodeId parameter(const std::string& name, Tensor value) {
    Shape s = value.shape();
    return add_leaf(name, std::move(s), std::move(value), true, true);
  }

  NodeId constant(Tensor value) {
    Shape s = value.shape();
    return add_leaf("", std::move(s), std::move(value), true, false);
  }

  // Rebind a named leaf (input or parameter) to a new value of the same shape.
  void set_leaf(const std::string& name, Tensor value) {
    auto it = leaves_.find(name);
    if (it == leaves_.end()) throw StateError("no leaf named '" + name + "'");
    Node& n = nodes_[static_cast<std::size_t>(it->second)];
    if (value.shape() != n.shape)
      throw DataError("leaf '" + name + "' expects shape " + shape_str(n.shape) +
                      ", got " + shape_str(value.shape()));
    n.value = std::move(value);
    n.has_value = true;
  }

  bool has_leaf(const std::string& name) const {
    return leaves_.count(name) != 0;
  }

  NodeId leaf_id(const std::string& name) const {
    auto it = leaves_.find(name);
    if (it == leaves_.end()) throw StateError("no leaf named '" + name + "'");
    return it->second;
  }

  void set_output(NodeId id) { output_ = id; }
  NodeId output() const { return output_; }

  // Executes every node in topological order with the given input bindings.
  // Parameters keep their declared values unless rebound. Returns the output
  // node's value.
  const Tensor& forward(const NamedTensors& inputs = {}) {
    for (const auto& [name, t] : inputs) set_leaf(name, t);
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      Node& n = nodes_[i];
      if (n.is_leaf) {
        if (!n.has_value)
          throw StateError("leaf '" + n.leaf_name + "' has no bound value");
        continue;
      }
      n.fwd(*this, static_cast<NodeId>(i));
      n.has_value = true;
    }
    ran_forward_ = true;
    if (output_ < 0) output_ = static_cast<NodeId>(nodes_.size()) - 1;
    return nodes_[static_cast<std::size_t>(output_)].value;
  }

  // Reverse pass from the output node. Returns gradients for every trainable
  // leaf; non-trainable leaves are skipped.
  std::map<std::string, Tensor> backward(const Tensor& output_gradient) {
    if (!ran_forward_)
      throw StateError("backward called before forward");
    Node& out = nodes_.at(static_cast<std::size_t>(output_));
    if (output_gradient.shape() != out.shape)
      throw DataError("output gradient shape " +
                      shape_str(output_gradient.shape()) +
                      " does not match output shape " + shape_str(out.shape));
    for (Node& n : nodes_)
      if (n.needs_grad) n.grad = Tensor::zeros(n.shape);
    if (out.needs_grad) out.grad = output_gradient;
    for (std::size_t i = nodes_.size(); i-- > 0;) {
      Node& n = nodes_[i];
      if (n.is_leaf || !n.needs_grad) continue;
      n.bwd(*this, static_cast<NodeId>(i));
    }
    std::map<std::string, Tensor> grads;
    for (const Node& n : nodes_)
      if (n.is_leaf && n.trainable) grads[n.leaf_name] = n.grad;
    return grads;
  }

  const Tensor& value(NodeId id) const {
    const Node& n = nodes_.at(static_cast<std::size_t>(id));
    if (!n.has_value)
      throw StateError(describe(id) + " has no value; run forward first");
    return n.value;
  }

  const Tensor& grad(NodeId id) const {
    return nodes_.at(static_cast<std::size_t>(id)).grad;
  }

  const Shape& shape(NodeId id) const {
    return nodes_.at(static_cast<std::size_t>(id)).shape;
  }

  std::size_t node_count() const { return nodes_.size(); }

  // Throws NumericError naming the first node holding a non-finite value.
  void validate_finite() const {
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      const Node& n = nodes_[i];
      if (!n.has_value) continue;
      int64_t bad = n.value.first_nonfinite();
      if (bad >= 0)
        throw NumericError(describe(static_cast<NodeId>(i)) +
                           " produced non-finite value at flat index " +
                           std::to_string(bad));
    }
  }

  std::string describe(NodeId id) const {
    const Node& n = nodes_.at(static_cast<std::size_t>(id));
    std::string s = n.kind + " node #" + std::to_string(id);
    if (!n.label.empty()) s += " '" + n.label + "'";
    if (!n.leaf_name.empty()) s += " '" + n.leaf_name + "'";
    return s;
  }

  // --- internals used by op closures ---
  Tensor& value_mut(NodeId id) {
    return nodes_[static_cast<std::size_t>(id)].value;
  }
  // Gradient accumulator, or nullptr when the input does not need gradients.
  Tensor* grad_accum(NodeId id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    return n.needs_grad ? &n.grad : nullptr;
  }
  Node& node(NodeId id) { return nodes_[static_cast<std::size_t>(id)]; }

  NodeId add_op(std::string kind, std::string label, std::vector<NodeId> inputs,
                Shape shape, std::function<void(Graph&, NodeId)> fwd,
                std::function<void(Graph&, NodeId)> bwd) {
    Node n;
    n.kind = std::move(kind);
    n.label = std::move(label);
    n.inputs = std::move(inputs);
    n.shape = std::move(shape);
    n.value = Tensor(n.shape);
    n.fwd = std::move(fwd);
    n.bwd = std::move(bwd);
    for (NodeId in : n.inputs) {
      if (in < 0 || in >= static_cast<NodeId>(nodes_.size()))
        throw StateError("op '" + n.kind + "' references unknown node " +
                         std::to_string(in));
      n.needs_grad = n.needs_grad || nodes_[static_cast<std::size_t>(in)].needs_grad;
    }
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size()) - 1;
  }

 private:
  NodeId add_leaf(const std::string& name, Shape shape, Tensor value,
                  bool has_value, bool trainable) {
    Node n;
    n.kind = trainable ? "parameter" : (name.empty() ? "constant" : "input");
    n.is_leaf = true;
    n.leaf_name = name;
    n.shape = std::move(shape);
    n.value = std::move(value);
    n.has_value = has_value;
    n.trainable = trainable;
    n.needs_grad = trainable;
    nodes_.push_back(std::move(n));
    NodeId id = static_cast<NodeId>(nodes_.size()) - 1;
    if (!name.empty()) {
      if (leaves_.count(name))
        throw StateError("duplicate leaf name '" + name + "'");
      leaves_[name] = id;
    }
    return id;
  }

  std::vector<Node> nodes_;
  std::map<std::string, NodeId> leaves_;
  NodeId output_ = -1;
  bool ran_forward_ = false;
};

// ---------------------------------------------------------------------------
// Op builders. Shape checks run at build time and name the offending node.

namespace ops {

inline void check_rank(const Graph& g, NodeId id, std::size_t rank,
                       const std::string& op) {
  if (g.shape(id).size() != rank)
    throw DataError(op + ": expected rank-" + std::to_string(rank) +
                    " input but " + g.describe(id) + " has shape " +
                    shape_str(g.shape(id)));
}

// 2-D convolution, zero padding, square stride. x [Cin,H,W], w [Cout,Cin,kh,kw],
// b [Cout] -> [Cout,Ho,Wo].
inline NodeId conv2d(Graph& g, NodeId x, NodeId w, NodeId b, int64_t stride,
                     int64_t pad, const std::string& label = "") {
  check_rank(g, x, 3, "conv2d");
  check_rank(g, w, 4, "conv2d");
  check_rank(g, b, 1, "conv2d");
  const Shape& xs = g.shape(x);
  const Shape& ws = g.shape(w);
  if (stride < 1) throw DataError("conv2d: stride must be >= 1");
  if (pad < 0) throw DataError("conv2d: negative padding");
  if (ws[1] != xs[0])
    throw DataError("conv2d '" + label + "': weight expects " +
                    std::to_string(ws[1]) + " input channels but " +
                    g.describe(x) + " has " + std::to_string(xs[0]));
  if (g.shape(b)[0] != ws[0])
    throw DataError("conv2d '" + label + "': bias length " +
                    std::to_string(g.shape(b)[0]) + " != out channels " +
                    std::to_string(ws[0]));
  const int64_t ho = (xs[1] + 2 * pad - ws[2]) / stride + 1;
  const int64_t wo = (xs[2] + 2 * pad - ws[3]) / stride + 1;
  if (xs[1] + 2 * pad < ws[2] || xs[2] + 2 * pad < ws[3] || ho < 1 || wo < 1)
    throw DataError("conv2d '" + label + "': kernel " + shape_str(ws) +
                    " does not fit input " + shape_str(xs) + " with pad " +
                    std::to_string(pad));
  return g.add_op(
      "conv2d", label, {x, w, b}, {ws[0], ho, wo},
      [x, w, b, stride, pad](Graph& gr, NodeId self) {
        detail::conv2d_kernel(gr.value(x), gr.value(w), gr.value(b), stride,
                              pad, gr.value_mut(self));
      },
      [x, w, b, stride, pad](Graph& gr, NodeId self) {
        const Tensor& go = gr.grad(self);
        const Tensor& xv = gr.value(x);
        const Tensor& wv = gr.value(w);
        Tensor* gx = gr.grad_accum(x);
        Tensor* gw = gr.grad_accum(w);
        Tensor* gb = gr.grad_accum(b);
        const int64_t cin = xv.dim(0), h = xv.dim(1), wd = xv.dim(2);
        const int64_t cout = wv.dim(0), kh = wv.dim(2), kw = wv.dim(3);
        const int64_t ho = go.dim(1), wo = go.dim(2);
        for (int64_t oc = 0; oc < cout; ++oc) {
          for (int64_t oy = 0; oy < ho; ++oy) {
            for (int64_t ox = 0; ox < wo; ++ox) {
              const double gv = go.at3(oc, oy, ox);
              if (gb) (*gb)[oc] += gv;
              for (int64_t ic = 0; ic < cin; ++ic) {
                for (int64_t ky = 0; ky < kh; ++ky) {
                  const int64_t iy = oy * stride - pad + ky;
                  if (iy < 0 || iy >= h) continue;
                  for (int64_t kx = 0; kx < kw; ++kx) {
                    const int64_t ix = ox * stride - pad + kx;
                    if (ix < 0 || ix >= wd) continue;
                    if (gw)
                      (*gw)[((oc * cin + ic) * kh + ky) * kw + kx] +=
                          gv * xv.at3(ic, iy, ix);
                    if (gx)
                      (*gx)[(ic * h + iy) * wd + ix] +=
                          gv * wv[((oc * cin + ic) * kh + ky) * kw + kx];
                  }
                }
              }
            }
          }
        }
      });
}

inline NodeId relu(Graph& g, NodeId x, const std::string& label = "") {
  return g.add_op(
      "relu", label, {x}, g.shape(x),
      [x](Graph& gr, NodeId self) {
        const Tensor& xv = gr.value(x);
        Tensor& out = gr.value_mut(self);
        for (int64_t i = 0; i < xv.numel(); ++i)
          out[i] = xv[i] > 0.0 ? xv[i] : 0.0;
      },
      [x](Graph& gr, NodeId self) {
        Tensor* gx = gr.grad_accum(x);
        if (!gx) return;
        const Tensor& xv = gr.value(x);
        const Tensor& go = gr.grad(self);
        for (int64_t i = 0; i < xv.numel(); ++i)
          if (xv[i] > 0.0) (*gx)[i] += go[i];
      });
}

// y = x^T W + b with x [n], W [n,m], b [m].
inline NodeId affine(Graph& g, NodeId x, NodeId w, NodeId b,
                     const std::string& label = "") {
  check_rank(g, x, 1, "affine");
  check_rank(g, w, 2, "affine");
  check_rank(g, b, 1, "affine");
  const int64_t n = g.shape(x)[0], m = g.shape(w)[1];
  if (g.shape(w)[0] != n)
    throw DataError("affine '" + label + "': weight rows " +
                    std::to_string(g.shape(w)[0]) + " != input length " +
                    std::to_string(n));
  if (g.shape(b)[0] != m)
    throw DataError("affine '" + label + "': bias length mismatch");
  return g.add_op(
      "affine", label, {x, w, b}, {m},
      [x, w, b](Graph& gr, NodeId self) {
        detail::affine_kernel(gr.value(x), gr.value(w), gr.value(b),
                              gr.value_mut(self));
      },
      [x, w, b, n, m](Graph& gr, NodeId self) {
        const Tensor& go = gr.grad(self);
        const Tensor& xv = gr.value(x);
        const Tensor& wv = gr.value(w);
        Tensor* gx = gr.grad_accum(x);
        Tensor* gw = gr.grad_accum(w);
        Tensor* gb = gr.grad_accum(b);
        if (gb)
          for (int64_t j = 0; j < m; ++j) (*gb)[j] += go[j];
        for (int64_t i = 0; i < n; ++i) {
          const double* wp = wv.data() + i * m;
          double acc = 0.0;
          for (int64_t j = 0; j < m; ++j) {
            if (gw) (*gw)[i * m + j] += xv[i] * go[j];
            acc += wp[j] * go[j];
          }
          if (gx) (*gx)[i] += acc;
        }
      });
}

// Per-channel mean over spatial dims: [C,h,w] -> [C].
inline NodeId channel_mean(Graph& g, NodeId x, const std::string& label = "") {
  check_rank(g, x, 3, "channel_mean");
  const int64_t c = g.shape(x)[0];
  return g.add_op(
      "channel_mean", label, {x}, {c},
      [x](Graph& gr, NodeId self) {
        detail::channel_mean_kernel(gr.value(x), gr.value_mut(self));
      },
      [x, c](Graph& gr, NodeId self) {
        Tensor* gx = gr.grad_accum(x);
        if (!gx) return;
        const Tensor& go = gr.grad(self);
        const int64_t hw = gr.shape(x)[1] * gr.shape(x)[2];
        for (int64_t ch = 0; ch < c; ++ch) {
          const double gv = go[ch] / static_cast<double>(hw);
          double* p = gx->data() + ch * hw;
          for (int64_t i = 0; i < hw; ++i) p[i] += gv;
        }
      });
}

// Per-channel population variance over spatial dims: [C,h,w] -> [C].
inline NodeId channel_var(Graph& g, NodeId x, const std::string& label = "") {
  check_rank(g, x, 3, "channel_var");
  const int64_t c = g.shape(x)[0];
  return g.add_op(
      "channel_var", label, {x}, {c},
      [x, c](Graph& gr, NodeId self) {
        const Tensor& xv = gr.value(x);
        Tensor mean({c});
        detail::channel_mean_kernel(xv, mean);
        detail::channel_var_kernel(xv, mean, gr.value_mut(self));
      },
      [x, c](Graph& gr, NodeId self) {
        Tensor* gx = gr.grad_accum(x);
        if (!gx) return;
        const Tensor& xv = gr.value(x);
        const Tensor& go = gr.grad(self);
        const int64_t hw = xv.dim(1) * xv.dim(2);
        Tensor mean({c});
        detail::channel_mean_kernel(xv, mean);
        for (int64_t ch = 0; ch < c; ++ch) {
          const double scale = 2.0 * go[ch] / static_cast<double>(hw);
          const double mu = mean[ch];
          const double* p = xv.data() + ch * hw;
          double* gp = gx->data() + ch * hw;
          for (int64_t i = 0; i < hw; ++i) gp[i] += scale * (p[i] - mu);
        }
      });
}

// Per-channel population covariance of two same-shaped maps: -> [C].
inline NodeId channel_cov(Graph& g, NodeId x, NodeId y,
                          const std::string& label = "") {
  check_rank(g, x, 3, "channel_cov");
  check_rank(g, y, 3, "channel_cov");
  if (g.shape(x) != g.shape(y))
    throw DataError("channel_cov '" + label + "': shape mismatch " +
                    shape_str(g.shape(x)) + " vs " + shape_str(g.shape(y)));
  const int64_t c = g.shape(x)[0];
  return g.add_op(
      "channel_cov", label, {x, y}, {c},
      [x, y, c](Graph& gr, NodeId self) {
        const Tensor& xv = gr.value(x);
        const Tensor& yv = gr.value(y);
        Tensor mx({c}), my({c});
        detail::channel_mean_kernel(xv, mx);
        detail::channel_mean_kernel(yv, my);
        detail::channel_cov_kernel(xv, yv, mx, my, gr.value_mut(self));
      },
      [x, y, c](Graph& gr, NodeId self) {
        const Tensor& xv = gr.value(x);
        const Tensor& yv = gr.value(y);
        const Tensor& go = gr.grad(self);
        Tensor* gx = gr.grad_accum(x);
        Tensor* gy = gr.grad_accum(y);
        const int64_t hw = xv.dim(1) * xv.dim(2);
        Tensor mx({c}), my({c});
        detail::channel_mean_kernel(xv, mx);
        detail::channel_mean_kernel(yv, my);
        for (int64_t ch = 0; ch < c; ++ch) {
          const double scale = go[ch] / static_cast<double>(hw);
          const double* px = xv.data() + ch * hw;
          const double* py = yv.data() + ch * hw;
          for (int64_t i = 0; i < hw; ++i) {
            if (gx) (*gx)[ch * hw + i] += scale * (py[i] - my[ch]);
            if (gy) (*gy)[ch * hw + i] += scale * (px[i] - mx[ch]);
          }
        }
      });
}

inline NodeId sum_all(Graph& g, NodeId x, const std::string& label = "") {
  return g.add_op(
      "sum", label, {x}, {1},
      [x](Graph& gr, NodeId self) {
        const Tensor& xv = gr.value(x);
        double s = 0.0;
        for (int64_t i = 0; i < xv.numel(); ++i) s += xv[i];
        gr.value_mut(self)[0] = s;
      },
      [x](Graph& gr, NodeId self) {
        Tensor* gx = gr.grad_accum(x);
        if (!gx) return;
        const double gv = gr.grad(self)[0];
        for (int64_t i = 0; i < gx->numel(); ++i) (*gx)[i] += gv;
      });
}

inline NodeId mean_all(Graph& g, NodeId x, const std::string& label = "") {
  const int64_t n = shape_numel(g.shape(x));
  return g.add_op(
      "mean", label, {x}, {1},
      [x, n](Graph& gr, NodeId self) {
        const Tensor& xv = gr.value(x);
        double s = 0.0;
        for (int64_t i = 0; i < n; ++i) s += xv[i];
        gr.value_mut(self)[0] = s / static_cast<double>(n);
      },
      [x, n](Graph& gr, NodeId self) {
        Tensor* gx = gr.grad_accum(x);
        if (!gx) return;
        const double gv = gr.grad(self)[0] / static_cast<double>(n);
        for (int64_t i = 0; i < n; ++i) (*gx)[i] += gv;
      });
}

inline NodeId dot(Graph& g, NodeId a, NodeId b, const std::string& label = "") {
  if (g.shape(a) != g.shape(b))
    throw DataError("dot '" + label + "': shape mismatch " +
                    shape_str(g.shape(a)) + " vs " + shape_str(g.shape(b)));
  return g.add_op(
      "dot", label, {a, b}, {1},
      [a, b](Graph& gr, NodeId self) {
        const Tensor& av = gr.value(a);
        const Tensor& bv = gr.value(b);
        double s = 0.0;
        for (int64_t i = 0; i < av.numel(); ++i) s += av[i] * bv[i];
        gr.value_mut(self)[0] = s;
      },
      [a, b](Graph& gr, NodeId self) {
        const double gv = gr.grad(self)[0];
        const Tensor& av = gr.value(a);
        const Tensor& bv = gr.value(b);
        Tensor* ga = gr.grad_accum(a);
        Tensor* gb = gr.grad_accum(b);
        for (int64_t i = 0; i < av.numel(); ++i) {
          if (ga) (*ga)[i] += gv * bv[i];
          if (gb) (*gb)[i] += gv * av[i];
        }
      });
}

namespace bcast {
enum Mode { kSame, kScalarRhs, kChannelRhs };

inline Mode mode_for(const Shape& a, const Shape& b, const std::string& op) {
  if (a == b) return kSame;
  if (b.size() == 1 && b[0] == 1) return kScalarRhs;
  if (a.size() == 3 && b.size() == 1 && b[0] == a[0]) return kChannelRhs;
  throw DataError(op + ": cannot broadcast " + shape_str(b) + " against " +
                  shape_str(a));
}

// rhs index for flat lhs index i.
inline int64_t rhs_index(Mode m, int64_t i, int64_t hw) {
  switch (m) {
    case kSame: return i;
    case kScalarRhs: return 0;
    default: return i / hw;
  }
}
}  // namespace bcast

enum class BinKind { kAdd, kSub, kMul, kDiv };

// Elementwise binary op; rhs may be same-shaped, a scalar, or a per-channel
// vector broadcast over a [C,h,w] lhs.
inline NodeId binary(Graph& g, BinKind kind, NodeId a, NodeId b,
                     const std::string& label = "") {
  static const char* names[] = {"add", "sub", "mul", "div"};
  const std::string kind_name = names[static_cast<int>(kind)];
  const Shape as = g.shape(a);
  const bcast::Mode m = bcast::mode_for(as, g.shape(b), kind_name);
  const int64_t hw = as.size() == 3 ? as[1] * as[2] : 1;
  auto fwd = [kind, a, b, m, hw](Graph& gr, NodeId self) {
    const Tensor& av = gr.value(a);
    const Tensor& bv = gr.value(b);
    Tensor& out = gr.value_mut(self);
    for (int64_t i = 0; i < av.numel(); ++i) {
      const double bvv = bv[bcast::rhs_index(m, i, hw)];
      switch (kind) {
        case BinKind::kAdd: out[i] = av[i] + bvv; break;
        case BinKind::kSub: out[i] = av[i] - bvv; break;
        case BinKind::kMul: out[i] = av[i] * bvv; break;
        case BinKind::kDiv: out[i] = av[i] / bvv; break;
      }
    }
  };
  auto bwd = [kind, a, b, m, hw](Graph& gr, NodeId self) {
    const Tensor& go = gr.grad(self);
    const Tensor& av = gr.value(a);
    const Tensor& bv = gr.value(b);
    Tensor* ga = gr.grad_accum(a);
    Tensor* gb = gr.grad_accum(b);
    for (int64_t i = 0; i < av.numel(); ++i) {
      const int64_t bi = bcast::rhs_index(m, i, hw);
      const double bvv = bv[bi];
      switch (kind) {
        case BinKind::kAdd:
          if (ga) (*ga)[i] += go[i];
          if (gb) (*gb)[bi] += go[i];
          break;
        case BinKind::kSub:
          if (ga) (*ga)[i] += go[i];
          if (gb) (*gb)[bi] -= go[i];
          break;
        case BinKind::kMul:
          if (ga) (*ga)[i] += go[i] * bvv;
          if (gb) (*gb)[bi] += go[i] * av[i];
          break;
        case BinKind::kDiv:
          if (ga) (*ga)[i] += go[i] / bvv;
          if (gb) (*gb)[bi] -= go[i] * av[i] / (bvv * bvv);
          break;
      }
    }
  };
  return g.add_op(kind_name, label, {a, b}, as, fwd, bwd);
}

inline NodeId add(Graph& g, NodeId a, NodeId b, const std::string& label = "") {
  return binary(g, BinKind::kAdd, a, b, label);
}
inline NodeId sub(Graph& g, NodeId a, NodeId b, const std::string& label = "") {
  return binary(g, BinKind::kSub, a, b, label);
}
inline NodeId mul(Graph& g, NodeId a, NodeId b, const std::string& label = "") {
  return binary(g, BinKind::kMul, a, b, label);
}
inline NodeId div(Graph& g, NodeId a, NodeId b, const std::string& label = "") {
  return binary(g, BinKind::kDiv, a, b, label);
}

// y = k * x
inline NodeId scale(Graph& g, NodeId x, double k, const std::string& label = "") {
  return g.add_op(
      "scale", label, {x}, g.shape(x),
      [x, k](Graph& gr, NodeId self) {
        const Tensor& xv = gr.value(x);
        Tensor& out = gr.value_mut(self);
        for (int64_t i = 0; i < xv.numel(); ++i) out[i] = k * xv[i];
      },
      [x, k](Graph& gr, NodeId self) {
        Tensor* gx = gr.grad_accum(x);
        if (!gx) return;
        const Tensor& go = gr.grad(self);
        for (int64_t i = 0; i < go.numel(); ++i) (*gx)[i] += k * go[i];
      });
}

// y = x + k
inline NodeId add_const(Graph& g, NodeId x, double k,
                        const std::string& label = "") {
  return g.add_op(
      "add_const", label, {x}, g.shape(x),
      [x, k](Graph& gr, NodeId self) {
        const Tensor& xv = gr.value(x);
        Tensor& out = gr.value_mut(self);
        for (int64_t i = 0; i < xv.numel(); ++i) out[i] = xv[i] + k;
      },
      [x](Graph& gr, NodeId self) {
        Tensor* gx = gr.grad_accum(x);
        if (!gx) return;
        const Tensor& go = gr.grad(self);
        for (int64_t i = 0; i < go.numel(); ++i) (*gx)[i] += go[i];
      });
}

inline NodeId sqrt_op(Graph& g, NodeId x, const std::string& label = "") {
  return g.add_op(
      "sqrt", label, {x}, g.shape(x),
      [x](Graph& gr, NodeId self) {
        const Tensor& xv = gr.value(x);
        Tensor& out = gr.value_mut(self);
        for (int64_t i = 0; i < xv.numel(); ++i) out[i] = std::sqrt(xv[i]);
      },
      [x](Graph& gr, NodeId self) {
        Tensor* gx = gr.grad_accum(x);
        if (!gx) return;
        const Tensor& go = gr.grad(self);
        const Tensor& yv = gr.value(self);
        for (int64_t i = 0; i < go.numel(); ++i)
          (*gx)[i] += go[i] / (2.0 * yv[i]);
      });
}

// Concatenate rank-1 tensors in order.
inline NodeId concat(Graph& g, const std::vector<NodeId>& parts,
                     const std::string& label = "") {
  if (parts.empty()) throw DataError("concat: no inputs");
  int64_t total = 0;
  for (NodeId p : parts) {
    check_rank(g, p, 1, "concat");
    total += g.shape(p)[0];
  }
  return g.add_op(
      "concat", label, parts, {total},
      [parts](Graph& gr, NodeId self) {
        Tensor& out = gr.value_mut(self);
        int64_t off = 0;
        for (NodeId p : parts) {
          const Tensor& pv = gr.value(p);
          for (int64_t i = 0; i < pv.numel(); ++i) out[off + i] = pv[i];
          off += pv.numel();
        }
      },
      [parts](Graph& gr, NodeId self) {
        const Tensor& go = gr.grad(self);
        int64_t off = 0;
        for (NodeId p : parts) {
          const int64_t n = gr.shape(p)[0];
          if (Tensor* gp = gr.grad_accum(p))
            for (int64_t i = 0; i < n; ++i) (*gp)[i] += go[off + i];
          off += n;
        }
      });
}

// Stack scalar nodes into a vector [n].
inline NodeId stack_scalars(Graph& g, const std::vector<NodeId>& scalars,
                            const std::string& label = "") {
  if (scalars.empty()) throw DataError("stack_scalars: no inputs");
  for (NodeId s : scalars)
    if (shape_numel(g.shape(s)) != 1)
      throw DataError("stack_scalars: " + g.describe(s) + " is not scalar");
  const int64_t n = static_cast<int64_t>(scalars.size());
  return g.add_op(
      "stack", label, scalars, {n},
      [scalars](Graph& gr, NodeId self) {
        Tensor& out = gr.value_mut(self);
        for (std::size_t i = 0; i < scalars.size(); ++i)
          out[static_cast<int64_t>(i)] = gr.value(scalars[i])[0];
      },
      [scalars](Graph& gr, NodeId self) {
        const Tensor& go = gr.grad(self);
        for (std::size_t i = 0; i < scalars.size(); ++i)
          if (Tensor* gp = gr.grad_accum(scalars[i]))
            (*gp)[0] += go[static_cast<int64_t>(i)];
      });
}

}  // namespace ops

// Free-function veneer over the graph entry points.
inline const Tensor& forward(Graph& g, const NamedTensors& inputs = {}) {
  return g.forward(inputs);
}
inline std::map<std::string, Tensor> backward(Graph& g,
                                              const Tensor& output_gradient) {
  return g.backward(output_gradient);
}

}  // namespace vqa
