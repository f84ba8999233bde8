#pragma once

// Dense tensors with reverse-mode differentiation. Tensors are rank-1/2
// buffers; ops build a dynamic graph of closures that accumulate gradients on
// backward(). Scalar type is a template parameter: double for gradient-oracle
// work, float for training speed. Matrix products go through Eigen.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

#include "vtlab/common.hpp"

namespace vtlab {

template <class T>
struct TensorImpl {
  std::vector<long> shape;
  std::vector<T> val;
  std::vector<T> grad;  // sized lazily, same length as val
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorImpl<T>>> parents;
  std::function<void()> backward;  // pulls this->grad into parents' grads

  void ensure_grad() {
    if (grad.size() != val.size()) grad.assign(val.size(), T(0));
  }
};

template <class T>
class Tensor {
 public:
  using Impl = TensorImpl<T>;
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using Map = Eigen::Map<Mat>;
  using CMap = Eigen::Map<const Mat>;

  Tensor() = default;
  explicit Tensor(std::shared_ptr<Impl> impl) : impl_(std::move(impl)) {}

  static Tensor zeros(std::vector<long> shape, bool requires_grad = false) {
    auto impl = std::make_shared<Impl>();
    impl->shape = std::move(shape);
    impl->val.assign(numel_of(impl->shape), T(0));
    impl->requires_grad = requires_grad;
    return Tensor(impl);
  }
  static Tensor from(std::vector<long> shape, std::vector<T> data, bool requires_grad = false) {
    if (numel_of(shape) != static_cast<std::int64_t>(data.size()))
      throw shape_error("from: data length does not match shape");
    auto impl = std::make_shared<Impl>();
    impl->shape = std::move(shape);
    impl->val = std::move(data);
    impl->requires_grad = requires_grad;
    return Tensor(impl);
  }
  static Tensor scalar(T v) { return from({1}, {v}); }
  static Tensor randn(std::vector<long> shape, Rng& rng, T stddev, bool requires_grad = true) {
    std::normal_distribution<double> dist(0.0, 1.0);
    auto t = zeros(std::move(shape), requires_grad);
    for (auto& x : t.impl_->val) x = static_cast<T>(dist(rng) * static_cast<double>(stddev));
    return t;
  }

  bool defined() const { return impl_ != nullptr; }
  const std::vector<long>& shape() const { return impl_->shape; }
  long rank() const { return static_cast<long>(impl_->shape.size()); }
  long rows() const { return impl_->shape.at(0); }
  long cols() const { return rank() >= 2 ? impl_->shape.at(1) : 1; }
  std::int64_t numel() const { return static_cast<std::int64_t>(impl_->val.size()); }
  bool requires_grad() const { return impl_->requires_grad; }

  std::vector<T>& val() { return impl_->val; }
  const std::vector<T>& val() const { return impl_->val; }
  std::vector<T>& grad() { impl_->ensure_grad(); return impl_->grad; }
  const std::shared_ptr<Impl>& impl() const { return impl_; }

  T item() const {
    if (numel() != 1) throw contract_error("item: tensor is not scalar");
    return impl_->val[0];
  }
  T& at(long r, long c) { return impl_->val[r * cols() + c]; }
  T at(long r, long c) const { return impl_->val[r * cols() + c]; }

  Map mat() { return Map(impl_->val.data(), rows(), cols()); }
  CMap mat() const { return CMap(impl_->val.data(), rows(), cols()); }
  Map gmat() { impl_->ensure_grad(); return Map(impl_->grad.data(), rows(), cols()); }

  // Detached copy: same values, no history, no grad requirement.
  Tensor detach() const { return from(impl_->shape, impl_->val, false); }

 private:
  std::shared_ptr<Impl> impl_;
};

namespace detail {

template <class T>
Tensor<T> make_node(std::vector<long> shape, const std::vector<Tensor<T>>& parents) {
  auto out = Tensor<T>::zeros(std::move(shape));
  bool rg = false;
  for (const auto& p : parents) rg = rg || p.requires_grad();
  out.impl()->requires_grad = rg;
  if (rg)
    for (const auto& p : parents) out.impl()->parents.push_back(p.impl());
  return out;
}

template <class T>
void count_macs(std::int64_t m, std::int64_t k, std::int64_t n) {
  if (mac_counter) *mac_counter += static_cast<std::uint64_t>(m) * k * n;
}

}  // namespace detail

// Reverse topological sweep from a scalar loss. Gradients of every reachable
// tensor are zeroed first, then accumulated; parameter tensors therefore
// arrive with fresh gradients each call. With accumulate=true only interior
// nodes are zeroed, so leaf gradients add up across separate graphs.
template <class T>
void backward(Tensor<T> loss, bool accumulate = false) {
  if (loss.numel() != 1) throw contract_error("backward: loss must be scalar");
  std::vector<TensorImpl<T>*> topo;
  std::unordered_set<TensorImpl<T>*> seen;
  std::vector<std::pair<TensorImpl<T>*, size_t>> stack;
  stack.push_back({loss.impl().get(), 0});
  seen.insert(loss.impl().get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      TensorImpl<T>* p = node->parents[idx++].get();
      if (seen.insert(p).second) stack.push_back({p, 0});
    } else {
      topo.push_back(node);
      stack.pop_back();
    }
  }
  for (auto* n : topo) {
    if (accumulate && !n->backward && n->grad.size() == n->val.size()) continue;
    n->grad.assign(n->val.size(), T(0));
  }
  loss.impl()->grad[0] = T(1);
  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    if ((*it)->backward) (*it)->backward();
  }
}

// ---- kernel set -----------------------------------------------------------

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.cols() != b.rows())
    throw shape_error("matmul: inner dims " + std::to_string(a.cols()) + " vs " +
                      std::to_string(b.rows()));
  auto out = detail::make_node<T>({a.rows(), b.cols()}, {a, b});
  out.mat().noalias() = a.mat() * b.mat();
  detail::count_macs<T>(a.rows(), a.cols(), b.cols());
  if (out.requires_grad()) {
    auto* o = out.impl().get();
    auto ai = a.impl();
    auto bi = b.impl();
    out.impl()->backward = [o, ai, bi]() {
      using M = typename Tensor<T>::Map;
      M go(o->grad.data(), o->shape[0], o->shape[1]);
      M av(ai->val.data(), ai->shape[0], ai->shape[1]);
      M bv(bi->val.data(), bi->shape[0], bi->shape[1]);
      if (ai->requires_grad) {
        ai->ensure_grad();
        M ga(ai->grad.data(), ai->shape[0], ai->shape[1]);
        ga.noalias() += go * bv.transpose();
        detail::count_macs<T>(o->shape[0], o->shape[1], ai->shape[1]);
      }
      if (bi->requires_grad) {
        bi->ensure_grad();
        M gb(bi->grad.data(), bi->shape[0], bi->shape[1]);
        gb.noalias() += av.transpose() * go;
        detail::count_macs<T>(ai->shape[1], ai->shape[0], o->shape[1]);
      }
    };
  }
  return out;
}

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) throw shape_error("add: shape mismatch");
  auto out = detail::make_node<T>(a.shape(), {a, b});
  for (std::int64_t i = 0; i < a.numel(); ++i) out.val()[i] = a.val()[i] + b.val()[i];
  if (out.requires_grad()) {
    auto* o = out.impl().get();
    auto ai = a.impl();
    auto bi = b.impl();
    out.impl()->backward = [o, ai, bi]() {
      if (ai->requires_grad) {
        ai->ensure_grad();
        for (size_t i = 0; i < o->grad.size(); ++i) ai->grad[i] += o->grad[i];
      }
      if (bi->requires_grad) {
        bi->ensure_grad();
        for (size_t i = 0; i < o->grad.size(); ++i) bi->grad[i] += o->grad[i];
      }
    };
  }
  return out;
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) throw shape_error("mul: shape mismatch");
  auto out = detail::make_node<T>(a.shape(), {a, b});
  for (std::int64_t i = 0; i < a.numel(); ++i) out.val()[i] = a.val()[i] * b.val()[i];
  if (out.requires_grad()) {
    auto* o = out.impl().get();
    auto ai = a.impl();
    auto bi = b.impl();
    out.impl()->backward = [o, ai, bi]() {
      if (ai->requires_grad) {
        ai->ensure_grad();
        for (size_t i = 0; i < o->grad.size(); ++i) ai->grad[i] += o->grad[i] * bi->val[i];
      }
      if (bi->requires_grad) {
        bi->ensure_grad();
        for (size_t i = 0; i < o->grad.size(); ++i) bi->grad[i] += o->grad[i] * ai->val[i];
      }
    };
  }
  return out;
}

// The one permitted broadcast: scalar * tensor.
template <class T>
Tensor<T> scale(const Tensor<T>& a, T c) {
  auto out = detail::make_node<T>(a.shape(), {a});
  for (std::int64_t i = 0; i < a.numel(); ++i) out.val()[i] = a.val()[i] * c;
  if (out.requires_grad()) {
    auto* o = out.impl().get();
    auto ai = a.impl();
    out.impl()->backward = [o, ai, c]() {
      ai->ensure_grad();
      for (size_t i = 0; i < o->grad.size(); ++i) ai->grad[i] += o->grad[i] * c;
    };
  }
  return out;
}

template <class T>
Tensor<T> transpose(const Tensor<T>& a) {
  if (a.rank() != 2) throw shape_error("transpose: rank-2 only");
  auto out = detail::make_node<T>({a.cols(), a.rows()}, {a});
  out.mat().noalias() = a.mat().transpose();
  if (out.requires_grad()) {
    auto* o = out.impl().get();
    auto ai = a.impl();
    out.impl()->backward = [o, ai]() {
      ai->ensure_grad();
      using M = typename Tensor<T>::Map;
      M go(o->grad.data(), o->shape[0], o->shape[1]);
      M ga(ai->grad.data(), ai->shape[0], ai->shape[1]);
      ga.noalias() += go.transpose();
    };
  }
  return out;
}

template <class T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis) {
  if (parts.empty()) throw shape_error("concat: no inputs");
  if (axis != 0 && axis != 1) throw shape_error("concat: axis must be 0 or 1");
  long rows = parts[0].rows(), cols = parts[0].cols();
  long total = 0;
  for (const auto& p : parts) {
    if (axis == 0 && p.cols() != cols) throw shape_error("concat: column mismatch");
    if (axis == 1 && p.rows() != rows) throw shape_error("concat: row mismatch");
    total += (axis == 0) ? p.rows() : p.cols();
  }
  auto out = detail::make_node<T>(axis == 0 ? std::vector<long>{total, cols}
                                            : std::vector<long>{rows, total},
                                  parts);
  long off = 0;
  for (const auto& p : parts) {
    if (axis == 0) {
      out.mat().middleRows(off, p.rows()) = p.mat();
      off += p.rows();
    } else {
      out.mat().middleCols(off, p.cols()) = p.mat();
      off += p.cols();
    }
  }
  if (out.requires_grad()) {
    auto* o = out.impl().get();
    std::vector<std::shared_ptr<TensorImpl<T>>> ps;
    for (const auto& p : parts) ps.push_back(p.impl());
    out.impl()->backward = [o, ps, axis]() {
      using M = typename Tensor<T>::Map;
      M go(o->grad.data(), o->shape[0], o->shape[1]);
      long off = 0;
      for (auto& pi : ps) {
        long pr = pi->shape[0], pc = pi->shape.size() > 1 ? pi->shape[1] : 1;
        if (pi->requires_grad) {
          pi->ensure_grad();
          M gp(pi->grad.data(), pr, pc);
          if (axis == 0)
            gp += go.middleRows(off, pr);
          else
            gp += go.middleCols(off, pc);
        }
        off += (axis == 0) ? pr : pc;
      }
    };
  }
  return out;
}

template <class T>
Tensor<T> slice_cols(const Tensor<T>& a, long c0, long c1) {
  if (c0 < 0 || c1 > a.cols() || c0 >= c1) throw shape_error("slice_cols: bad range");
  auto out = detail::make_node<T>({a.rows(), c1 - c0}, {a});
  out.mat() = a.mat().middleCols(c0, c1 - c0);
  if (out.requires_grad()) {
    auto* o = out.impl().get();
    auto ai = a.impl();
    out.impl()->backward = [o, ai, c0]() {
      ai->ensure_grad();
      using M = typename Tensor<T>::Map;
      M go(o->grad.data(), o->shape[0], o->shape[1]);
      M ga(ai->grad.data(), ai->shape[0], ai->shape[1]);
      ga.middleCols(c0, o->shape[1]) += go;
    };
  }
  return out;
}

template <class T>
Tensor<T> slice_rows(const Tensor<T>& a, long r0, long r1) {
  if (r0 < 0 || r1 > a.rows() || r0 >= r1) throw shape_error("slice_rows: bad range");
  auto out = detail::make_node<T>({r1 - r0, a.cols()}, {a});
  out.mat() = a.mat().middleRows(r0, r1 - r0);
  if (out.requires_grad()) {
    auto* o = out.impl().get();
    auto ai = a.impl();
    out.impl()->backward = [o, ai, r0]() {
      ai->ensure_grad();
      using M = typename Tensor<T>::Map;
      M go(o->grad.data(), o->shape[0], o->shape[1]);
      M ga(ai->grad.data(), ai->shape[0], ai->shape[1]);
      ga.middleRows(r0, o->shape[0]) += go;
    };
  }
  return out;
}

template <class T>
std::vector<Tensor<T>> split_cols(const Tensor<T>& a, long parts) {
  if (a.cols() % parts != 0) throw shape_error("split_cols: not divisible");
  long w = a.cols() / parts;
  std::vector<Tensor<T>> out;
  for (long i = 0; i < parts; ++i) out.push_back(slice_cols(a, i * w, (i + 1) * w));
  return out;
}

template <class T>
Tensor<T> embedding_lookup(const Tensor<T>& table, const std::vector<int>& ids) {
  long V = table.rows(), d = table.cols();
  for (int id : ids)
    if (id < 0 || id >= V) throw contract_error("embedding_lookup: id out of vocabulary");
  auto out = detail::make_node<T>({static_cast<long>(ids.size()), d}, {table});
  for (size_t i = 0; i < ids.size(); ++i)
    std::copy_n(table.val().data() + static_cast<size_t>(ids[i]) * d, d,
                out.val().data() + i * d);
  if (out.requires_grad()) {
    auto* o = out.impl().get();
    auto ti = table.impl();
    out.impl()->backward = [o, ti, ids]() {
      ti->ensure_grad();
      long d = ti->shape[1];
      for (size_t i = 0; i < ids.size(); ++i) {
        T* dst = ti->grad.data() + static_cast<size_t>(ids[i]) * d;
        const T* src = o->grad.data() + i * d;
        for (long j = 0; j < d; ++j) dst[j] += src[j];
      }
    };
  }
  return out;
}

template <class T>
Tensor<T> softmax_rows(const Tensor<T>& a) {
  auto out = detail::make_node<T>(a.shape(), {a});
  long R = a.rows(), C = a.cols();
  for (long r = 0; r < R; ++r) {
    const T* x = a.val().data() + r * C;
    T* y = out.val().data() + r * C;
    T mx = *std::max_element(x, x + C);
    T sum = 0;
    for (long c = 0; c < C; ++c) {
      y[c] = std::exp(x[c] - mx);
      sum += y[c];
    }
    for (long c = 0; c < C; ++c) y[c] /= sum;
  }
  if (out.requires_grad()) {
    auto* o = out.impl().get();
    auto ai = a.impl();
    out.impl()->backward = [o, ai]() {
      ai->ensure_grad();
      long R = o->shape[0], C = o->shape[1];
      for (long r = 0; r < R; ++r) {
        const T* p = o->val.data() + r * C;
        const T* gy = o->grad.data() + r * C;
        T* gx = ai->grad.data() + r * C;
        T dot = 0;
        for (long c = 0; c < C; ++c) dot += p[c] * gy[c];
        for (long c = 0; c < C; ++c) gx[c] += p[c] * (gy[c] - dot);
      }
    };
  }
  return out;
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  auto out = detail::make_node<T>(a.shape(), {a});
  for (std::int64_t i = 0; i < a.numel(); ++i)
    out.val()[i] = T(1) / (T(1) + std::exp(-a.val()[i]));
  if (out.requires_grad()) {
    auto* o = out.impl().get();
    auto ai = a.impl();
    out.impl()->backward = [o, ai]() {
      ai->ensure_grad();
      for (size_t i = 0; i < o->grad.size(); ++i) {
        T s = o->val[i];
        ai->grad[i] += o->grad[i] * s * (T(1) - s);
      }
    };
  }
  return out;
}

template <class T>
Tensor<T> silu(const Tensor<T>& a) {
  auto out = detail::make_node<T>(a.shape(), {a});
  for (std::int64_t i = 0; i < a.numel(); ++i) {
    T x = a.val()[i];
    out.val()[i] = x / (T(1) + std::exp(-x));
  }
  if (out.requires_grad()) {
    auto* o = out.impl().get();
    auto ai = a.impl();
    out.impl()->backward = [o, ai]() {
      ai->ensure_grad();
      for (size_t i = 0; i < o->grad.size(); ++i) {
        T x = ai->val[i];
        T s = T(1) / (T(1) + std::exp(-x));
        ai->grad[i] += o->grad[i] * (s + x * s * (T(1) - s));
      }
    };
  }
  return out;
}

template <class T>
Tensor<T> reduce_sum(const Tensor<T>& a) {
  auto out = detail::make_node<T>({1}, {a});
  T s = 0;
  for (T v : a.val()) s += v;
  out.val()[0] = s;
  if (out.requires_grad()) {
    auto* o = out.impl().get();
    auto ai = a.impl();
    out.impl()->backward = [o, ai]() {
      ai->ensure_grad();
      for (auto& g : ai->grad) g += o->grad[0];
    };
  }
  return out;
}

template <class T>
Tensor<T> reduce_mean(const Tensor<T>& a) {
  auto out = detail::make_node<T>({1}, {a});
  T s = 0;
  for (T v : a.val()) s += v;
  T inv = T(1) / static_cast<T>(a.numel());
  out.val()[0] = s * inv;
  if (out.requires_grad()) {
    auto* o = out.impl().get();
    auto ai = a.impl();
    out.impl()->backward = [o, ai, inv]() {
      ai->ensure_grad();
      for (auto& g : ai->grad) g += o->grad[0] * inv;
    };
  }
  return out;
}

// Entries where mask != 0 are replaced by `value`; their gradient is cut.
template <class T>
Tensor<T> masked_fill(const Tensor<T>& a, const std::vector<std::uint8_t>& mask, T value) {
  if (static_cast<std::int64_t>(mask.size()) != a.numel())
    throw shape_error("masked_fill: mask size mismatch");
  auto out = detail::make_node<T>(a.shape(), {a});
  for (std::int64_t i = 0; i < a.numel(); ++i)
    out.val()[i] = mask[i] ? value : a.val()[i];
  if (out.requires_grad()) {
    auto* o = out.impl().get();
    auto ai = a.impl();
    out.impl()->backward = [o, ai, mask]() {
      ai->ensure_grad();
      for (size_t i = 0; i < o->grad.size(); ++i)
        if (!mask[i]) ai->grad[i] += o->grad[i];
    };
  }
  return out;
}

// Mean negative log-likelihood over rows, fused with a stable log-sum-exp.
template <class T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<int>& targets) {
  long N = logits.rows(), V = logits.cols();
  if (static_cast<long>(targets.size()) != N)
    throw shape_error("cross_entropy: target count mismatch");
  for (int t : targets)
    if (t < 0 || t >= V) throw contract_error("cross_entropy: target out of range");
  auto out = detail::make_node<T>({1}, {logits});
  double total = 0;
  for (long r = 0; r < N; ++r) {
    const T* x = logits.val().data() + r * V;
    T mx = *std::max_element(x, x + V);
    double lse = 0;
    for (long c = 0; c < V; ++c) lse += std::exp(static_cast<double>(x[c] - mx));
    total += std::log(lse) + static_cast<double>(mx) - static_cast<double>(x[targets[r]]);
  }
  out.val()[0] = static_cast<T>(total / N);
  if (out.requires_grad()) {
    auto* o = out.impl().get();
    auto li = logits.impl();
    out.impl()->backward = [o, li, targets]() {
      li->ensure_grad();
      long N = li->shape[0], V = li->shape[1];
      T g = o->grad[0] / static_cast<T>(N);
      for (long r = 0; r < N; ++r) {
        const T* x = li->val.data() + r * V;
        T* gx = li->grad.data() + r * V;
        T mx = *std::max_element(x, x + V);
        T sum = 0;
        for (long c = 0; c < V; ++c) sum += std::exp(x[c] - mx);
        for (long c = 0; c < V; ++c) gx[c] += g * std::exp(x[c] - mx) / sum;
        gx[targets[r]] -= g;
      }
    };
  }
  return out;
}

}  // namespace vtlab
