#include "core/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <unordered_set>

namespace titan {

namespace {

thread_local bool g_grad_recording = true;

constexpr double kDivClamp = 1e-150;  // largest finite results stay representable

void check(bool cond, const std::string& msg) {
  if (!cond) fail(errc::invalid_argument, msg);
}

int norm_axis(int axis, int rank, const char* op) {
  int a = axis < 0 ? axis + rank : axis;
  if (a < 0 || a >= rank)
    fail(errc::invalid_argument, std::string(op) + ": axis " + std::to_string(axis) +
                                     " out of range for rank " + std::to_string(rank));
  return a;
}

std::vector<int64_t> strides_of(const Shape& s) {
  std::vector<int64_t> st(s.size(), 1);
  for (int i = static_cast<int>(s.size()) - 2; i >= 0; --i) st[i] = st[i + 1] * s[i + 1];
  return st;
}

// outer * axis-length * inner decomposition around one axis
void split_axis(const Shape& s, int axis, int64_t& outer, int64_t& len, int64_t& inner) {
  outer = 1;
  for (int i = 0; i < axis; ++i) outer *= s[i];
  len = s[axis];
  inner = 1;
  for (size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
}

Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  const size_t r = std::max(a.size(), b.size());
  Shape out(r, 1);
  for (size_t i = 0; i < r; ++i) {
    const int64_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    const int64_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (da != db && da != 1 && db != 1)
      fail(errc::invalid_argument,
           std::string(op) + ": shapes " + shape_str(a) + " and " + shape_str(b) +
               " are not broadcastable");
    out[i] = std::max(da, db);
  }
  return out;
}

// strides of `s` padded to out-rank, zeroed on broadcast dims
std::vector<int64_t> bc_strides(const Shape& s, const Shape& out) {
  auto st = strides_of(s);
  std::vector<int64_t> r(out.size(), 0);
  const size_t off = out.size() - s.size();
  for (size_t i = 0; i < s.size(); ++i) r[off + i] = (s[i] == 1 && out[off + i] != 1) ? 0 : st[i];
  return r;
}

template <class F>
std::vector<double> bc_map(const Shape& out, const Shape& as, const std::vector<double>& av,
                           const Shape& bs, const std::vector<double>& bv, F f) {
  const int64_t n = shape_numel(out);
  std::vector<double> r(n);
  if (as == bs) {  // fast path, no index bookkeeping
    for (int64_t i = 0; i < n; ++i) r[i] = f(av[i], bv[i]);
    return r;
  }
  const auto sa = bc_strides(as, out);
  const auto sb = bc_strides(bs, out);
  const size_t rank = out.size();
  std::vector<int64_t> idx(rank, 0);
  int64_t oa = 0, ob = 0;
  for (int64_t i = 0; i < n; ++i) {
    r[i] = f(av[oa], bv[ob]);
    for (int d = static_cast<int>(rank) - 1; d >= 0; --d) {
      ++idx[d];
      oa += sa[d];
      ob += sb[d];
      if (idx[d] < out[d]) break;
      oa -= sa[d] * out[d];
      ob -= sb[d] * out[d];
      idx[d] = 0;
    }
  }
  return r;
}

// Sum a gradient of shape `from` down to shape `to` (inverse of broadcasting).
std::vector<double> reduce_grad_to(const std::vector<double>& g, const Shape& from,
                                   const Shape& to) {
  if (from == to) return g;
  std::vector<double> r(static_cast<size_t>(shape_numel(to)), 0.0);
  const auto st = bc_strides(to, from);
  const size_t rank = from.size();
  std::vector<int64_t> idx(rank, 0);
  int64_t ot = 0;
  const int64_t n = shape_numel(from);
  for (int64_t i = 0; i < n; ++i) {
    r[ot] += g[i];
    for (int d = static_cast<int>(rank) - 1; d >= 0; --d) {
      ++idx[d];
      ot += st[d];
      if (idx[d] < from[d]) break;
      ot -= st[d] * from[d];
      idx[d] = 0;
    }
  }
  return r;
}

// C(M x N) += / = A(M x K) . B(K x N)
void mm_nn(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n,
           bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, 0.0);
  for (int64_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (int64_t kk = 0; kk < k; ++kk) {
      const double av = arow[kk];
      if (av == 0.0) continue;
      const double* brow = b + kk * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C(M x K) += A(M x N) . B(K x N)^T
void mm_nt(const double* a, const double* b, double* c, int64_t m, int64_t n, int64_t k) {
  for (int64_t i = 0; i < m; ++i) {
    const double* arow = a + i * n;
    double* crow = c + i * k;
    for (int64_t kk = 0; kk < k; ++kk) {
      const double* brow = b + kk * n;
      double acc = 0.0;
      for (int64_t j = 0; j < n; ++j) acc += arow[j] * brow[j];
      crow[kk] += acc;
    }
  }
}

// C(K x N) += A(M x K)^T . B(M x N)
void mm_tn(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    const double* brow = b + i * n;
    for (int64_t kk = 0; kk < k; ++kk) {
      const double av = arow[kk];
      if (av == 0.0) continue;
      double* crow = c + kk * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

std::vector<double> raw_permute(const std::vector<double>& data, const Shape& shape,
                                const std::vector<int>& perm) {
  const size_t rank = shape.size();
  Shape out_shape(rank);
  for (size_t k = 0; k < rank; ++k) out_shape[k] = shape[perm[k]];
  const auto in_st = strides_of(shape);
  std::vector<int64_t> step(rank);  // in-linear-index delta per out coordinate
  for (size_t k = 0; k < rank; ++k) step[k] = in_st[perm[k]];
  const int64_t n = shape_numel(shape);
  std::vector<double> out(n);
  std::vector<int64_t> idx(rank, 0);
  int64_t oin = 0;
  for (int64_t i = 0; i < n; ++i) {
    out[i] = data[oin];
    for (int d = static_cast<int>(rank) - 1; d >= 0; --d) {
      ++idx[d];
      oin += step[d];
      if (idx[d] < out_shape[d]) break;
      oin -= step[d] * out_shape[d];
      idx[d] = 0;
    }
  }
  return out;
}

void acc_grad(GradMap& gm, const std::shared_ptr<TensorImpl>& t, const std::vector<double>& g) {
  if (!t->on_tape()) return;
  auto& buf = gm[t.get()];
  if (buf.empty()) {
    buf = g;
  } else {
    for (size_t i = 0; i < g.size(); ++i) buf[i] += g[i];
  }
}

std::vector<double>& grad_slot(GradMap& gm, const std::shared_ptr<TensorImpl>& t) {
  auto& buf = gm[t.get()];
  if (buf.empty()) buf.assign(t->data.size(), 0.0);
  return buf;
}

Tensor make_node(Shape shape, std::vector<double> data,
                 std::vector<std::shared_ptr<TensorImpl>> parents, BackpropFn fn) {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  if (g_grad_recording) {
    bool need = false;
    for (const auto& p : parents) need = need || p->on_tape();
    if (need) {
      impl->parents = std::move(parents);
      impl->backprop = std::move(fn);
    }
  }
  return Tensor::wrap(std::move(impl));
}

template <class Fwd, class Bwd>
Tensor unary_op(const Tensor& a, Fwd f, Bwd dfdx_from_in_out) {
  const auto& av = a.data();
  std::vector<double> out(av.size());
  for (size_t i = 0; i < av.size(); ++i) out[i] = f(av[i]);
  auto pa = a.ptr();
  return make_node(a.shape(), std::move(out), {pa},
                   [pa, dfdx_from_in_out](const std::vector<double>& g, GradMap& gm) {
                     std::vector<double> gi(g.size());
                     for (size_t i = 0; i < g.size(); ++i)
                       gi[i] = g[i] * dfdx_from_in_out(pa->data[i]);
                     acc_grad(gm, pa, gi);
                   });
}

}  // namespace

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) {
    check(d >= 0, "negative dimension in shape " + shape_str(s));
    n *= d;
  }
  return n;
}

// ---- Tensor -------------------------------------------------------------

Tensor Tensor::wrap(std::shared_ptr<TensorImpl> impl) {
  Tensor t;
  t.impl_ = std::move(impl);
  return t;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  auto impl = std::make_shared<TensorImpl>();
  impl->data.assign(static_cast<size_t>(shape_numel(shape)), value);
  impl->shape = std::move(shape);
  impl->requires_grad = requires_grad;
  return wrap(std::move(impl));
}

Tensor Tensor::scalar(double value) { return full({1}, value, false); }

Tensor Tensor::from(Shape shape, std::vector<double> data, bool requires_grad) {
  check(shape_numel(shape) == static_cast<int64_t>(data.size()),
        "tensor data length " + std::to_string(data.size()) + " does not match shape " +
            shape_str(shape));
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  impl->requires_grad = requires_grad;
  return wrap(std::move(impl));
}

std::vector<double>& Tensor::grad() {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
  return impl_->grad;
}

void Tensor::zero_grad() {
  if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

double Tensor::value() const {
  check(numel() == 1, "value() on non-scalar tensor of shape " + shape_str(shape()));
  return impl_->data[0];
}

double Tensor::at(std::initializer_list<int64_t> idx) const {
  check(idx.size() == impl_->shape.size(), "index rank mismatch");
  const auto st = strides_of(impl_->shape);
  int64_t off = 0;
  size_t k = 0;
  for (int64_t i : idx) {
    check(i >= 0 && i < impl_->shape[k], "index out of range");
    off += i * st[k++];
  }
  return impl_->data[off];
}

NoGradGuard::NoGradGuard() : prev_(g_grad_recording) { g_grad_recording = false; }
NoGradGuard::~NoGradGuard() { g_grad_recording = prev_; }
bool grad_recording() { return g_grad_recording; }

// ---- ops ----------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  auto bad = [&] {
    fail(errc::invalid_argument,
         "matmul: incompatible shapes " + shape_str(sa) + " x " + shape_str(sb));
  };

  if ((sa.size() == 2 || sa.size() == 3) && sb.size() == 2) {
    const bool batched = sa.size() == 3;
    const int64_t bsz = batched ? sa[0] : 1;
    const int64_t m = batched ? sa[1] : sa[0];
    const int64_t k = batched ? sa[2] : sa[1];
    if (k != sb[0]) bad();
    const int64_t n = sb[1];
    std::vector<double> out(static_cast<size_t>(bsz * m * n));
    mm_nn(a.data().data(), b.data().data(), out.data(), bsz * m, k, n, false);
    Shape os = batched ? Shape{bsz, m, n} : Shape{m, n};
    auto pa = a.ptr();
    auto pb = b.ptr();
    return make_node(std::move(os), std::move(out), {pa, pb},
                     [pa, pb, bsz, m, k, n](const std::vector<double>& g, GradMap& gm) {
                       if (pa->on_tape()) {
                         auto& ga = grad_slot(gm, pa);
                         mm_nt(g.data(), pb->data.data(), ga.data(), bsz * m, n, k);
                       }
                       if (pb->on_tape()) {
                         auto& gb = grad_slot(gm, pb);
                         mm_tn(pa->data.data(), g.data(), gb.data(), bsz * m, k, n);
                       }
                     });
  }

  if (sa.size() == 3 && sb.size() == 3) {
    if (sa[0] != sb[0] || sa[2] != sb[1]) bad();
    const int64_t bsz = sa[0], m = sa[1], k = sa[2], n = sb[2];
    std::vector<double> out(static_cast<size_t>(bsz * m * n));
    for (int64_t i = 0; i < bsz; ++i)
      mm_nn(a.data().data() + i * m * k, b.data().data() + i * k * n, out.data() + i * m * n, m,
            k, n, false);
    auto pa = a.ptr();
    auto pb = b.ptr();
    return make_node({bsz, m, n}, std::move(out), {pa, pb},
                     [pa, pb, bsz, m, k, n](const std::vector<double>& g, GradMap& gm) {
                       if (pa->on_tape()) {
                         auto& ga = grad_slot(gm, pa);
                         for (int64_t i = 0; i < bsz; ++i)
                           mm_nt(g.data() + i * m * n, pb->data.data() + i * k * n,
                                 ga.data() + i * m * k, m, n, k);
                       }
                       if (pb->on_tape()) {
                         auto& gb = grad_slot(gm, pb);
                         for (int64_t i = 0; i < bsz; ++i)
                           mm_tn(pa->data.data() + i * m * k, g.data() + i * m * n,
                                 gb.data() + i * k * n, m, k, n);
                       }
                     });
  }

  bad();
  return {};
}

namespace {

template <class F, class DA, class DB>
Tensor binary_bc(const Tensor& a, const Tensor& b, const char* name, F f, DA dfda, DB dfdb) {
  Shape os = broadcast_shape(a.shape(), b.shape(), name);
  auto out = bc_map(os, a.shape(), a.data(), b.shape(), b.data(), f);
  auto pa = a.ptr();
  auto pb = b.ptr();
  return make_node(
      std::move(os), std::move(out), {pa, pb},
      [pa, pb, dfda, dfdb](const std::vector<double>& g, GradMap& gm) {
        // local gradients evaluated elementwise over the broadcast shape,
        // then reduced back to each operand's own shape
        Shape os2 = broadcast_shape(pa->shape, pb->shape, "backward");
        if (pa->on_tape()) {
          auto ga = bc_map(os2, pa->shape, pa->data, pb->shape, pb->data, dfda);
          for (size_t i = 0; i < ga.size(); ++i) ga[i] *= g[i];
          acc_grad(gm, pa, reduce_grad_to(ga, os2, pa->shape));
        }
        if (pb->on_tape()) {
          auto gb = bc_map(os2, pa->shape, pa->data, pb->shape, pb->data, dfdb);
          for (size_t i = 0; i < gb.size(); ++i) gb[i] *= g[i];
          acc_grad(gm, pb, reduce_grad_to(gb, os2, pb->shape));
        }
      });
}

double safe_den(double b) { return std::fabs(b) < kDivClamp ? std::copysign(kDivClamp, b) : b; }

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_bc(
      a, b, "add", [](double x, double y) { return x + y; },
      [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_bc(
      a, b, "sub", [](double x, double y) { return x - y; },
      [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_bc(
      a, b, "mul", [](double x, double y) { return x * y; },
      [](double, double y) { return y; }, [](double x, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary_bc(
      a, b, "div", [](double x, double y) { return x / safe_den(y); },
      [](double, double y) { return 1.0 / safe_den(y); },
      [](double x, double y) {
        const double d = safe_den(y);
        return -x / (d * d);
      });
}

Tensor scale(const Tensor& a, double s) {
  return unary_op(
      a, [s](double x) { return s * x; }, [s](double) { return s; });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor relu(const Tensor& a) {
  return unary_op(
      a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor abs(const Tensor& a) {
  return unary_op(
      a, [](double x) { return std::fabs(x); },
      [](double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Tensor sqrt(const Tensor& a) {
  return unary_op(
      a, [](double x) { return std::sqrt(std::max(x, 0.0)); },
      [](double x) { return 0.5 / std::max(std::sqrt(std::max(x, 0.0)), kDivClamp); });
}

Tensor log(const Tensor& a) {
  return unary_op(
      a, [](double x) { return std::log(std::max(x, 1e-300)); },
      [](double x) { return 1.0 / std::max(x, 1e-300); });
}

Tensor softmax(const Tensor& a, int axis) {
  const int ax = norm_axis(axis, a.rank(), "softmax");
  int64_t outer, len, inner;
  split_axis(a.shape(), ax, outer, len, inner);
  const auto& av = a.data();
  std::vector<double> out(av.size());
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t in = 0; in < inner; ++in) {
      const int64_t base = o * len * inner + in;
      double mx = av[base];
      for (int64_t l = 1; l < len; ++l) mx = std::max(mx, av[base + l * inner]);
      double z = 0.0;
      for (int64_t l = 0; l < len; ++l) {
        const double e = std::exp(av[base + l * inner] - mx);
        out[base + l * inner] = e;
        z += e;
      }
      for (int64_t l = 0; l < len; ++l) out[base + l * inner] /= z;
    }
  auto pa = a.ptr();
  auto sm = out;  // backward needs the forward result
  return make_node(a.shape(), std::move(out), {pa},
                   [pa, sm = std::move(sm), outer, len, inner](const std::vector<double>& g,
                                                               GradMap& gm) {
                     std::vector<double> gi(g.size());
                     for (int64_t o = 0; o < outer; ++o)
                       for (int64_t in = 0; in < inner; ++in) {
                         const int64_t base = o * len * inner + in;
                         double dot = 0.0;
                         for (int64_t l = 0; l < len; ++l)
                           dot += g[base + l * inner] * sm[base + l * inner];
                         for (int64_t l = 0; l < len; ++l)
                           gi[base + l * inner] =
                               sm[base + l * inner] * (g[base + l * inner] - dot);
                       }
                     acc_grad(gm, pa, gi);
                   });
}

Tensor permute(const Tensor& a, const std::vector<int>& perm) {
  const int rank = a.rank();
  check(static_cast<int>(perm.size()) == rank,
        "permute: perm size " + std::to_string(perm.size()) + " does not match rank " +
            std::to_string(rank));
  std::vector<bool> seen(rank, false);
  for (int p : perm) {
    check(p >= 0 && p < rank && !seen[p], "permute: invalid permutation");
    seen[p] = true;
  }
  Shape os(rank);
  for (int k = 0; k < rank; ++k) os[k] = a.shape()[perm[k]];
  auto out = raw_permute(a.data(), a.shape(), perm);
  std::vector<int> inv(rank);
  for (int k = 0; k < rank; ++k) inv[perm[k]] = k;
  auto pa = a.ptr();
  Shape os_copy = os;
  return make_node(std::move(os), std::move(out), {pa},
                   [pa, inv, os_copy](const std::vector<double>& g, GradMap& gm) {
                     // g carries the permuted shape; the inverse perm restores it
                     acc_grad(gm, pa, raw_permute(g, os_copy, inv));
                   });
}

Tensor transpose2d(const Tensor& a) {
  check(a.rank() == 2, "transpose2d: expected rank-2, got " + shape_str(a.shape()));
  return permute(a, {1, 0});
}

Tensor reshape(const Tensor& a, Shape shape) {
  // one -1 placeholder is inferred from the remaining dims
  int64_t known = 1;
  int infer = -1;
  for (size_t i = 0; i < shape.size(); ++i) {
    if (shape[i] == -1) {
      check(infer < 0, "reshape: more than one -1 in " + shape_str(shape));
      infer = static_cast<int>(i);
    } else {
      known *= shape[i];
    }
  }
  if (infer >= 0) {
    check(known > 0 && a.numel() % known == 0,
          "reshape: cannot infer dim for " + shape_str(shape) + " from " +
              shape_str(a.shape()));
    shape[infer] = a.numel() / known;
  }
  check(shape_numel(shape) == a.numel(),
        "reshape: " + shape_str(a.shape()) + " to " + shape_str(shape) +
            " changes element count");
  auto pa = a.ptr();
  return make_node(std::move(shape), a.data(), {pa},
                   [pa](const std::vector<double>& g, GradMap& gm) { acc_grad(gm, pa, g); });
}

Tensor slice(const Tensor& a, int axis, int64_t start, int64_t len) {
  const int ax = norm_axis(axis, a.rank(), "slice");
  int64_t outer, alen, inner;
  split_axis(a.shape(), ax, outer, alen, inner);
  check(start >= 0 && len >= 1 && start + len <= alen,
        "slice: range [" + std::to_string(start) + ", " + std::to_string(start + len) +
            ") out of bounds for axis length " + std::to_string(alen));
  Shape os = a.shape();
  os[ax] = len;
  std::vector<double> out(static_cast<size_t>(outer * len * inner));
  const auto& av = a.data();
  for (int64_t o = 0; o < outer; ++o)
    std::memcpy(out.data() + o * len * inner, av.data() + (o * alen + start) * inner,
                sizeof(double) * static_cast<size_t>(len * inner));
  auto pa = a.ptr();
  return make_node(std::move(os), std::move(out), {pa},
                   [pa, outer, alen, inner, start, len](const std::vector<double>& g,
                                                        GradMap& gm) {
                     if (!pa->on_tape()) return;
                     auto& ga = grad_slot(gm, pa);
                     for (int64_t o = 0; o < outer; ++o) {
                       const double* gs = g.data() + o * len * inner;
                       double* gd = ga.data() + (o * alen + start) * inner;
                       for (int64_t i = 0; i < len * inner; ++i) gd[i] += gs[i];
                     }
                   });
}

Tensor concat(const std::vector<Tensor>& xs, int axis) {
  check(!xs.empty(), "concat: no inputs");
  const int ax = norm_axis(axis, xs[0].rank(), "concat");
  Shape os = xs[0].shape();
  int64_t total = 0;
  for (const auto& x : xs) {
    check(x.rank() == xs[0].rank(), "concat: rank mismatch");
    for (int d = 0; d < x.rank(); ++d)
      check(d == ax || x.shape()[d] == os[static_cast<size_t>(d)],
            "concat: shape " + shape_str(x.shape()) + " incompatible with " + shape_str(os) +
                " on axis " + std::to_string(d));
    total += x.shape()[ax];
  }
  os[ax] = total;
  int64_t outer, len, inner;
  split_axis(os, ax, outer, len, inner);
  std::vector<double> out(static_cast<size_t>(outer * len * inner));
  std::vector<int64_t> lens;
  std::vector<std::shared_ptr<TensorImpl>> parents;
  int64_t off = 0;
  for (const auto& x : xs) {
    const int64_t xl = x.shape()[ax];
    for (int64_t o = 0; o < outer; ++o)
      std::memcpy(out.data() + (o * len + off) * inner, x.data().data() + o * xl * inner,
                  sizeof(double) * static_cast<size_t>(xl * inner));
    lens.push_back(xl);
    parents.push_back(x.ptr());
    off += xl;
  }
  auto parents_copy = parents;
  return make_node(std::move(os), std::move(out), std::move(parents),
                   [parents = std::move(parents_copy), lens, outer, len,
                    inner](const std::vector<double>& g, GradMap& gm) {
                     int64_t off2 = 0;
                     for (size_t i = 0; i < parents.size(); ++i) {
                       const int64_t xl = lens[i];
                       if (parents[i]->on_tape()) {
                         auto& gx = grad_slot(gm, parents[i]);
                         for (int64_t o = 0; o < outer; ++o) {
                           const double* gs = g.data() + (o * len + off2) * inner;
                           double* gd = gx.data() + o * xl * inner;
                           for (int64_t j = 0; j < xl * inner; ++j) gd[j] += gs[j];
                         }
                       }
                       off2 += xl;
                     }
                   });
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  auto pa = a.ptr();
  return make_node({1}, {s}, {pa}, [pa](const std::vector<double>& g, GradMap& gm) {
    acc_grad(gm, pa, std::vector<double>(pa->data.size(), g[0]));
  });
}

Tensor mean(const Tensor& a) {
  check(a.numel() > 0, "mean of empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor sum(const Tensor& a, int axis) {
  const int ax = norm_axis(axis, a.rank(), "sum");
  int64_t outer, len, inner;
  split_axis(a.shape(), ax, outer, len, inner);
  Shape os;
  for (int d = 0; d < a.rank(); ++d)
    if (d != ax) os.push_back(a.shape()[d]);
  if (os.empty()) os = {1};
  std::vector<double> out(static_cast<size_t>(outer * inner), 0.0);
  const auto& av = a.data();
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t l = 0; l < len; ++l)
      for (int64_t in = 0; in < inner; ++in)
        out[o * inner + in] += av[(o * len + l) * inner + in];
  auto pa = a.ptr();
  return make_node(std::move(os), std::move(out), {pa},
                   [pa, outer, len, inner](const std::vector<double>& g, GradMap& gm) {
                     std::vector<double> gi(pa->data.size());
                     for (int64_t o = 0; o < outer; ++o)
                       for (int64_t l = 0; l < len; ++l)
                         for (int64_t in = 0; in < inner; ++in)
                           gi[(o * len + l) * inner + in] = g[o * inner + in];
                     acc_grad(gm, pa, gi);
                   });
}

Tensor mean(const Tensor& a, int axis) {
  const int ax = norm_axis(axis, a.rank(), "mean");
  const int64_t len = a.shape()[ax];
  check(len > 0, "mean over empty axis");
  return scale(sum(a, ax), 1.0 / static_cast<double>(len));
}

Tensor gather_rows(const Tensor& table, const std::vector<int64_t>& rows) {
  check(table.rank() == 2, "gather_rows: table must be rank-2, got " + shape_str(table.shape()));
  const int64_t r = table.dim(0), c = table.dim(1);
  for (int64_t i : rows)
    check(i >= 0 && i < r,
          "gather_rows: row " + std::to_string(i) + " out of range [0, " + std::to_string(r) +
              ")");
  std::vector<double> out(rows.size() * static_cast<size_t>(c));
  for (size_t k = 0; k < rows.size(); ++k)
    std::memcpy(out.data() + k * c, table.data().data() + rows[k] * c,
                sizeof(double) * static_cast<size_t>(c));
  auto pt = table.ptr();
  return make_node({static_cast<int64_t>(rows.size()), c}, std::move(out), {pt},
                   [pt, rows, c](const std::vector<double>& g, GradMap& gm) {
                     if (!pt->on_tape()) return;
                     auto& gt = grad_slot(gm, pt);
                     for (size_t k = 0; k < rows.size(); ++k)
                       for (int64_t j = 0; j < c; ++j) gt[rows[k] * c + j] += g[k * c + j];
                   });
}

Tensor detach(const Tensor& a) { return Tensor::from(a.shape(), a.data(), false); }

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  return add(matmul(x, w), b);
}

// ---- autograd -----------------------------------------------------------

GradMap backward(const Tensor& root) {
  check(root.numel() == 1, "backward: root must be scalar, got " + shape_str(root.shape()));
  std::vector<TensorImpl*> order;
  std::unordered_set<TensorImpl*> visited;
  struct Frame {
    TensorImpl* node;
    size_t next;
  };
  std::vector<Frame> stack;
  stack.push_back({root.impl(), 0});
  visited.insert(root.impl());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next < f.node->parents.size()) {
      TensorImpl* p = f.node->parents[f.next++].get();
      if (p->on_tape() && visited.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }
  GradMap gm;
  gm[root.impl()] = {1.0};
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorImpl* n = *it;
    auto found = gm.find(n);
    if (found == gm.end()) continue;
    if (n->backprop) n->backprop(found->second, gm);
    if (!n->requires_grad) gm.erase(n);  // free intermediates as soon as consumed
  }
  return gm;
}

void backward_to_grads(const Tensor& root) {
  GradMap gm = backward(root);
  for (auto& [impl, g] : gm) {
    if (!impl->requires_grad) continue;
    if (impl->grad.empty()) impl->grad.assign(impl->data.size(), 0.0);
    for (size_t i = 0; i < g.size(); ++i) impl->grad[i] += g[i];
  }
}

double grad_check(const std::function<Tensor()>& f, const std::vector<Tensor>& params,
                  double eps) {
  check(eps >= 1e-7 && eps <= 1e-4, "grad_check: eps must be in [1e-7, 1e-4]");
  Tensor loss = f();
  GradMap gm = backward(loss);
  double max_err = 0.0;
  for (Tensor p : params) {
    auto it = gm.find(p.impl());
    const std::vector<double>* ag = it == gm.end() ? nullptr : &it->second;
    auto& data = p.data();
    for (size_t i = 0; i < data.size(); ++i) {
      const double saved = data[i];
      double fp, fm;
      {
        NoGradGuard ng;
        data[i] = saved + eps;
        fp = f().value();
        data[i] = saved - eps;
        fm = f().value();
      }
      data[i] = saved;
      const double fd = (fp - fm) / (2.0 * eps);
      const double ad = ag ? (*ag)[i] : 0.0;
      const double denom = std::max(std::fabs(ad), std::fabs(fd));
      const double err = denom < 1e-8 ? std::fabs(ad - fd) : std::fabs(ad - fd) / denom;
      max_err = std::max(max_err, err);
    }
  }
  return max_err;
}

}  // namespace titan
