#include "core/routing.hpp"

#include <cmath>

namespace titan {

namespace {

constexpr double kNormFloor = 1e-15;

// cosine over flattened tensors; falls back to a constant 0 when either
// operand has (numerically) zero norm
Tensor cosine_flat(const Tensor& a, const Tensor& b) {
  Tensor af = reshape(a, {a.numel()});
  Tensor bf = reshape(b, {b.numel()});
  double na = 0.0, nb = 0.0;
  for (double v : af.data()) na += v * v;
  for (double v : bf.data()) nb += v * v;
  if (std::sqrt(na) * std::sqrt(nb) < kNormFloor) return Tensor::scalar(0.0);
  Tensor dot = sum(mul(af, bf));
  Tensor den = mul(sqrt(sum(mul(af, af))), sqrt(sum(mul(bf, bf))));
  return div(dot, den);
}

double raw_cosine(const double* a, const double* b, int64_t n) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double den = std::sqrt(na) * std::sqrt(nb);
  return den < kNormFloor ? 0.0 : dot / den;
}

}  // namespace

Tensor memory_query(const Tensor& pooled, const Tensor& memory, const Tensor& proj) {
  if (pooled.rank() != 2 || memory.rank() != 2 || proj.rank() != 2)
    fail(errc::invalid_argument, "memory_query: rank-2 inputs expected");
  if (pooled.dim(1) != proj.dim(0) || proj.dim(1) != memory.dim(1))
    fail(errc::invalid_argument,
         "memory_query: shapes " + shape_str(pooled.shape()) + ", " + shape_str(proj.shape()) +
             ", " + shape_str(memory.shape()) + " do not chain");
  const double m = static_cast<double>(memory.dim(1));
  Tensor q = matmul(pooled, proj);                                      // (N, m)
  Tensor attn = softmax(scale(matmul(q, transpose2d(memory)), 1.0 / std::sqrt(m)), 1);
  return matmul(attn, memory);                                          // (N, m)
}

std::vector<Tensor> expert_keys(const std::vector<Tensor>& hiddens, const Tensor& proj) {
  std::vector<Tensor> keys;
  keys.reserve(hiddens.size());
  const double m = static_cast<double>(proj.dim(1));
  for (const Tensor& h : hiddens) {
    Tensor hp = matmul(h, proj);  // (N, m)
    Tensor attn = softmax(scale(matmul(hp, transpose2d(hp)), 1.0 / std::sqrt(m)), 1);
    keys.push_back(matmul(attn, hp));
  }
  return keys;
}

GateDecision gate(const Tensor& o, const std::vector<Tensor>& o_hat, const PriorGraph* prior,
                  double temperature) {
  if (temperature <= 0.0) fail(errc::invalid_argument, "gate: temperature must be positive");
  if (o_hat.empty()) fail(errc::invalid_argument, "gate: no expert keys");

  GateDecision gd;
  gd.warmup = prior != nullptr;
  if (prior) {
    if (prior->n != o.dim(0))
      fail(errc::invalid_argument, "gate: prior is " + std::to_string(prior->n) + "x" +
                                       std::to_string(prior->n) + " but the query has " +
                                       std::to_string(o.dim(0)) + " rows");
    Tensor w = Tensor::from({prior->n, prior->n}, prior->w);
    gd.query = matmul(w, o);  // the prior mixes the node rows of the query
  } else {
    gd.query = o;
  }
  gd.keys = o_hat;

  std::vector<Tensor> scores;
  scores.reserve(o_hat.size());
  for (const Tensor& k : o_hat) scores.push_back(cosine_flat(gd.query, k));
  Tensor s = concat(scores, 0);
  gd.probs = softmax(scale(s, 1.0 / temperature), 0);
  gd.probs_v = gd.probs.data();
  gd.selected = 0;
  for (size_t e = 1; e < gd.probs_v.size(); ++e)
    if (gd.probs_v[e] > gd.probs_v[gd.selected]) gd.selected = static_cast<int>(e);
  return gd;
}

Tensor combine_soft(const std::vector<ExpertOutput>& outputs, const Tensor& probs) {
  if (outputs.empty() || probs.numel() != static_cast<int64_t>(outputs.size()))
    fail(errc::invalid_argument, "combine: probs length " + std::to_string(probs.numel()) +
                                     " does not match " + std::to_string(outputs.size()) +
                                     " experts");
  Tensor acc;
  for (size_t e = 0; e < outputs.size(); ++e) {
    Tensor w = reshape(slice(probs, 0, static_cast<int64_t>(e), 1), {1, 1, 1});
    Tensor term = mul(w, outputs[e].forecast);
    acc = acc.defined() ? add(acc, term) : term;
  }
  return acc;
}

Tensor combine_hard(const std::vector<ExpertOutput>& outputs, int selected) {
  if (selected < 0 || selected >= static_cast<int>(outputs.size()))
    fail(errc::invalid_argument, "combine: selected expert " + std::to_string(selected) +
                                     " out of range");
  return outputs[static_cast<size_t>(selected)].forecast;
}

std::vector<int> per_node_selection(const GateDecision& gd) {
  const int64_t n = gd.query.dim(0), m = gd.query.dim(1);
  std::vector<int> sel(static_cast<size_t>(n), 0);
  for (int64_t i = 0; i < n; ++i) {
    double best = -2.0;
    for (size_t e = 0; e < gd.keys.size(); ++e) {
      const double c =
          raw_cosine(gd.query.data().data() + i * m, gd.keys[e].data().data() + i * m, m);
      if (c > best) {
        best = c;
        sel[static_cast<size_t>(i)] = static_cast<int>(e);
      }
    }
  }
  return sel;
}

}  // namespace titan
