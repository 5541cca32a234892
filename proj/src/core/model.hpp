#pragma once

#include <memory>
#include <string>
#include <vector>

#include "core/dtw.hpp"
#include "core/tensor.hpp"

namespace titan {

struct NamedParam {
  std::string name;
  Tensor tensor;
};

struct ModelConfig {
  int t_in = 12;
  int t_out = 12;
  int n_nodes = 0;
  int features = 1;
  int hidden = 16;  // width C of every attention block and of the routing hidden state
  int memory = 16;  // memory items are rows of an n_nodes x memory matrix
  int layers = 1;
  int heads = 2;
  int rank = 4;  // low-rank bridge of the variable-centric expert
  double temperature = 1.0;

  void validate() const;
};

// Multi-head self-attention over the middle axis of a (B, S, C) tensor.
// Returns the projected output and the pre-projection attended states the
// routing gate consumes.
struct MsaParams {
  Tensor wq, wk, wv, wo;  // (C, C)
  Tensor bq, bk, bv, bo;  // (C)
  int heads = 1;

  static MsaParams create(int width, int heads);
  void collect(const std::string& prefix, std::vector<NamedParam>& out) const;
};

struct MsaOut {
  Tensor out;     // (B, S, C)
  Tensor hidden;  // (B, S, C), heads concatenated before the output projection
};
MsaOut msa(const Tensor& x, const MsaParams& p);

struct ExpertOutput {
  Tensor forecast;  // (T_out, N, 1)
  Tensor hidden;    // (N, hidden)
};

class Expert {
 public:
  virtual ~Expert() = default;
  virtual ExpertOutput forward(const Tensor& x, const std::vector<int64_t>& ts) const = 0;
  virtual void collect(std::vector<NamedParam>& out) const = 0;
  virtual const char* name() const = 0;
};

// Attention over time per node, with a learnable day-of-week embedding added
// to the data embedding.
class TemporalExpert : public Expert {
 public:
  TemporalExpert(const ModelConfig& cfg, std::string name);
  ExpertOutput forward(const Tensor& x, const std::vector<int64_t>& ts) const override;
  void collect(std::vector<NamedParam>& out) const override;
  const char* name() const override { return name_.c_str(); }

  Tensor week_table() const { return week_; }

 private:
  std::string name_;
  ModelConfig cfg_;
  Tensor w_emb_, b_emb_, week_;
  std::vector<MsaParams> blocks_;
  Tensor w_head_, b_head_;
};

// Attention across nodes per step, then across steps per node.
class SpatioTemporalExpert : public Expert {
 public:
  explicit SpatioTemporalExpert(const ModelConfig& cfg);
  ExpertOutput forward(const Tensor& x, const std::vector<int64_t>& ts) const override;
  void collect(std::vector<NamedParam>& out) const override;
  const char* name() const override { return "st"; }

 private:
  ModelConfig cfg_;
  Tensor w_emb_, b_emb_;
  std::vector<MsaParams> spatial_, temporal_;
  Tensor w_head_, b_head_;
};

// Memory-conditioned graph aggregation followed by attention over time. The
// memory matrix is shared with the routing gate.
class MemoryExpert : public Expert {
 public:
  MemoryExpert(const ModelConfig& cfg, Tensor memory);
  ExpertOutput forward(const Tensor& x, const std::vector<int64_t>& ts) const override;
  void collect(std::vector<NamedParam>& out) const override;
  const char* name() const override { return "memory"; }

  // adjacency built from the memory bank, exposed for inspection
  Tensor adjacency() const;

 private:
  ModelConfig cfg_;
  Tensor memory_;  // shared handle, owned by the model
  Tensor w_e_, w_gcn_;
  std::vector<MsaParams> blocks_;
  Tensor w_head_, b_head_;
};

// Variable-centric expert: each sensor's whole input window becomes one
// token; attention runs across sensors. A rank-r bridge maps the encoding
// into the (N, hidden) routing state every other expert emits. The trainer
// applies forecast-loss gradients to the encoder and gate-loss gradients to
// the bridge (see param_group below).
class VariableExpert : public Expert {
 public:
  explicit VariableExpert(const ModelConfig& cfg);
  ExpertOutput forward(const Tensor& x, const std::vector<int64_t>& ts) const override;
  void collect(std::vector<NamedParam>& out) const override;
  const char* name() const override { return "semantic"; }

  Tensor adapter_a() const { return w_a_; }
  Tensor adapter_b() const { return w_b_; }

 private:
  ModelConfig cfg_;
  int token_width_ = 0;  // features * hidden
  Tensor w_tok_, b_tok_;
  std::vector<MsaParams> blocks_;
  Tensor w_a_, w_b_;
  Tensor w_head_, b_head_;
};

enum class Ablation { none, no_semantics, ensemble, no_prior, replaced_prior };
Ablation ablation_from_string(const std::string& s);
const char* ablation_to_string(Ablation a);

// Which loss trains a parameter. The variable expert alternates: its encoder
// follows the forecast loss, its rank-r bridge follows the gate loss, and
// every other parameter follows their sum.
enum class ParamGroup { shared, semantic_encoder, semantic_bridge };
ParamGroup param_group(const std::string& name);

struct GateDecision {
  Tensor probs;                 // (E), sums to 1
  std::vector<double> probs_v;  // value snapshot of probs
  int selected = -1;            // argmax, ties to the lowest index
  bool warmup = false;          // prior was applied to the query
  Tensor query;                 // (N, m) gate query, prior already applied
  std::vector<Tensor> keys;     // E x (N, m) per-expert keys
};

struct ModelForward {
  std::vector<ExpertOutput> outputs;
  GateDecision gate;  // selected == -1 under the ensemble ablation
  Tensor forecast;    // (T_out, N, 1)
};

class TitanModel {
 public:
  TitanModel(ModelConfig cfg, Ablation ablation, uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  Ablation ablation() const { return ablation_; }
  int expert_count() const { return static_cast<int>(experts_.size()); }
  const std::vector<std::unique_ptr<Expert>>& experts() const { return experts_; }
  Tensor memory() const { return memory_; }
  Tensor route_projection() const { return proj_; }
  Tensor ensemble_logits() const { return ensemble_logits_; }
  std::vector<NamedParam>& parameters() { return params_; }
  const std::vector<NamedParam>& parameters() const { return params_; }

  // `prior` drives the warmup form of the gate and must be null once the
  // warmup phase ends (and always, under the prior-less ablations).
  // `hard` selects a single expert instead of blending.
  ModelForward forward(const Tensor& x, const std::vector<int64_t>& ts,
                       const PriorGraph* prior, bool hard) const;

 private:
  ModelConfig cfg_;
  Ablation ablation_;
  Tensor memory_;
  Tensor proj_;  // hidden -> memory-space projection shared by query and keys
  Tensor ensemble_logits_;
  std::vector<std::unique_ptr<Expert>> experts_;
  std::vector<NamedParam> params_;
};

}  // namespace titan
