#include "core/model.hpp"

#include <cmath>
#include <random>

#include "core/routing.hpp"

namespace titan {

void ModelConfig::validate() const {
  if (n_nodes < 1) fail(errc::config, "model: n_nodes must be positive");
  if (t_in < 1 || t_out < 1) fail(errc::config, "model: t_in and t_out must be positive");
  if (features < 1) fail(errc::config, "model: features must be positive");
  if (hidden < 1 || memory < 1 || layers < 1)
    fail(errc::config, "model: hidden, memory and layers must be positive");
  if (heads < 1 || hidden % heads != 0)
    fail(errc::config, "model: hidden size " + std::to_string(hidden) +
                           " is not divisible by heads " + std::to_string(heads));
  const int token_width = features * hidden;
  if (rank < 1 || rank >= std::min(token_width, hidden))
    fail(errc::config, "model: rank " + std::to_string(rank) + " must satisfy 1 <= rank < " +
                           std::to_string(std::min(token_width, hidden)));
  if (temperature <= 0.0) fail(errc::config, "model: temperature must be positive");
}

MsaParams MsaParams::create(int width, int heads) {
  MsaParams p;
  p.heads = heads;
  const Shape w{width, width}, b{width};
  p.wq = Tensor::zeros(w, true);
  p.wk = Tensor::zeros(w, true);
  p.wv = Tensor::zeros(w, true);
  p.wo = Tensor::zeros(w, true);
  p.bq = Tensor::zeros(b, true);
  p.bk = Tensor::zeros(b, true);
  p.bv = Tensor::zeros(b, true);
  p.bo = Tensor::zeros(b, true);
  return p;
}

void MsaParams::collect(const std::string& prefix, std::vector<NamedParam>& out) const {
  out.push_back({prefix + ".wq", wq});
  out.push_back({prefix + ".wk", wk});
  out.push_back({prefix + ".wv", wv});
  out.push_back({prefix + ".wo", wo});
  out.push_back({prefix + ".bq", bq});
  out.push_back({prefix + ".bk", bk});
  out.push_back({prefix + ".bv", bv});
  out.push_back({prefix + ".bo", bo});
}

MsaOut msa(const Tensor& x, const MsaParams& p) {
  const bool flat = x.rank() == 2;
  Tensor in = flat ? reshape(x, {1, x.dim(0), x.dim(1)}) : x;
  if (in.rank() != 3)
    fail(errc::invalid_argument, "msa: expected (B, S, C) or (S, C), got " +
                                     shape_str(x.shape()));
  const int64_t b = in.dim(0), s = in.dim(1), c = in.dim(2);
  const int64_t h = p.heads;
  if (c != p.wq.dim(0))
    fail(errc::invalid_argument, "msa: input width " + std::to_string(c) +
                                     " does not match weights " + shape_str(p.wq.shape()));
  if (c % h != 0)
    fail(errc::config, "msa: width " + std::to_string(c) + " not divisible by " +
                           std::to_string(h) + " heads");
  const int64_t dh = c / h;

  auto heads_view = [&](const Tensor& t) {
    // (B, S, C) -> (B*H, S, dh)
    return reshape(permute(reshape(t, {b, s, h, dh}), {0, 2, 1, 3}), {b * h, s, dh});
  };
  Tensor q = heads_view(add(matmul(in, p.wq), p.bq));
  Tensor k = heads_view(add(matmul(in, p.wk), p.bk));
  Tensor v = heads_view(add(matmul(in, p.wv), p.bv));

  Tensor scores = scale(matmul(q, permute(k, {0, 2, 1})), 1.0 / std::sqrt(double(dh)));
  Tensor attn = softmax(scores, 2);
  Tensor ctx = matmul(attn, v);  // (B*H, S, dh)
  Tensor hidden = reshape(permute(reshape(ctx, {b, h, s, dh}), {0, 2, 1, 3}), {b, s, c});
  Tensor out = add(matmul(hidden, p.wo), p.bo);
  if (flat) {
    out = reshape(out, {s, c});
    hidden = reshape(hidden, {s, c});
  }
  return {out, hidden};
}

namespace {

// shared forecast head: flatten the time axis, one linear map per node
Tensor forecast_head(const Tensor& attended /*(N, T, C)*/, const Tensor& w, const Tensor& b,
                     int64_t t_out) {
  const int64_t n = attended.dim(0);
  Tensor flat = reshape(attended, {n, attended.dim(1) * attended.dim(2)});
  Tensor f = linear(flat, w, b);                       // (N, T_out)
  return reshape(permute(f, {1, 0}), {t_out, n, 1});   // (T_out, N, 1)
}

void check_input(const ModelConfig& cfg, const Tensor& x) {
  const Shape want{cfg.t_in, cfg.n_nodes, cfg.features};
  if (x.shape() != want)
    fail(errc::invalid_argument,
         "expert: input shape " + shape_str(x.shape()) + " does not match " + shape_str(want));
}

}  // namespace

// ---- temporal expert ------------------------------------------------------

TemporalExpert::TemporalExpert(const ModelConfig& cfg, std::string name)
    : name_(std::move(name)), cfg_(cfg) {
  const int c = cfg.hidden;
  w_emb_ = Tensor::zeros({cfg.features, c}, true);
  b_emb_ = Tensor::zeros({c}, true);
  week_ = Tensor::zeros({7, c}, true);
  for (int l = 0; l < cfg.layers; ++l) blocks_.push_back(MsaParams::create(c, cfg.heads));
  w_head_ = Tensor::zeros({static_cast<int64_t>(cfg.t_in) * c, cfg.t_out}, true);
  b_head_ = Tensor::zeros({cfg.t_out}, true);
}

ExpertOutput TemporalExpert::forward(const Tensor& x, const std::vector<int64_t>& ts) const {
  check_input(cfg_, x);
  if (static_cast<int>(ts.size()) != cfg_.t_in)
    fail(errc::config, "temporal expert: need one timestamp per input step, got " +
                           std::to_string(ts.size()));
  std::vector<int64_t> rows(ts.size());
  for (size_t i = 0; i < ts.size(); ++i) rows[i] = week_index(ts[i]) - 1;
  Tensor xw = gather_rows(week_, rows);  // (T, C)

  Tensor per_node = permute(x, {1, 0, 2});               // (N, T, F)
  Tensor emb = add(matmul(per_node, w_emb_), b_emb_);    // (N, T, C)
  emb = add(emb, xw);                                    // periodic embedding, all nodes

  Tensor h = emb, attended;
  for (const auto& block : blocks_) {
    MsaOut o = msa(h, block);
    h = o.out;
    attended = o.hidden;
  }
  return {forecast_head(h, w_head_, b_head_, cfg_.t_out), mean(attended, 1)};
}

void TemporalExpert::collect(std::vector<NamedParam>& out) const {
  out.push_back({name_ + ".emb.w", w_emb_});
  out.push_back({name_ + ".emb.b", b_emb_});
  out.push_back({name_ + ".week", week_});
  for (size_t l = 0; l < blocks_.size(); ++l)
    blocks_[l].collect(name_ + ".msa" + std::to_string(l), out);
  out.push_back({name_ + ".head.w", w_head_});
  out.push_back({name_ + ".head.b", b_head_});
}

// ---- spatio-temporal expert ------------------------------------------------

SpatioTemporalExpert::SpatioTemporalExpert(const ModelConfig& cfg) : cfg_(cfg) {
  const int c = cfg.hidden;
  w_emb_ = Tensor::zeros({cfg.features, c}, true);
  b_emb_ = Tensor::zeros({c}, true);
  for (int l = 0; l < cfg.layers; ++l) {
    spatial_.push_back(MsaParams::create(c, cfg.heads));
    temporal_.push_back(MsaParams::create(c, cfg.heads));
  }
  w_head_ = Tensor::zeros({static_cast<int64_t>(cfg.t_in) * c, cfg.t_out}, true);
  b_head_ = Tensor::zeros({cfg.t_out}, true);
}

ExpertOutput SpatioTemporalExpert::forward(const Tensor& x, const std::vector<int64_t>&) const {
  check_input(cfg_, x);
  Tensor h = add(matmul(x, w_emb_), b_emb_);  // (T, N, C)
  Tensor out, attended;
  for (int l = 0; l < cfg_.layers; ++l) {
    MsaOut s = msa(h, spatial_[l]);                   // attends across nodes per step
    MsaOut t = msa(permute(s.out, {1, 0, 2}), temporal_[l]);  // across steps per node
    out = t.out;             // (N, T, C)
    attended = t.hidden;
    h = permute(out, {1, 0, 2});
  }
  return {forecast_head(out, w_head_, b_head_, cfg_.t_out), mean(attended, 1)};
}

void SpatioTemporalExpert::collect(std::vector<NamedParam>& out) const {
  out.push_back({"st.emb.w", w_emb_});
  out.push_back({"st.emb.b", b_emb_});
  for (size_t l = 0; l < spatial_.size(); ++l) {
    spatial_[l].collect("st.spatial" + std::to_string(l), out);
    temporal_[l].collect("st.temporal" + std::to_string(l), out);
  }
  out.push_back({"st.head.w", w_head_});
  out.push_back({"st.head.b", b_head_});
}

// ---- memory expert ----------------------------------------------------------

MemoryExpert::MemoryExpert(const ModelConfig& cfg, Tensor memory)
    : cfg_(cfg), memory_(std::move(memory)) {
  if (memory_.dim(0) != cfg.n_nodes)
    fail(errc::config, "memory expert: memory rows " + std::to_string(memory_.dim(0)) +
                           " do not match node count " + std::to_string(cfg.n_nodes));
  const int c = cfg.hidden;
  w_e_ = Tensor::zeros({cfg.memory, c}, true);
  w_gcn_ = Tensor::zeros({cfg.features, c}, true);
  for (int l = 0; l < cfg.layers; ++l) blocks_.push_back(MsaParams::create(c, cfg.heads));
  w_head_ = Tensor::zeros({static_cast<int64_t>(cfg.t_in) * c, cfg.t_out}, true);
  b_head_ = Tensor::zeros({cfg.t_out}, true);
}

Tensor MemoryExpert::adjacency() const {
  Tensor e = matmul(memory_, w_e_);                       // (N, C)
  return softmax(relu(matmul(e, transpose2d(e))), 1);     // rows sum to 1
}

ExpertOutput MemoryExpert::forward(const Tensor& x, const std::vector<int64_t>&) const {
  check_input(cfg_, x);
  const int64_t n = cfg_.n_nodes, t = cfg_.t_in, f = cfg_.features;
  Tensor a = adjacency();
  Tensor per_node = reshape(permute(x, {1, 0, 2}), {n, t * f});
  Tensor mixed = reshape(matmul(a, per_node), {n, t, f});  // neighbourhood aggregation
  Tensor h = matmul(mixed, w_gcn_);                        // (N, T, C)
  Tensor attended;
  for (const auto& block : blocks_) {
    MsaOut o = msa(h, block);
    h = o.out;
    attended = o.hidden;
  }
  return {forecast_head(h, w_head_, b_head_, cfg_.t_out), mean(attended, 1)};
}

void MemoryExpert::collect(std::vector<NamedParam>& out) const {
  out.push_back({"memory.we", w_e_});
  out.push_back({"memory.wgcn", w_gcn_});
  for (size_t l = 0; l < blocks_.size(); ++l)
    blocks_[l].collect("memory.msa" + std::to_string(l), out);
  out.push_back({"memory.head.w", w_head_});
  out.push_back({"memory.head.b", b_head_});
}

// ---- variable-centric expert -------------------------------------------------

VariableExpert::VariableExpert(const ModelConfig& cfg) : cfg_(cfg) {
  const int c = cfg.hidden;
  token_width_ = cfg.features * c;
  w_tok_ = Tensor::zeros({cfg.t_in, c}, true);
  b_tok_ = Tensor::zeros({c}, true);
  for (int l = 0; l < cfg.layers; ++l)
    blocks_.push_back(MsaParams::create(token_width_, cfg.heads));
  w_a_ = Tensor::zeros({token_width_, cfg.rank}, true);
  w_b_ = Tensor::zeros({cfg.rank, c}, true);
  w_head_ = Tensor::zeros({token_width_, cfg.t_out}, true);
  b_head_ = Tensor::zeros({cfg.t_out}, true);
}

ExpertOutput VariableExpert::forward(const Tensor& x, const std::vector<int64_t>&) const {
  check_input(cfg_, x);
  const int64_t n = cfg_.n_nodes;
  Tensor per_var = permute(x, {1, 2, 0});                   // (N, F, T)
  Tensor emb = add(matmul(per_var, w_tok_), b_tok_);        // (N, F, C)
  Tensor tokens = reshape(emb, {1, n, token_width_});       // one token per sensor
  Tensor enc = tokens;
  for (const auto& block : blocks_) enc = msa(enc, block).out;
  Tensor x_enc = reshape(enc, {n, token_width_});

  Tensor f = linear(x_enc, w_head_, b_head_);               // (N, T_out)
  Tensor forecast = reshape(permute(f, {1, 0}), {cfg_.t_out, n, 1});
  // rank-r bridge into the common routing shape
  Tensor hidden = matmul(matmul(x_enc, w_a_), w_b_);
  return {forecast, hidden};
}

void VariableExpert::collect(std::vector<NamedParam>& out) const {
  out.push_back({"semantic.tok.w", w_tok_});
  out.push_back({"semantic.tok.b", b_tok_});
  for (size_t l = 0; l < blocks_.size(); ++l)
    blocks_[l].collect("semantic.msa" + std::to_string(l), out);
  out.push_back({"semantic.bridge.a", w_a_});
  out.push_back({"semantic.bridge.b", w_b_});
  out.push_back({"semantic.head.w", w_head_});
  out.push_back({"semantic.head.b", b_head_});
}

// ---- model -------------------------------------------------------------------

Ablation ablation_from_string(const std::string& s) {
  if (s == "none") return Ablation::none;
  if (s == "no_semantics") return Ablation::no_semantics;
  if (s == "ensemble") return Ablation::ensemble;
  if (s == "no_prior") return Ablation::no_prior;
  if (s == "replaced_prior") return Ablation::replaced_prior;
  fail(errc::config, "unknown ablation '" + s +
                         "' (expected none, no_semantics, ensemble, no_prior, replaced_prior)");
}

ParamGroup param_group(const std::string& name) {
  if (name.rfind("semantic.bridge.", 0) == 0) return ParamGroup::semantic_bridge;
  if (name.rfind("semantic.", 0) == 0) return ParamGroup::semantic_encoder;
  return ParamGroup::shared;
}

const char* ablation_to_string(Ablation a) {
  switch (a) {
    case Ablation::none: return "none";
    case Ablation::no_semantics: return "no_semantics";
    case Ablation::ensemble: return "ensemble";
    case Ablation::no_prior: return "no_prior";
    case Ablation::replaced_prior: return "replaced_prior";
  }
  return "none";
}

TitanModel::TitanModel(ModelConfig cfg, Ablation ablation, uint64_t seed)
    : cfg_(cfg), ablation_(ablation) {
  cfg_.validate();
  memory_ = Tensor::zeros({cfg_.n_nodes, cfg_.memory}, true);
  proj_ = Tensor::zeros({cfg_.hidden, cfg_.memory}, true);

  experts_.push_back(std::make_unique<TemporalExpert>(cfg_, "temporal"));
  experts_.push_back(std::make_unique<SpatioTemporalExpert>(cfg_));
  experts_.push_back(std::make_unique<MemoryExpert>(cfg_, memory_));
  if (ablation_ != Ablation::no_semantics)
    experts_.push_back(std::make_unique<VariableExpert>(cfg_));
  if (ablation_ == Ablation::replaced_prior)
    experts_.push_back(std::make_unique<TemporalExpert>(cfg_, "temporal2"));

  params_.push_back({"memory_bank", memory_});
  params_.push_back({"route.proj", proj_});
  if (ablation_ == Ablation::ensemble) {
    ensemble_logits_ = Tensor::zeros({expert_count()}, true);
    params_.push_back({"ensemble.logits", ensemble_logits_});
  }
  for (const auto& e : experts_) e->collect(params_);

  std::mt19937_64 rng(seed);
  for (auto& p : params_) {
    if (p.tensor.rank() < 2) continue;  // biases and logits start at zero
    const auto& s = p.tensor.shape();
    const double fan_in = static_cast<double>(s[s.size() - 2]);
    const double fan_out = static_cast<double>(s[s.size() - 1]);
    const double a = std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> d(-a, a);
    for (auto& v : p.tensor.data()) v = d(rng);
  }
}

ModelForward TitanModel::forward(const Tensor& x, const std::vector<int64_t>& ts,
                                 const PriorGraph* prior, bool hard) const {
  ModelForward fwd;
  fwd.outputs.reserve(experts_.size());
  for (const auto& e : experts_) fwd.outputs.push_back(e->forward(x, ts));

  if (ablation_ == Ablation::ensemble) {
    Tensor probs = softmax(ensemble_logits_, 0);
    fwd.gate.probs = probs;
    fwd.gate.probs_v = probs.data();
    fwd.forecast = combine_soft(fwd.outputs, probs);
    return fwd;
  }

  if (prior && (ablation_ == Ablation::no_prior || ablation_ == Ablation::replaced_prior))
    fail(errc::config, "prior supplied to a prior-less ablation");

  Tensor pooled;
  for (const auto& o : fwd.outputs)
    pooled = pooled.defined() ? add(pooled, o.hidden) : o.hidden;
  pooled = scale(pooled, 1.0 / static_cast<double>(expert_count()));

  Tensor o = memory_query(pooled, memory_, proj_);
  std::vector<Tensor> hiddens;
  for (const auto& e : fwd.outputs) hiddens.push_back(e.hidden);
  std::vector<Tensor> o_hat = expert_keys(hiddens, proj_);
  fwd.gate = gate(o, o_hat, prior, cfg_.temperature);
  fwd.forecast = hard ? combine_hard(fwd.outputs, fwd.gate.selected)
                      : combine_soft(fwd.outputs, fwd.gate.probs);
  return fwd;
}

}  // namespace titan
