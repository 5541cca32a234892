#pragma once

#include "core/model.hpp"

namespace titan {

// O = softmax(proj(pooled) M^T / sqrt(m)) M, attention of the pooled expert
// state over the memory items (rows of M).
Tensor memory_query(const Tensor& pooled, const Tensor& memory, const Tensor& proj);

// Per-expert self-attention of the projected hidden state over the nodes,
// computed in memory space with the same projection as the query.
std::vector<Tensor> expert_keys(const std::vector<Tensor>& hiddens, const Tensor& proj);

// Cosine scores between the (optionally prior-mixed) query and each expert
// key, softened by `temperature`. Zero-norm operands score 0.
GateDecision gate(const Tensor& o, const std::vector<Tensor>& o_hat, const PriorGraph* prior,
                  double temperature);

Tensor combine_soft(const std::vector<ExpertOutput>& outputs, const Tensor& probs);
Tensor combine_hard(const std::vector<ExpertOutput>& outputs, int selected);

// Per-node winning expert (row-wise cosine argmax), for selection tallies.
std::vector<int> per_node_selection(const GateDecision& gd);

}  // namespace titan
