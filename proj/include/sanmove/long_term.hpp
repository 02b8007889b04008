#pragma once

#include "sanmove/model.hpp"

namespace sanmove::model {

// Scaled dot-product attention, optionally multi-head (d split into equal
// slices) and optionally with per-logit constant scaling (gamma) and an
// additive -inf mask. gamma/mask are row-major [a x b] or null.
autodiff::VarPtr attention(const autodiff::VarPtr& Q, const autodiff::VarPtr& K,
                           const autodiff::VarPtr& V, std::size_t n_heads,
                           const std::vector<double>* gamma = nullptr,
                           const std::vector<double>* mask = nullptr,
                           bool gamma_post_softmax = false);

// F = ReLU(Y W1 + b1) W2 + b2, position-wise, no residual.
autodiff::VarPtr ffn_forward(const AttentionBlock& block, Binder& bind,
                             const autodiff::VarPtr& Y);

// Row i = e_u + e_t(slot_i).
autodiff::VarPtr build_queries(ModelParams& params, Binder& bind, std::size_t user,
                               const std::vector<int>& slots);

// h_L: queries from user+time, keys/values from historical location
// embeddings, per layer attention + FFN, then average pooling. History is
// truncated to the most recent params.history_cap records.
autodiff::VarPtr long_term_forward(ModelParams& params, Binder& bind, std::size_t user,
                                   const std::vector<ModelRecord>& history);

}  // namespace sanmove::model
