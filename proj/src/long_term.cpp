#include "sanmove/long_term.hpp"

#include <cmath>
#include <stdexcept>

namespace sanmove::model {

namespace ad = sanmove::autodiff;

ad::VarPtr attention(const ad::VarPtr& Q, const ad::VarPtr& K, const ad::VarPtr& V,
                     std::size_t n_heads, const std::vector<double>* gamma,
                     const std::vector<double>* mask, bool gamma_post_softmax) {
    const std::size_t d = Q->cols();
    if (K->cols() != d || V->cols() != d)
        throw ShapeError("attention: width mismatch");
    if (n_heads == 0 || d % n_heads != 0)
        throw std::invalid_argument("attention: d must be divisible by n_heads");
    const std::size_t dh = d / n_heads;
    const double inv_sqrt = 1.0 / std::sqrt(double(dh));

    std::vector<ad::VarPtr> heads;
    heads.reserve(n_heads);
    for (std::size_t h = 0; h < n_heads; ++h) {
        auto Qh = n_heads == 1 ? Q : ad::slice_cols(Q, h * dh, dh);
        auto Kh = n_heads == 1 ? K : ad::slice_cols(K, h * dh, dh);
        auto Vh = n_heads == 1 ? V : ad::slice_cols(V, h * dh, dh);
        auto logits = ad::scale(ad::matmul_nt(Qh, Kh), inv_sqrt);
        if (gamma && !gamma_post_softmax) logits = ad::mul_const(logits, *gamma);
        if (mask) logits = ad::add_const(logits, *mask);
        auto weights = ad::softmax_rows(logits);
        if (gamma && gamma_post_softmax) weights = ad::mul_const(weights, *gamma);
        heads.push_back(ad::matmul(weights, Vh));
    }
    return n_heads == 1 ? heads[0] : ad::concat_cols(heads);
}

ad::VarPtr ffn_forward(const AttentionBlock& block, Binder& bind, const ad::VarPtr& Y) {
    auto h = ad::relu(ad::add(ad::matmul(Y, bind(block.W1)), bind(block.b1)));
    return ad::add(ad::matmul(h, bind(block.W2)), bind(block.b2));
}

ad::VarPtr build_queries(ModelParams& params, Binder& bind, std::size_t user,
                         const std::vector<int>& slots) {
    std::vector<std::size_t> slot_idx(slots.begin(), slots.end());
    auto e_t = ad::gather_rows(bind.fixed(params.time_table), slot_idx);
    auto e_u = ad::gather_rows(bind(params.emb.E_u), {user});
    return ad::add(e_t, e_u);
}

ad::VarPtr long_term_forward(ModelParams& params, Binder& bind, std::size_t user,
                             const std::vector<ModelRecord>& history) {
    if (history.empty())
        throw std::invalid_argument("long_term_forward: empty history");
    const std::size_t start =
        history.size() > params.history_cap ? history.size() - params.history_cap : 0;

    std::vector<int> slots;
    std::vector<std::size_t> locs;
    for (std::size_t i = start; i < history.size(); ++i) {
        slots.push_back(history[i].slot);
        locs.push_back(history[i].loc);
    }

    auto X_q = build_queries(params, bind, user, slots);
    auto X_kv = ad::gather_rows(bind(params.emb.E_l), locs);
    ad::VarPtr F;
    for (std::size_t l = 0; l < params.n_layers; ++l) {
        const auto& block = params.long_blocks[l];
        auto Q = ad::matmul(X_q, bind(block.W_Q));
        auto K = ad::matmul(X_kv, bind(block.W_K));
        auto V = ad::matmul(X_kv, bind(block.W_V));
        auto Y = attention(Q, K, V, params.n_heads);
        F = ffn_forward(block, bind, Y);
        X_q = F;  // deeper layers are plain self-attention over the previous output
        X_kv = F;
    }
    return ad::mean_axis0(F);
}

}  // namespace sanmove::model
