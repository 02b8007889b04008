#include "sanmove/model.hpp"

#include <limits>
#include <stdexcept>

#include "sanmove/long_term.hpp"
#include "sanmove/stnova.hpp"

namespace sanmove::model {

namespace ad = sanmove::autodiff;

StnovaMode mode_from_string(const std::string& s) {
    if (s == "full") return StnovaMode::FULL;
    if (s == "nova") return StnovaMode::INVASIVE;
    if (s == "no-p") return StnovaMode::NO_PERSONAL;
    if (s == "no-st") return StnovaMode::NO_ST;
    throw std::invalid_argument("unknown mode: " + s + " (expected full|nova|no-p|no-st)");
}

std::string mode_to_string(StnovaMode m) {
    switch (m) {
        case StnovaMode::FULL: return "full";
        case StnovaMode::INVASIVE: return "nova";
        case StnovaMode::NO_PERSONAL: return "no-p";
        case StnovaMode::NO_ST: return "no-st";
    }
    return "?";
}

AttentionBlock AttentionBlock::init(std::size_t d, std::mt19937_64& rng) {
    AttentionBlock b;
    b.W_Q = Tensor::randn({d, d}, rng, 0.02);
    b.W_K = Tensor::randn({d, d}, rng, 0.02);
    b.W_V = Tensor::randn({d, d}, rng, 0.02);
    b.W1 = Tensor::randn({d, d}, rng, 0.02);
    b.b1 = Tensor::zeros({d});
    b.W2 = Tensor::randn({d, d}, rng, 0.02);
    b.b2 = Tensor::zeros({d});
    return b;
}

ModelParams ModelParams::init(std::size_t n_users, std::size_t n_locations, std::size_t d,
                              std::size_t n_layers, std::size_t n_heads, StnovaMode mode,
                              std::uint64_t seed) {
    if (n_layers < 1 || n_heads < 1 || d % n_heads != 0)
        throw std::invalid_argument("ModelParams: bad layer/head configuration");
    std::mt19937_64 rng(seed);
    ModelParams p;
    p.d = d;
    p.n_layers = n_layers;
    p.n_heads = n_heads;
    p.mode = mode;
    p.emb = EmbeddingTables::init(n_users, n_locations, d, rng);
    p.time_table = time_encoding_table(d);
    for (std::size_t l = 0; l < n_layers; ++l) {
        p.long_blocks.push_back(AttentionBlock::init(d, rng));
        p.st_blocks.push_back(AttentionBlock::init(d, rng));
    }
    p.W_p = Tensor::randn({n_locations + 1, d}, rng, 0.02);
    return p;
}

std::vector<std::pair<std::string, Tensor*>> ModelParams::named() {
    std::vector<std::pair<std::string, Tensor*>> out;
    out.push_back({"E_u", &emb.E_u});
    out.push_back({"E_l", &emb.E_l});
    auto add_block = [&](const std::string& prefix, AttentionBlock& b) {
        out.push_back({prefix + ".W_Q", &b.W_Q});
        out.push_back({prefix + ".W_K", &b.W_K});
        out.push_back({prefix + ".W_V", &b.W_V});
        out.push_back({prefix + ".W1", &b.W1});
        out.push_back({prefix + ".b1", &b.b1});
        out.push_back({prefix + ".W2", &b.W2});
        out.push_back({prefix + ".b2", &b.b2});
    };
    for (std::size_t l = 0; l < n_layers; ++l) add_block("lt" + std::to_string(l), long_blocks[l]);
    for (std::size_t l = 0; l < n_layers; ++l) add_block("st" + std::to_string(l), st_blocks[l]);
    out.push_back({"W_p", &W_p});
    return out;
}

ad::VarPtr predict_probs(ModelParams& params, Binder& bind, const ad::VarPtr& st_outputs,
                         const ad::VarPtr& h_L) {
    auto h = h_L ? ad::add(st_outputs, h_L) : st_outputs;
    auto logits = ad::matmul_nt(h, bind(params.W_p));
    // Pad column is never a prediction.
    const std::size_t rows = logits->rows(), cols = logits->cols();
    std::vector<double> pad_mask(rows * cols, 0.0);
    for (std::size_t i = 0; i < rows; ++i)
        pad_mask[i * cols] = -std::numeric_limits<double>::infinity();
    return ad::softmax_rows(ad::add_const(logits, pad_mask));
}

ad::VarPtr session_loss(ModelParams& params, Binder& bind, std::size_t user,
                        const std::vector<ModelRecord>& history,
                        const std::vector<ModelRecord>& recent,
                        const data::SlotSimilarityTable& slot_table) {
    if (recent.size() < 2)
        throw std::invalid_argument("session_loss: need at least 2 recent records");
    ad::VarPtr h_L;
    if (params.mode != StnovaMode::NO_PERSONAL)
        h_L = long_term_forward(params, bind, user, history);

    auto st_out = stnova_forward(params, bind, user, recent, h_L, slot_table);
    auto supervised = ad::slice_rows(st_out, 0, recent.size() - 1);
    auto probs = predict_probs(params, bind, supervised, h_L);

    std::vector<std::size_t> keep, targets;
    for (std::size_t i = 0; i + 1 < recent.size(); ++i) {
        if (recent[i + 1].loc == 0) continue;  // pad target, not supervised
        keep.push_back(i);
        targets.push_back(recent[i + 1].loc);
    }
    if (keep.empty())
        throw std::runtime_error("session_loss: all targets are pad");
    auto kept = keep.size() == recent.size() - 1 ? probs : ad::gather_rows(probs, keep);
    return ad::nll_rows(kept, targets);
}

std::vector<double> predict_scores(ModelParams& params, std::size_t user,
                                   const std::vector<ModelRecord>& history,
                                   const std::vector<ModelRecord>& recent,
                                   const data::SlotSimilarityTable& slot_table) {
    Binder bind;
    bind.train = false;
    ad::VarPtr h_L;
    if (params.mode != StnovaMode::NO_PERSONAL)
        h_L = long_term_forward(params, bind, user, history);
    auto st_out = stnova_forward(params, bind, user, recent, h_L, slot_table);
    auto last = params.mean_pool_hs ? ad::mean_axis0(st_out)
                                    : ad::slice_rows(st_out, recent.size() - 1, 1);
    if (params.mean_pool_hs) last->shape = {1, params.d};
    auto probs = predict_probs(params, bind, last, h_L);
    return std::vector<double>(probs->data(), probs->data() + probs->numel());
}

std::vector<ModelRecord> to_model_records(const data::Dataset& ds,
                                          const std::vector<data::EncRecord>& recs) {
    std::vector<ModelRecord> out;
    out.reserve(recs.size());
    for (const auto& r : recs) {
        const auto [lat, lon] = ds.coords_of(r.loc);
        out.push_back({r.loc, r.slot, lat, lon});
    }
    return out;
}

}  // namespace sanmove::model
