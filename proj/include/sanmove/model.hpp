#pragma once

#include <map>
#include <random>
#include <string>
#include <vector>

#include "sanmove/autodiff.hpp"
#include "sanmove/data_pipeline.hpp"
#include "sanmove/embeddings.hpp"
#include "sanmove/tensor.hpp"

namespace sanmove::model {

enum class StnovaMode { FULL, INVASIVE, NO_PERSONAL, NO_ST };

StnovaMode mode_from_string(const std::string& s);  // full | nova | no-p | no-st
std::string mode_to_string(StnovaMode m);

struct AttentionBlock {
    Tensor W_Q, W_K, W_V;  // [d x d]
    Tensor W1, b1, W2, b2; // FFN
    static AttentionBlock init(std::size_t d, std::mt19937_64& rng);
};

// One check-in as the model sees it.
struct ModelRecord {
    std::size_t loc = 0;
    int slot = 0;
    double lat = 0.0;
    double lon = 0.0;
};

struct ModelParams {
    std::size_t d = 64;
    std::size_t n_layers = 1;
    std::size_t n_heads = 1;
    StnovaMode mode = StnovaMode::FULL;
    bool mean_pool_hs = false;        // h_s = mean over positions instead of last row
    bool gamma_post_softmax = false;  // apply the spatio-temporal weights after softmax
    std::size_t history_cap = 128;    // most recent records fed to the long-term module

    EmbeddingTables emb;
    Tensor time_table;  // [48 x d], fixed sinusoidal encodings
    std::vector<AttentionBlock> long_blocks;
    std::vector<AttentionBlock> st_blocks;
    Tensor W_p;  // [(N+1) x d]

    static ModelParams init(std::size_t n_users, std::size_t n_locations, std::size_t d,
                            std::size_t n_layers, std::size_t n_heads, StnovaMode mode,
                            std::uint64_t seed);

    std::size_t n_locations() const { return W_p.rows() - 1; }
    // Stable name -> tensor map covering every trainable array.
    std::vector<std::pair<std::string, Tensor*>> named();
};

// Creates leaf nodes for parameter tensors, one Var per tensor per graph, so
// gradients can be harvested after backward().
struct Binder {
    bool train = true;
    std::map<const Tensor*, autodiff::VarPtr> binds;
    autodiff::VarPtr operator()(const Tensor& p) {
        auto it = binds.find(&p);
        if (it != binds.end()) return it->second;
        auto v = autodiff::leaf(p, train);
        binds.emplace(&p, v);
        return v;
    }
    autodiff::VarPtr fixed(const Tensor& t) {
        auto it = binds.find(&t);
        if (it != binds.end()) return it->second;
        auto v = autodiff::leaf(t, false);
        binds.emplace(&t, v);
        return v;
    }
};

// p_i = softmax(W_p (h_L + h_s_i)) with the pad column masked out.
// h_L may be null (then the head sees h_s alone).
autodiff::VarPtr predict_probs(ModelParams& params, Binder& bind,
                               const autodiff::VarPtr& st_outputs,
                               const autodiff::VarPtr& h_L);

// Mean NLL over the supervised prefixes of one session (target at position i
// is the location at i+1; pad targets excluded). history may be empty only in
// NO_PERSONAL mode.
autodiff::VarPtr session_loss(ModelParams& params, Binder& bind, std::size_t user,
                              const std::vector<ModelRecord>& history,
                              const std::vector<ModelRecord>& recent,
                              const data::SlotSimilarityTable& slot_table);

// Next-location scores (probabilities over N+1, pad = 0) after the whole
// recent prefix. No gradients.
std::vector<double> predict_scores(ModelParams& params, std::size_t user,
                                   const std::vector<ModelRecord>& history,
                                   const std::vector<ModelRecord>& recent,
                                   const data::SlotSimilarityTable& slot_table);

std::vector<ModelRecord> to_model_records(const data::Dataset& ds,
                                          const std::vector<data::EncRecord>& recs);

}  // namespace sanmove::model
