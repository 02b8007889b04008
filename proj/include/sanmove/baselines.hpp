#pragma once

#include "sanmove/metrics.hpp"
#include "sanmove/trainer.hpp"

namespace sanmove::eval {

// First-order transition-count chain with a global-popularity fallback for
// unseen last-locations.
struct MarkovModel {
    std::unordered_map<std::size_t, std::unordered_map<std::size_t, std::size_t>> transitions;
    std::vector<double> popularity;  // per location index, [0] = pad

    static MarkovModel fit(const data::Dataset& ds);
    std::vector<double> scores(std::size_t last_loc) const;
    Scorer scorer() const;
};

// Minimal single-layer LSTM over location embeddings with the same
// prediction head and loss as the main model. Exists as the sequential
// comparator for the training-efficiency benchmark.
struct LstmModel {
    std::size_t d = 64;
    Tensor E_l;   // [(N+1) x d]
    Tensor W_x;   // [d x 4d], gate order i,f,g,o
    Tensor W_h;   // [d x 4d]
    Tensor b;     // [4d]
    Tensor W_p;   // [(N+1) x d]

    static LstmModel init(std::size_t n_locations, std::size_t d, std::uint64_t seed);
    std::vector<std::pair<std::string, Tensor*>> named();

    // Hidden states for every position, [k x d].
    autodiff::VarPtr hidden_states(model::Binder& bind,
                                   const std::vector<std::size_t>& locs);
    autodiff::VarPtr session_loss(model::Binder& bind,
                                  const std::vector<model::ModelRecord>& recent);
    std::vector<double> predict_scores(const std::vector<model::ModelRecord>& prefix);
    Scorer scorer();
};

train::EpochReport lstm_train_epoch(const std::vector<train::TrainExample>& examples,
                                    LstmModel& m, train::AdamState& state,
                                    const train::TrainConfig& config,
                                    std::mt19937_64& shuffle_rng);

}  // namespace sanmove::eval
