#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <unordered_map>
#include <vector>

#include "sanmove/model.hpp"

namespace sanmove::train {

struct TrainConfig {
    double lr = 1e-4;
    double weight_decay = 1e-5;
    std::size_t d = 64;          // paper-scale is 512
    std::size_t n_layers = 1;
    std::size_t n_heads = 1;
    model::StnovaMode mode = model::StnovaMode::FULL;
    double clip_norm = 5.0;
    std::size_t epochs = 10;
    std::size_t batch_size = 1;  // sessions per optimizer step
    std::uint64_t seed = 42;
    std::size_t workers = 1;
    std::size_t history_cap = 128;
    std::size_t lr_patience = 3;  // halve lr when train loss plateaus this long

    void validate() const;
};

// Line-oriented "key = value" text; '#' comments; unknown keys are errors.
TrainConfig parse_config(std::istream& in);
TrainConfig load_config(const std::string& path);

// Per-parameter gradient accumulator keyed by tensor identity.
struct GradStore {
    std::unordered_map<const Tensor*, std::vector<double>> grads;
    void accumulate(const Tensor* p, const std::vector<double>& g);
    void merge(const GradStore& other);
    double global_norm() const;
    void scale_all(double s);
    void clear() { grads.clear(); }
};

struct AdamState {
    std::unordered_map<const Tensor*, std::vector<double>> m, v;
    std::size_t t = 0;
};

// Clips grads to config.clip_norm (global L2), then applies Adam
// (beta1 0.9, beta2 0.999, eps 1e-8) with decoupled weight decay. Biases and
// the pad row of E_l are exempt from decay. Non-finite grads skip the step.
// Returns false when the step was skipped.
bool adam_step(model::ModelParams& params, GradStore& grads, AdamState& state,
               const TrainConfig& config);

// Same update over an arbitrary named tensor list. Names ending in ".b1",
// ".b2" or equal to "b" skip decay; decay_skip_prefix elements of the named
// tensor decay_skip skip it too (used for the pad row of E_l).
bool adam_step_named(const std::vector<std::pair<std::string, Tensor*>>& named,
                     GradStore& grads, AdamState& state, const TrainConfig& config,
                     const Tensor* decay_skip = nullptr, std::size_t decay_skip_prefix = 0);

struct EpochReport {
    double mean_loss = 0.0;
    double wall_seconds = 0.0;
    double examples_per_sec = 0.0;
    std::size_t examples = 0;
    std::size_t skipped_steps = 0;
};

// One training example: a session with its per-user historical pool.
struct TrainExample {
    std::size_t user;
    std::vector<model::ModelRecord> history;
    std::vector<model::ModelRecord> recent;
};

// Session j of a user trains against the concatenation of sessions 0..j-1;
// the first session of each user has no history and is skipped.
std::vector<TrainExample> build_train_examples(const data::Dataset& ds);

EpochReport train_epoch(const std::vector<TrainExample>& examples, model::ModelParams& params,
                        const data::SlotSimilarityTable& slot_table, AdamState& state,
                        const TrainConfig& config, std::mt19937_64& shuffle_rng);

struct TrainResult {
    std::vector<EpochReport> epochs;
    double final_lr = 0.0;
};

TrainResult train(const data::Dataset& ds, model::ModelParams& params, const TrainConfig& config);

// Checkpoint: "SANMOVE1" magic, then per tensor: name length + bytes, rank,
// extents (u64 LE), f64 LE payload. Tensor order is ModelParams::named() plus
// a leading "meta" tensor carrying [d, n_layers, n_heads, mode].
void save_checkpoint(model::ModelParams& params, const std::string& path);
model::ModelParams load_checkpoint(const std::string& path);

enum class CheckpointErrorKind { BadMagic, Truncated, UnknownTensor, Io };
struct CheckpointError : std::runtime_error {
    CheckpointErrorKind kind;
    CheckpointError(CheckpointErrorKind k, const std::string& msg)
        : std::runtime_error(msg), kind(k) {}
};

}  // namespace sanmove::train
