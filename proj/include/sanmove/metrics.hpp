#pragma once

#include <functional>
#include <map>

#include "sanmove/model.hpp"

namespace sanmove::eval {

struct Metrics {
    std::map<int, double> recall_at;
    std::map<int, double> ndcg_at;
    std::size_t n_examples = 0;
};

// 1-based rank of target among location indices 1..N; ties broken by
// ascending index. scores[0] (pad) is ignored.
std::size_t rank_of(const std::vector<double>& scores, std::size_t target);

int recall_at_k(std::size_t rank, int k);
double ndcg_at_k(std::size_t rank, int k);  // single relevant item: 1/log2(rank+1)

// Scores over locations [0..N] for a user given historical pool and the
// recent prefix of a test session.
using Scorer = std::function<std::vector<double>(
    std::size_t user, const std::vector<model::ModelRecord>& history,
    const std::vector<model::ModelRecord>& prefix)>;

// Final-position protocol: per test session predict the last record from
// everything before it; historical pool = the user's train sessions. Pad
// targets are skipped.
Metrics evaluate(const data::Dataset& ds, const Scorer& scorer,
                 const std::vector<int>& ks = {1, 5, 10});

Metrics evaluate_model(model::ModelParams& params, const data::Dataset& ds,
                       const std::vector<int>& ks = {1, 5, 10});

void write_metrics_csv(const std::string& model_name, const std::string& mode,
                       const Metrics& m, std::ostream& out, bool header = true);

}  // namespace sanmove::eval
