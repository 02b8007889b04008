#include "sanmove/metrics.hpp"

#include <cmath>
#include <ostream>
#include <stdexcept>
#include <unordered_map>

namespace sanmove::eval {

std::size_t rank_of(const std::vector<double>& scores, std::size_t target) {
    if (target == 0 || target >= scores.size())
        throw std::out_of_range("rank_of: target out of vocabulary");
    const double ts = scores[target];
    std::size_t rank = 1;
    for (std::size_t j = 1; j < scores.size(); ++j) {
        if (j == target) continue;
        if (scores[j] > ts || (scores[j] == ts && j < target)) ++rank;
    }
    return rank;
}

int recall_at_k(std::size_t rank, int k) { return rank <= std::size_t(k) ? 1 : 0; }

double ndcg_at_k(std::size_t rank, int k) {
    return rank <= std::size_t(k) ? 1.0 / std::log2(double(rank) + 1.0) : 0.0;
}

Metrics evaluate(const data::Dataset& ds, const Scorer& scorer, const std::vector<int>& ks) {
    if (ds.test.empty()) throw std::invalid_argument("evaluate: empty test set");

    std::unordered_map<std::size_t, std::vector<model::ModelRecord>> history;
    for (const auto& s : ds.train) {
        auto recs = model::to_model_records(ds, s.recs);
        auto& pool = history[s.user];
        pool.insert(pool.end(), recs.begin(), recs.end());
    }

    Metrics m;
    for (int k : ks) {
        m.recall_at[k] = 0.0;
        m.ndcg_at[k] = 0.0;
    }
    for (const auto& s : ds.test) {
        if (s.recs.size() < 2) continue;
        const auto target = s.recs.back().loc;
        if (target == 0) continue;  // pad target excluded from metrics
        auto recs = model::to_model_records(ds, s.recs);
        std::vector<model::ModelRecord> prefix(recs.begin(), recs.end() - 1);
        const auto scores = scorer(s.user, history[s.user], prefix);
        const auto rank = rank_of(scores, target);
        for (int k : ks) {
            m.recall_at[k] += recall_at_k(rank, k);
            m.ndcg_at[k] += ndcg_at_k(rank, k);
        }
        m.n_examples += 1;
    }
    if (m.n_examples == 0) throw std::runtime_error("evaluate: no scorable test examples");
    for (int k : ks) {
        m.recall_at[k] /= double(m.n_examples);
        m.ndcg_at[k] /= double(m.n_examples);
    }
    return m;
}

Metrics evaluate_model(model::ModelParams& params, const data::Dataset& ds,
                       const std::vector<int>& ks) {
    return evaluate(
        ds,
        [&](std::size_t user, const std::vector<model::ModelRecord>& history,
            const std::vector<model::ModelRecord>& prefix) {
            return model::predict_scores(params, user, history, prefix, ds.slot_table);
        },
        ks);
}

void write_metrics_csv(const std::string& model_name, const std::string& mode, const Metrics& m,
                       std::ostream& out, bool header) {
    if (header) out << "model,mode,K,recall,ndcg,n\n";
    for (const auto& [k, r] : m.recall_at)
        out << model_name << "," << mode << "," << k << "," << r << "," << m.ndcg_at.at(k) << ","
            << m.n_examples << "\n";
}

}  // namespace sanmove::eval
