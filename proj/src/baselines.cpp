#include "sanmove/baselines.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace sanmove::eval {

namespace ad = sanmove::autodiff;

MarkovModel MarkovModel::fit(const data::Dataset& ds) {
    MarkovModel m;
    m.popularity.assign(ds.vocab.n_locations() + 1, 0.0);
    for (const auto& s : ds.train) {
        for (std::size_t i = 0; i < s.recs.size(); ++i) {
            const auto loc = s.recs[i].loc;
            if (loc == 0) continue;
            m.popularity[loc] += 1.0;
            if (i + 1 < s.recs.size() && s.recs[i + 1].loc != 0)
                m.transitions[loc][s.recs[i + 1].loc] += 1;
        }
    }
    return m;
}

std::vector<double> MarkovModel::scores(std::size_t last_loc) const {
    const auto it = transitions.find(last_loc);
    if (it == transitions.end() || it->second.empty()) return popularity;
    std::vector<double> s(popularity.size(), 0.0);
    for (const auto& [loc, count] : it->second) s[loc] = double(count);
    return s;
}

Scorer MarkovModel::scorer() const {
    return [this](std::size_t, const std::vector<model::ModelRecord>&,
                  const std::vector<model::ModelRecord>& prefix) {
        return scores(prefix.empty() ? 0 : prefix.back().loc);
    };
}

LstmModel LstmModel::init(std::size_t n_locations, std::size_t d, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    LstmModel m;
    m.d = d;
    m.E_l = Tensor::randn({n_locations + 1, d}, rng, 0.02);
    std::fill(m.E_l.data.begin(), m.E_l.data.begin() + std::ptrdiff_t(d), 0.0);
    m.W_x = Tensor::randn({d, 4 * d}, rng, 0.02);
    m.W_h = Tensor::randn({d, 4 * d}, rng, 0.02);
    m.b = Tensor::zeros({4 * d});
    m.W_p = Tensor::randn({n_locations + 1, d}, rng, 0.02);
    return m;
}

std::vector<std::pair<std::string, Tensor*>> LstmModel::named() {
    return {{"E_l", &E_l}, {"W_x", &W_x}, {"W_h", &W_h}, {"b", &b}, {"W_p", &W_p}};
}

ad::VarPtr LstmModel::hidden_states(model::Binder& bind, const std::vector<std::size_t>& locs) {
    const std::size_t k = locs.size();
    auto emb = ad::gather_rows(bind(E_l), locs);
    auto wx = bind(W_x);
    auto wh = bind(W_h);
    auto bias = bind(b);
    auto h = ad::constant(Tensor::zeros({1, d}));
    auto c = ad::constant(Tensor::zeros({1, d}));
    std::vector<ad::VarPtr> hs;
    hs.reserve(k);
    for (std::size_t t = 0; t < k; ++t) {
        auto x = ad::slice_rows(emb, t, 1);
        auto gates = ad::add(ad::add(ad::matmul(x, wx), ad::matmul(h, wh)), bias);
        auto i = ad::sigmoid(ad::slice_cols(gates, 0, d));
        auto f = ad::sigmoid(ad::slice_cols(gates, d, d));
        auto g = ad::tanh_v(ad::slice_cols(gates, 2 * d, d));
        auto o = ad::sigmoid(ad::slice_cols(gates, 3 * d, d));
        c = ad::add(ad::mul(f, c), ad::mul(i, g));
        h = ad::mul(o, ad::tanh_v(c));
        hs.push_back(h);
    }
    return ad::concat_rows(hs);
}

namespace {
ad::VarPtr head_probs(model::Binder& bind, Tensor& W_p, const ad::VarPtr& H) {
    auto logits = ad::matmul_nt(H, bind(W_p));
    const std::size_t rows = logits->rows(), cols = logits->cols();
    std::vector<double> pad_mask(rows * cols, 0.0);
    for (std::size_t i = 0; i < rows; ++i)
        pad_mask[i * cols] = -std::numeric_limits<double>::infinity();
    return ad::softmax_rows(ad::add_const(logits, pad_mask));
}
}  // namespace

ad::VarPtr LstmModel::session_loss(model::Binder& bind,
                                   const std::vector<model::ModelRecord>& recent) {
    if (recent.size() < 2)
        throw std::invalid_argument("lstm session_loss: need at least 2 records");
    std::vector<std::size_t> locs;
    for (const auto& r : recent) locs.push_back(r.loc);
    auto H = hidden_states(bind, locs);
    auto supervised = ad::slice_rows(H, 0, recent.size() - 1);
    auto probs = head_probs(bind, W_p, supervised);
    std::vector<std::size_t> keep, targets;
    for (std::size_t i = 0; i + 1 < recent.size(); ++i) {
        if (recent[i + 1].loc == 0) continue;
        keep.push_back(i);
        targets.push_back(recent[i + 1].loc);
    }
    if (keep.empty()) throw std::runtime_error("lstm session_loss: all targets are pad");
    auto kept = keep.size() == recent.size() - 1 ? probs : ad::gather_rows(probs, keep);
    return ad::nll_rows(kept, targets);
}

std::vector<double> LstmModel::predict_scores(const std::vector<model::ModelRecord>& prefix) {
    model::Binder bind;
    bind.train = false;
    std::vector<std::size_t> locs;
    for (const auto& r : prefix) locs.push_back(r.loc);
    auto H = hidden_states(bind, locs);
    auto probs = head_probs(bind, W_p, ad::slice_rows(H, prefix.size() - 1, 1));
    return std::vector<double>(probs->data(), probs->data() + probs->numel());
}

Scorer LstmModel::scorer() {
    return [this](std::size_t, const std::vector<model::ModelRecord>&,
                  const std::vector<model::ModelRecord>& prefix) {
        return predict_scores(prefix);
    };
}

train::EpochReport lstm_train_epoch(const std::vector<train::TrainExample>& examples,
                                    LstmModel& m, train::AdamState& state,
                                    const train::TrainConfig& config,
                                    std::mt19937_64& shuffle_rng) {
    if (examples.empty()) throw std::invalid_argument("lstm_train_epoch: empty dataset");
    std::vector<std::size_t> order(examples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    const auto t0 = std::chrono::steady_clock::now();
    train::EpochReport rep;
    double loss_sum = 0.0;
    const auto named = m.named();

    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
        const std::size_t end = std::min(order.size(), start + config.batch_size);
        train::GradStore batch_grads;
        double batch_loss = 0.0;
        const auto n = std::ptrdiff_t(end - start);
#ifdef _OPENMP
#pragma omp parallel num_threads(int(config.workers)) if (config.workers > 1)
#endif
        {
            train::GradStore local;
            double local_loss = 0.0;
#ifdef _OPENMP
#pragma omp for schedule(dynamic) nowait
#endif
            for (std::ptrdiff_t bi = 0; bi < n; ++bi) {
                const auto& ex = examples[order[start + std::size_t(bi)]];
                model::Binder bind;
                auto loss = m.session_loss(bind, ex.recent);
                ad::backward(loss);
                local_loss += loss->data()[0];
                for (const auto& [p, var] : bind.binds)
                    if (var->requires_grad && !var->grad.empty()) local.accumulate(p, var->grad);
            }
#ifdef _OPENMP
#pragma omp critical
#endif
            {
                batch_grads.merge(local);
                batch_loss += local_loss;
            }
        }
        batch_grads.scale_all(1.0 / double(end - start));
        if (!train::adam_step_named(named, batch_grads, state, config, &m.E_l, m.d))
            rep.skipped_steps += 1;
        loss_sum += batch_loss;
        rep.examples += end - start;
    }

    const auto t1 = std::chrono::steady_clock::now();
    rep.wall_seconds = std::chrono::duration<double>(t1 - t0).count();
    rep.mean_loss = loss_sum / double(rep.examples);
    rep.examples_per_sec = double(rep.examples) / rep.wall_seconds;
    return rep;
}

}  // namespace sanmove::eval
