#include "sanmove/bench.hpp"

#include <algorithm>
#include <ostream>
#include <random>

namespace sanmove::eval {

namespace {

struct Workload {
    std::vector<train::TrainExample> examples;
    data::SlotSimilarityTable slot_table;
};

Workload make_workload(const BenchConfig& cfg) {
    std::mt19937_64 rng(cfg.seed);
    std::uniform_int_distribution<std::size_t> loc(1, cfg.n_locations);
    std::uniform_int_distribution<std::size_t> user(0, cfg.n_users - 1);
    std::uniform_int_distribution<int> slot(0, 47);
    std::uniform_real_distribution<double> lat(40.0, 40.2), lon(-74.1, -73.9);
    std::uniform_real_distribution<double> sim(0.0, 1.0);

    Workload w;
    for (int c = 0; c < 48; ++c)
        for (int j = c; j < 48; ++j) {
            const double v = c == j ? 1.0 : sim(rng);
            w.slot_table.lambda[std::size_t(c) * 48 + std::size_t(j)] = v;
            w.slot_table.lambda[std::size_t(j) * 48 + std::size_t(c)] = v;
        }

    auto random_records = [&](std::size_t n) {
        std::vector<model::ModelRecord> recs;
        for (std::size_t i = 0; i < n; ++i)
            recs.push_back({loc(rng), slot(rng), lat(rng), lon(rng)});
        return recs;
    };
    for (std::size_t s = 0; s < cfg.sessions; ++s)
        w.examples.push_back(
            {user(rng), random_records(cfg.history_len), random_records(cfg.seq_len)});
    return w;
}

double best_of(const std::vector<double>& v) {
    return *std::min_element(v.begin(), v.end());
}

}  // namespace

BenchReport bench_epoch_time(const BenchConfig& cfg) {
    auto w = make_workload(cfg);

    train::TrainConfig tc;
    tc.d = cfg.d;
    tc.workers = cfg.workers;
    tc.batch_size = std::max<std::size_t>(cfg.workers, 1);
    tc.seed = cfg.seed;
    tc.epochs = cfg.epochs;

    auto params = model::ModelParams::init(cfg.n_users, cfg.n_locations, cfg.d, tc.n_layers,
                                           tc.n_heads, model::StnovaMode::FULL, cfg.seed);
    params.history_cap = cfg.history_len;
    train::AdamState san_state;
    std::mt19937_64 san_rng(cfg.seed);
    auto lstm = LstmModel::init(cfg.n_locations, cfg.d, cfg.seed);
    train::AdamState lstm_state;
    std::mt19937_64 lstm_rng(cfg.seed);

    // Epochs for the two models are interleaved so transient machine load
    // hits both; per-model time is the fastest epoch, which is the best
    // estimate of the true cost on a noisy shared box. First pair warms up.
    std::vector<double> san_times, lstm_times;
    for (std::size_t e = 0; e <= cfg.epochs; ++e) {
        auto rs = train::train_epoch(w.examples, params, w.slot_table, san_state, tc, san_rng);
        auto rl = lstm_train_epoch(w.examples, lstm, lstm_state, tc, lstm_rng);
        if (e > 0) {
            san_times.push_back(rs.wall_seconds);
            lstm_times.push_back(rl.wall_seconds);
        }
    }
    BenchReport rep;
    rep.rows.push_back({"sanmove", cfg.seq_len, cfg.epochs, best_of(san_times), 0.0});
    rep.rows.push_back({"lstm", cfg.seq_len, cfg.epochs, best_of(lstm_times), 1.0});
    rep.rows[0].ratio_vs_lstm = rep.rows[0].best_s / rep.rows[1].best_s;
    return rep;
}

void write_bench_csv(const BenchReport& rep, std::ostream& out) {
    out << "model,seq_len,epochs,best_s,ratio_vs_lstm\n";
    for (const auto& r : rep.rows)
        out << r.model << "," << r.seq_len << "," << r.epochs << "," << r.best_s << ","
            << r.ratio_vs_lstm << "\n";
}

}  // namespace sanmove::eval
