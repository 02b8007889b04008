#pragma once

#include "sanmove/baselines.hpp"

namespace sanmove::eval {

struct BenchConfig {
    std::size_t seq_len = 128;
    std::size_t sessions = 2000;
    std::size_t workers = 4;
    std::size_t d = 64;
    std::size_t n_locations = 100;
    std::size_t n_users = 50;
    std::size_t history_len = 8;
    std::size_t epochs = 5;  // timed epochs after one warm-up
    std::uint64_t seed = 7;
};

struct BenchRow {
    std::string model;
    std::size_t seq_len = 0;
    std::size_t epochs = 0;
    double best_s = 0.0;
    double ratio_vs_lstm = 0.0;
};

struct BenchReport {
    std::vector<BenchRow> rows;
};

// Synthetic random-walk workload; per-epoch wall time is the fastest of the
// timed epochs, warm-up excluded.
BenchReport bench_epoch_time(const BenchConfig& cfg);

void write_bench_csv(const BenchReport& rep, std::ostream& out);

}  // namespace sanmove::eval
