#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "sanmove/bench.hpp"
#include "sanmove/metrics.hpp"
#include "sanmove/trainer.hpp"

namespace fs = std::filesystem;
using namespace sanmove;

namespace {

data::Dataset load_dataset_dir(const std::string& dir) {
    std::ifstream in(fs::path(dir) / "dataset.txt");
    if (!in) throw std::runtime_error("cannot open " + dir + "/dataset.txt");
    return data::read_dataset(in);
}

int cmd_preprocess(const std::string& input, const std::string& output) {
    std::ifstream in(input);
    if (!in) {
        std::cerr << "error: cannot open input file: " << input << "\n";
        return 2;
    }
    fs::create_directories(output);
    std::vector<data::Reject> rejects;
    data::PreprocessReport report;
    auto ds = data::preprocess(in, &rejects, &report);

    std::ofstream dsout(fs::path(output) / "dataset.txt");
    data::write_dataset(ds, dsout);
    std::ofstream stats(fs::path(output) / "stats.csv");
    data::write_stats_csv(report, stats);
    std::ofstream rej(fs::path(output) / "rejects.txt");
    data::write_rejects(rejects, rej);

    std::cout << "raw: " << report.raw.users << " users, " << report.raw.records << " records ("
              << report.rejects << " rejected lines)\n"
              << "filtered: " << report.filtered.users << " users, " << report.filtered.records
              << " records, " << report.filtered.sessions << " sessions\n"
              << "split: " << report.train_sessions << " train / " << report.test_sessions
              << " test sessions\n";
    return 0;
}

int cmd_stats(const std::string& input) {
    std::ifstream in(input);
    if (!in) {
        std::cerr << "error: cannot open input file: " << input << "\n";
        return 2;
    }
    auto parsed = data::parse_checkins(in);
    auto st = data::stats_of_records(parsed.records);
    std::cout << "users," << st.users << "\n"
              << "records," << st.records << "\n"
              << "distinct_locations," << st.distinct_locations << "\n"
              << "span_days," << st.span_seconds / 86400 << "\n"
              << "rejected_lines," << parsed.rejects.size() << "\n";
    return 0;
}

int cmd_train(const std::string& data_dir, const std::string& config_path,
              const std::string& checkpoint, const std::string& mode_override) {
    auto ds = load_dataset_dir(data_dir);
    train::TrainConfig cfg;
    if (!config_path.empty()) cfg = train::load_config(config_path);
    if (!mode_override.empty()) cfg.mode = model::mode_from_string(mode_override);

    auto params = model::ModelParams::init(ds.vocab.n_users(), ds.vocab.n_locations(), cfg.d,
                                           cfg.n_layers, cfg.n_heads, cfg.mode, cfg.seed);
    params.history_cap = cfg.history_cap;
    auto result = train::train(ds, params, cfg);
    for (std::size_t e = 0; e < result.epochs.size(); ++e) {
        const auto& r = result.epochs[e];
        std::cout << "epoch " << (e + 1) << ": loss " << r.mean_loss << ", " << r.wall_seconds
                  << " s, " << r.examples_per_sec << " ex/s\n";
    }
    train::save_checkpoint(params, checkpoint);
    std::cout << "saved " << checkpoint << "\n";
    return 0;
}

int cmd_eval(const std::string& data_dir, const std::string& checkpoint,
             const std::string& out_path) {
    auto ds = load_dataset_dir(data_dir);
    auto params = train::load_checkpoint(checkpoint);
    auto metrics = eval::evaluate_model(params, ds);
    std::ofstream out(out_path);
    eval::write_metrics_csv("sanmove", model::mode_to_string(params.mode), metrics, out);
    for (const auto& [k, r] : metrics.recall_at)
        std::cout << "recall@" << k << " " << r << "  ndcg@" << k << " " << metrics.ndcg_at.at(k)
                  << "\n";
    return 0;
}

int cmd_bench(std::size_t seq_len, std::size_t sessions, std::size_t workers,
              const std::string& out_path) {
    eval::BenchConfig cfg;
    cfg.seq_len = seq_len;
    cfg.sessions = sessions;
    cfg.workers = workers;
    auto rep = eval::bench_epoch_time(cfg);
    std::ofstream out(out_path);
    eval::write_bench_csv(rep, out);
    for (const auto& r : rep.rows)
        std::cout << r.model << ": best " << r.best_s << " s/epoch (ratio vs lstm "
                  << r.ratio_vs_lstm << ")\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"SanMove next-location predictor"};
    app.require_subcommand(1);

    std::string input, output, data_dir, config_path, checkpoint, mode, out_path;
    std::size_t seq_len = 128, sessions = 2000, workers = 4;

    auto* pre = app.add_subcommand("preprocess", "Parse and preprocess a raw check-in file");
    pre->add_option("--input", input)->required();
    pre->add_option("--output", output)->required();

    auto* st = app.add_subcommand("stats", "Report statistics of a raw check-in file");
    st->add_option("--input", input)->required();

    auto* tr = app.add_subcommand("train", "Train on a preprocessed dataset");
    tr->add_option("--data", data_dir)->required();
    tr->add_option("--config", config_path);
    tr->add_option("--checkpoint", checkpoint)->required();
    tr->add_option("--mode", mode)->check(CLI::IsMember({"full", "nova", "no-p", "no-st"}));

    auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on the test split");
    ev->add_option("--data", data_dir)->required();
    ev->add_option("--checkpoint", checkpoint)->required();
    ev->add_option("--out", out_path)->default_val("metrics.csv");

    auto* be = app.add_subcommand("bench", "Attention-vs-recurrence epoch timing");
    be->add_option("--seq-len", seq_len);
    be->add_option("--sessions", sessions);
    be->add_option("--workers", workers);
    be->add_option("--out", out_path)->default_val("bench.csv");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (pre->parsed()) return cmd_preprocess(input, output);
        if (st->parsed()) return cmd_stats(input);
        if (tr->parsed()) return cmd_train(data_dir, config_path, checkpoint, mode);
        if (ev->parsed()) return cmd_eval(data_dir, checkpoint, out_path);
        if (be->parsed()) return cmd_bench(seq_len, sessions, workers, out_path);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
