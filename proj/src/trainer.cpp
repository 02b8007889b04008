#include "sanmove/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace sanmove::train {

void TrainConfig::validate() const {
    if (lr < 0 || weight_decay < 0 || clip_norm <= 0)
        throw std::invalid_argument("config: lr/weight_decay/clip_norm out of range");
    if (d == 0 || d % 2 != 0) throw std::invalid_argument("config: d must be positive and even");
    if (n_layers < 1 || n_layers > 3) throw std::invalid_argument("config: n_layers in [1,3]");
    if (n_heads < 1 || n_heads > 8) throw std::invalid_argument("config: n_heads in [1,8]");
    if (d % n_heads != 0) throw std::invalid_argument("config: d must be divisible by n_heads");
    if (epochs == 0 || batch_size == 0 || workers == 0)
        throw std::invalid_argument("config: epochs/batch_size/workers must be positive");
}

TrainConfig parse_config(std::istream& in) {
    TrainConfig c;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        std::istringstream ss(line);
        std::string key, eq, value;
        if (!(ss >> key)) continue;
        if (!(ss >> eq >> value) || eq != "=")
            throw std::invalid_argument("config line " + std::to_string(line_no) +
                                        ": expected 'key = value'");
        if (key == "lr") c.lr = std::stod(value);
        else if (key == "weight_decay") c.weight_decay = std::stod(value);
        else if (key == "d") c.d = std::stoul(value);
        else if (key == "n_layers") c.n_layers = std::stoul(value);
        else if (key == "n_heads") c.n_heads = std::stoul(value);
        else if (key == "mode") c.mode = model::mode_from_string(value);
        else if (key == "clip_norm") c.clip_norm = std::stod(value);
        else if (key == "epochs") c.epochs = std::stoul(value);
        else if (key == "batch_size") c.batch_size = std::stoul(value);
        else if (key == "seed") c.seed = std::stoull(value);
        else if (key == "workers") c.workers = std::stoul(value);
        else if (key == "history_cap") c.history_cap = std::stoul(value);
        else if (key == "lr_patience") c.lr_patience = std::stoul(value);
        else
            throw std::invalid_argument("config line " + std::to_string(line_no) +
                                        ": unknown key '" + key + "'");
    }
    c.validate();
    return c;
}

TrainConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file: " + path);
    return parse_config(in);
}

void GradStore::accumulate(const Tensor* p, const std::vector<double>& g) {
    auto& dst = grads[p];
    if (dst.empty()) dst.assign(g.size(), 0.0);
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
}

void GradStore::merge(const GradStore& other) {
    for (const auto& [p, g] : other.grads) accumulate(p, g);
}

double GradStore::global_norm() const {
    double s = 0.0;
    for (const auto& [p, g] : grads)
        for (double v : g) s += v * v;
    return std::sqrt(s);
}

void GradStore::scale_all(double s) {
    for (auto& [p, g] : grads)
        for (double& v : g) v *= s;
}

bool adam_step_named(const std::vector<std::pair<std::string, Tensor*>>& named,
                     GradStore& grads, AdamState& state, const TrainConfig& config,
                     const Tensor* decay_skip, std::size_t decay_skip_prefix) {
    const double norm = grads.global_norm();
    if (!std::isfinite(norm)) return false;
    if (norm > config.clip_norm) grads.scale_all(config.clip_norm / norm);

    constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    state.t += 1;
    const double bc1 = 1.0 - std::pow(beta1, double(state.t));
    const double bc2 = 1.0 - std::pow(beta2, double(state.t));

    for (const auto& [name, p] : named) {
        const bool is_bias = name.ends_with(".b1") || name.ends_with(".b2") || name == "b";
        auto it = grads.grads.find(p);
        const std::vector<double>* g = it == grads.grads.end() ? nullptr : &it->second;
        auto& m = state.m[p];
        auto& v = state.v[p];
        if (m.empty()) m.assign(p->numel(), 0.0);
        if (v.empty()) v.assign(p->numel(), 0.0);
        const std::size_t no_decay_end = (p == decay_skip) ? decay_skip_prefix : 0;
        for (std::size_t i = 0; i < p->numel(); ++i) {
            const double gi = g ? (*g)[i] : 0.0;
            m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
            v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
            const double mh = m[i] / bc1;
            const double vh = v[i] / bc2;
            p->data[i] -= config.lr * mh / (std::sqrt(vh) + eps);
            if (!is_bias && i >= no_decay_end)
                p->data[i] -= config.lr * config.weight_decay * p->data[i];
        }
    }
    return true;
}

bool adam_step(model::ModelParams& params, GradStore& grads, AdamState& state,
               const TrainConfig& config) {
    return adam_step_named(params.named(), grads, state, config, &params.emb.E_l, params.d);
}

std::vector<TrainExample> build_train_examples(const data::Dataset& ds) {
    // Group train sessions by user, preserving chronological order.
    std::unordered_map<std::size_t, std::vector<const data::EncSession*>> by_user;
    std::vector<std::size_t> user_order;
    for (const auto& s : ds.train) {
        if (!by_user.count(s.user)) user_order.push_back(s.user);
        by_user[s.user].push_back(&s);
    }
    std::sort(user_order.begin(), user_order.end());
    std::vector<TrainExample> out;
    for (auto u : user_order) {
        const auto& sessions = by_user[u];
        std::vector<model::ModelRecord> pool;
        for (std::size_t j = 0; j < sessions.size(); ++j) {
            auto recs = model::to_model_records(ds, sessions[j]->recs);
            if (j > 0 && recs.size() >= 2) out.push_back({u, pool, recs});
            pool.insert(pool.end(), recs.begin(), recs.end());
        }
    }
    return out;
}

EpochReport train_epoch(const std::vector<TrainExample>& examples, model::ModelParams& params,
                        const data::SlotSimilarityTable& slot_table, AdamState& state,
                        const TrainConfig& config, std::mt19937_64& shuffle_rng) {
    if (examples.empty()) throw std::invalid_argument("train_epoch: empty dataset");
    std::vector<std::size_t> order(examples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    const auto t0 = std::chrono::steady_clock::now();
    EpochReport rep;
    double loss_sum = 0.0;

    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
        const std::size_t end = std::min(order.size(), start + config.batch_size);
        GradStore batch_grads;
        double batch_loss = 0.0;
        const auto n = std::ptrdiff_t(end - start);
#ifdef _OPENMP
#pragma omp parallel num_threads(int(config.workers)) if (config.workers > 1)
#endif
        {
            GradStore local;
            double local_loss = 0.0;
#ifdef _OPENMP
#pragma omp for schedule(dynamic) nowait
#endif
            for (std::ptrdiff_t b = 0; b < n; ++b) {
                const auto& ex = examples[order[start + std::size_t(b)]];
                model::Binder bind;
                auto loss = model::session_loss(params, bind, ex.user, ex.history, ex.recent,
                                                slot_table);
                autodiff::backward(loss);
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
        if (!adam_step(params, batch_grads, state, config)) rep.skipped_steps += 1;
        loss_sum += batch_loss;
        rep.examples += end - start;
    }

    const auto t1 = std::chrono::steady_clock::now();
    rep.wall_seconds = std::chrono::duration<double>(t1 - t0).count();
    rep.mean_loss = loss_sum / double(rep.examples);
    rep.examples_per_sec = double(rep.examples) / rep.wall_seconds;
    return rep;
}

TrainResult train(const data::Dataset& ds, model::ModelParams& params, const TrainConfig& config) {
    auto examples = build_train_examples(ds);
    if (examples.empty()) throw std::runtime_error("train: no usable training examples");
    AdamState state;
    std::mt19937_64 shuffle_rng(config.seed);
    TrainConfig cfg = config;
    TrainResult result;
    double best_loss = std::numeric_limits<double>::infinity();
    std::size_t stall = 0;
    for (std::size_t e = 0; e < config.epochs; ++e) {
        auto rep = train_epoch(examples, params, ds.slot_table, state, cfg, shuffle_rng);
        result.epochs.push_back(rep);
        // Halve the learning rate when training loss plateaus.
        if (rep.mean_loss < best_loss - 1e-6) {
            best_loss = rep.mean_loss;
            stall = 0;
        } else if (++stall >= cfg.lr_patience) {
            cfg.lr *= 0.5;
            stall = 0;
        }
    }
    result.final_lr = cfg.lr;
    return result;
}

namespace {

void write_u64(std::ostream& out, std::uint64_t v) {
    unsigned char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = (unsigned char)((v >> (8 * i)) & 0xff);
    out.write(reinterpret_cast<const char*>(buf), 8);
}

std::uint64_t read_u64(std::istream& in) {
    unsigned char buf[8];
    in.read(reinterpret_cast<char*>(buf), 8);
    if (in.gcount() != 8)
        throw CheckpointError(CheckpointErrorKind::Truncated, "checkpoint truncated (u64)");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(buf[i]) << (8 * i);
    return v;
}

void write_f64s(std::ostream& out, const std::vector<double>& d) {
    static_assert(sizeof(double) == 8);
    for (double x : d) {
        std::uint64_t bits;
        std::memcpy(&bits, &x, 8);
        write_u64(out, bits);
    }
}

void read_f64s(std::istream& in, std::vector<double>& d) {
    for (auto& x : d) {
        const std::uint64_t bits = read_u64(in);
        std::memcpy(&x, &bits, 8);
    }
}

void write_tensor(std::ostream& out, const std::string& name, const Tensor& t) {
    write_u64(out, name.size());
    out.write(name.data(), std::streamsize(name.size()));
    write_u64(out, t.shape.size());
    for (auto e : t.shape) write_u64(out, e);
    write_f64s(out, t.data);
}

constexpr char kMagic[] = "SANMOVE1";

}  // namespace

void save_checkpoint(model::ModelParams& params, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw CheckpointError(CheckpointErrorKind::Io, "cannot open for write: " + path);
    out.write(kMagic, 8);
    Tensor meta({4});
    meta.data = {double(params.d), double(params.n_layers), double(params.n_heads),
                 double(int(params.mode))};
    write_tensor(out, "meta", meta);
    for (auto& [name, t] : params.named()) write_tensor(out, name, *t);
    if (!out) throw CheckpointError(CheckpointErrorKind::Io, "write failed: " + path);
}

model::ModelParams load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError(CheckpointErrorKind::Io, "cannot open: " + path);
    char magic[8];
    in.read(magic, 8);
    if (in.gcount() != 8 || std::memcmp(magic, kMagic, 8) != 0)
        throw CheckpointError(CheckpointErrorKind::BadMagic, "bad checkpoint magic");

    auto read_named = [&](std::string& name, Tensor& t) {
        const auto nlen = read_u64(in);
        name.resize(nlen);
        in.read(name.data(), std::streamsize(nlen));
        if (std::size_t(in.gcount()) != nlen)
            throw CheckpointError(CheckpointErrorKind::Truncated, "checkpoint truncated (name)");
        const auto rank = read_u64(in);
        std::vector<std::size_t> shape(rank);
        for (auto& e : shape) e = std::size_t(read_u64(in));
        t = Tensor(shape);
        read_f64s(in, t.data);
    };

    std::string name;
    Tensor meta;
    read_named(name, meta);
    if (name != "meta" || meta.numel() != 4)
        throw CheckpointError(CheckpointErrorKind::UnknownTensor, "expected meta tensor, got " + name);
    const auto d = std::size_t(meta.data[0]);
    const auto n_layers = std::size_t(meta.data[1]);
    const auto n_heads = std::size_t(meta.data[2]);
    const auto mode = model::StnovaMode(int(meta.data[3]));

    // Sizes come from the stored tensors themselves; init with placeholders.
    auto params = model::ModelParams::init(1, 1, d, n_layers, n_heads, mode, 0);
    std::unordered_map<std::string, Tensor*> by_name;
    for (auto& [n, t] : params.named()) by_name[n] = t;
    std::size_t loaded = 0;
    while (loaded < by_name.size()) {
        Tensor t;
        read_named(name, t);
        auto it = by_name.find(name);
        if (it == by_name.end())
            throw CheckpointError(CheckpointErrorKind::UnknownTensor, "unknown tensor: " + name);
        *it->second = std::move(t);
        ++loaded;
    }
    return params;
}

}  // namespace sanmove::train
