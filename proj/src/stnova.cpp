#include "sanmove/stnova.hpp"

#include <cmath>
#include <stdexcept>

#include "sanmove/long_term.hpp"

namespace sanmove::model {

namespace ad = sanmove::autodiff;

namespace {
constexpr double kEarthRadiusKm = 6371.0;
constexpr double kMinDistKm = 0.1;
constexpr double kMaxInvDist = 10.0;
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

std::vector<double> normalize_exp(std::vector<double> w) {
    double z = 0.0;
    for (auto& v : w) {
        v = std::exp(v);
        z += v;
    }
    for (auto& v : w) v /= z;
    return w;
}
}  // namespace

double haversine_km(double lat1, double lon1, double lat2, double lon2) {
    const double rad = M_PI / 180.0;
    const double dlat = (lat2 - lat1) * rad;
    const double dlon = (lon2 - lon1) * rad;
    const double a = std::sin(dlat / 2) * std::sin(dlat / 2) +
                     std::cos(lat1 * rad) * std::cos(lat2 * rad) *
                         std::sin(dlon / 2) * std::sin(dlon / 2);
    return 2.0 * kEarthRadiusKm * std::asin(std::min(1.0, std::sqrt(a)));
}

std::vector<double> temporal_weights(std::size_t i, const StContext& ctx) {
    const int c = ctx.slots[i];
    std::vector<double> w(i + 1);
    for (std::size_t k = 0; k <= i; ++k) w[k] = ctx.slot_table->at(c, ctx.slots[k]);
    return normalize_exp(std::move(w));
}

std::vector<double> spatial_weights(std::size_t i, const StContext& ctx) {
    const auto [lat_c, lon_c] = ctx.coords[i];
    std::vector<double> w(i + 1);
    for (std::size_t k = 0; k <= i; ++k) {
        const double d = std::max(
            haversine_km(lat_c, lon_c, ctx.coords[k].first, ctx.coords[k].second), kMinDistKm);
        w[k] = std::min(1.0 / d, kMaxInvDist);
    }
    return normalize_exp(std::move(w));
}

std::vector<double> gamma_blend(const std::vector<double>& alpha_t,
                                const std::vector<double>& alpha_s) {
    if (alpha_t.size() != alpha_s.size())
        throw std::invalid_argument("gamma_blend: length mismatch");
    std::vector<double> g(alpha_t.size());
    double mx = kNegInf;
    for (std::size_t k = 0; k < g.size(); ++k) {
        g[k] = alpha_t[k] + alpha_s[k];
        mx = std::max(mx, g[k]);
    }
    double z = 0.0;
    for (auto& v : g) {
        v = std::exp(v - mx);
        z += v;
    }
    for (auto& v : g) v /= z;
    return g;
}

std::vector<double> build_gamma(const StContext& ctx) {
    const std::size_t k = ctx.slots.size();
    std::vector<double> gamma(k * k, 1.0);
    for (std::size_t i = 0; i < k; ++i) {
        const auto row = gamma_blend(temporal_weights(i, ctx), spatial_weights(i, ctx));
        for (std::size_t j = 0; j <= i; ++j) gamma[i * k + j] = row[j];
    }
    return gamma;
}

ad::VarPtr stnova_forward(ModelParams& params, Binder& bind, std::size_t user,
                          const std::vector<ModelRecord>& recent, const ad::VarPtr& h_L,
                          const data::SlotSimilarityTable& slot_table) {
    const std::size_t k = recent.size();
    if (k == 0) throw std::invalid_argument("stnova_forward: empty recent sequence");

    std::vector<std::size_t> locs(k), slot_idx(k);
    StContext ctx;
    ctx.slot_table = &slot_table;
    for (std::size_t i = 0; i < k; ++i) {
        locs[i] = recent[i].loc;
        slot_idx[i] = std::size_t(recent[i].slot);
        ctx.slots.push_back(recent[i].slot);
        ctx.coords.push_back({recent[i].lat, recent[i].lon});
    }

    auto e_l = ad::gather_rows(bind(params.emb.E_l), locs);
    auto e_t = ad::gather_rows(bind.fixed(params.time_table), slot_idx);
    auto e_u = ad::gather_rows(bind(params.emb.E_u), {user});

    // aux = e_u + e_t (+ h_L); integrated embedding e_z = e_l + aux
    auto aux = ad::add(e_t, e_u);
    if (h_L && params.mode != StnovaMode::NO_PERSONAL) aux = ad::add(aux, h_L);
    auto e_z = ad::add(e_l, aux);

    // Causal mask and spatio-temporal logit weights.
    std::vector<double> mask(k * k, 0.0);
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = i + 1; j < k; ++j) mask[i * k + j] = kNegInf;
    std::vector<double> gamma;
    const bool use_gamma = params.mode != StnovaMode::NO_ST;
    if (use_gamma) gamma = build_gamma(ctx);

    const bool invasive = params.mode == StnovaMode::INVASIVE;
    auto hidden_z = e_z;
    auto hidden_v = invasive ? e_z : e_l;
    ad::VarPtr F;
    for (std::size_t l = 0; l < params.n_layers; ++l) {
        const auto& block = params.st_blocks[l];
        auto Q = ad::matmul(hidden_z, bind(block.W_Q));
        auto K = ad::matmul(hidden_z, bind(block.W_K));
        auto V = ad::matmul(hidden_v, bind(block.W_V));
        auto Y = attention(Q, K, V, params.n_heads, use_gamma ? &gamma : nullptr, &mask,
                           params.gamma_post_softmax);
        F = ffn_forward(block, bind, Y);
        hidden_v = F;
        hidden_z = invasive ? F : ad::add(F, aux);
    }
    return F;
}

}  // namespace sanmove::model
