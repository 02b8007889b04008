#pragma once

#include "sanmove/model.hpp"

namespace sanmove::model {

double haversine_km(double lat1, double lon1, double lat2, double lon2);

struct StContext {
    std::vector<int> slots;
    std::vector<std::pair<double, double>> coords;
    const data::SlotSimilarityTable* slot_table = nullptr;
};

// Normalized exp(lambda) weights over key positions 0..i.
std::vector<double> temporal_weights(std::size_t i, const StContext& ctx);
// Normalized exp(1/d) weights over key positions 0..i, with distance clamped
// to >= 0.1 km so the exponent stays <= 10.
std::vector<double> spatial_weights(std::size_t i, const StContext& ctx);
// Gamma row: softmax(alpha_t + alpha_s).
std::vector<double> gamma_blend(const std::vector<double>& alpha_t,
                                const std::vector<double>& alpha_s);

// Full [k x k] gamma matrix (row i valid for columns <= i; columns > i are 1
// and get masked away by the causal mask).
std::vector<double> build_gamma(const StContext& ctx);

// Per-position STNOVA outputs [k x d]. Q/K come from the integrated
// embedding, V from the pure location embedding (INVASIVE mode uses the
// integrated embedding for V too). h_L may be null.
autodiff::VarPtr stnova_forward(ModelParams& params, Binder& bind, std::size_t user,
                                const std::vector<ModelRecord>& recent,
                                const autodiff::VarPtr& h_L,
                                const data::SlotSimilarityTable& slot_table);

}  // namespace sanmove::model
