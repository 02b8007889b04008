#include "sanmove/embeddings.hpp"

#include <cmath>
#include <stdexcept>

namespace sanmove::model {

std::vector<double> time_encoding(int slot, std::size_t d) {
    if (d % 2 != 0) throw std::invalid_argument("time_encoding: d must be even");
    if (slot < 0 || slot >= 48) throw std::out_of_range("time_encoding: slot out of [0,48)");
    std::vector<double> e(d);
    for (std::size_t i = 0; i * 2 < d; ++i) {
        const double arg = double(slot) / std::pow(10000.0, 2.0 * double(i) / double(d));
        e[2 * i] = std::sin(arg);
        e[2 * i + 1] = std::cos(arg);
    }
    return e;
}

Tensor time_encoding_table(std::size_t d) {
    Tensor t({48, d});
    for (int s = 0; s < 48; ++s) {
        const auto e = time_encoding(s, d);
        std::copy(e.begin(), e.end(), t.data.begin() + std::size_t(s) * d);
    }
    return t;
}

EmbeddingTables EmbeddingTables::init(std::size_t n_users, std::size_t n_locations, std::size_t d,
                                      std::mt19937_64& rng) {
    if (d % 2 != 0) throw std::invalid_argument("EmbeddingTables: d must be even");
    EmbeddingTables t;
    t.d = d;
    t.E_u = Tensor::randn({n_users, d}, rng, 0.02);
    t.E_l = Tensor::randn({n_locations + 1, d}, rng, 0.02);
    std::fill(t.E_l.data.begin(), t.E_l.data.begin() + std::ptrdiff_t(d), 0.0);  // pad row
    return t;
}

}  // namespace sanmove::model
