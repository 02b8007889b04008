#pragma once

#include <random>

#include "sanmove/autodiff.hpp"
#include "sanmove/tensor.hpp"

namespace sanmove::model {

// Fixed sinusoidal encoding of a time slot: even dims sin(t/10000^{2i/d}),
// odd dims cos of the same argument. d must be even.
std::vector<double> time_encoding(int slot, std::size_t d);

// Precomputed [48 x d] table of all slot encodings.
Tensor time_encoding_table(std::size_t d);

struct EmbeddingTables {
    Tensor E_u;  // [M x d]
    Tensor E_l;  // [(N+1) x d], row 0 = pad, zero-initialized
    std::size_t d = 0;

    static EmbeddingTables init(std::size_t n_users, std::size_t n_locations, std::size_t d,
                                std::mt19937_64& rng);
};

}  // namespace sanmove::model
