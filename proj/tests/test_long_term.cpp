#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "sanmove/long_term.hpp"

using namespace sanmove;
namespace ad = sanmove::autodiff;
using model::Binder;
using model::ModelParams;

namespace {

Tensor make(std::vector<std::size_t> shape, std::vector<double> data) {
    Tensor t(std::move(shape));
    t.data = std::move(data);
    return t;
}

Tensor eye(std::size_t n) {
    Tensor t = Tensor::zeros({n, n});
    for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0;
    return t;
}

std::vector<model::ModelRecord> recs_of(const std::vector<std::size_t>& locs) {
    std::vector<model::ModelRecord> out;
    for (auto l : locs) out.push_back({l, int(l % 48), 40.0, -74.0});
    return out;
}

}  // namespace

TEST_CASE("attention closed forms") {
    std::mt19937_64 rng(1);
    const std::size_t d = 4;

    SUBCASE("single key is a pass-through") {
        auto Q = ad::constant(Tensor::randn({3, d}, rng, 2.0));
        auto K = ad::constant(Tensor::randn({1, d}, rng, 1.0));
        Tensor vrow = Tensor::randn({1, d}, rng, 1.0);
        auto out = model::attention(Q, K, ad::constant(vrow), 1);
        for (std::size_t i = 0; i < 3; ++i)
            for (std::size_t j = 0; j < d; ++j)
                CHECK(out->data()[i * d + j] == doctest::Approx(vrow.at(0, j)).epsilon(1e-15));
    }

    SUBCASE("zero logits give the column mean of V") {
        auto Q = ad::constant(Tensor::zeros({2, d}));
        auto K = ad::constant(Tensor::randn({5, d}, rng, 1.0));
        Tensor V = Tensor::randn({5, d}, rng, 1.0);
        auto out = model::attention(Q, K, ad::constant(V), 1);
        for (std::size_t j = 0; j < d; ++j) {
            double mean = 0;
            for (std::size_t r = 0; r < 5; ++r) mean += V.at(r, j);
            mean /= 5.0;
            CHECK(out->data()[j] == doctest::Approx(mean).epsilon(1e-12));
        }
    }

    SUBCASE("dominant logit saturates to that value row") {
        // Build K so q.k1/sqrt(d) exceeds the others by >= 50.
        Tensor Q = Tensor::zeros({1, d});
        Q.at(0, 0) = 1.0;
        Tensor K = Tensor::zeros({3, d});
        K.at(1, 0) = 50.0 * std::sqrt(double(d));
        Tensor V = Tensor::randn({3, d}, rng, 1.0);
        auto out = model::attention(ad::constant(Q), ad::constant(K), ad::constant(V), 1);
        for (std::size_t j = 0; j < d; ++j)
            CHECK(std::abs(out->data()[j] - V.at(1, j)) < 1e-9);
    }

    SUBCASE("attention rows are row-stochastic within 1e-12") {
        // With V = I the output rows are exactly the attention weights.
        const std::size_t k = 4;
        auto Q = ad::constant(Tensor::randn({3, k}, rng, 1.5));
        auto K = ad::constant(Tensor::randn({k, k}, rng, 1.5));
        auto out = model::attention(Q, K, ad::constant(eye(k)), 1);
        for (std::size_t i = 0; i < 3; ++i) {
            double s = 0;
            for (std::size_t j = 0; j < k; ++j) {
                CHECK(out->data()[i * k + j] >= 0.0);
                s += out->data()[i * k + j];
            }
            CHECK(std::abs(s - 1.0) < 1e-12);
        }
    }

    SUBCASE("masked key gets weight exactly 0") {
        const std::size_t k = 4;
        auto Q = ad::constant(Tensor::randn({2, k}, rng, 1.0));
        auto K = ad::constant(Tensor::randn({k, k}, rng, 1.0));
        std::vector<double> mask(2 * k, 0.0);
        mask[0 * k + 2] = -std::numeric_limits<double>::infinity();
        auto out = model::attention(Q, K, ad::constant(eye(k)), 1, nullptr, &mask);
        CHECK(out->data()[0 * k + 2] == 0.0);

        std::vector<double> all(2 * k, -std::numeric_limits<double>::infinity());
        CHECK_THROWS(model::attention(Q, K, ad::constant(eye(k)), 1, nullptr, &all));
    }

    SUBCASE("multi-head equals per-slice single-head attention") {
        const std::size_t dd = 6, heads = 2, dh = dd / heads;
        Tensor Qt = Tensor::randn({3, dd}, rng, 1.0);
        Tensor Kt = Tensor::randn({4, dd}, rng, 1.0);
        Tensor Vt = Tensor::randn({4, dd}, rng, 1.0);
        auto multi = model::attention(ad::constant(Qt), ad::constant(Kt), ad::constant(Vt), heads);
        auto slice = [&](const Tensor& t, std::size_t h) {
            Tensor s({t.shape[0], dh});
            for (std::size_t i = 0; i < t.shape[0]; ++i)
                for (std::size_t j = 0; j < dh; ++j) s.at(i, j) = t.at(i, h * dh + j);
            return s;
        };
        for (std::size_t h = 0; h < heads; ++h) {
            auto one = model::attention(ad::constant(slice(Qt, h)), ad::constant(slice(Kt, h)),
                                        ad::constant(slice(Vt, h)), 1);
            for (std::size_t i = 0; i < 3; ++i)
                for (std::size_t j = 0; j < dh; ++j)
                    CHECK(multi->data()[i * dd + h * dh + j] == one->data()[i * dh + j]);
        }
    }
}

TEST_CASE("ffn closed forms and oracle") {
    const std::size_t d = 3;
    model::AttentionBlock block;
    block.W1 = eye(d);
    block.b1 = Tensor::zeros({d});
    block.W2 = eye(d);
    block.b2 = Tensor::zeros({d});

    Binder bind;
    auto nonneg = ad::constant(make({2, d}, {1, 0, 2, 3, 4, 5}));
    auto out = model::ffn_forward(block, bind, nonneg);
    for (std::size_t i = 0; i < 6; ++i) CHECK(out->data()[i] == nonneg->data()[i]);

    std::mt19937_64 rng(3);
    block.b2 = Tensor::randn({d}, rng, 1.0);
    Binder bind2;
    auto zero = ad::constant(Tensor::zeros({2, d}));
    auto out2 = model::ffn_forward(block, bind2, zero);
    for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t j = 0; j < d; ++j) CHECK(out2->data()[i * d + j] == block.b2.data[j]);

    // random params vs an independent re-implementation
    block.W1 = Tensor::randn({d, d}, rng, 1.0);
    block.b1 = Tensor::randn({d}, rng, 1.0);
    block.W2 = Tensor::randn({d, d}, rng, 1.0);
    block.b2 = Tensor::randn({d}, rng, 1.0);
    Tensor Y = Tensor::randn({4, d}, rng, 1.0);
    Binder bind3;
    auto out3 = model::ffn_forward(block, bind3, ad::constant(Y));
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < d; ++j) {
            double expect = block.b2.data[j];
            for (std::size_t p = 0; p < d; ++p) {
                double h = block.b1.data[p];
                for (std::size_t q = 0; q < d; ++q) h += Y.at(i, q) * block.W1.at(q, p);
                expect += std::max(0.0, h) * block.W2.at(p, j);
            }
            CHECK(out3->data()[i * d + j] == doctest::Approx(expect).epsilon(1e-12));
        }
}

TEST_CASE("build_queries") {
    auto params = ModelParams::init(2, 4, 8, 1, 1, model::StnovaMode::FULL, 5);
    // zero user embedding: rows equal the pure time encodings
    std::fill(params.emb.E_u.data.begin(), params.emb.E_u.data.end(), 0.0);
    Binder bind;
    auto q = model::build_queries(params, bind, 0, {3, 3, 7});
    for (std::size_t j = 0; j < 8; ++j) {
        CHECK(q->data()[0 * 8 + j] == params.time_table.at(3, j));
        CHECK(q->data()[1 * 8 + j] == q->data()[0 * 8 + j]);  // identical slots, identical rows
        CHECK(q->data()[2 * 8 + j] == params.time_table.at(7, j));
    }
}

TEST_CASE("long_term_forward") {
    const std::size_t d = 8;

    SUBCASE("singleton history is an attention pass-through") {
        auto params = ModelParams::init(2, 4, d, 1, 1, model::StnovaMode::FULL, 7);
        Binder bind;
        auto h = model::long_term_forward(params, bind, 0, recs_of({2}));
        // expected: ffn(e_l[2] . W_V)
        Binder oracle_bind;
        auto v = ad::matmul(ad::gather_rows(oracle_bind(params.emb.E_l), {2}),
                            oracle_bind(params.long_blocks[0].W_V));
        auto expect = model::ffn_forward(params.long_blocks[0], oracle_bind, v);
        for (std::size_t j = 0; j < d; ++j)
            CHECK(h->data()[j] == doctest::Approx(expect->data()[j]).epsilon(1e-12));
    }

    SUBCASE("permutation invariance of h_L") {
        auto params = ModelParams::init(2, 6, d, 2, 2, model::StnovaMode::FULL, 9);
        std::vector<std::size_t> locs = {1, 2, 3, 4, 5, 2, 3};
        Binder b1;
        auto h1 = model::long_term_forward(params, b1, 1, recs_of(locs));
        std::mt19937_64 rng(4);
        std::shuffle(locs.begin(), locs.end(), rng);
        Binder b2;
        auto h2 = model::long_term_forward(params, b2, 1, recs_of(locs));
        for (std::size_t j = 0; j < d; ++j)
            CHECK(std::abs(h1->data()[j] - h2->data()[j]) < 1e-9);
    }

    SUBCASE("different users give different h_L") {
        auto params = ModelParams::init(2, 6, d, 1, 1, model::StnovaMode::FULL, 11);
        Binder b1, b2;
        auto h1 = model::long_term_forward(params, b1, 0, recs_of({1, 2, 3}));
        auto h2 = model::long_term_forward(params, b2, 1, recs_of({1, 2, 3}));
        double diff = 0;
        for (std::size_t j = 0; j < d; ++j) diff += std::abs(h1->data()[j] - h2->data()[j]);
        CHECK(diff > 0.0);
    }

    SUBCASE("history cap keeps the most recent records") {
        auto params = ModelParams::init(2, 6, d, 1, 1, model::StnovaMode::FULL, 13);
        params.history_cap = 3;
        Binder b1, b2;
        auto h1 = model::long_term_forward(params, b1, 0, recs_of({5, 5, 1, 2, 3}));
        auto h2 = model::long_term_forward(params, b2, 0, recs_of({1, 2, 3}));
        for (std::size_t j = 0; j < d; ++j)
            CHECK(h1->data()[j] == doctest::Approx(h2->data()[j]).epsilon(1e-15));
    }

    SUBCASE("empty history is an error") {
        auto params = ModelParams::init(2, 6, d, 1, 1, model::StnovaMode::FULL, 15);
        Binder bind;
        CHECK_THROWS(model::long_term_forward(params, bind, 0, {}));
    }
}

TEST_CASE("grad_check through long_term_forward") {
    auto params = ModelParams::init(2, 5, 4, 1, 1, model::StnovaMode::FULL, 21);
    const auto history = recs_of({1, 2, 3, 4});

    auto check_tensor = [&](Tensor& t) {
        auto f = [&](const ad::VarPtr& v) {
            Binder bind;
            bind.binds.emplace(&t, v);
            auto h = model::long_term_forward(params, bind, 0, history);
            std::mt19937_64 rng(6);
            std::uniform_real_distribution<double> dist(0.2, 1.0);
            std::vector<double> w(h->numel());
            for (auto& x : w) x = dist(rng);
            return ad::sum_all(ad::mul_const(h, w));
        };
        return ad::grad_check(f, t);
    };
    CHECK(check_tensor(params.emb.E_u) < 1e-5);
    CHECK(check_tensor(params.emb.E_l) < 1e-5);
    CHECK(check_tensor(params.long_blocks[0].W_Q) < 1e-5);
    CHECK(check_tensor(params.long_blocks[0].W_V) < 1e-5);
    CHECK(check_tensor(params.long_blocks[0].W1) < 1e-5);
}
