#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "oracles.hpp"
#include "psta/tae.hpp"

using namespace psta;
using Catch::Approx;

namespace {

TAEConfig small_cfg() {
    TAEConfig cfg;
    cfg.d_e = 6;
    cfg.d_k = 3;
    cfg.heads = 2;
    cfg.mlp3_dims = {5, 4};
    return cfg;
}

template <typename T>
Tensor<T> random_matrix(std::size_t r, std::size_t c, Rng& rng, double lo = -1, double hi = 1) {
    Tensor<T> m({r, c});
    for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(rng.uniform(lo, hi));
    return m;
}

}  // namespace

TEST_CASE("positional encoding matches the direct formula") {
    SECTION("day 0 alternates 1 (odd components) and 0 (even components)") {
        auto p = positional_encoding<double>({0}, 8, 1000.0);
        for (std::size_t i = 1; i <= 8; ++i)
            REQUIRE(p.at(0, i - 1) == (i % 2 == 1 ? 1.0 : 0.0));
    }
    SECTION("spot values at day=100, d_e=128, tau=1000") {
        auto p = positional_encoding<double>({100}, 128, 1000.0);
        // component i=128: exponent 2, so the phase is 100/10^6
        REQUIRE(p.at(0, 127) == Approx(std::sin(100.0 / 1e6)).margin(1e-10));
        // component i=64: exponent 1, no cosine phase
        REQUIRE(p.at(0, 63) == Approx(std::sin(100.0 / 1000.0)).margin(1e-10));
        // component i=1: cosine branch
        REQUIRE(p.at(0, 0) ==
                Approx(std::sin(100.0 / std::pow(1000.0, 2.0 / 128.0) + std::numbers::pi / 2))
                    .margin(1e-10));
    }
    SECTION("equal day stamps give identical encodings") {
        auto p = positional_encoding<double>({7, 7, 12}, 16, 1000.0);
        for (std::size_t i = 0; i < 16; ++i) {
            REQUIRE(p.at(0, i) == p.at(1, i));
        }
    }
    SECTION("tau must be positive") {
        REQUIRE_THROWS_AS(positional_encoding<double>({0}, 8, 0.0), std::invalid_argument);
    }
}

TEST_CASE("keys_queries splits one shared affine map") {
    Rng rng(3);
    SECTION("zero input and zero bias give zero keys and queries") {
        auto fc1 = make_layer<double>(6, 6, false, Init::glorot_uniform, rng);
        Tensor<double> zero({4, 6});
        auto [k, q] = keys_queries(zero, fc1, 3);
        for (std::size_t i = 0; i < k.size(); ++i) REQUIRE(k.data()[i] == Approx(fc1.bias.at(i % 3)));
        fc1.bias = Tensor<double>({6});
        auto [k2, q2] = keys_queries(zero, fc1, 3);
        for (std::size_t i = 0; i < k2.size(); ++i) REQUIRE(k2.data()[i] == 0.0);
        for (std::size_t i = 0; i < q2.size(); ++i) REQUIRE(q2.data()[i] == 0.0);
    }
    SECTION("stacked identity weights reproduce the input slice") {
        LayerParams<double> fc1;
        fc1.weight = Tensor<double>({6, 6});
        for (std::size_t i = 0; i < 3; ++i) {
            fc1.weight.at(i, i) = 1.0;      // key half reads dims 0..2
            fc1.weight.at(3 + i, i) = 1.0;  // query half reads the same slice
        }
        fc1.bias = Tensor<double>({6});
        Rng r2(5);
        auto x = random_matrix<double>(4, 6, r2);
        auto [k, q] = keys_queries(x, fc1, 3);
        for (std::size_t t = 0; t < 4; ++t)
            for (std::size_t i = 0; i < 3; ++i) {
                REQUIRE(k.at(t, i) == Approx(x.at(t, i)));
                REQUIRE(q.at(t, i) == Approx(x.at(t, i)));
            }
    }
    SECTION("gradient of key entries w.r.t. FC1 weights passes finite differences") {
        auto fc1 = make_layer<double>(6, 6, false, Init::glorot_uniform, rng);
        auto x = random_matrix<double>(3, 6, rng);
        auto wk = random_matrix<double>(3, 3, rng);
        auto wq = random_matrix<double>(3, 3, rng);
        REQUIRE(oracle::max_rel_grad_error<double>(
                    {&fc1.weight, &fc1.bias}, [&](Tape<double>* t) {
                        auto [k, q] = keys_queries(x, fc1, 3, t);
                        return sum_all(add(mul(k, wk, t), mul(q, wq, t), t), t);
                    }) < 1e-4);
    }
    SECTION("wrong FC1 width is rejected") {
        auto fc1 = make_layer<double>(6, 5, false, Init::glorot_uniform, rng);
        Tensor<double> x({4, 6});
        REQUIRE_THROWS_AS(keys_queries(x, fc1, 3), ShapeError);
    }
}

TEST_CASE("master_query aggregation modes") {
    Rng rng(9);
    auto fc2 = make_layer<double>(3, 3, false, Init::glorot_uniform, rng);

    SECTION("a single date makes all modes agree") {
        auto q = random_matrix<double>(1, 3, rng);
        auto m1 = master_query(q, TAEConfig::Master::mean, fc2);
        auto m2 = master_query(q, TAEConfig::Master::max, fc2);
        auto m3 = master_query(q, TAEConfig::Master::last, fc2);
        for (std::size_t i = 0; i < 3; ++i) {
            REQUIRE(m1.at(i) == Approx(m2.at(i)).margin(1e-12));
            REQUIRE(m1.at(i) == Approx(m3.at(i)).margin(1e-12));
        }
    }
    SECTION("constant queries collapse to FC2(c) in every mode") {
        Tensor<double> q({4, 3});
        for (std::size_t t = 0; t < 4; ++t) {
            q.at(t, 0) = 0.2;
            q.at(t, 1) = -0.4;
            q.at(t, 2) = 0.9;
        }
        Tensor<double> c({1, 3}, {0.2, -0.4, 0.9});
        auto expect = linear(c, fc2);
        for (auto mode :
             {TAEConfig::Master::mean, TAEConfig::Master::max, TAEConfig::Master::last}) {
            auto m = master_query(q, mode, fc2);
            for (std::size_t i = 0; i < 3; ++i)
                REQUIRE(m.at(i) == Approx(expect.at(0, i)).margin(1e-9));
        }
    }
    SECTION("mean mode with identity FC2 averages the queries") {
        LayerParams<double> id;
        id.weight = Tensor<double>({2, 2});
        id.weight.at(0, 0) = id.weight.at(1, 1) = 1.0;
        id.bias = Tensor<double>({2});
        Tensor<double> q({2, 2}, {1, 0, 3, 2});
        auto m = master_query(q, TAEConfig::Master::mean, id);
        REQUIRE(m.at(0) == Approx(2.0));
        REQUIRE(m.at(1) == Approx(1.0));
    }
    SECTION("unknown mode is rejected") {
        auto q = random_matrix<double>(2, 3, rng);
        REQUIRE_THROWS_AS(master_query(q, static_cast<TAEConfig::Master>(99), fc2),
                          std::invalid_argument);
    }
}

TEST_CASE("attention weights and outputs") {
    Rng rng(13);
    SECTION("a single date receives weight 1 and passes its value through") {
        Tensor<double> qhat({3}, {0.5, -1, 2});
        auto k = random_matrix<double>(1, 3, rng);
        auto v = random_matrix<double>(1, 6, rng);
        auto [o, a] = attention(qhat, k, v);
        REQUIRE(a.at(0) == Approx(1.0));
        for (std::size_t i = 0; i < 6; ++i) REQUIRE(o.at(i) == Approx(v.at(0, i)));
    }
    SECTION("identical keys give uniform weights and the temporal mean") {
        Tensor<double> qhat({3}, {1, 2, 3});
        Tensor<double> k({4, 3});
        for (std::size_t t = 0; t < 4; ++t) {
            k.at(t, 0) = 0.3;
            k.at(t, 1) = -0.2;
            k.at(t, 2) = 0.7;
        }
        auto v = random_matrix<double>(4, 5, rng);
        auto [o, a] = attention(qhat, k, v);
        for (std::size_t t = 0; t < 4; ++t) REQUIRE(a.at(t) == Approx(0.25).margin(1e-12));
        for (std::size_t i = 0; i < 5; ++i) {
            double mean = 0;
            for (std::size_t t = 0; t < 4; ++t) mean += v.at(t, i) / 4;
            REQUIRE(o.at(i) == Approx(mean).margin(1e-12));
        }
    }
    SECTION("a log-9 logit gap yields weights 0.9 / 0.1") {
        const double dk = 4;
        Tensor<double> qhat({4}, {std::sqrt(dk) * std::log(9.0), 0, 0, 0});
        Tensor<double> k({2, 4}, {1, 0, 0, 0, 0, 0, 0, 0});
        auto v = random_matrix<double>(2, 3, rng);
        auto [o, a] = attention(qhat, k, v);
        REQUIRE(a.at(0) == Approx(0.9).margin(1e-6));
        REQUIRE(a.at(1) == Approx(0.1).margin(1e-6));
    }
    SECTION("weights are a distribution for random inputs") {
        for (int trial = 0; trial < 100; ++trial) {
            const std::size_t t_len = 1 + rng.below(8);
            Tensor<double> qhat({3});
            for (int i = 0; i < 3; ++i) qhat.at(i) = rng.uniform(-3, 3);
            auto k = random_matrix<double>(t_len, 3, rng, -3, 3);
            auto v = random_matrix<double>(t_len, 4, rng);
            auto [o, a] = attention(qhat, k, v);
            double sum = 0;
            for (std::size_t t = 0; t < t_len; ++t) {
                REQUIRE(a.at(t) >= 0.0);
                REQUIRE(a.at(t) <= 1.0);
                sum += a.at(t);
            }
            REQUIRE(std::abs(sum - 1.0) < 1e-6);
        }
    }
}

TEST_CASE("doubling d_k with zero-padded keys scales logits by 1/sqrt(2)") {
    Rng rng(17);
    auto k4 = random_matrix<double>(5, 4, rng);
    Tensor<double> q4({1, 4});
    for (int i = 0; i < 4; ++i) q4.at(0, i) = rng.uniform(-1, 1);

    Tensor<double> k8({5, 8});
    Tensor<double> q8({1, 8});
    for (std::size_t t = 0; t < 5; ++t)
        for (std::size_t i = 0; i < 4; ++i) k8.at(t, i) = k4.at(t, i);
    for (std::size_t i = 0; i < 4; ++i) q8.at(0, i) = q4.at(0, i);

    const std::vector<std::size_t> offsets{0, 5};
    auto l4 = scale(group_rowdot(k4, q4, offsets), 1.0 / std::sqrt(4.0));
    auto l8 = scale(group_rowdot(k8, q8, offsets), 1.0 / std::sqrt(8.0));
    for (std::size_t t = 0; t < 5; ++t)
        REQUIRE(l8.at(t) == Approx(l4.at(t) / std::sqrt(2.0)).margin(1e-12));
}

TEST_CASE("identical head parameters produce identical head outputs") {
    Rng rng(19);
    auto cfg = small_cfg();
    auto fc1 = make_layer<double>(cfg.d_e, 2 * cfg.d_k, false, Init::glorot_uniform, rng);
    auto fc2 = make_layer<double>(cfg.d_k, cfg.d_k, false, Init::glorot_uniform, rng);
    auto epp = random_matrix<double>(4, cfg.d_e, rng);

    std::vector<Tensor<double>> outs;
    for (int h = 0; h < 3; ++h) {  // same params used as three "heads"
        auto [k, q] = keys_queries(epp, fc1, cfg.d_k);
        auto qhat = master_query(q, TAEConfig::Master::mean, fc2);
        auto [o, a] = attention(qhat, k, epp);
        outs.push_back(o);
    }
    for (int h = 1; h < 3; ++h)
        for (std::size_t i = 0; i < outs[0].size(); ++i)
            REQUIRE(outs[h].at(i) == outs[0].at(i));
}

TEST_CASE("tae_forward") {
    Rng rng(23);
    auto cfg = small_cfg();

    SECTION("output shape and finiteness, trace is a distribution per head") {
        auto params = TaeParams<double>::init(cfg, rng);
        auto e = random_matrix<double>(5, cfg.d_e, rng);
        auto [o, trace] = tae_forward(e, {0, 10, 20, 31, 45}, params, cfg, Mode::eval);
        REQUIRE(o.shape() == Shape{4});
        REQUIRE(trace.head_weights.size() == cfg.heads);
        for (const auto& w : trace.head_weights) {
            REQUIRE(w.size() == 5);
            double sum = 0;
            for (double x : w) {
                REQUIRE(x >= 0.0);
                REQUIRE(x <= 1.0);
                sum += x;
            }
            REQUIRE(std::abs(sum - 1.0) < 1e-6);
        }
    }
    SECTION("without positional encoding the output is permutation invariant") {
        auto cfg_nope = cfg;
        cfg_nope.positional_encoding = false;
        auto params = TaeParams<double>::init(cfg_nope, rng);
        auto e = random_matrix<double>(6, cfg.d_e, rng);
        std::vector<std::int32_t> days{0, 5, 11, 18, 22, 30};
        auto [o1, t1] = tae_forward(e, days, params, cfg_nope, Mode::eval);

        std::vector<std::size_t> perm{3, 0, 5, 1, 4, 2};
        Tensor<double> pe({6, cfg.d_e});
        std::vector<std::int32_t> pdays(6);
        for (std::size_t t = 0; t < 6; ++t) {
            pdays[t] = days[perm[t]];
            for (std::size_t i = 0; i < cfg.d_e; ++i) pe.at(t, i) = e.at(perm[t], i);
        }
        auto [o2, t2] = tae_forward(pe, pdays, params, cfg_nope, Mode::eval);
        for (std::size_t i = 0; i < o1.size(); ++i)
            REQUIRE(o1.at(i) == Approx(o2.at(i)).margin(1e-9));
    }
    SECTION("with positional encoding, temporal order changes the output") {
        auto params = TaeParams<double>::init(cfg, rng);
        auto e = random_matrix<double>(6, cfg.d_e, rng);
        std::vector<std::int32_t> days{0, 15, 31, 44, 62, 75};
        auto [o1, t1] = tae_forward(e, days, params, cfg, Mode::eval);

        Tensor<double> re({6, cfg.d_e});
        for (std::size_t t = 0; t < 6; ++t)
            for (std::size_t i = 0; i < cfg.d_e; ++i) re.at(t, i) = e.at(5 - t, i);
        auto [o2, t2] = tae_forward(re, days, params, cfg, Mode::eval);
        double max_diff = 0;
        for (std::size_t i = 0; i < o1.size(); ++i)
            max_diff = std::max(max_diff, std::abs(o1.at(i) - o2.at(i)));
        REQUIRE(max_diff > 1e-6);
    }
    SECTION("sequence length does not change the output dimension") {
        auto params = TaeParams<double>::init(cfg, rng);
        auto e5 = random_matrix<double>(5, cfg.d_e, rng);
        auto e24 = random_matrix<double>(24, cfg.d_e, rng);
        std::vector<std::int32_t> d5{0, 1, 2, 3, 4}, d24(24);
        for (int t = 0; t < 24; ++t) d24[t] = t;
        auto [o5, tr5] = tae_forward(e5, d5, params, cfg, Mode::eval);
        auto [o24, tr24] = tae_forward(e24, d24, params, cfg, Mode::eval);
        REQUIRE(o5.shape() == o24.shape());
    }
    SECTION("a mixed-length batch equals the same parcels run individually") {
        auto params = TaeParams<double>::init(cfg, rng);
        auto ea = random_matrix<double>(3, cfg.d_e, rng);
        auto eb = random_matrix<double>(5, cfg.d_e, rng);
        std::vector<std::int32_t> da{0, 10, 20}, db{0, 8, 16, 30, 41};

        Tensor<double> stacked({8, cfg.d_e});
        std::vector<std::int32_t> days(8);
        for (std::size_t t = 0; t < 3; ++t) {
            days[t] = da[t];
            for (std::size_t i = 0; i < cfg.d_e; ++i) stacked.at(t, i) = ea.at(t, i);
        }
        for (std::size_t t = 0; t < 5; ++t) {
            days[3 + t] = db[t];
            for (std::size_t i = 0; i < cfg.d_e; ++i) stacked.at(3 + t, i) = eb.at(t, i);
        }
        auto batched = tae_forward_rows(stacked, {0, 3, 8}, days, params, cfg, Mode::eval);
        auto [oa, ta] = tae_forward(ea, da, params, cfg, Mode::eval);
        auto [ob, tb] = tae_forward(eb, db, params, cfg, Mode::eval);
        for (std::size_t i = 0; i < 4; ++i) {
            REQUIRE(batched.at(0, i) == Approx(oa.at(i)).margin(1e-12));
            REQUIRE(batched.at(1, i) == Approx(ob.at(i)).margin(1e-12));
        }
    }
    SECTION("full gradient check through the encoder") {
        auto params = TaeParams<double>::init(cfg, rng);
        auto e = random_matrix<double>(7, cfg.d_e, rng);
        e.set_requires_grad(true);
        std::vector<std::int32_t> days{0, 3, 9, 14, 20, 26, 33};
        std::vector<NamedTensor<double>> named;
        params.collect_params(named);
        std::vector<Tensor<double>*> wrt{&e};
        for (auto& nt : named) wrt.push_back(&nt.tensor);
        auto w = random_matrix<double>(2, 4, rng);
        const std::vector<std::size_t> offsets{0, 4, 7};
        REQUIRE(oracle::max_rel_grad_error<double>(wrt, [&](Tape<double>* t) {
                    auto o = tae_forward_rows(e, offsets, days, params, cfg, Mode::train, t);
                    return sum_all(mul(o, w, t), t);
                }) < 1e-4);
    }
    SECTION("dimension mismatch is rejected") {
        auto params = TaeParams<double>::init(cfg, rng);
        auto e = random_matrix<double>(4, cfg.d_e + 1, rng);
        REQUIRE_THROWS_AS(tae_forward(e, {0, 1, 2, 3}, params, cfg, Mode::eval), ShapeError);
    }
}
