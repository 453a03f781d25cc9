#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "oracles.hpp"
#include "psta/adam.hpp"
#include "psta/model.hpp"

using namespace psta;
using Catch::Approx;

namespace {

ModelConfig tiny_config(std::size_t classes = 3, std::size_t channels = 3) {
    ModelConfig cfg;
    cfg.pse.sample_size = 6;
    cfg.pse.mlp1_dims = {channels, 4, 5};
    cfg.pse.mlp2_out = 6;
    cfg.tae.d_e = 6;
    cfg.tae.d_k = 3;
    cfg.tae.heads = 2;
    cfg.tae.mlp3_dims = {6, 6};
    cfg.decoder_hidden = {5, 4};
    cfg.classes = classes;
    return cfg;
}

ParcelRecord random_parcel(std::uint64_t id, std::uint32_t t_len, std::uint32_t channels,
                           std::uint32_t n, Rng& rng, std::uint32_t label = 0) {
    ParcelRecord rec;
    rec.id = id;
    rec.label = label;
    rec.t_len = t_len;
    rec.channels = channels;
    rec.pixel_count = n;
    rec.days.resize(t_len);
    for (std::uint32_t t = 0; t < t_len; ++t) rec.days[t] = static_cast<std::int32_t>(15 * t);
    rec.geo = GeometricFeatures{0.5, -0.2, 0.1, 0.9};  // standardized-scale stand-ins
    rec.pixels.resize(static_cast<std::size_t>(t_len) * channels * n);
    for (auto& v : rec.pixels) v = static_cast<float>(rng.uniform(-1, 1));
    return rec;
}

// independent cross-entropy: stable log-softmax written from scratch
double ce_oracle(const Tensor<double>& logits, const std::vector<std::uint32_t>& labels) {
    double total = 0;
    const std::size_t K = logits.dim(1);
    for (std::size_t i = 0; i < logits.dim(0); ++i) {
        double mx = logits.at(i, 0);
        for (std::size_t k = 1; k < K; ++k) mx = std::max(mx, logits.at(i, k));
        double lse = 0;
        for (std::size_t k = 0; k < K; ++k) lse += std::exp(logits.at(i, k) - mx);
        total -= logits.at(i, labels[i]) - mx - std::log(lse);
    }
    return total / static_cast<double>(logits.dim(0));
}

}  // namespace

TEST_CASE("focal loss identities") {
    Rng rng(3);
    Tensor<double> logits({4, 5});
    for (std::size_t i = 0; i < logits.size(); ++i) logits.data()[i] = rng.uniform(-2, 2);
    std::vector<std::uint32_t> labels{1, 4, 0, 2};

    SECTION("gamma = 0 equals mean cross-entropy") {
        const double fl = focal_loss(logits, labels, 0.0).item();
        REQUIRE(fl == Approx(ce_oracle(logits, labels)).margin(1e-12));
    }
    SECTION("a certain prediction has zero loss") {
        Tensor<double> sure({1, 3}, {100.0, 0.0, 0.0});
        REQUIRE(focal_loss(sure, {0}, 1.0).item() == Approx(0.0).margin(1e-12));
    }
    SECTION("gamma = 1 at p = 0.5 evaluates to 0.5 ln 2") {
        Tensor<double> even({1, 2}, {0.7, 0.7});  // softmax -> (0.5, 0.5)
        const double v = focal_loss(even, {0}, 1.0).item();
        REQUIRE(v == Approx(0.5 * std::log(2.0)).margin(1e-12));
        REQUIRE(v == Approx(0.346574).margin(1e-6));
    }
    SECTION("loss is nonincreasing in p_true for gamma >= 0") {
        for (double gamma : {0.0, 0.5, 1.0, 2.0}) {
            double prev = std::numeric_limits<double>::infinity();
            for (double p = 0.05; p < 0.999; p += 0.05) {
                Tensor<double> z({1, 2}, {std::log(p), std::log(1.0 - p)});
                const double v = focal_loss(z, {0}, gamma).item();
                REQUIRE(v <= prev + 1e-12);
                prev = v;
            }
        }
    }
    SECTION("gradient matches finite differences for several gammas") {
        logits.set_requires_grad(true);
        for (double gamma : {0.0, 1.0, 2.0}) {
            REQUIRE(oracle::max_rel_grad_error<double>({&logits}, [&](Tape<double>* t) {
                        return focal_loss(logits, labels, gamma, t);
                    }) < 1e-4);
        }
    }
    SECTION("out-of-range label is rejected") {
        REQUIRE_THROWS_AS(focal_loss(logits, {1, 7, 0, 2}, 1.0), std::invalid_argument);
    }
}

TEST_CASE("predict breaks ties toward the lowest index") {
    Tensor<double> zeros({4});
    REQUIRE(predict(zeros) == 0);
    Tensor<double> onehot({5}, {0, 0, 0, 1, 0});
    REQUIRE(predict(onehot) == 3);

    Rng rng(7);
    for (int trial = 0; trial < 100; ++trial) {
        Tensor<double> z({8});
        for (int k = 0; k < 8; ++k) z.at(k) = rng.uniform(-3, 3);
        std::size_t best = 0;  // linear-scan oracle
        for (std::size_t k = 1; k < 8; ++k)
            if (z.at(k) > z.at(best)) best = k;
        REQUIRE(predict(z) == best);
    }
}

TEST_CASE("ms encoder statistics") {
    Rng rng(11);
    SECTION("single-pixel parcel yields an all-zero std half") {
        auto rec = random_parcel(1, 4, 3, 1, rng);
        auto stats = ms_stats<double>(rec);
        REQUIRE(stats.shape() == Shape{4, 6});
        for (std::size_t t = 0; t < 4; ++t)
            for (std::size_t c = 0; c < 3; ++c) {
                REQUIRE(stats.at(t, 3 + c) == 0.0);
                REQUIRE(stats.at(t, c) == Approx(rec.pixel(t, c, 0)));
            }
    }
    SECTION("constant parcel reports the constant as mean") {
        auto rec = random_parcel(2, 3, 3, 7, rng);
        for (auto& v : rec.pixels) v = 0.42f;
        auto stats = ms_stats<double>(rec);
        for (std::size_t t = 0; t < 3; ++t)
            for (std::size_t c = 0; c < 3; ++c) {
                REQUIRE(stats.at(t, c) == Approx(0.42).margin(1e-7));
                REQUIRE(stats.at(t, 3 + c) == 0.0);
            }
    }
    SECTION("encoder output is (T, d_e)") {
        auto rec = random_parcel(3, 5, 3, 9, rng);
        Rng mr(5);
        auto enc = make_mlp<double>({6, 4, 8}, true, mr);
        auto e = ms_encoder_forward(rec, enc, Mode::eval);
        REQUIRE(e.shape() == Shape{5, 8});
    }
}

TEST_CASE("classifier forward") {
    Rng rng(13);
    auto cfg = tiny_config();

    SECTION("logits have K entries and eval mode ignores batch company") {
        Classifier<float> model(cfg, 99);
        std::vector<ParcelRecord> recs;
        for (int i = 0; i < 5; ++i)
            recs.push_back(random_parcel(100 + i, 4, 3, 3 + rng.below(20), rng));
        std::vector<const ParcelRecord*> solo{&recs[2]};
        std::vector<const ParcelRecord*> full;
        for (auto& r : recs) full.push_back(&r);

        auto logits_solo = model.forward(solo, Mode::eval);
        auto logits_full = model.forward(full, Mode::eval);
        REQUIRE(logits_solo.shape() == Shape{1, 3});
        REQUIRE(logits_full.shape() == Shape{5, 3});
        for (std::size_t k = 0; k < 3; ++k)
            REQUIRE(std::abs(logits_solo.at(0, k) - logits_full.at(2, k)) < 1e-6f);
    }
    SECTION("empty batch and channel mismatch are rejected") {
        Classifier<float> model(cfg, 99);
        std::vector<const ParcelRecord*> empty;
        REQUIRE_THROWS_AS(model.forward(empty, Mode::eval), std::invalid_argument);
        auto bad = random_parcel(7, 4, 5, 10, rng);
        std::vector<const ParcelRecord*> batch{&bad};
        REQUIRE_THROWS_AS(model.forward(batch, Mode::eval), std::invalid_argument);
    }
    SECTION("ms variant runs end to end") {
        auto ms_cfg = cfg;
        ms_cfg.variant = ModelConfig::Variant::ms;
        Classifier<float> model(ms_cfg, 5);
        std::vector<ParcelRecord> recs;
        for (int i = 0; i < 3; ++i) recs.push_back(random_parcel(i, 4, 3, 5, rng));
        std::vector<const ParcelRecord*> batch;
        for (auto& r : recs) batch.push_back(&r);
        auto logits = model.forward(batch, Mode::eval);
        REQUIRE(logits.shape() == Shape{3, 3});
    }
}

TEST_CASE("parameter accounting matches the per-layer analytic count") {
    auto lin = [](std::size_t in, std::size_t out) { return in * out + out; };
    auto bn = [](std::size_t f) { return 2 * f; };

    SECTION("reference configuration, mean pooling") {
        ModelConfig cfg;  // defaults: 10->32->64, S=64, d_e=128, H=4, MLP4 128->64->32->20
        cfg.pse.pooling = PSEConfig::Pooling::mean;
        Classifier<float> model(cfg, 1);

        const std::size_t mlp1 = lin(10, 32) + bn(32) + lin(32, 64) + bn(64);
        const std::size_t mlp2 = lin(64 + 4, 128) + bn(128);
        const std::size_t heads = 4 * (lin(128, 64) + lin(32, 32));
        const std::size_t mlp3 = lin(512, 128) + bn(128) + lin(128, 128) + bn(128);
        const std::size_t decoder = lin(128, 64) + bn(64) + lin(64, 32) + bn(32) + lin(32, 20);
        REQUIRE(model.parameter_count() == mlp1 + mlp2 + heads + mlp3 + decoder);
    }
    SECTION("reference configuration, mean++std pooling") {
        ModelConfig cfg;
        Classifier<float> model(cfg, 1);
        const std::size_t mlp1 = lin(10, 32) + bn(32) + lin(32, 64) + bn(64);
        const std::size_t mlp2 = lin(128 + 4, 128) + bn(128);
        const std::size_t heads = 4 * (lin(128, 64) + lin(32, 32));
        const std::size_t mlp3 = lin(512, 128) + bn(128) + lin(128, 128) + bn(128);
        const std::size_t decoder = lin(128, 64) + bn(64) + lin(64, 32) + bn(32) + lin(32, 20);
        REQUIRE(model.parameter_count() == mlp1 + mlp2 + heads + mlp3 + decoder);
    }
    SECTION("no-geometric ablation drops exactly 4 input columns of MLP2") {
        ModelConfig with, without;
        without.pse.include_geometric = false;
        Classifier<float> a(with, 1), b(without, 1);
        REQUIRE(a.parameter_count() - b.parameter_count() == 4 * 128);
    }
}

TEST_CASE("full-model gradient check (PSE + TAE + decoder + focal loss)") {
    Rng rng(17);
    auto cfg = tiny_config();
    Classifier<double> model(cfg, 23);
    std::vector<ParcelRecord> recs;
    recs.push_back(random_parcel(0, 3, 3, 4, rng, 0));
    recs.push_back(random_parcel(1, 3, 3, 9, rng, 2));
    std::vector<const ParcelRecord*> batch{&recs[0], &recs[1]};
    std::vector<std::uint32_t> labels{0, 2};

    auto named = model.trainable_params();
    std::vector<Tensor<double>*> wrt;
    for (auto& nt : named) wrt.push_back(&nt.tensor);

    const double err = oracle::max_rel_grad_error<double>(wrt, [&](Tape<double>* t) {
        Rng sample_rng(777);  // frozen so every finite-difference pass samples identically
        auto logits = model.forward(batch, Mode::train, t, &sample_rng);
        return focal_loss(logits, labels, 1.0, t);
    });
    REQUIRE(err < 1e-4);
}

TEST_CASE("ablation configurations construct and take a training step") {
    Rng rng(19);
    std::vector<ModelConfig> variants;
    auto base = tiny_config();
    variants.push_back(base);
    for (auto master : {TAEConfig::Master::last, TAEConfig::Master::max}) {
        auto v = base;
        v.tae.master = master;
        variants.push_back(v);
    }
    for (std::size_t s : {2, 4}) {
        auto v = base;
        v.pse.sample_size = s;
        variants.push_back(v);
    }
    {
        auto v = base;
        v.pse.include_geometric = false;
        variants.push_back(v);
    }
    {
        auto v = base;
        v.variant = ModelConfig::Variant::ms;
        variants.push_back(v);
    }
    {
        auto v = base;
        v.tae.positional_encoding = false;
        variants.push_back(v);
    }

    std::vector<ParcelRecord> recs;
    for (int i = 0; i < 4; ++i) recs.push_back(random_parcel(i, 3, 3, 6, rng, i % 3));
    std::vector<const ParcelRecord*> batch;
    std::vector<std::uint32_t> labels;
    for (auto& r : recs) {
        batch.push_back(&r);
        labels.push_back(r.label);
    }

    for (auto& cfg : variants) {
        Classifier<float> model(cfg, 7);
        Tape<float> tape;
        Rng sample_rng(3);
        auto logits = model.forward(batch, Mode::train, &tape, &sample_rng);
        auto loss = focal_loss(logits, labels, static_cast<float>(cfg.focal_gamma), &tape);
        backward(loss, tape);
        auto params = model.trainable_params();
        AdamState<float> adam;
        REQUIRE_NOTHROW(adam_step(params, adam));
        model.zero_grads();
    }
}
