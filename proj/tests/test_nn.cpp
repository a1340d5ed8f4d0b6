#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <functional>

#include "facetopo/cells.hpp"
#include "facetopo/errors.hpp"
#include "facetopo/nn.hpp"
#include "facetopo/rng.hpp"

using namespace facetopo;
using namespace facetopo::nn;

namespace {

Vec random_vec(int n, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Vec v(static_cast<std::size_t>(n));
    for (auto& x : v) x = rng.uniform(lo, hi);
    return v;
}

Vec random_distribution(int k, Rng& rng) {
    Vec p(static_cast<std::size_t>(k));
    double sum = 0.0;
    for (auto& x : p) {
        x = rng.uniform(0.01, 1.0);
        sum += x;
    }
    for (auto& x : p) x /= sum;
    return p;
}

// Central finite differences over every block in the store against an
// analytic gradient filled in by `backward`.
double max_rel_error(ParamStore& store, const std::function<double()>& forward,
                     const std::function<void()>& backward, double h = 1e-4) {
    store.zero_grad();
    backward();
    double worst = 0.0;
    for (auto& blk : store.blocks()) {
        for (std::size_t k = 0; k < blk.size(); ++k) {
            double keep = blk.value[k];
            blk.value[k] = keep + h;
            double up = forward();
            blk.value[k] = keep - h;
            double down = forward();
            blk.value[k] = keep;
            double numeric = (up - down) / (2.0 * h);
            double analytic = blk.grad[k];
            double denom = std::max({std::fabs(numeric), std::fabs(analytic), 1e-6});
            worst = std::max(worst, std::fabs(numeric - analytic) / denom);
        }
    }
    return worst;
}

// independent scalar-by-scalar peephole LSTM cell, one step, hidden size 1
struct ScalarLstmRef {
    double wi, ui, bi, pi, wf, uf, bf, pf, wg, ug, bg, wo, uo, bo, po;
    double step(double x) const {
        double c_prev = 0.0, h_prev = 0.0;
        auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
        double i = sig(wi * x + ui * h_prev + pi * c_prev + bi);
        double f = sig(wf * x + uf * h_prev + pf * c_prev + bf);
        double g = std::tanh(wg * x + ug * h_prev + bg);
        double c = f * c_prev + i * g;
        double o = sig(wo * x + uo * h_prev + po * c + bo);
        return o * std::tanh(c);
    }
};

}  // namespace

TEST_CASE("softmax: sums to one, shift invariant, stable") {
    Rng rng(3);
    for (int rep = 0; rep < 50; ++rep) {
        auto logits = random_vec(1 + rng.uniform_int(8), rng, -30.0, 30.0);
        auto p = softmax(logits);
        double sum = 0.0;
        for (double x : p) sum += x;
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
        auto shifted = logits;
        for (auto& x : shifted) x += 13.5;
        auto p2 = softmax(shifted);
        for (std::size_t i = 0; i < p.size(); ++i)
            CHECK(std::fabs(p[i] - p2[i]) < 1e-12);
    }
    auto extreme = softmax({1000.0, -1000.0});
    CHECK(std::isfinite(extreme[0]));
    CHECK(extreme[0] == doctest::Approx(1.0));
}

TEST_CASE("focal loss frozen values") {
    // gamma=0, alpha=1 at p=0.5 reduces to cross-entropy ln 2
    CHECK(focal_loss({0.5, 0.5}, 0, 0.0, 1.0) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    // gamma=2, alpha=0.25 at p=0.5: 0.25 * 0.25 * ln 2
    double expected = 0.25 * 0.25 * std::log(2.0);
    CHECK(std::fabs(focal_loss({0.5, 0.5}, 0, 2.0, 0.25) - expected) < 1e-12);
}

TEST_CASE("focal loss equals NLL at gamma=0 alpha=1") {
    Rng rng(17);
    for (int rep = 0; rep < 300; ++rep) {
        int k = 2 + rng.uniform_int(6);
        auto p = random_distribution(k, rng);
        int target = rng.uniform_int(k);
        double nll = -std::log(p[static_cast<std::size_t>(target)]);
        CHECK(std::fabs(focal_loss(p, target, 0.0, 1.0) - nll) < 1e-12);
    }
}

TEST_CASE("focal loss decreases to zero as p_b -> 1") {
    double prev = focal_loss({0.5, 0.5}, 0, 2.0, 0.25);
    for (double p = 0.6; p < 0.999; p += 0.05) {
        double cur = focal_loss({p, 1.0 - p}, 0, 2.0, 0.25);
        CHECK(cur < prev);
        prev = cur;
    }
    CHECK(focal_loss({1.0, 0.0}, 0, 2.0, 0.25) == 0.0);
    // saturated wrong prediction stays finite thanks to the log floor
    CHECK(std::isfinite(focal_loss({0.0, 1.0}, 0, 2.0, 0.25)));
}

TEST_CASE("focal loss validates its input") {
    CHECK_THROWS_AS(focal_loss({0.9, 0.3}, 0, 2.0, 0.25), validation_error);
    CHECK_THROWS_AS(focal_loss({1.2, -0.2}, 0, 2.0, 0.25), validation_error);
    CHECK_THROWS_AS(focal_loss({0.5, 0.5}, 2, 2.0, 0.25), validation_error);
}

TEST_CASE("softmax+focal gradient matches finite differences, incl. gamma=0") {
    Rng rng(5);
    for (double gamma : {0.0, 2.0}) {
        Vec logits = random_vec(4, rng, -2.0, 2.0);
        int target = 1;
        auto loss_at = [&](const Vec& l) { return focal_loss(softmax(l), target, gamma, 0.25); };
        auto probs = softmax(logits);
        auto grad = softmax_focal_backward(probs, target, gamma, 0.25);
        for (std::size_t j = 0; j < logits.size(); ++j) {
            Vec up = logits, down = logits;
            up[j] += 1e-6;
            down[j] -= 1e-6;
            double numeric = (loss_at(up) - loss_at(down)) / 2e-6;
            CHECK(grad[j] == doctest::Approx(numeric).epsilon(1e-4));
        }
    }
    // saturated target probability keeps a finite gradient
    auto g = softmax_focal_backward({1.0, 0.0, 0.0}, 0, 2.0, 0.25);
    for (double v : g) CHECK(std::isfinite(v));
}

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
    ParamStore store;
    store.add("w", 3, 2);
    store.init(1);
    auto before = store.block("w").value;
    store.adam_step({}, 1);
    CHECK(store.block("w").value == before);
}

TEST_CASE("adam first step with unit gradient moves by ~lr") {
    ParamStore store;
    auto& b = store.add("x", 1, 1);
    b.value[0] = 0.3;
    b.grad[0] = 1.0;
    AdamConfig cfg;
    store.adam_step(cfg, 1);
    // bias-corrected mhat = vhat = 1 on the first step
    CHECK(std::fabs((0.3 - b.value[0]) - cfg.lr / (1.0 + cfg.eps)) < 1e-12);
}

TEST_CASE("adam drives x^2 toward zero") {
    ParamStore store;
    auto& b = store.add("x", 1, 1);
    b.value[0] = 1.0;
    AdamConfig cfg;
    double early_avg = 0.0, late_avg = 0.0;
    for (long t = 1; t <= 200; ++t) {
        b.grad[0] = 2.0 * b.value[0];
        store.adam_step(cfg, t);
        if (t <= 50) early_avg += std::fabs(b.value[0]);
        if (t > 150) late_avg += std::fabs(b.value[0]);
    }
    CHECK(late_avg / 50.0 < early_avg / 50.0);
    CHECK(std::fabs(b.value[0]) < 1.0);
}

TEST_CASE("adam names the offending block on non-finite gradients") {
    ParamStore store;
    store.add("stream.Wq", 2, 2);
    store.block("stream.Wq").grad[1] = std::nan("");
    try {
        store.adam_step({}, 1);
        FAIL("expected update_error");
    } catch (const update_error& e) {
        CHECK(std::string(e.what()).find("stream.Wq") != std::string::npos);
    }
}

TEST_CASE("lstm: zero params and inputs give zero hidden states") {
    ParamStore store;
    LstmSpec spec{3, 4, true};
    lstm_register(store, "cell", spec);
    std::vector<Vec> inputs(5, Vec(3, 0.0));
    std::vector<Vec> hidden;
    lstm_forward(store, "cell", spec, inputs, hidden, nullptr);
    REQUIRE(hidden.size() == 5);
    for (const auto& h : hidden)
        for (double v : h) CHECK(v == 0.0);
}

TEST_CASE("lstm single step matches the scalar reference") {
    ParamStore store;
    LstmSpec spec{1, 1, true};
    lstm_register(store, "cell", spec);
    Rng rng(21);
    ScalarLstmRef ref{};
    auto set = [&](const char* name, double& slot) {
        double v = rng.uniform(-1.0, 1.0);
        store.block(std::string("cell.") + name).value[0] = v;
        slot = v;
    };
    set("Wi", ref.wi); set("Ui", ref.ui); set("bi", ref.bi); set("pi", ref.pi);
    set("Wf", ref.wf); set("Uf", ref.uf); set("bf", ref.bf); set("pf", ref.pf);
    set("Wg", ref.wg); set("Ug", ref.ug); set("bg", ref.bg);
    set("Wo", ref.wo); set("Uo", ref.uo); set("bo", ref.bo); set("po", ref.po);

    for (int rep = 0; rep < 20; ++rep) {
        double x = rng.uniform(-2.0, 2.0);
        std::vector<Vec> hidden;
        lstm_forward(store, "cell", spec, {{x}}, hidden, nullptr);
        CHECK(hidden[0][0] == doctest::Approx(ref.step(x)).epsilon(1e-14));
    }
}

TEST_CASE("lstm sequence length matches traversal length") {
    ParamStore store;
    LstmSpec spec{2, 8, true};
    lstm_register(store, "cell", spec);
    store.init(7);
    std::vector<Vec> inputs(17, Vec(2, 0.25));  // 2n-1 for n=9
    std::vector<Vec> hidden;
    lstm_forward(store, "cell", spec, inputs, hidden, nullptr);
    CHECK(hidden.size() == 17);
    for (const auto& h : hidden) {
        CHECK(h.size() == 8);
        for (double v : h) CHECK(std::isfinite(v));
    }
}

TEST_CASE("attention basics") {
    ParamStore store;
    attention_register(store, "attn", 3);
    store.init(9);
    Rng rng(2);

    // identical hidden states -> uniform weights, context equals h_1
    std::vector<Vec> same(6, random_vec(3, rng));
    Vec ctx, delta;
    attention_forward(store, "attn", same, ctx, delta, nullptr);
    for (double d : delta) CHECK(d == doctest::Approx(1.0 / 6.0).epsilon(1e-12));
    for (int k = 0; k < 3; ++k) CHECK(ctx[static_cast<std::size_t>(k)] == doctest::Approx(same[0][static_cast<std::size_t>(k)]).epsilon(1e-12));

    // T = 1
    std::vector<Vec> one{random_vec(3, rng)};
    attention_forward(store, "attn", one, ctx, delta, nullptr);
    CHECK(delta.size() == 1);
    CHECK(delta[0] == 1.0);
    CHECK(ctx == one[0]);
}

TEST_CASE("attention recomputation oracle and convexity") {
    ParamStore store;
    attention_register(store, "attn", 4);
    store.init(77);
    Rng rng(8);
    std::vector<Vec> hs;
    for (int t = 0; t < 5; ++t) hs.push_back(random_vec(4, rng, -3.0, 3.0));
    Vec ctx, delta;
    attention_forward(store, "attn", hs, ctx, delta, nullptr);

    double sum = 0.0;
    for (double d : delta) {
        CHECK(d > 0.0);
        CHECK(d < 1.0);
        sum += d;
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));

    for (int k = 0; k < 4; ++k) {
        double direct = 0.0, lo = 1e300, hi = -1e300;
        for (int t = 0; t < 5; ++t) {
            direct += delta[static_cast<std::size_t>(t)] * hs[static_cast<std::size_t>(t)][static_cast<std::size_t>(k)];
            lo = std::min(lo, hs[static_cast<std::size_t>(t)][static_cast<std::size_t>(k)]);
            hi = std::max(hi, hs[static_cast<std::size_t>(t)][static_cast<std::size_t>(k)]);
        }
        CHECK(std::fabs(ctx[static_cast<std::size_t>(k)] - direct) < 1e-12);
        CHECK(ctx[static_cast<std::size_t>(k)] >= lo - 1e-12);
        CHECK(ctx[static_cast<std::size_t>(k)] <= hi + 1e-12);
    }
}

// Gradient checks: a small stack (cell -> attention -> weighted sum) exercised
// per cell type; the full two-stream model is checked in test_model.
TEST_CASE("finite differences through cell + attention stacks") {
    for (auto type : {CellType::lstm, CellType::gru, CellType::bilstm, CellType::bigru}) {
        CAPTURE(cell_type_to_string(type));
        ParamStore store;
        CellSpec spec;
        spec.type = type;
        spec.input_dim = 3;
        spec.hidden_dim = 4;
        cell_register(store, "cell", spec);
        attention_register(store, "attn", spec.output_dim());
        store.init(mix_seed({55, static_cast<std::uint64_t>(type)}));

        Rng rng(31);
        std::vector<Vec> inputs;
        for (int t = 0; t < 6; ++t) inputs.push_back(random_vec(3, rng));
        Vec probe = random_vec(spec.output_dim(), rng);

        auto forward = [&]() {
            std::vector<Vec> hidden;
            cell_forward(store, "cell", spec, inputs, hidden, nullptr);
            Vec ctx, delta;
            attention_forward(store, "attn", hidden, ctx, delta, nullptr);
            double loss = 0.0;
            for (std::size_t k = 0; k < ctx.size(); ++k) loss += probe[k] * ctx[k] + 0.5 * ctx[k] * ctx[k];
            return loss;
        };
        auto backward = [&]() {
            std::vector<Vec> hidden;
            CellCache cache;
            cell_forward(store, "cell", spec, inputs, hidden, &cache);
            Vec ctx, delta;
            AttnCache acache;
            attention_forward(store, "attn", hidden, ctx, delta, &acache);
            Vec d_ctx(ctx.size());
            for (std::size_t k = 0; k < ctx.size(); ++k) d_ctx[k] = probe[k] + ctx[k];
            std::vector<Vec> d_hidden;
            attention_backward(store, "attn", hidden, acache, d_ctx, d_hidden);
            cell_backward(store, "cell", spec, cache, d_hidden);
        };
        CHECK(max_rel_error(store, forward, backward) < 1e-4);
    }
}

TEST_CASE("finite differences through dense layers") {
    ParamStore store;
    dense_register(store, "lin", 3, 5);
    dense_register(store, "act", 2, 3);
    store.init(12);
    Rng rng(4);
    Vec x = random_vec(5, rng);

    auto forward = [&]() {
        Vec mid, out;
        dense_forward(store, "lin", x, mid, false);
        dense_forward(store, "act", mid, out, true);
        double loss = 0.0;
        for (double v : out) loss += v * v;
        return loss;
    };
    auto backward = [&]() {
        Vec mid, out;
        dense_forward(store, "lin", x, mid, false);
        dense_forward(store, "act", mid, out, true);
        Vec dout(out.size());
        for (std::size_t k = 0; k < out.size(); ++k) dout[k] = 2.0 * out[k];
        Vec dmid, dx;
        dense_backward(store, "act", mid, out, dout, true, dmid);
        dense_backward(store, "lin", x, mid, dmid, false, dx);
    };
    CHECK(max_rel_error(store, forward, backward) < 1e-4);
}

TEST_CASE("forward outputs stay finite for inputs in [-10, 10]") {
    ParamStore store;
    CellSpec spec{CellType::lstm, 2, 6, true};
    cell_register(store, "cell", spec);
    attention_register(store, "attn", 6);
    store.init(3);
    Rng rng(44);
    for (int rep = 0; rep < 10; ++rep) {
        std::vector<Vec> inputs;
        for (int t = 0; t < 9; ++t) inputs.push_back(random_vec(2, rng, -10.0, 10.0));
        std::vector<Vec> hidden;
        cell_forward(store, "cell", spec, inputs, hidden, nullptr);
        Vec ctx, delta;
        attention_forward(store, "attn", hidden, ctx, delta, nullptr);
        for (double v : ctx) CHECK(std::isfinite(v));
        for (double d : delta) CHECK(std::isfinite(d));
    }
}

TEST_CASE("checkpoint round trip is byte identical") {
    ParamStore store;
    dense_register(store, "head", 4, 7);
    lstm_register(store, "cell", {3, 5, true});
    store.init(2718);
    nlohmann::ordered_json meta;
    meta["purpose"] = "test";
    meta["n"] = 12;
    auto text = store.to_checkpoint(meta);
    auto [restored, meta_back] = ParamStore::from_checkpoint(text);
    CHECK(meta_back["n"] == 12);
    CHECK(restored.to_checkpoint(meta) == text);
    CHECK(restored.block("cell.Wi").value == store.block("cell.Wi").value);

    CHECK_THROWS_AS(ParamStore::from_checkpoint(text.substr(0, 40)), parse_error);
    CHECK_THROWS_AS(ParamStore::from_checkpoint("{\"format\":\"other\",\"blocks\":{}}"), parse_error);
}

TEST_CASE("init: forget bias one, matrices bounded by glorot radius") {
    ParamStore store;
    lstm_register(store, "cell", {4, 6, true});
    store.init(5);
    for (double v : store.block("cell.bf").value) CHECK(v == 1.0);
    for (double v : store.block("cell.bi").value) CHECK(v == 0.0);
    const auto& W = store.block("cell.Wi");
    double r = std::sqrt(6.0 / (W.rows + W.cols));
    bool any_nonzero = false;
    for (double v : W.value) {
        CHECK(std::fabs(v) <= r);
        any_nonzero |= v != 0.0;
    }
    CHECK(any_nonzero);
}
