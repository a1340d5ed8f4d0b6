#include "facetopo/cells.hpp"

#include <algorithm>
#include <cmath>

#include "facetopo/errors.hpp"

namespace facetopo::nn {

namespace {

// acc += W x
void matvec_acc(const ParamBlock& W, const Vec& x, Vec& acc) {
    for (int r = 0; r < W.rows; ++r) {
        const double* wr = &W.value[static_cast<std::size_t>(r) * W.cols];
        double s = 0.0;
        for (int c = 0; c < W.cols; ++c) s += wr[c] * x[static_cast<std::size_t>(c)];
        acc[static_cast<std::size_t>(r)] += s;
    }
}

// acc += W^T d
void matvec_t_acc(const ParamBlock& W, const Vec& d, Vec& acc) {
    for (int r = 0; r < W.rows; ++r) {
        const double* wr = &W.value[static_cast<std::size_t>(r) * W.cols];
        double dr = d[static_cast<std::size_t>(r)];
        for (int c = 0; c < W.cols; ++c) acc[static_cast<std::size_t>(c)] += wr[c] * dr;
    }
}

// dW += d x^T
void outer_acc(ParamBlock& W, const Vec& d, const Vec& x) {
    for (int r = 0; r < W.rows; ++r) {
        double* wg = &W.grad[static_cast<std::size_t>(r) * W.cols];
        double dr = d[static_cast<std::size_t>(r)];
        for (int c = 0; c < W.cols; ++c) wg[c] += dr * x[static_cast<std::size_t>(c)];
    }
}

void vec_acc(Vec& acc, const Vec& d) {
    for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += d[k];
}

}  // namespace

void lstm_register(ParamStore& store, const std::string& prefix, const LstmSpec& spec) {
    int h = spec.hidden_dim, in = spec.input_dim;
    for (const char* g : {"i", "f", "g", "o"}) {
        store.add(prefix + ".W" + g, h, in);
        store.add(prefix + ".U" + g, h, h);
        store.add(prefix + ".b" + g, h, 1);
    }
    if (spec.peephole) {
        store.add(prefix + ".pi", h, 1);
        store.add(prefix + ".pf", h, 1);
        store.add(prefix + ".po", h, 1);
    }
}

void lstm_forward(const ParamStore& store, const std::string& prefix, const LstmSpec& spec,
                  const std::vector<Vec>& inputs, std::vector<Vec>& hidden, LstmCache* cache) {
    if (inputs.empty()) throw validation_error("lstm_forward: empty input sequence");
    int h = spec.hidden_dim;
    for (const auto& x : inputs) {
        if (static_cast<int>(x.size()) != spec.input_dim)
            throw dimension_error("lstm_forward: input dim mismatch");
        for (double v : x)
            if (!std::isfinite(v)) throw validation_error("lstm_forward: non-finite input");
    }
    const auto& Wi = store.block(prefix + ".Wi");
    const auto& Ui = store.block(prefix + ".Ui");
    const auto& bi = store.block(prefix + ".bi");
    const auto& Wf = store.block(prefix + ".Wf");
    const auto& Uf = store.block(prefix + ".Uf");
    const auto& bf = store.block(prefix + ".bf");
    const auto& Wg = store.block(prefix + ".Wg");
    const auto& Ug = store.block(prefix + ".Ug");
    const auto& bg = store.block(prefix + ".bg");
    const auto& Wo = store.block(prefix + ".Wo");
    const auto& Uo = store.block(prefix + ".Uo");
    const auto& bo = store.block(prefix + ".bo");
    const ParamBlock* pi = spec.peephole ? &store.block(prefix + ".pi") : nullptr;
    const ParamBlock* pf = spec.peephole ? &store.block(prefix + ".pf") : nullptr;
    const ParamBlock* po = spec.peephole ? &store.block(prefix + ".po") : nullptr;

    int T = static_cast<int>(inputs.size());
    hidden.assign(static_cast<std::size_t>(T), Vec());
    if (cache) {
        cache->T = T;
        cache->x = inputs;
        auto reset = [&](std::vector<Vec>& v) { v.assign(static_cast<std::size_t>(T), Vec()); };
        reset(cache->gate_i);
        reset(cache->gate_f);
        reset(cache->cand);
        reset(cache->gate_o);
        reset(cache->c);
        reset(cache->tanh_c);
        reset(cache->h);
    }

    Vec h_prev(static_cast<std::size_t>(h), 0.0), c_prev(static_cast<std::size_t>(h), 0.0);
    Vec ai(static_cast<std::size_t>(h)), af(static_cast<std::size_t>(h)),
        ag(static_cast<std::size_t>(h)), ao(static_cast<std::size_t>(h));
    for (int t = 0; t < T; ++t) {
        const Vec& x = inputs[static_cast<std::size_t>(t)];
        ai = bi.value;
        af = bf.value;
        ag = bg.value;
        ao = bo.value;
        matvec_acc(Wi, x, ai);
        matvec_acc(Ui, h_prev, ai);
        matvec_acc(Wf, x, af);
        matvec_acc(Uf, h_prev, af);
        matvec_acc(Wg, x, ag);
        matvec_acc(Ug, h_prev, ag);
        matvec_acc(Wo, x, ao);
        matvec_acc(Uo, h_prev, ao);

        Vec gi(static_cast<std::size_t>(h)), gf(static_cast<std::size_t>(h)),
            gg(static_cast<std::size_t>(h)), go(static_cast<std::size_t>(h)),
            c(static_cast<std::size_t>(h)), tc(static_cast<std::size_t>(h)),
            ht(static_cast<std::size_t>(h));
        for (int k = 0; k < h; ++k) {
            double peek_i = pi ? pi->value[static_cast<std::size_t>(k)] * c_prev[static_cast<std::size_t>(k)] : 0.0;
            double peek_f = pf ? pf->value[static_cast<std::size_t>(k)] * c_prev[static_cast<std::size_t>(k)] : 0.0;
            gi[static_cast<std::size_t>(k)] = sigmoid(ai[static_cast<std::size_t>(k)] + peek_i);
            gf[static_cast<std::size_t>(k)] = sigmoid(af[static_cast<std::size_t>(k)] + peek_f);
            gg[static_cast<std::size_t>(k)] = std::tanh(ag[static_cast<std::size_t>(k)]);
            c[static_cast<std::size_t>(k)] = gf[static_cast<std::size_t>(k)] * c_prev[static_cast<std::size_t>(k)] +
                                             gi[static_cast<std::size_t>(k)] * gg[static_cast<std::size_t>(k)];
            double peek_o = po ? po->value[static_cast<std::size_t>(k)] * c[static_cast<std::size_t>(k)] : 0.0;
            go[static_cast<std::size_t>(k)] = sigmoid(ao[static_cast<std::size_t>(k)] + peek_o);
            tc[static_cast<std::size_t>(k)] = std::tanh(c[static_cast<std::size_t>(k)]);
            ht[static_cast<std::size_t>(k)] = go[static_cast<std::size_t>(k)] * tc[static_cast<std::size_t>(k)];
        }
        if (cache) {
            cache->gate_i[static_cast<std::size_t>(t)] = gi;
            cache->gate_f[static_cast<std::size_t>(t)] = gf;
            cache->cand[static_cast<std::size_t>(t)] = gg;
            cache->gate_o[static_cast<std::size_t>(t)] = go;
            cache->c[static_cast<std::size_t>(t)] = c;
            cache->tanh_c[static_cast<std::size_t>(t)] = tc;
            cache->h[static_cast<std::size_t>(t)] = ht;
        }
        hidden[static_cast<std::size_t>(t)] = ht;
        h_prev = ht;
        c_prev = c;
    }
}

std::vector<Vec> lstm_backward(ParamStore& store, const std::string& prefix, const LstmSpec& spec,
                               const LstmCache& cache, const std::vector<Vec>& d_hidden) {
    int T = cache.T;
    int h = spec.hidden_dim;
    auto& Wi = store.block(prefix + ".Wi");
    auto& Ui = store.block(prefix + ".Ui");
    auto& bi = store.block(prefix + ".bi");
    auto& Wf = store.block(prefix + ".Wf");
    auto& Uf = store.block(prefix + ".Uf");
    auto& bf = store.block(prefix + ".bf");
    auto& Wg = store.block(prefix + ".Wg");
    auto& Ug = store.block(prefix + ".Ug");
    auto& bg = store.block(prefix + ".bg");
    auto& Wo = store.block(prefix + ".Wo");
    auto& Uo = store.block(prefix + ".Uo");
    auto& bo = store.block(prefix + ".bo");
    ParamBlock* pi = spec.peephole ? &store.block(prefix + ".pi") : nullptr;
    ParamBlock* pf = spec.peephole ? &store.block(prefix + ".pf") : nullptr;
    ParamBlock* po = spec.peephole ? &store.block(prefix + ".po") : nullptr;

    std::vector<Vec> d_inputs(static_cast<std::size_t>(T),
                              Vec(static_cast<std::size_t>(spec.input_dim), 0.0));
    Vec dh_next(static_cast<std::size_t>(h), 0.0);  // recurrent dL/dh from t+1
    Vec dc_next(static_cast<std::size_t>(h), 0.0);  // dL/dc from t+1 (incl. peepholes)
    Vec di(static_cast<std::size_t>(h)), df(static_cast<std::size_t>(h)),
        dg(static_cast<std::size_t>(h)), dout(static_cast<std::size_t>(h));

    for (int t = T - 1; t >= 0; --t) {
        const Vec& gi = cache.gate_i[static_cast<std::size_t>(t)];
        const Vec& gf = cache.gate_f[static_cast<std::size_t>(t)];
        const Vec& gg = cache.cand[static_cast<std::size_t>(t)];
        const Vec& go = cache.gate_o[static_cast<std::size_t>(t)];
        const Vec& tc = cache.tanh_c[static_cast<std::size_t>(t)];
        const Vec* c_prev = t > 0 ? &cache.c[static_cast<std::size_t>(t - 1)] : nullptr;
        const Vec* h_prev_v = t > 0 ? &cache.h[static_cast<std::size_t>(t - 1)] : nullptr;

        Vec dh = d_hidden[static_cast<std::size_t>(t)];
        vec_acc(dh, dh_next);

        Vec dc = dc_next;
        for (int k = 0; k < h; ++k) {
            // h = o * tanh(c)
            double d_o = dh[static_cast<std::size_t>(k)] * tc[static_cast<std::size_t>(k)];
            double d_o_raw = d_o * go[static_cast<std::size_t>(k)] * (1.0 - go[static_cast<std::size_t>(k)]);
            dout[static_cast<std::size_t>(k)] = d_o_raw;
            dc[static_cast<std::size_t>(k)] +=
                dh[static_cast<std::size_t>(k)] * go[static_cast<std::size_t>(k)] *
                (1.0 - tc[static_cast<std::size_t>(k)] * tc[static_cast<std::size_t>(k)]);
            if (po) {
                dc[static_cast<std::size_t>(k)] += d_o_raw * po->value[static_cast<std::size_t>(k)];
                po->grad[static_cast<std::size_t>(k)] +=
                    d_o_raw * cache.c[static_cast<std::size_t>(t)][static_cast<std::size_t>(k)];
            }
        }
        for (int k = 0; k < h; ++k) {
            double cp = c_prev ? (*c_prev)[static_cast<std::size_t>(k)] : 0.0;
            double d_i = dc[static_cast<std::size_t>(k)] * gg[static_cast<std::size_t>(k)];
            double d_f = dc[static_cast<std::size_t>(k)] * cp;
            double d_g = dc[static_cast<std::size_t>(k)] * gi[static_cast<std::size_t>(k)];
            di[static_cast<std::size_t>(k)] = d_i * gi[static_cast<std::size_t>(k)] * (1.0 - gi[static_cast<std::size_t>(k)]);
            df[static_cast<std::size_t>(k)] = d_f * gf[static_cast<std::size_t>(k)] * (1.0 - gf[static_cast<std::size_t>(k)]);
            dg[static_cast<std::size_t>(k)] = d_g * (1.0 - gg[static_cast<std::size_t>(k)] * gg[static_cast<std::size_t>(k)]);
        }

        const Vec& x = cache.x[static_cast<std::size_t>(t)];
        outer_acc(Wi, di, x);
        outer_acc(Wf, df, x);
        outer_acc(Wg, dg, x);
        outer_acc(Wo, dout, x);
        vec_acc(bi.grad, di);
        vec_acc(bf.grad, df);
        vec_acc(bg.grad, dg);
        vec_acc(bo.grad, dout);
        if (h_prev_v) {
            outer_acc(Ui, di, *h_prev_v);
            outer_acc(Uf, df, *h_prev_v);
            outer_acc(Ug, dg, *h_prev_v);
            outer_acc(Uo, dout, *h_prev_v);
        }
        Vec& dx = d_inputs[static_cast<std::size_t>(t)];
        matvec_t_acc(Wi, di, dx);
        matvec_t_acc(Wf, df, dx);
        matvec_t_acc(Wg, dg, dx);
        matvec_t_acc(Wo, dout, dx);

        std::fill(dh_next.begin(), dh_next.end(), 0.0);
        matvec_t_acc(Ui, di, dh_next);
        matvec_t_acc(Uf, df, dh_next);
        matvec_t_acc(Ug, dg, dh_next);
        matvec_t_acc(Uo, dout, dh_next);

        // carry dc into step t-1: through the forget gate and the peepholes
        for (int k = 0; k < h; ++k) {
            double carry = dc[static_cast<std::size_t>(k)] * gf[static_cast<std::size_t>(k)];
            if (pi) {
                carry += di[static_cast<std::size_t>(k)] * pi->value[static_cast<std::size_t>(k)];
                if (c_prev)
                    pi->grad[static_cast<std::size_t>(k)] +=
                        di[static_cast<std::size_t>(k)] * (*c_prev)[static_cast<std::size_t>(k)];
            }
            if (pf) {
                carry += df[static_cast<std::size_t>(k)] * pf->value[static_cast<std::size_t>(k)];
                if (c_prev)
                    pf->grad[static_cast<std::size_t>(k)] +=
                        df[static_cast<std::size_t>(k)] * (*c_prev)[static_cast<std::size_t>(k)];
            }
            dc_next[static_cast<std::size_t>(k)] = carry;
        }
    }
    return d_inputs;
}

void gru_register(ParamStore& store, const std::string& prefix, const GruSpec& spec) {
    int h = spec.hidden_dim, in = spec.input_dim;
    for (const char* g : {"z", "r", "g"}) {
        store.add(prefix + ".W" + g, h, in);
        store.add(prefix + ".U" + g, h, h);
        store.add(prefix + ".b" + g, h, 1);
    }
}

void gru_forward(const ParamStore& store, const std::string& prefix, const GruSpec& spec,
                 const std::vector<Vec>& inputs, std::vector<Vec>& hidden, GruCache* cache) {
    if (inputs.empty()) throw validation_error("gru_forward: empty input sequence");
    int h = spec.hidden_dim;
    const auto& Wz = store.block(prefix + ".Wz");
    const auto& Uz = store.block(prefix + ".Uz");
    const auto& bz = store.block(prefix + ".bz");
    const auto& Wr = store.block(prefix + ".Wr");
    const auto& Ur = store.block(prefix + ".Ur");
    const auto& br = store.block(prefix + ".br");
    const auto& Wg = store.block(prefix + ".Wg");
    const auto& Ug = store.block(prefix + ".Ug");
    const auto& bg = store.block(prefix + ".bg");

    int T = static_cast<int>(inputs.size());
    hidden.assign(static_cast<std::size_t>(T), Vec());
    if (cache) {
        cache->T = T;
        cache->x = inputs;
        cache->update_z.assign(static_cast<std::size_t>(T), Vec());
        cache->reset_r.assign(static_cast<std::size_t>(T), Vec());
        cache->cand.assign(static_cast<std::size_t>(T), Vec());
        cache->h.assign(static_cast<std::size_t>(T), Vec());
    }
    Vec h_prev(static_cast<std::size_t>(h), 0.0);
    for (int t = 0; t < T; ++t) {
        const Vec& x = inputs[static_cast<std::size_t>(t)];
        if (static_cast<int>(x.size()) != spec.input_dim)
            throw dimension_error("gru_forward: input dim mismatch");
        Vec az = bz.value, ar = br.value;
        matvec_acc(Wz, x, az);
        matvec_acc(Uz, h_prev, az);
        matvec_acc(Wr, x, ar);
        matvec_acc(Ur, h_prev, ar);
        Vec z(static_cast<std::size_t>(h)), r(static_cast<std::size_t>(h));
        for (int k = 0; k < h; ++k) {
            z[static_cast<std::size_t>(k)] = sigmoid(az[static_cast<std::size_t>(k)]);
            r[static_cast<std::size_t>(k)] = sigmoid(ar[static_cast<std::size_t>(k)]);
        }
        Vec rh(static_cast<std::size_t>(h));
        for (int k = 0; k < h; ++k)
            rh[static_cast<std::size_t>(k)] = r[static_cast<std::size_t>(k)] * h_prev[static_cast<std::size_t>(k)];
        Vec ag = bg.value;
        matvec_acc(Wg, x, ag);
        matvec_acc(Ug, rh, ag);
        Vec g(static_cast<std::size_t>(h)), ht(static_cast<std::size_t>(h));
        for (int k = 0; k < h; ++k) {
            g[static_cast<std::size_t>(k)] = std::tanh(ag[static_cast<std::size_t>(k)]);
            ht[static_cast<std::size_t>(k)] = (1.0 - z[static_cast<std::size_t>(k)]) * h_prev[static_cast<std::size_t>(k)] +
                                              z[static_cast<std::size_t>(k)] * g[static_cast<std::size_t>(k)];
        }
        if (cache) {
            cache->update_z[static_cast<std::size_t>(t)] = z;
            cache->reset_r[static_cast<std::size_t>(t)] = r;
            cache->cand[static_cast<std::size_t>(t)] = g;
            cache->h[static_cast<std::size_t>(t)] = ht;
        }
        hidden[static_cast<std::size_t>(t)] = ht;
        h_prev = ht;
    }
}

std::vector<Vec> gru_backward(ParamStore& store, const std::string& prefix, const GruSpec& spec,
                              const GruCache& cache, const std::vector<Vec>& d_hidden) {
    int T = cache.T;
    int h = spec.hidden_dim;
    auto& Wz = store.block(prefix + ".Wz");
    auto& Uz = store.block(prefix + ".Uz");
    auto& bz = store.block(prefix + ".bz");
    auto& Wr = store.block(prefix + ".Wr");
    auto& Ur = store.block(prefix + ".Ur");
    auto& br = store.block(prefix + ".br");
    auto& Wg = store.block(prefix + ".Wg");
    auto& Ug = store.block(prefix + ".Ug");
    auto& bg = store.block(prefix + ".bg");

    std::vector<Vec> d_inputs(static_cast<std::size_t>(T),
                              Vec(static_cast<std::size_t>(spec.input_dim), 0.0));
    Vec dh_next(static_cast<std::size_t>(h), 0.0);
    Vec dz(static_cast<std::size_t>(h)), dr(static_cast<std::size_t>(h)),
        dg(static_cast<std::size_t>(h));
    for (int t = T - 1; t >= 0; --t) {
        const Vec& z = cache.update_z[static_cast<std::size_t>(t)];
        const Vec& r = cache.reset_r[static_cast<std::size_t>(t)];
        const Vec& g = cache.cand[static_cast<std::size_t>(t)];
        Vec h_prev(static_cast<std::size_t>(h), 0.0);
        if (t > 0) h_prev = cache.h[static_cast<std::size_t>(t - 1)];

        Vec dh = d_hidden[static_cast<std::size_t>(t)];
        vec_acc(dh, dh_next);

        Vec dh_prev(static_cast<std::size_t>(h), 0.0);
        Vec dg_pre(static_cast<std::size_t>(h));
        for (int k = 0; k < h; ++k) {
            double d = dh[static_cast<std::size_t>(k)];
            double d_g = d * z[static_cast<std::size_t>(k)];
            double d_z = d * (g[static_cast<std::size_t>(k)] - h_prev[static_cast<std::size_t>(k)]);
            dh_prev[static_cast<std::size_t>(k)] += d * (1.0 - z[static_cast<std::size_t>(k)]);
            dz[static_cast<std::size_t>(k)] = d_z * z[static_cast<std::size_t>(k)] * (1.0 - z[static_cast<std::size_t>(k)]);
            dg_pre[static_cast<std::size_t>(k)] = d_g * (1.0 - g[static_cast<std::size_t>(k)] * g[static_cast<std::size_t>(k)]);
        }
        // candidate depends on r * h_prev
        Vec d_rh(static_cast<std::size_t>(h), 0.0);
        matvec_t_acc(Ug, dg_pre, d_rh);
        for (int k = 0; k < h; ++k) {
            double d_r = d_rh[static_cast<std::size_t>(k)] * h_prev[static_cast<std::size_t>(k)];
            dh_prev[static_cast<std::size_t>(k)] += d_rh[static_cast<std::size_t>(k)] * r[static_cast<std::size_t>(k)];
            dr[static_cast<std::size_t>(k)] = d_r * r[static_cast<std::size_t>(k)] * (1.0 - r[static_cast<std::size_t>(k)]);
        }

        const Vec& x = cache.x[static_cast<std::size_t>(t)];
        Vec rh(static_cast<std::size_t>(h));
        for (int k = 0; k < h; ++k)
            rh[static_cast<std::size_t>(k)] = r[static_cast<std::size_t>(k)] * h_prev[static_cast<std::size_t>(k)];
        outer_acc(Wz, dz, x);
        outer_acc(Wr, dr, x);
        outer_acc(Wg, dg_pre, x);
        vec_acc(bz.grad, dz);
        vec_acc(br.grad, dr);
        vec_acc(bg.grad, dg_pre);
        if (t > 0) {
            outer_acc(Uz, dz, h_prev);
            outer_acc(Ur, dr, h_prev);
        }
        outer_acc(Ug, dg_pre, rh);

        Vec& dx = d_inputs[static_cast<std::size_t>(t)];
        matvec_t_acc(Wz, dz, dx);
        matvec_t_acc(Wr, dr, dx);
        matvec_t_acc(Wg, dg_pre, dx);

        matvec_t_acc(Uz, dz, dh_prev);
        matvec_t_acc(Ur, dr, dh_prev);
        dh_next = dh_prev;
        (void)dg;
    }
    return d_inputs;
}

CellType cell_type_from_string(const std::string& s) {
    if (s == "lstm") return CellType::lstm;
    if (s == "gru") return CellType::gru;
    if (s == "bilstm") return CellType::bilstm;
    if (s == "bigru") return CellType::bigru;
    throw validation_error("unknown cell type: " + s);
}

std::string cell_type_to_string(CellType t) {
    switch (t) {
        case CellType::lstm: return "lstm";
        case CellType::gru: return "gru";
        case CellType::bilstm: return "bilstm";
        case CellType::bigru: return "bigru";
    }
    return "lstm";
}

void cell_register(ParamStore& store, const std::string& prefix, const CellSpec& spec) {
    switch (spec.type) {
        case CellType::lstm:
            lstm_register(store, prefix, {spec.input_dim, spec.hidden_dim, spec.peephole});
            break;
        case CellType::gru:
            gru_register(store, prefix, {spec.input_dim, spec.hidden_dim});
            break;
        case CellType::bilstm:
            lstm_register(store, prefix + ".fwd", {spec.input_dim, spec.hidden_dim, spec.peephole});
            lstm_register(store, prefix + ".bwd", {spec.input_dim, spec.hidden_dim, spec.peephole});
            break;
        case CellType::bigru:
            gru_register(store, prefix + ".fwd", {spec.input_dim, spec.hidden_dim});
            gru_register(store, prefix + ".bwd", {spec.input_dim, spec.hidden_dim});
            break;
    }
}

void cell_forward(const ParamStore& store, const std::string& prefix, const CellSpec& spec,
                  const std::vector<Vec>& inputs, std::vector<Vec>& hidden, CellCache* cache) {
    if (spec.type == CellType::lstm) {
        lstm_forward(store, prefix, {spec.input_dim, spec.hidden_dim, spec.peephole}, inputs,
                     hidden, cache ? &cache->lstm_fwd : nullptr);
        return;
    }
    if (spec.type == CellType::gru) {
        gru_forward(store, prefix, {spec.input_dim, spec.hidden_dim}, inputs, hidden,
                    cache ? &cache->gru_fwd : nullptr);
        return;
    }
    std::vector<Vec> reversed(inputs.rbegin(), inputs.rend());
    std::vector<Vec> hf, hb;
    if (spec.type == CellType::bilstm) {
        LstmSpec ls{spec.input_dim, spec.hidden_dim, spec.peephole};
        lstm_forward(store, prefix + ".fwd", ls, inputs, hf, cache ? &cache->lstm_fwd : nullptr);
        lstm_forward(store, prefix + ".bwd", ls, reversed, hb, cache ? &cache->lstm_bwd : nullptr);
    } else {
        GruSpec gs{spec.input_dim, spec.hidden_dim};
        gru_forward(store, prefix + ".fwd", gs, inputs, hf, cache ? &cache->gru_fwd : nullptr);
        gru_forward(store, prefix + ".bwd", gs, reversed, hb, cache ? &cache->gru_bwd : nullptr);
    }
    int T = static_cast<int>(inputs.size());
    hidden.assign(static_cast<std::size_t>(T), Vec(static_cast<std::size_t>(2 * spec.hidden_dim)));
    for (int t = 0; t < T; ++t) {
        auto& out = hidden[static_cast<std::size_t>(t)];
        const auto& f = hf[static_cast<std::size_t>(t)];
        const auto& b = hb[static_cast<std::size_t>(T - 1 - t)];
        std::copy(f.begin(), f.end(), out.begin());
        std::copy(b.begin(), b.end(), out.begin() + spec.hidden_dim);
    }
}

std::vector<Vec> cell_backward(ParamStore& store, const std::string& prefix, const CellSpec& spec,
                               const CellCache& cache, const std::vector<Vec>& d_hidden) {
    if (spec.type == CellType::lstm)
        return lstm_backward(store, prefix, {spec.input_dim, spec.hidden_dim, spec.peephole},
                             cache.lstm_fwd, d_hidden);
    if (spec.type == CellType::gru)
        return gru_backward(store, prefix, {spec.input_dim, spec.hidden_dim}, cache.gru_fwd,
                            d_hidden);

    int T = static_cast<int>(d_hidden.size());
    int h = spec.hidden_dim;
    std::vector<Vec> df(static_cast<std::size_t>(T), Vec(static_cast<std::size_t>(h)));
    std::vector<Vec> db(static_cast<std::size_t>(T), Vec(static_cast<std::size_t>(h)));
    for (int t = 0; t < T; ++t) {
        const auto& d = d_hidden[static_cast<std::size_t>(t)];
        std::copy(d.begin(), d.begin() + h, df[static_cast<std::size_t>(t)].begin());
        std::copy(d.begin() + h, d.end(), db[static_cast<std::size_t>(T - 1 - t)].begin());
    }
    std::vector<Vec> dx_f, dx_b;
    if (spec.type == CellType::bilstm) {
        LstmSpec ls{spec.input_dim, spec.hidden_dim, spec.peephole};
        dx_f = lstm_backward(store, prefix + ".fwd", ls, cache.lstm_fwd, df);
        dx_b = lstm_backward(store, prefix + ".bwd", ls, cache.lstm_bwd, db);
    } else {
        GruSpec gs{spec.input_dim, spec.hidden_dim};
        dx_f = gru_backward(store, prefix + ".fwd", gs, cache.gru_fwd, df);
        dx_b = gru_backward(store, prefix + ".bwd", gs, cache.gru_bwd, db);
    }
    for (int t = 0; t < T; ++t)
        vec_acc(dx_f[static_cast<std::size_t>(t)], dx_b[static_cast<std::size_t>(T - 1 - t)]);
    return dx_f;
}

void attention_register(ParamStore& store, const std::string& prefix, int hidden_dim) {
    store.add(prefix + ".w", 1, hidden_dim);
    store.add(prefix + ".b", 1, 1);
}

void attention_forward(const ParamStore& store, const std::string& prefix,
                       const std::vector<Vec>& hidden, Vec& context, Vec& delta,
                       AttnCache* cache) {
    if (hidden.empty()) throw validation_error("attention: empty hidden sequence");
    const auto& w = store.block(prefix + ".w");
    const auto& b = store.block(prefix + ".b");
    int T = static_cast<int>(hidden.size());
    int h = w.cols;
    Vec scores(static_cast<std::size_t>(T));
    for (int t = 0; t < T; ++t) {
        const Vec& ht = hidden[static_cast<std::size_t>(t)];
        if (static_cast<int>(ht.size()) != h)
            throw dimension_error("attention: hidden dim mismatch");
        double s = b.value[0];
        for (int k = 0; k < h; ++k) s += w.value[static_cast<std::size_t>(k)] * ht[static_cast<std::size_t>(k)];
        scores[static_cast<std::size_t>(t)] = std::tanh(s);
    }
    delta = softmax(scores);
    context.assign(static_cast<std::size_t>(h), 0.0);
    for (int t = 0; t < T; ++t)
        for (int k = 0; k < h; ++k)
            context[static_cast<std::size_t>(k)] +=
                delta[static_cast<std::size_t>(t)] * hidden[static_cast<std::size_t>(t)][static_cast<std::size_t>(k)];
    if (cache) {
        cache->scores = std::move(scores);
        cache->delta = delta;
    }
}

void attention_backward(ParamStore& store, const std::string& prefix,
                        const std::vector<Vec>& hidden, const AttnCache& cache,
                        const Vec& d_context, std::vector<Vec>& d_hidden) {
    auto& w = store.block(prefix + ".w");
    auto& b = store.block(prefix + ".b");
    int T = static_cast<int>(hidden.size());
    int h = w.cols;
    if (static_cast<int>(d_hidden.size()) != T)
        d_hidden.assign(static_cast<std::size_t>(T), Vec(static_cast<std::size_t>(h), 0.0));

    Vec d_delta(static_cast<std::size_t>(T));
    for (int t = 0; t < T; ++t) {
        double acc = 0.0;
        for (int k = 0; k < h; ++k) {
            acc += d_context[static_cast<std::size_t>(k)] * hidden[static_cast<std::size_t>(t)][static_cast<std::size_t>(k)];
            d_hidden[static_cast<std::size_t>(t)][static_cast<std::size_t>(k)] +=
                cache.delta[static_cast<std::size_t>(t)] * d_context[static_cast<std::size_t>(k)];
        }
        d_delta[static_cast<std::size_t>(t)] = acc;
    }
    // softmax backward
    double dot = 0.0;
    for (int t = 0; t < T; ++t) dot += cache.delta[static_cast<std::size_t>(t)] * d_delta[static_cast<std::size_t>(t)];
    for (int t = 0; t < T; ++t) {
        double d_score = cache.delta[static_cast<std::size_t>(t)] * (d_delta[static_cast<std::size_t>(t)] - dot);
        double d_pre = d_score * (1.0 - cache.scores[static_cast<std::size_t>(t)] * cache.scores[static_cast<std::size_t>(t)]);
        b.grad[0] += d_pre;
        for (int k = 0; k < h; ++k) {
            w.grad[static_cast<std::size_t>(k)] += d_pre * hidden[static_cast<std::size_t>(t)][static_cast<std::size_t>(k)];
            d_hidden[static_cast<std::size_t>(t)][static_cast<std::size_t>(k)] += w.value[static_cast<std::size_t>(k)] * d_pre;
        }
    }
}

}  // namespace facetopo::nn
