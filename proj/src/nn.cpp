#include "facetopo/nn.hpp"

#include <algorithm>
#include <cmath>

#include "facetopo/errors.hpp"

namespace facetopo::nn {

Vec softmax(const Vec& logits) {
    double m = *std::max_element(logits.begin(), logits.end());
    Vec out(logits.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp(logits[i] - m);
        sum += out[i];
    }
    for (auto& p : out) p /= sum;
    return out;
}

namespace {
constexpr double kLogFloor = 1e-12;

void check_distribution(const Vec& probs, int target) {
    if (probs.empty() || target < 0 || target >= static_cast<int>(probs.size()))
        throw validation_error("focal loss: target class out of range");
    double sum = 0.0;
    for (double p : probs) {
        if (!(p >= 0.0 && p <= 1.0))
            throw validation_error("focal loss: probabilities must lie in [0, 1]");
        sum += p;
    }
    if (std::fabs(sum - 1.0) > 1e-6)
        throw validation_error("focal loss: probabilities must sum to 1");
}
}  // namespace

double focal_loss(const Vec& probs, int target, double gamma, double alpha) {
    check_distribution(probs, target);
    double p = std::max(probs[static_cast<std::size_t>(target)], kLogFloor);
    return -alpha * std::pow(1.0 - p, gamma) * std::log(p);
}

Vec softmax_focal_backward(const Vec& probs, int target, double gamma, double alpha) {
    check_distribution(probs, target);
    double p = std::max(probs[static_cast<std::size_t>(target)], kLogFloor);
    // dL/dp at the (floored) target probability
    double one_minus = 1.0 - p;
    double dldp;
    if (gamma == 0.0) {
        dldp = -alpha / p;
    } else {
        dldp = alpha * gamma * std::pow(one_minus, gamma - 1.0) * std::log(p) -
               alpha * std::pow(one_minus, gamma) / p;
    }
    Vec dlogits(probs.size());
    for (std::size_t j = 0; j < probs.size(); ++j) {
        double indicator = static_cast<int>(j) == target ? 1.0 : 0.0;
        dlogits[j] = dldp * p * (indicator - probs[j]);
    }
    return dlogits;
}

ParamBlock& ParamStore::add(const std::string& name, int rows, int cols) {
    if (index_.count(name)) throw validation_error("duplicate parameter block: " + name);
    if (rows < 1 || cols < 1) throw dimension_error("parameter block " + name + ": bad shape");
    ParamBlock b;
    b.name = name;
    b.rows = rows;
    b.cols = cols;
    std::size_t sz = static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols);
    b.value.assign(sz, 0.0);
    b.grad.assign(sz, 0.0);
    b.adam_m.assign(sz, 0.0);
    b.adam_v.assign(sz, 0.0);
    index_[name] = static_cast<int>(blocks_.size());
    blocks_.push_back(std::move(b));
    return blocks_.back();
}

ParamBlock& ParamStore::block(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw validation_error("unknown parameter block: " + name);
    return blocks_[static_cast<std::size_t>(it->second)];
}

const ParamBlock& ParamStore::block(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw validation_error("unknown parameter block: " + name);
    return blocks_[static_cast<std::size_t>(it->second)];
}

int ParamStore::block_index(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw validation_error("unknown parameter block: " + name);
    return it->second;
}

void ParamStore::zero_grad() {
    for (auto& b : blocks_) std::fill(b.grad.begin(), b.grad.end(), 0.0);
}

void ParamStore::scale_grad(double factor) {
    for (auto& b : blocks_)
        for (auto& g : b.grad) g *= factor;
}

void ParamStore::init(std::uint64_t seed) {
    Rng rng(mix_seed({seed, 0x1217ull}));
    for (auto& b : blocks_) {
        if (b.cols == 1) {
            double fill = 0.0;
            if (b.name.size() >= 3 && b.name.rfind(".bf") == b.name.size() - 3) fill = 1.0;
            std::fill(b.value.begin(), b.value.end(), fill);
        } else {
            double r = std::sqrt(6.0 / (b.cols + b.rows));
            for (auto& v : b.value) v = rng.uniform(-r, r);
        }
        std::fill(b.adam_m.begin(), b.adam_m.end(), 0.0);
        std::fill(b.adam_v.begin(), b.adam_v.end(), 0.0);
    }
    zero_grad();
}

void ParamStore::adam_step(const AdamConfig& cfg, long t) {
    if (t < 1) throw update_error("adam step counter must be >= 1");
    double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
    double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
    for (auto& b : blocks_) {
        for (std::size_t k = 0; k < b.size(); ++k) {
            double g = b.grad[k];
            if (!std::isfinite(g))
                throw update_error("non-finite gradient in block '" + b.name + "'");
            b.adam_m[k] = cfg.beta1 * b.adam_m[k] + (1.0 - cfg.beta1) * g;
            b.adam_v[k] = cfg.beta2 * b.adam_v[k] + (1.0 - cfg.beta2) * g * g;
            double mhat = b.adam_m[k] / bc1;
            double vhat = b.adam_v[k] / bc2;
            b.value[k] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
        }
    }
}

bool ParamStore::values_finite() const {
    for (const auto& b : blocks_)
        for (double v : b.value)
            if (!std::isfinite(v)) return false;
    return true;
}

double ParamStore::grad_norm(const std::string& prefix) const {
    double s = 0.0;
    for (const auto& b : blocks_) {
        if (b.name.rfind(prefix, 0) != 0) continue;
        for (double g : b.grad) s += g * g;
    }
    return std::sqrt(s);
}

std::string ParamStore::to_checkpoint(const nlohmann::ordered_json& meta) const {
    nlohmann::ordered_json j;
    j["format"] = "topo-seq-ckpt-v1";
    j["meta"] = meta;
    nlohmann::ordered_json blocks = nlohmann::ordered_json::object();
    for (const auto& b : blocks_) {
        nlohmann::ordered_json jb;
        jb["shape"] = {b.rows, b.cols};
        jb["values"] = b.value;
        blocks[b.name] = std::move(jb);
    }
    j["blocks"] = std::move(blocks);
    return j.dump();
}

std::pair<ParamStore, nlohmann::json> ParamStore::from_checkpoint(const std::string& text) {
    // ordered_json keeps the block order of the file, which makes
    // parse -> re-serialize byte-identical
    nlohmann::ordered_json j;
    try {
        j = nlohmann::ordered_json::parse(text);
    } catch (const nlohmann::ordered_json::parse_error& e) {
        throw parse_error("checkpoint parse error at byte " + std::to_string(e.byte) + ": " +
                          e.what());
    }
    if (!j.contains("format") || j["format"] != "topo-seq-ckpt-v1")
        throw parse_error("checkpoint: missing or unsupported format tag");
    ParamStore store;
    try {
        for (auto& [name, jb] : j.at("blocks").items()) {
            int rows = jb.at("shape").at(0).get<int>();
            int cols = jb.at("shape").at(1).get<int>();
            auto& blk = store.add(name, rows, cols);
            blk.value = jb.at("values").get<Vec>();
            if (blk.value.size() != static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols))
                throw parse_error("checkpoint block " + name + ": value count does not match shape");
            blk.grad.assign(blk.value.size(), 0.0);
            blk.adam_m.assign(blk.value.size(), 0.0);
            blk.adam_v.assign(blk.value.size(), 0.0);
        }
        nlohmann::json meta = j.contains("meta") ? nlohmann::json(j["meta"]) : nlohmann::json::object();
        return {std::move(store), std::move(meta)};
    } catch (const nlohmann::ordered_json::exception& e) {
        throw parse_error(std::string("checkpoint schema error: ") + e.what());
    }
}

void dense_register(ParamStore& store, const std::string& prefix, int out_dim, int in_dim) {
    store.add(prefix + ".W", out_dim, in_dim);
    store.add(prefix + ".b", out_dim, 1);
}

void dense_forward(const ParamStore& store, const std::string& prefix, const Vec& x, Vec& y,
                   bool tanh_act) {
    const auto& W = store.block(prefix + ".W");
    const auto& b = store.block(prefix + ".b");
    if (static_cast<int>(x.size()) != W.cols)
        throw dimension_error("dense " + prefix + ": input size " + std::to_string(x.size()) +
                              " != " + std::to_string(W.cols));
    y.assign(static_cast<std::size_t>(W.rows), 0.0);
    for (int r = 0; r < W.rows; ++r) {
        double acc = b.value[static_cast<std::size_t>(r)];
        const double* wr = &W.value[static_cast<std::size_t>(r) * W.cols];
        for (int c = 0; c < W.cols; ++c) acc += wr[c] * x[static_cast<std::size_t>(c)];
        y[static_cast<std::size_t>(r)] = tanh_act ? std::tanh(acc) : acc;
    }
}

void dense_backward(ParamStore& store, const std::string& prefix, const Vec& x, const Vec& y,
                    const Vec& dy, bool tanh_act, Vec& dx) {
    auto& W = store.block(prefix + ".W");
    auto& b = store.block(prefix + ".b");
    if (dx.size() != x.size()) dx.assign(x.size(), 0.0);
    for (int r = 0; r < W.rows; ++r) {
        double d = dy[static_cast<std::size_t>(r)];
        if (tanh_act) d *= 1.0 - y[static_cast<std::size_t>(r)] * y[static_cast<std::size_t>(r)];
        b.grad[static_cast<std::size_t>(r)] += d;
        double* wg = &W.grad[static_cast<std::size_t>(r) * W.cols];
        const double* wv = &W.value[static_cast<std::size_t>(r) * W.cols];
        for (int c = 0; c < W.cols; ++c) {
            wg[c] += d * x[static_cast<std::size_t>(c)];
            dx[static_cast<std::size_t>(c)] += wv[c] * d;
        }
    }
}

}  // namespace facetopo::nn
