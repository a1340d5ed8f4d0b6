#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "facetopo/rng.hpp"
#include "json.hpp"

namespace facetopo::nn {

using Vec = std::vector<double>;

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// logits -> probabilities, computed with max subtraction
Vec softmax(const Vec& logits);

// -alpha * (1 - p_b)^gamma * log(p_b), p_b floored at 1e-12 before the log
double focal_loss(const Vec& probs, int target, double gamma, double alpha);

// gradient w.r.t. the logits of focal_loss(softmax(logits), target)
Vec softmax_focal_backward(const Vec& probs, int target, double gamma, double alpha);

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.99;
    double eps = 1e-8;
};

// One named parameter block. Values are row-major rows x cols; biases and
// other vectors use cols == 1.
struct ParamBlock {
    std::string name;
    int rows = 0;
    int cols = 0;
    Vec value, grad, adam_m, adam_v;

    std::size_t size() const { return value.size(); }
    double& at(int r, int c) { return value[static_cast<std::size_t>(r) * cols + c]; }
    double at(int r, int c) const { return value[static_cast<std::size_t>(r) * cols + c]; }
};

class ParamStore {
public:
    ParamBlock& add(const std::string& name, int rows, int cols);
    bool has(const std::string& name) const { return index_.count(name) > 0; }
    ParamBlock& block(const std::string& name);
    const ParamBlock& block(const std::string& name) const;
    int block_index(const std::string& name) const;
    ParamBlock& block_at(int idx) { return blocks_[static_cast<std::size_t>(idx)]; }
    const ParamBlock& block_at(int idx) const { return blocks_[static_cast<std::size_t>(idx)]; }
    std::vector<ParamBlock>& blocks() { return blocks_; }
    const std::vector<ParamBlock>& blocks() const { return blocks_; }

    void zero_grad();
    void scale_grad(double factor);

    // Glorot-uniform matrices, zero vectors; blocks named "*.bf" get +1
    // (forget-gate bias). Deterministic in registration order.
    void init(std::uint64_t seed);

    // standard bias-corrected update; t is the 1-based step counter
    void adam_step(const AdamConfig& cfg, long t);

    bool values_finite() const;
    double grad_norm(const std::string& prefix) const;

    // checkpoint serialization, format tag "topo-seq-ckpt-v1"
    std::string to_checkpoint(const nlohmann::ordered_json& meta) const;
    static std::pair<ParamStore, nlohmann::json> from_checkpoint(const std::string& text);

private:
    std::vector<ParamBlock> blocks_;
    std::map<std::string, int> index_;
};

// y = W x + b with optional tanh; cache receives the post-activation output
void dense_register(ParamStore& store, const std::string& prefix, int out_dim, int in_dim);
void dense_forward(const ParamStore& store, const std::string& prefix, const Vec& x, Vec& y,
                   bool tanh_act);
// dy is the gradient at the output (post-activation); accumulates into dx
void dense_backward(ParamStore& store, const std::string& prefix, const Vec& x, const Vec& y,
                    const Vec& dy, bool tanh_act, Vec& dx);

}  // namespace facetopo::nn
