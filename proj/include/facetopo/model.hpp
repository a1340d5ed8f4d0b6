#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "facetopo/cells.hpp"
#include "facetopo/nn.hpp"
#include "facetopo/topology.hpp"

namespace facetopo::model {

struct ModelSpec {
    int n = 15;
    int num_classes = 4;
    int hidden_dim = 32;
    int stream_dim = 32;  // T*/S* encoder width
    int embed_dim = 16;   // patch embedding width
    int patch_size = 17;
    int conv1_channels = 4;
    int conv2_channels = 8;
    nn::CellType cell = nn::CellType::lstm;
    bool peephole = true;
    double focal_gamma = 2.0;
    double focal_alpha = 0.25;

    void validate() const;
    int pooled_side() const { return patch_size / 2; }
    int encoder_flat_dim() const { return conv2_channels * pooled_side() * pooled_side(); }
    int cell_output_dim() const;
};

// One classification input. coords is 2 x n row-major (x row, then y row) in
// normalized units. Exactly one of patches / embeddings feeds the texture
// stream: patches go through the trainable encoder, embeddings bypass it
// (extension point for precomputed external encoders).
struct SampleView {
    std::span<const double> coords;
    const std::vector<nn::Vec>* patches = nullptr;     // n patches, each a*a row-major
    const std::vector<nn::Vec>* embeddings = nullptr;  // n rows of embed_dim
};

struct StreamOut {
    nn::Vec context;  // H
    nn::Vec probs;    // aux classifier output
    nn::Vec delta;    // attention weights
};

struct FusionOut {
    nn::Vec fused;  // y
    nn::Vec gate;   // eta = (eta_T, eta_S)
    nn::Vec probs;
};

struct ForwardResult {
    nn::Vec fusion_probs, structure_probs, texture_probs;
    nn::Vec fused, gate;
    double loss_fusion = 0.0, loss_structure = 0.0, loss_texture = 0.0, total = 0.0;
};

struct ForwardCache;  // opaque; defined in model.cpp

class Model {
public:
    explicit Model(ModelSpec spec);
    Model(const Model& other);
    Model& operator=(const Model& other);
    ~Model();

    const ModelSpec& spec() const { return spec_; }
    nn::ParamStore& params() { return params_; }
    const nn::ParamStore& params() const { return params_; }

    void init_params(std::uint64_t seed) { params_.init(seed); }
    void set_traversal(const topo::TraversalSequence& seq);
    const std::vector<int>& traversal() const { return seq_; }

    // traversal-ordered 2-dim coordinate sequence (the zeta columns)
    std::vector<nn::Vec> structure_inputs(std::span<const double> coords) const;

    StreamOut structure_forward(std::span<const double> coords) const;
    StreamOut texture_forward(const SampleView& s) const;
    FusionOut fuse(const nn::Vec& h_texture, const nn::Vec& h_structure) const;

    ForwardResult forward(const SampleView& s, int target = -1) const;
    // forward + backward; gradients are accumulated into the store
    ForwardResult train_sample(const SampleView& s, int target);
    int predict(const SampleView& s, nn::Vec* probs = nullptr) const;

    static double total_loss(double l_fusion, double l_structure, double l_texture) {
        return (l_fusion + l_structure + l_texture) / 3.0;
    }

    std::string to_checkpoint() const;
    static Model from_checkpoint(const std::string& text);

private:
    void register_blocks();
    void forward_impl(const SampleView& s, int target, ForwardResult& out,
                      ForwardCache* cache) const;

    ModelSpec spec_;
    nn::ParamStore params_;
    std::vector<int> seq_;  // traversal vertices, length 2n-1
    nn::CellSpec struct_cell_, tex_cell_;
};

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::string worst_block;
    std::vector<std::pair<std::string, double>> per_block;  // registration order
};

// Full-model analytic vs central finite differences on a random sample.
// perturb_block injects an artificial error into one block's analytic
// gradient (test fixture for "does the check actually catch bugs").
GradCheckReport gradient_check(const ModelSpec& spec, std::uint64_t seed,
                               const std::string& perturb_block = "", double fd_step = 1e-4);

// Precomputed-embedding CSV: header dim_0..dim_{d-1}, one row per landmark.
std::vector<nn::Vec> load_embedding_csv(const std::string& path);
void save_embedding_csv(const std::string& path, const std::vector<nn::Vec>& rows);

}  // namespace facetopo::model
