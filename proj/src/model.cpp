#include "facetopo/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "facetopo/errors.hpp"

namespace facetopo::model {

using nn::Vec;

void ModelSpec::validate() const {
    if (n < 2) throw validation_error("model: n must be at least 2");
    if (num_classes < 2) throw validation_error("model: need at least 2 classes");
    if (hidden_dim < 1 || stream_dim < 1 || embed_dim < 1)
        throw validation_error("model: dims must be positive");
    if (patch_size < 4)
        throw validation_error("model: patch_size must be at least 4 for the encoder pooling");
    if (conv1_channels < 1 || conv2_channels < 1)
        throw validation_error("model: conv channel counts must be positive");
}

int ModelSpec::cell_output_dim() const {
    nn::CellSpec c;
    c.type = cell;
    c.hidden_dim = hidden_dim;
    return c.output_dim();
}

namespace {

struct EncCache {
    Vec a1, a2, pooled, psi;
};

// conv 3x3, stride 1, zero padding; activations channel-major [(ch*a)+y]*a+x
void encoder_forward(const nn::ParamStore& store, const ModelSpec& spec, const Vec& patch,
                     Vec& psi, EncCache* cache) {
    int a = spec.patch_size;
    int c1 = spec.conv1_channels, c2 = spec.conv2_channels;
    if (static_cast<int>(patch.size()) != a * a)
        throw dimension_error("patch encoder: patch must be " + std::to_string(a) + "x" +
                              std::to_string(a));
    const auto& W1 = store.block("texture.enc.conv1.W");
    const auto& b1 = store.block("texture.enc.conv1.b");
    const auto& W2 = store.block("texture.enc.conv2.W");
    const auto& b2 = store.block("texture.enc.conv2.b");

    Vec a1(static_cast<std::size_t>(c1) * a * a);
    for (int oc = 0; oc < c1; ++oc) {
        const double* w = &W1.value[static_cast<std::size_t>(oc) * 9];
        for (int y = 0; y < a; ++y) {
            for (int x = 0; x < a; ++x) {
                double acc = b1.value[static_cast<std::size_t>(oc)];
                for (int ky = 0; ky < 3; ++ky) {
                    int iy = y + ky - 1;
                    if (iy < 0 || iy >= a) continue;
                    for (int kx = 0; kx < 3; ++kx) {
                        int ix = x + kx - 1;
                        if (ix < 0 || ix >= a) continue;
                        acc += w[ky * 3 + kx] * patch[static_cast<std::size_t>(iy * a + ix)];
                    }
                }
                a1[(static_cast<std::size_t>(oc) * a + y) * a + x] = std::tanh(acc);
            }
        }
    }

    Vec a2(static_cast<std::size_t>(c2) * a * a);
    for (int oc = 0; oc < c2; ++oc) {
        for (int y = 0; y < a; ++y) {
            for (int x = 0; x < a; ++x) {
                double acc = b2.value[static_cast<std::size_t>(oc)];
                for (int ic = 0; ic < c1; ++ic) {
                    const double* w = &W2.value[(static_cast<std::size_t>(oc) * c1 + ic) * 9];
                    for (int ky = 0; ky < 3; ++ky) {
                        int iy = y + ky - 1;
                        if (iy < 0 || iy >= a) continue;
                        for (int kx = 0; kx < 3; ++kx) {
                            int ix = x + kx - 1;
                            if (ix < 0 || ix >= a) continue;
                            acc += w[ky * 3 + kx] * a1[(static_cast<std::size_t>(ic) * a + iy) * a + ix];
                        }
                    }
                }
                a2[(static_cast<std::size_t>(oc) * a + y) * a + x] = std::tanh(acc);
            }
        }
    }

    int p = spec.pooled_side();
    Vec pooled(static_cast<std::size_t>(c2) * p * p);
    for (int oc = 0; oc < c2; ++oc) {
        for (int py = 0; py < p; ++py) {
            for (int px = 0; px < p; ++px) {
                double acc = 0.0;
                for (int dy = 0; dy < 2; ++dy)
                    for (int dx = 0; dx < 2; ++dx)
                        acc += a2[(static_cast<std::size_t>(oc) * a + 2 * py + dy) * a + 2 * px + dx];
                pooled[(static_cast<std::size_t>(oc) * p + py) * p + px] = acc / 4.0;
            }
        }
    }

    nn::dense_forward(store, "texture.enc.out", pooled, psi, true);
    if (cache) {
        cache->a1 = std::move(a1);
        cache->a2 = std::move(a2);
        cache->pooled = std::move(pooled);
        cache->psi = psi;
    }
}

void encoder_backward(nn::ParamStore& store, const ModelSpec& spec, const Vec& patch,
                      const EncCache& cache, const Vec& d_psi) {
    int a = spec.patch_size;
    int c1 = spec.conv1_channels, c2 = spec.conv2_channels;
    int p = spec.pooled_side();

    Vec d_pooled;
    nn::dense_backward(store, "texture.enc.out", cache.pooled, cache.psi, d_psi, true, d_pooled);

    Vec d_a2(cache.a2.size(), 0.0);
    for (int oc = 0; oc < c2; ++oc)
        for (int py = 0; py < p; ++py)
            for (int px = 0; px < p; ++px) {
                double d = d_pooled[(static_cast<std::size_t>(oc) * p + py) * p + px] / 4.0;
                for (int dy = 0; dy < 2; ++dy)
                    for (int dx = 0; dx < 2; ++dx)
                        d_a2[(static_cast<std::size_t>(oc) * a + 2 * py + dy) * a + 2 * px + dx] += d;
            }

    auto& W2 = store.block("texture.enc.conv2.W");
    auto& b2 = store.block("texture.enc.conv2.b");
    Vec d_a1(cache.a1.size(), 0.0);
    for (int oc = 0; oc < c2; ++oc) {
        for (int y = 0; y < a; ++y) {
            for (int x = 0; x < a; ++x) {
                double out = cache.a2[(static_cast<std::size_t>(oc) * a + y) * a + x];
                double d_pre = d_a2[(static_cast<std::size_t>(oc) * a + y) * a + x] * (1.0 - out * out);
                if (d_pre == 0.0) continue;
                b2.grad[static_cast<std::size_t>(oc)] += d_pre;
                for (int ic = 0; ic < c1; ++ic) {
                    double* wg = &W2.grad[(static_cast<std::size_t>(oc) * c1 + ic) * 9];
                    const double* wv = &W2.value[(static_cast<std::size_t>(oc) * c1 + ic) * 9];
                    for (int ky = 0; ky < 3; ++ky) {
                        int iy = y + ky - 1;
                        if (iy < 0 || iy >= a) continue;
                        for (int kx = 0; kx < 3; ++kx) {
                            int ix = x + kx - 1;
                            if (ix < 0 || ix >= a) continue;
                            std::size_t in_idx = (static_cast<std::size_t>(ic) * a + iy) * a + ix;
                            wg[ky * 3 + kx] += d_pre * cache.a1[in_idx];
                            d_a1[in_idx] += wv[ky * 3 + kx] * d_pre;
                        }
                    }
                }
            }
        }
    }

    auto& W1 = store.block("texture.enc.conv1.W");
    auto& b1 = store.block("texture.enc.conv1.b");
    for (int oc = 0; oc < c1; ++oc) {
        double* wg = &W1.grad[static_cast<std::size_t>(oc) * 9];
        for (int y = 0; y < a; ++y) {
            for (int x = 0; x < a; ++x) {
                double out = cache.a1[(static_cast<std::size_t>(oc) * a + y) * a + x];
                double d_pre = d_a1[(static_cast<std::size_t>(oc) * a + y) * a + x] * (1.0 - out * out);
                if (d_pre == 0.0) continue;
                b1.grad[static_cast<std::size_t>(oc)] += d_pre;
                for (int ky = 0; ky < 3; ++ky) {
                    int iy = y + ky - 1;
                    if (iy < 0 || iy >= a) continue;
                    for (int kx = 0; kx < 3; ++kx) {
                        int ix = x + kx - 1;
                        if (ix < 0 || ix >= a) continue;
                        wg[ky * 3 + kx] += d_pre * patch[static_cast<std::size_t>(iy * a + ix)];
                    }
                }
            }
        }
    }
}

}  // namespace

struct ForwardCache {
    std::vector<Vec> struct_inputs, struct_hidden;
    nn::CellCache struct_cell;
    nn::AttnCache struct_attn;
    Vec h_structure, struct_logits, struct_probs;

    bool used_embeddings = false;
    std::vector<EncCache> enc;  // per landmark
    std::vector<Vec> psi;       // per landmark
    std::vector<Vec> tex_inputs, tex_hidden;
    nn::CellCache tex_cell;
    nn::AttnCache tex_attn;
    Vec h_texture, tex_logits, tex_probs;

    Vec t_star, s_star, gate_post, eta, ycat, fused, logits, probs;
};

Model::Model(ModelSpec spec) : spec_(std::move(spec)) {
    spec_.validate();
    struct_cell_ = {spec_.cell, 2, spec_.hidden_dim, spec_.peephole};
    tex_cell_ = {spec_.cell, spec_.embed_dim, spec_.hidden_dim, spec_.peephole};
    register_blocks();
    // identity traversal fallback so a model is usable before set_traversal;
    // real pipelines always install a tree-derived sequence
    topo::SpanningTree chain;
    chain.n = spec_.n;
    chain.root = 0;
    chain.parent.assign(static_cast<std::size_t>(spec_.n), -1);
    chain.children.assign(static_cast<std::size_t>(spec_.n), {});
    for (int v = 1; v < spec_.n; ++v) {
        chain.parent[static_cast<std::size_t>(v)] = v - 1;
        chain.children[static_cast<std::size_t>(v - 1)].push_back(v);
    }
    set_traversal(topo::euler_tour(chain));
}

Model::Model(const Model& other) = default;
Model& Model::operator=(const Model& other) = default;
Model::~Model() = default;

void Model::register_blocks() {
    int d = spec_.cell_output_dim();
    nn::cell_register(params_, "structure.cell", struct_cell_);
    nn::attention_register(params_, "structure.attn", d);
    nn::dense_register(params_, "structure.aux", spec_.num_classes, d);

    params_.add("texture.enc.conv1.W", spec_.conv1_channels, 9);
    params_.add("texture.enc.conv1.b", spec_.conv1_channels, 1);
    params_.add("texture.enc.conv2.W", spec_.conv2_channels, spec_.conv1_channels * 9);
    params_.add("texture.enc.conv2.b", spec_.conv2_channels, 1);
    nn::dense_register(params_, "texture.enc.out", spec_.embed_dim, spec_.encoder_flat_dim());
    nn::cell_register(params_, "texture.cell", tex_cell_);
    nn::attention_register(params_, "texture.attn", d);
    nn::dense_register(params_, "texture.aux", spec_.num_classes, d);

    nn::dense_register(params_, "fusion.enc_t", spec_.stream_dim, d);
    nn::dense_register(params_, "fusion.enc_s", spec_.stream_dim, d);
    nn::dense_register(params_, "fusion.gate", 2, 2 * spec_.stream_dim);
    nn::dense_register(params_, "fusion.comb", spec_.stream_dim, 2 * d);
    nn::dense_register(params_, "fusion.cls", spec_.num_classes, spec_.stream_dim);
}

void Model::set_traversal(const topo::TraversalSequence& seq) {
    if (seq.n != spec_.n)
        throw dimension_error("traversal is for n=" + std::to_string(seq.n) + ", model has n=" +
                              std::to_string(spec_.n));
    if (static_cast<int>(seq.vertices.size()) != 2 * spec_.n - 1)
        throw dimension_error("traversal must have length 2n-1");
    for (int v : seq.vertices)
        if (v < 0 || v >= spec_.n) throw validation_error("traversal vertex out of range");
    seq_ = seq.vertices;
}

std::vector<Vec> Model::structure_inputs(std::span<const double> coords) const {
    int n = spec_.n;
    if (static_cast<int>(coords.size()) != 2 * n)
        throw dimension_error("coords must be 2 x n row-major");
    for (double v : coords)
        if (!std::isfinite(v)) throw validation_error("coords must be finite");
    std::vector<Vec> inputs;
    inputs.reserve(seq_.size());
    for (int v : seq_)
        inputs.push_back({coords[static_cast<std::size_t>(v)], coords[static_cast<std::size_t>(n + v)]});
    return inputs;
}

void Model::forward_impl(const SampleView& s, int target, ForwardResult& out,
                         ForwardCache* cache) const {
    int n = spec_.n;
    ForwardCache local;
    ForwardCache& c = cache ? *cache : local;

    // structure stream
    c.struct_inputs = structure_inputs(s.coords);
    nn::cell_forward(params_, "structure.cell", struct_cell_, c.struct_inputs, c.struct_hidden,
                     cache ? &c.struct_cell : nullptr);
    Vec delta_s;
    nn::attention_forward(params_, "structure.attn", c.struct_hidden, c.h_structure, delta_s,
                          cache ? &c.struct_attn : nullptr);
    nn::dense_forward(params_, "structure.aux", c.h_structure, c.struct_logits, false);
    c.struct_probs = nn::softmax(c.struct_logits);

    // texture stream: encoder on patches, or precomputed embeddings
    c.psi.assign(static_cast<std::size_t>(n), Vec());
    if (s.embeddings) {
        if (static_cast<int>(s.embeddings->size()) != n)
            throw validation_error("need one embedding per landmark");
        for (int i = 0; i < n; ++i) {
            const Vec& e = (*s.embeddings)[static_cast<std::size_t>(i)];
            if (static_cast<int>(e.size()) != spec_.embed_dim)
                throw dimension_error("embedding dim " + std::to_string(e.size()) +
                                      " != model embed_dim " + std::to_string(spec_.embed_dim));
            c.psi[static_cast<std::size_t>(i)] = e;
        }
        c.used_embeddings = true;
    } else {
        if (!s.patches || static_cast<int>(s.patches->size()) != n)
            throw validation_error("need one patch per landmark");
        c.enc.assign(static_cast<std::size_t>(n), EncCache());
        for (int i = 0; i < n; ++i) {
            encoder_forward(params_, spec_, (*s.patches)[static_cast<std::size_t>(i)],
                            c.psi[static_cast<std::size_t>(i)],
                            cache ? &c.enc[static_cast<std::size_t>(i)] : nullptr);
        }
        c.used_embeddings = false;
    }
    c.tex_inputs.clear();
    c.tex_inputs.reserve(seq_.size());
    for (int v : seq_) c.tex_inputs.push_back(c.psi[static_cast<std::size_t>(v)]);
    nn::cell_forward(params_, "texture.cell", tex_cell_, c.tex_inputs, c.tex_hidden,
                     cache ? &c.tex_cell : nullptr);
    Vec delta_t;
    nn::attention_forward(params_, "texture.attn", c.tex_hidden, c.h_texture, delta_t,
                          cache ? &c.tex_attn : nullptr);
    nn::dense_forward(params_, "texture.aux", c.h_texture, c.tex_logits, false);
    c.tex_probs = nn::softmax(c.tex_logits);

    // fusion
    nn::dense_forward(params_, "fusion.enc_t", c.h_texture, c.t_star, true);
    nn::dense_forward(params_, "fusion.enc_s", c.h_structure, c.s_star, true);
    Vec u(c.t_star);
    u.insert(u.end(), c.s_star.begin(), c.s_star.end());
    nn::dense_forward(params_, "fusion.gate", u, c.gate_post, true);
    c.eta = nn::softmax(c.gate_post);
    int d = spec_.cell_output_dim();
    c.ycat.assign(static_cast<std::size_t>(2 * d), 0.0);
    for (int k = 0; k < d; ++k) {
        c.ycat[static_cast<std::size_t>(k)] = (1.0 + c.eta[0]) * c.h_texture[static_cast<std::size_t>(k)];
        c.ycat[static_cast<std::size_t>(d + k)] = (1.0 + c.eta[1]) * c.h_structure[static_cast<std::size_t>(k)];
    }
    nn::dense_forward(params_, "fusion.comb", c.ycat, c.fused, true);
    nn::dense_forward(params_, "fusion.cls", c.fused, c.logits, false);
    c.probs = nn::softmax(c.logits);

    out.fusion_probs = c.probs;
    out.structure_probs = c.struct_probs;
    out.texture_probs = c.tex_probs;
    out.fused = c.fused;
    out.gate = c.eta;
    if (target >= 0) {
        out.loss_fusion = nn::focal_loss(c.probs, target, spec_.focal_gamma, spec_.focal_alpha);
        out.loss_structure =
            nn::focal_loss(c.struct_probs, target, spec_.focal_gamma, spec_.focal_alpha);
        out.loss_texture = nn::focal_loss(c.tex_probs, target, spec_.focal_gamma, spec_.focal_alpha);
        out.total = total_loss(out.loss_fusion, out.loss_structure, out.loss_texture);
    }
}

ForwardResult Model::forward(const SampleView& s, int target) const {
    ForwardResult out;
    forward_impl(s, target, out, nullptr);
    return out;
}

StreamOut Model::structure_forward(std::span<const double> coords) const {
    auto inputs = structure_inputs(coords);
    std::vector<Vec> hidden;
    nn::cell_forward(params_, "structure.cell", struct_cell_, inputs, hidden, nullptr);
    StreamOut out;
    nn::attention_forward(params_, "structure.attn", hidden, out.context, out.delta, nullptr);
    Vec logits;
    nn::dense_forward(params_, "structure.aux", out.context, logits, false);
    out.probs = nn::softmax(logits);
    return out;
}

StreamOut Model::texture_forward(const SampleView& s) const {
    int n = spec_.n;
    std::vector<Vec> psi(static_cast<std::size_t>(n));
    if (s.embeddings) {
        if (static_cast<int>(s.embeddings->size()) != n)
            throw validation_error("need one embedding per landmark");
        psi = *s.embeddings;
    } else {
        if (!s.patches || static_cast<int>(s.patches->size()) != n)
            throw validation_error("need one patch per landmark");
        for (int i = 0; i < n; ++i)
            encoder_forward(params_, spec_, (*s.patches)[static_cast<std::size_t>(i)],
                            psi[static_cast<std::size_t>(i)], nullptr);
    }
    std::vector<Vec> inputs;
    inputs.reserve(seq_.size());
    for (int v : seq_) inputs.push_back(psi[static_cast<std::size_t>(v)]);
    std::vector<Vec> hidden;
    nn::cell_forward(params_, "texture.cell", tex_cell_, inputs, hidden, nullptr);
    StreamOut out;
    nn::attention_forward(params_, "texture.attn", hidden, out.context, out.delta, nullptr);
    Vec logits;
    nn::dense_forward(params_, "texture.aux", out.context, logits, false);
    out.probs = nn::softmax(logits);
    return out;
}

FusionOut Model::fuse(const Vec& h_texture, const Vec& h_structure) const {
    int d = spec_.cell_output_dim();
    if (static_cast<int>(h_texture.size()) != d || static_cast<int>(h_structure.size()) != d)
        throw dimension_error("fuse: context dims must equal the cell output dim");
    Vec t_star, s_star;
    nn::dense_forward(params_, "fusion.enc_t", h_texture, t_star, true);
    nn::dense_forward(params_, "fusion.enc_s", h_structure, s_star, true);
    Vec u(t_star);
    u.insert(u.end(), s_star.begin(), s_star.end());
    Vec gate_post;
    nn::dense_forward(params_, "fusion.gate", u, gate_post, true);
    FusionOut out;
    out.gate = nn::softmax(gate_post);
    Vec ycat(static_cast<std::size_t>(2 * d));
    for (int k = 0; k < d; ++k) {
        ycat[static_cast<std::size_t>(k)] = (1.0 + out.gate[0]) * h_texture[static_cast<std::size_t>(k)];
        ycat[static_cast<std::size_t>(d + k)] = (1.0 + out.gate[1]) * h_structure[static_cast<std::size_t>(k)];
    }
    nn::dense_forward(params_, "fusion.comb", ycat, out.fused, true);
    Vec logits;
    nn::dense_forward(params_, "fusion.cls", out.fused, logits, false);
    out.probs = nn::softmax(logits);
    return out;
}

ForwardResult Model::train_sample(const SampleView& s, int target) {
    if (target < 0 || target >= spec_.num_classes)
        throw validation_error("train_sample: target class out of range");
    ForwardResult out;
    ForwardCache c;
    forward_impl(s, target, out, &c);

    int d = spec_.cell_output_dim();
    // three focal heads, each weighted 1/3
    Vec d_logits =
        nn::softmax_focal_backward(c.probs, target, spec_.focal_gamma, spec_.focal_alpha);
    Vec d_logits_s =
        nn::softmax_focal_backward(c.struct_probs, target, spec_.focal_gamma, spec_.focal_alpha);
    Vec d_logits_t =
        nn::softmax_focal_backward(c.tex_probs, target, spec_.focal_gamma, spec_.focal_alpha);
    for (auto* v : {&d_logits, &d_logits_s, &d_logits_t})
        for (auto& x : *v) x /= 3.0;

    // fusion head
    Vec d_fused, d_ycat;
    nn::dense_backward(params_, "fusion.cls", c.fused, c.logits, d_logits, false, d_fused);
    nn::dense_backward(params_, "fusion.comb", c.ycat, c.fused, d_fused, true, d_ycat);

    Vec d_ht(static_cast<std::size_t>(d), 0.0), d_hs(static_cast<std::size_t>(d), 0.0);
    Vec d_eta(2, 0.0);
    for (int k = 0; k < d; ++k) {
        d_ht[static_cast<std::size_t>(k)] += (1.0 + c.eta[0]) * d_ycat[static_cast<std::size_t>(k)];
        d_eta[0] += d_ycat[static_cast<std::size_t>(k)] * c.h_texture[static_cast<std::size_t>(k)];
        d_hs[static_cast<std::size_t>(k)] += (1.0 + c.eta[1]) * d_ycat[static_cast<std::size_t>(d + k)];
        d_eta[1] += d_ycat[static_cast<std::size_t>(d + k)] * c.h_structure[static_cast<std::size_t>(k)];
    }
    // eta = softmax(gate_post)
    double dot = c.eta[0] * d_eta[0] + c.eta[1] * d_eta[1];
    Vec d_gate_post{c.eta[0] * (d_eta[0] - dot), c.eta[1] * (d_eta[1] - dot)};
    Vec u(c.t_star);
    u.insert(u.end(), c.s_star.begin(), c.s_star.end());
    Vec d_u;
    nn::dense_backward(params_, "fusion.gate", u, c.gate_post, d_gate_post, true, d_u);
    Vec d_tstar(d_u.begin(), d_u.begin() + spec_.stream_dim);
    Vec d_sstar(d_u.begin() + spec_.stream_dim, d_u.end());
    nn::dense_backward(params_, "fusion.enc_t", c.h_texture, c.t_star, d_tstar, true, d_ht);
    nn::dense_backward(params_, "fusion.enc_s", c.h_structure, c.s_star, d_sstar, true, d_hs);

    // aux heads
    nn::dense_backward(params_, "structure.aux", c.h_structure, c.struct_logits, d_logits_s, false,
                       d_hs);
    nn::dense_backward(params_, "texture.aux", c.h_texture, c.tex_logits, d_logits_t, false, d_ht);

    // attention + cells
    std::vector<Vec> d_struct_hidden, d_tex_hidden;
    nn::attention_backward(params_, "structure.attn", c.struct_hidden, c.struct_attn, d_hs,
                           d_struct_hidden);
    nn::attention_backward(params_, "texture.attn", c.tex_hidden, c.tex_attn, d_ht, d_tex_hidden);
    nn::cell_backward(params_, "structure.cell", struct_cell_, c.struct_cell, d_struct_hidden);
    auto d_tex_inputs = nn::cell_backward(params_, "texture.cell", tex_cell_, c.tex_cell,
                                          d_tex_hidden);

    if (!c.used_embeddings) {
        // scatter traversal-position gradients back to per-landmark embeddings
        std::vector<Vec> d_psi(static_cast<std::size_t>(spec_.n),
                               Vec(static_cast<std::size_t>(spec_.embed_dim), 0.0));
        for (std::size_t j = 0; j < seq_.size(); ++j) {
            Vec& acc = d_psi[static_cast<std::size_t>(seq_[j])];
            for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += d_tex_inputs[j][k];
        }
        for (int i = 0; i < spec_.n; ++i)
            encoder_backward(params_, spec_, (*s.patches)[static_cast<std::size_t>(i)],
                             c.enc[static_cast<std::size_t>(i)],
                             d_psi[static_cast<std::size_t>(i)]);
    }
    return out;
}

int Model::predict(const SampleView& s, Vec* probs) const {
    auto out = forward(s, -1);
    if (probs) *probs = out.fusion_probs;
    int best = 0;
    for (int k = 1; k < spec_.num_classes; ++k)
        if (out.fusion_probs[static_cast<std::size_t>(k)] > out.fusion_probs[static_cast<std::size_t>(best)])
            best = k;
    return best;
}

std::string Model::to_checkpoint() const {
    nlohmann::ordered_json meta;
    meta["n"] = spec_.n;
    meta["num_classes"] = spec_.num_classes;
    meta["hidden_dim"] = spec_.hidden_dim;
    meta["stream_dim"] = spec_.stream_dim;
    meta["embed_dim"] = spec_.embed_dim;
    meta["patch_size"] = spec_.patch_size;
    meta["conv1_channels"] = spec_.conv1_channels;
    meta["conv2_channels"] = spec_.conv2_channels;
    meta["cell"] = nn::cell_type_to_string(spec_.cell);
    meta["peephole"] = spec_.peephole;
    meta["focal_gamma"] = spec_.focal_gamma;
    meta["focal_alpha"] = spec_.focal_alpha;
    meta["traversal"] = seq_;
    return params_.to_checkpoint(meta);
}

Model Model::from_checkpoint(const std::string& text) {
    auto [store, meta] = nn::ParamStore::from_checkpoint(text);
    ModelSpec spec;
    try {
        spec.n = meta.at("n").get<int>();
        spec.num_classes = meta.at("num_classes").get<int>();
        spec.hidden_dim = meta.at("hidden_dim").get<int>();
        spec.stream_dim = meta.at("stream_dim").get<int>();
        spec.embed_dim = meta.at("embed_dim").get<int>();
        spec.patch_size = meta.at("patch_size").get<int>();
        spec.conv1_channels = meta.at("conv1_channels").get<int>();
        spec.conv2_channels = meta.at("conv2_channels").get<int>();
        spec.cell = nn::cell_type_from_string(meta.at("cell").get<std::string>());
        spec.peephole = meta.at("peephole").get<bool>();
        spec.focal_gamma = meta.at("focal_gamma").get<double>();
        spec.focal_alpha = meta.at("focal_alpha").get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw parse_error(std::string("checkpoint meta error: ") + e.what());
    }
    Model m(spec);
    if (meta.contains("traversal")) {
        topo::TraversalSequence seq;
        seq.n = spec.n;
        seq.vertices = meta["traversal"].get<std::vector<int>>();
        m.set_traversal(seq);
    }
    for (const auto& b : m.params_.blocks()) {
        if (!store.has(b.name)) throw parse_error("checkpoint missing block " + b.name);
    }
    for (auto& loaded : store.blocks()) {
        if (!m.params_.has(loaded.name)) throw parse_error("checkpoint has unknown block " + loaded.name);
        auto& dst = m.params_.block(loaded.name);
        if (dst.rows != loaded.rows || dst.cols != loaded.cols)
            throw parse_error("checkpoint block " + loaded.name + " has mismatched shape");
        dst.value = loaded.value;
    }
    return m;
}

GradCheckReport gradient_check(const ModelSpec& spec, std::uint64_t seed,
                               const std::string& perturb_block, double fd_step) {
    Model m(spec);
    m.init_params(mix_seed({seed, 0x6b61ull}));
    Rng rng(mix_seed({seed, 0x7361ull}));

    // fixed random topology for the check
    std::vector<double> w(static_cast<std::size_t>(topo::WeightedCompleteGraph::pair_count(spec.n)));
    for (auto& x : w) x = rng.uniform(-1.0, 1.0);
    auto tree = topo::prim_mst(topo::build_graph(spec.n, std::move(w)), 0);
    m.set_traversal(topo::euler_tour(tree));

    std::vector<double> coords(static_cast<std::size_t>(2 * spec.n));
    for (auto& x : coords) x = rng.uniform(-1.5, 1.5);
    std::vector<Vec> patches(static_cast<std::size_t>(spec.n),
                             Vec(static_cast<std::size_t>(spec.patch_size * spec.patch_size)));
    for (auto& p : patches)
        for (auto& x : p) x = rng.uniform01();
    int target = rng.uniform_int(spec.num_classes);

    SampleView view;
    view.coords = coords;
    view.patches = &patches;

    auto loss_at = [&]() { return m.forward(view, target).total; };

    m.params().zero_grad();
    m.train_sample(view, target);
    if (!perturb_block.empty()) {
        for (auto& g : m.params().block(perturb_block).grad) g += 1e-3;
    }

    GradCheckReport report;
    for (auto& blk : m.params().blocks()) {
        double block_worst = 0.0;
        for (std::size_t k = 0; k < blk.size(); ++k) {
            double keep = blk.value[k];
            blk.value[k] = keep + fd_step;
            double up = loss_at();
            blk.value[k] = keep - fd_step;
            double down = loss_at();
            blk.value[k] = keep;
            double numeric = (up - down) / (2.0 * fd_step);
            double analytic = blk.grad[k];
            double denom = std::max({std::fabs(numeric), std::fabs(analytic), 1e-3});
            block_worst = std::max(block_worst, std::fabs(numeric - analytic) / denom);
        }
        report.per_block.emplace_back(blk.name, block_worst);
        if (block_worst > report.max_rel_error) {
            report.max_rel_error = block_worst;
            report.worst_block = blk.name;
        }
    }
    return report;
}

std::vector<Vec> load_embedding_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw validation_error("cannot open embedding csv: " + path);
    std::string line;
    if (!std::getline(in, line)) throw parse_error(path + ": empty embedding csv");
    std::size_t dims = static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')) + 1;
    if (line.rfind("dim_0", 0) != 0) throw parse_error(path + " line 1: expected dim_0.. header");
    std::vector<Vec> rows;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        Vec row;
        std::stringstream ss(line);
        std::string field;
        while (std::getline(ss, field, ',')) {
            try {
                row.push_back(std::stod(field));
            } catch (const std::exception&) {
                throw parse_error(path + " line " + std::to_string(lineno) + ": bad number '" +
                                  field + "'");
            }
        }
        if (row.size() != dims)
            throw parse_error(path + " line " + std::to_string(lineno) + ": expected " +
                              std::to_string(dims) + " fields, got " + std::to_string(row.size()));
        rows.push_back(std::move(row));
    }
    return rows;
}

void save_embedding_csv(const std::string& path, const std::vector<Vec>& rows) {
    std::ofstream out(path);
    if (!out) throw validation_error("cannot write embedding csv: " + path);
    if (rows.empty()) throw validation_error("embedding csv needs at least one row");
    out.precision(17);
    for (std::size_t k = 0; k < rows[0].size(); ++k) out << (k ? "," : "") << "dim_" << k;
    out << '\n';
    for (const auto& row : rows) {
        for (std::size_t k = 0; k < row.size(); ++k) out << (k ? "," : "") << row[k];
        out << '\n';
    }
}

}  // namespace facetopo::model
