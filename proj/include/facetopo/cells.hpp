#pragma once

#include <string>
#include <vector>

#include "facetopo/nn.hpp"

namespace facetopo::nn {

struct LstmSpec {
    int input_dim = 0;
    int hidden_dim = 0;
    bool peephole = true;
};

struct LstmCache {
    int T = 0;
    // per step, post-activation: gate_i/f/o in (0,1), cand in (-1,1)
    std::vector<Vec> x, gate_i, gate_f, cand, gate_o, c, tanh_c, h;
};

void lstm_register(ParamStore& store, const std::string& prefix, const LstmSpec& spec);
void lstm_forward(const ParamStore& store, const std::string& prefix, const LstmSpec& spec,
                  const std::vector<Vec>& inputs, std::vector<Vec>& hidden, LstmCache* cache);
// d_hidden holds dL/dh_t for every step; parameter gradients are accumulated
// into the store and dL/dx_t is returned
std::vector<Vec> lstm_backward(ParamStore& store, const std::string& prefix, const LstmSpec& spec,
                               const LstmCache& cache, const std::vector<Vec>& d_hidden);

struct GruSpec {
    int input_dim = 0;
    int hidden_dim = 0;
};

struct GruCache {
    int T = 0;
    std::vector<Vec> x, update_z, reset_r, cand, h;
};

void gru_register(ParamStore& store, const std::string& prefix, const GruSpec& spec);
void gru_forward(const ParamStore& store, const std::string& prefix, const GruSpec& spec,
                 const std::vector<Vec>& inputs, std::vector<Vec>& hidden, GruCache* cache);
std::vector<Vec> gru_backward(ParamStore& store, const std::string& prefix, const GruSpec& spec,
                              const GruCache& cache, const std::vector<Vec>& d_hidden);

enum class CellType { lstm, gru, bilstm, bigru };

CellType cell_type_from_string(const std::string& s);
std::string cell_type_to_string(CellType t);

// Unified sequential-learner front. Bidirectional variants run two cells and
// concatenate, so output_dim is 2 * hidden_dim for them.
struct CellSpec {
    CellType type = CellType::lstm;
    int input_dim = 0;
    int hidden_dim = 0;
    bool peephole = true;

    bool bidirectional() const { return type == CellType::bilstm || type == CellType::bigru; }
    int output_dim() const { return bidirectional() ? 2 * hidden_dim : hidden_dim; }
};

struct CellCache {
    LstmCache lstm_fwd, lstm_bwd;
    GruCache gru_fwd, gru_bwd;
};

void cell_register(ParamStore& store, const std::string& prefix, const CellSpec& spec);
void cell_forward(const ParamStore& store, const std::string& prefix, const CellSpec& spec,
                  const std::vector<Vec>& inputs, std::vector<Vec>& hidden, CellCache* cache);
std::vector<Vec> cell_backward(ParamStore& store, const std::string& prefix, const CellSpec& spec,
                               const CellCache& cache, const std::vector<Vec>& d_hidden);

// Soft attention over hidden states: score_t = tanh(w . h_t + b), weights are
// the softmax of the scores, context is the weighted sum of hidden states.
struct AttnCache {
    Vec scores;  // post-tanh
    Vec delta;
};

void attention_register(ParamStore& store, const std::string& prefix, int hidden_dim);
void attention_forward(const ParamStore& store, const std::string& prefix,
                       const std::vector<Vec>& hidden, Vec& context, Vec& delta,
                       AttnCache* cache);
void attention_backward(ParamStore& store, const std::string& prefix,
                        const std::vector<Vec>& hidden, const AttnCache& cache,
                        const Vec& d_context, std::vector<Vec>& d_hidden);

}  // namespace facetopo::nn
