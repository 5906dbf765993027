#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "recformer/autodiff.hpp"
#include "recformer/data.hpp"

namespace recformer::model {

enum class Stage { one, two };

struct ModelConfig {
    int d_e = 128;
    int heads = 4;
    int layers = 1;
    int mlp_hidden = 256;
    std::vector<int> view_dims;
    bool residual = true;
    double ln_eps = 1e-5;

    int head_dim() const { return d_e / heads; }
    int views() const { return static_cast<int>(view_dims.size()); }
    void validate() const;
};

// One transformer-style block: per-head q/k/v projections, output
// projection, post-norm, and a two-layer ReLU MLP with its own post-norm.
struct AttentionBlock {
    std::vector<ad::Tensor> wq, wk, wv;  // per head: d_e x d_h
    ad::Tensor wo, bo;                   // d_e x d_e, d_e
    ad::Tensor ln1_gamma, ln1_beta;
    ad::Tensor w1, b1;  // d_e x mlp_hidden
    ad::Tensor w2, b2;  // mlp_hidden x d_e
    ad::Tensor ln2_gamma, ln2_beta;
};

struct ModelState {
    ModelConfig config;
    std::vector<ad::Tensor> extractor_w, extractor_b;  // per view: d_v x d_e
    std::vector<AttentionBlock> encoder, decoder;      // config.layers blocks each
    std::vector<ad::Tensor> head_w, head_b;            // per view: d_e x d_v

    std::vector<std::pair<std::string, ad::Tensor*>> named_parameters();
    std::vector<ad::Tensor*> parameters();
    void zero_grad();
    std::int64_t parameter_count() const;  // pure function of config
};

// Xavier-uniform weights (+-sqrt(6 / (fan_in + fan_out))), zero biases,
// unit gammas; deterministic per seed.
ModelState init_params(const ModelConfig& config, std::uint64_t seed);

void save_checkpoint(const std::string& path, const ModelState& state);
ModelState load_checkpoint(const std::string& path);

// Tape handles for every parameter, bound once per forward pass.
struct BlockVars {
    std::vector<ad::Var> wq, wk, wv;
    ad::Var wo, bo, ln1_gamma, ln1_beta, w1, b1, w2, b2, ln2_gamma, ln2_beta;
};

struct ModelVars {
    std::vector<ad::Var> extractor_w, extractor_b;
    std::vector<BlockVars> encoder, decoder;
    std::vector<ad::Var> head_w, head_b;

    static ModelVars bind(ad::Tape& tape, ModelState& state);
};

// Availability rows for a batch; empty pointer means Stage-2 (no masking).
using MaskRows = std::vector<std::vector<double>>;

// Per-view low-level extraction: relu(X_v * Phi_v + b_v), one b x d_e
// block per view.
std::vector<ad::Var> extract_low_level(ad::Tape& tape, const ModelVars& vars,
                                       const std::vector<Matrix>& batch_views);

// Multi-head cross-view attention for one sample: per-head
// scores QK^T/sqrt(d_h), Stage-1 zerofill with the outer product of the
// availability row, softmax, aggregation, heads concatenated. Returns A
// (m x d_e) without the output projection.
ad::Var cross_view_attention(ad::Tape& tape, const BlockVars& block, ad::Var x,
                             const std::vector<double>* w_row, const ModelConfig& config);

// Full block: attention -> output projection -> (residual) -> layer norm
// -> MLP -> (residual) -> layer norm.
ad::Var attention_block(ad::Tape& tape, const BlockVars& block, ad::Var x,
                        const std::vector<double>* w_row, const ModelConfig& config);

// Same block over a whole batch stacked as [b*m x d_e] (sample-major rows);
// bit-identical per sample to attention_block. mask_rows applies the
// Stage-1 zerofill per sample; null means Stage 2.
ad::Var attention_block_batched(ad::Tape& tape, const BlockVars& block, ad::Var x_all,
                                const MaskRows* mask_rows, const ModelConfig& config);

// Cross-view encoder over a batch; result holds one m x d_e tensor per
// sample. mask_rows must be given in Stage 1 and absent in Stage 2.
std::vector<ad::Var> encode(ad::Tape& tape, const ModelVars& vars,
                            const std::vector<Matrix>& batch_views, const MaskRows* mask_rows,
                            const ModelConfig& config, Stage stage);

// Availability-weighted fusion per sample; plain mean in Stage 2.
std::vector<ad::Var> fuse(ad::Tape& tape, const std::vector<ad::Var>& z_rows,
                          const MaskRows* mask_rows, Stage stage);

// Symmetric decoder: each fused row replicated m times, passed through the
// decoder blocks unmasked, then per-view linear heads. Returns one
// b x d_v block per view.
std::vector<ad::Var> decode(ad::Tape& tape, const ModelVars& vars, ad::Var z_bar,
                            const ModelConfig& config);

// Stacks per-sample embeddings into per-view b x d_e blocks.
std::vector<ad::Var> view_blocks(ad::Tape& tape, const std::vector<ad::Var>& z_rows, int m);

// One full forward pass over a batch.
struct BatchForward {
    ad::Var z_all;                 // stacked embeddings: (b*m) x d_e
    std::vector<ad::Var> z_rows;   // per sample: m x d_e
    std::vector<ad::Var> z_views;  // per view: b x d_e
    ad::Var z_bar;                 // fused: b x d_e
    std::vector<ad::Var> x_bar;    // per view: b x d_v
};

BatchForward forward_batch(ad::Tape& tape, ModelState& state,
                           const std::vector<Matrix>& batch_views, const MaskRows* mask_rows,
                           Stage stage);

// Select the batch rows of every view (and of the mask) for a batch.
std::vector<Matrix> slice_batch_views(const std::vector<Matrix>& views,
                                      const std::vector<int>& batch_indices);
MaskRows slice_mask_rows(const data::MaskMatrix& mask, const std::vector<int>& batch_indices);

}  // namespace recformer::model
