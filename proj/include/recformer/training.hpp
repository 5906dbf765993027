#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "recformer/autodiff.hpp"
#include "recformer/data.hpp"
#include "recformer/graph.hpp"
#include "recformer/model.hpp"

namespace recformer::train {

struct TrainConfig {
    double lr = 0.001;
    double beta = 1.0;
    int k_neighbors = 10;
    int e1 = 50;
    int e2 = 50;
    int batch_size = 128;
    std::uint64_t seed = 0;
    int kmeans_restarts = 10;
    bool stage2_reinit = false;  // default: Stage 2 continues from Stage-1 weights

    void validate() const;
};

struct EpochLoss {
    int stage = 0;
    int epoch = 0;  // 1-based within its stage
    double recon = 0.0;
    double graph = 0.0;
    double total = 0.0;
};

// --- losses ------------------------------------------------------------

// Availability-masked reconstruction error over a batch:
//   (1/(m*b)) sum_v (1/d_v) sum_i ||x_bar[i,:] - x[i,:]||^2 * W[i,v]
ad::Var recon_loss_masked(ad::Tape& tape, const std::vector<ad::Var>& x_bar,
                          const std::vector<Matrix>& targets, const model::MaskRows& mask_rows);

// Degenerate form with W = 1 against the imputed targets.
ad::Var recon_loss_full(ad::Tape& tape, const std::vector<ad::Var>& x_bar,
                        const std::vector<Matrix>& targets);

// recon + beta * graph; graph may be null (Stage-1 epoch 1).
ad::Var total_loss(ad::Tape& tape, ad::Var recon, const ad::Var* graph_term, double beta);

// --- optimizer ----------------------------------------------------------

struct AdamState {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::int64_t t = 0;
    std::vector<std::vector<double>> m1, m2;  // per parameter

    static AdamState for_params(const std::vector<ad::Tensor*>& params);
};

// One bias-corrected Adam update. Every parameter must carry a gradient.
void adam_step(const std::vector<ad::Tensor*>& params, AdamState& adam, double lr);

// --- stages ---------------------------------------------------------------

struct Stage1Result {
    std::vector<Matrix> x_prime;               // recovered views, normalized scale
    std::vector<graph::NeighborGraph> graphs;  // built from the final epoch's X'
    graph::EmbeddingBuffer buffer;
    std::vector<EpochLoss> losses;
};

// Recovery training on the zero-filled, normalized dataset. The network
// input stays the original zero-filled data for all of Stage 1; X' and
// the graphs are refreshed after every epoch.
Stage1Result train_stage1(const data::MultiViewDataset& net_input, const data::MaskMatrix& mask,
                          model::ModelState& state, const TrainConfig& config);

struct Stage2Result {
    Matrix z_bar;  // n x d_e fused embeddings after the final epoch
    std::vector<EpochLoss> losses;
};

// Complete-data clustering training over the fixed X' with fixed graphs.
// The embedding buffer keeps refreshing; the graphs never do.
Stage2Result train_stage2(const std::vector<Matrix>& x_prime,
                          const std::vector<graph::NeighborGraph>& fixed_graphs,
                          graph::EmbeddingBuffer& buffer, model::ModelState& state,
                          const TrainConfig& config);

// --- pipeline --------------------------------------------------------------

struct Metrics {
    double acc = 0.0;
    double nmi = 0.0;
    double purity = 0.0;
};

struct PipelineResult {
    std::vector<Matrix> recovered_views;  // X', normalized scale
    std::vector<graph::NeighborGraph> graphs;
    Matrix z_bar;
    std::vector<int> predictions;
    double kmeans_inertia = 0.0;
    std::optional<Metrics> metrics;
    std::vector<EpochLoss> losses;
    model::ModelState model;
    data::ScalingParams scaling;
};

// load -> normalize -> zero-fill -> Stage 1 -> Stage 2 -> k-means on the
// fused embeddings; one master seed drives every random draw.
PipelineResult run_pipeline(const data::MultiViewDataset& raw, const data::MaskMatrix& mask,
                            const TrainConfig& tconfig, model::ModelConfig mconfig);

// Chunked whole-dataset forward pass (no buffer updates, no gradients kept).
struct FullForward {
    std::vector<Matrix> x_bar;  // per view n x d_v
    Matrix z_bar;               // n x d_e
};
FullForward forward_full(model::ModelState& state, const std::vector<Matrix>& views,
                         const data::MaskMatrix* mask, model::Stage stage, int chunk_size);

// Run-directory layout: config.json, losses.csv, model.json, scaling.json,
// recovered_view_<v>.csv, embeddings.csv, predictions.csv, graphs.csv and,
// when labels were present, metrics.json.
void persist_run(const std::string& run_dir, const PipelineResult& result,
                 const TrainConfig& tconfig, const model::ModelConfig& mconfig);

void write_losses_csv(const std::string& path, const std::vector<EpochLoss>& losses);

}  // namespace recformer::train
