#include "recformer/training.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "json.hpp"
#include "recformer/cluster.hpp"
#include "recformer/csv.hpp"
#include "recformer/errors.hpp"
#include "recformer/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace recformer::train {

void TrainConfig::validate() const {
    if (lr <= 0.0) throw ConfigError("train config: lr must be positive");
    if (beta < 0.0) throw ConfigError("train config: beta must be non-negative");
    if (k_neighbors < 1) throw ConfigError("train config: k_neighbors must be >= 1");
    if (e1 < 1 || e2 < 1) throw ConfigError("train config: epoch counts must be >= 1");
    if (batch_size < 1) throw ConfigError("train config: batch size must be >= 1");
    if (kmeans_restarts < 1) throw ConfigError("train config: kmeans restarts must be >= 1");
}

ad::Var recon_loss_masked(ad::Tape& tape, const std::vector<ad::Var>& x_bar,
                          const std::vector<Matrix>& targets, const model::MaskRows& mask_rows) {
    if (x_bar.size() != targets.size())
        throw ShapeError("recon loss: " + std::to_string(x_bar.size()) +
                         " reconstructions for " + std::to_string(targets.size()) + " targets");
    const int m = static_cast<int>(targets.size());
    const int b = targets[0].rows;
    ad::Var loss;
    for (int v = 0; v < m; ++v) {
        const std::size_t sv = static_cast<std::size_t>(v);
        std::vector<double> weights(static_cast<std::size_t>(b));
        for (int i = 0; i < b; ++i)
            weights[static_cast<std::size_t>(i)] = mask_rows[static_cast<std::size_t>(i)][sv];
        ad::Var target = tape.constant_matrix(targets[sv]);
        ad::Var term = tape.row_weighted_sse(x_bar[sv], target, std::move(weights));
        term = tape.scale(term, 1.0 / (static_cast<double>(m) * b * targets[sv].cols));
        loss = loss.valid() ? tape.add(loss, term) : term;
    }
    return loss;
}

ad::Var recon_loss_full(ad::Tape& tape, const std::vector<ad::Var>& x_bar,
                        const std::vector<Matrix>& targets) {
    const int b = targets.empty() ? 0 : targets[0].rows;
    model::MaskRows ones(static_cast<std::size_t>(b),
                         std::vector<double>(targets.size(), 1.0));
    return recon_loss_masked(tape, x_bar, targets, ones);
}

ad::Var total_loss(ad::Tape& tape, ad::Var recon, const ad::Var* graph_term, double beta) {
    if (!graph_term) return recon;
    return tape.add(recon, tape.scale(*graph_term, beta));
}

AdamState AdamState::for_params(const std::vector<ad::Tensor*>& params) {
    AdamState s;
    for (const ad::Tensor* p : params) {
        s.m1.emplace_back(p->values.size(), 0.0);
        s.m2.emplace_back(p->values.size(), 0.0);
    }
    return s;
}

void adam_step(const std::vector<ad::Tensor*>& params, AdamState& adam, double lr) {
    if (adam.m1.size() != params.size())
        throw ConfigError("adam: state tracks " + std::to_string(adam.m1.size()) +
                          " parameters, got " + std::to_string(params.size()));
    for (const ad::Tensor* p : params)
        if (p->grad.size() != p->values.size())
            throw ConfigError("adam: parameter without gradient (shape " +
                              ad::shape_str(p->shape) + ")");
    adam.t += 1;
    const double bc1 = 1.0 - std::pow(adam.beta1, static_cast<double>(adam.t));
    const double bc2 = 1.0 - std::pow(adam.beta2, static_cast<double>(adam.t));
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        ad::Tensor& p = *params[pi];
        auto& m1 = adam.m1[pi];
        auto& m2 = adam.m2[pi];
        for (std::size_t k = 0; k < p.values.size(); ++k) {
            const double g = p.grad[k];
            m1[k] = adam.beta1 * m1[k] + (1.0 - adam.beta1) * g;
            m2[k] = adam.beta2 * m2[k] + (1.0 - adam.beta2) * g * g;
            const double mhat = m1[k] / bc1;
            const double vhat = m2[k] / bc2;
            p.values[k] -= lr * mhat / (std::sqrt(vhat) + adam.eps);
        }
    }
}

namespace {

std::vector<std::vector<int>> epoch_batches(int n, int batch_size, Rng& rng) {
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    std::vector<std::vector<int>> batches;
    for (int start = 0; start < n; start += batch_size) {
        const int end = std::min(n, start + batch_size);
        batches.emplace_back(order.begin() + start, order.begin() + end);
    }
    return batches;  // last partial batch kept
}

void check_finite(double loss, int stage, int epoch) {
    if (!std::isfinite(loss))
        throw NumericError("stage " + std::to_string(stage) + " epoch " + std::to_string(epoch) +
                           ": non-finite loss");
}

std::vector<ad::Tensor> detach_rows(const ad::Tape& tape, const std::vector<ad::Var>& vars) {
    std::vector<ad::Tensor> out;
    out.reserve(vars.size());
    for (ad::Var v : vars) out.push_back(tape.value(v));
    return out;
}

}  // namespace

FullForward forward_full(model::ModelState& state, const std::vector<Matrix>& views,
                         const data::MaskMatrix* mask, model::Stage stage, int chunk_size) {
    const int n = views[0].rows;
    const int m = static_cast<int>(views.size());
    FullForward out;
    out.z_bar = Matrix(n, state.config.d_e);
    for (int v = 0; v < m; ++v)
        out.x_bar.emplace_back(n, views[static_cast<std::size_t>(v)].cols);

    for (int start = 0; start < n; start += chunk_size) {
        const int end = std::min(n, start + chunk_size);
        std::vector<int> idx(static_cast<std::size_t>(end - start));
        std::iota(idx.begin(), idx.end(), start);

        std::vector<Matrix> chunk_views = model::slice_batch_views(views, idx);
        model::MaskRows mask_rows;
        if (mask) mask_rows = model::slice_mask_rows(*mask, idx);

        ad::Tape tape;
        model::BatchForward fwd = model::forward_batch(
            tape, state, chunk_views, mask ? &mask_rows : nullptr, stage);

        const ad::Tensor& zb = tape.value(fwd.z_bar);
        for (int i = 0; i < end - start; ++i)
            for (int j = 0; j < state.config.d_e; ++j)
                out.z_bar.at(start + i, j) = zb.at(i, j);
        for (int v = 0; v < m; ++v) {
            const ad::Tensor& xb = tape.value(fwd.x_bar[static_cast<std::size_t>(v)]);
            Matrix& dst = out.x_bar[static_cast<std::size_t>(v)];
            for (int i = 0; i < end - start; ++i)
                for (int j = 0; j < dst.cols; ++j) dst.at(start + i, j) = xb.at(i, j);
        }
    }
    return out;
}

Stage1Result train_stage1(const data::MultiViewDataset& net_input, const data::MaskMatrix& mask,
                          model::ModelState& state, const TrainConfig& config) {
    config.validate();
    mask.validate();
    const int n = net_input.n;
    const int m = net_input.m;

    Stage1Result result;
    result.buffer = graph::EmbeddingBuffer(n, m, state.config.d_e);

    AdamState adam = AdamState::for_params(state.parameters());
    const std::vector<ad::Tensor*> params = state.parameters();

    for (int epoch = 1; epoch <= config.e1; ++epoch) {
        Rng shuffle_rng(derive_seed(config.seed, 0x1000 + static_cast<std::uint64_t>(epoch)));
        double recon_sum = 0.0, graph_sum = 0.0, total_sum = 0.0;

        for (const std::vector<int>& batch : epoch_batches(n, config.batch_size, shuffle_rng)) {
            std::vector<Matrix> batch_views = model::slice_batch_views(net_input.views, batch);
            model::MaskRows mask_rows = model::slice_mask_rows(mask, batch);

            state.zero_grad();
            ad::Tape tape;
            model::BatchForward fwd =
                model::forward_batch(tape, state, batch_views, &mask_rows, model::Stage::one);

            ad::Var recon = recon_loss_masked(tape, fwd.x_bar, batch_views, mask_rows);
            ad::Var graph_term;
            const bool with_graph = epoch > 1;  // executed only if k > 1
            if (with_graph) {
                graph_term = graph::graph_loss_batch(tape, fwd.z_views, result.buffer,
                                                     result.graphs, batch);
            }
            ad::Var loss = total_loss(tape, recon, with_graph ? &graph_term : nullptr, config.beta);

            const double loss_value = tape.scalar_value(loss);
            check_finite(loss_value, 1, epoch);
            tape.backward(loss);
            adam_step(params, adam, config.lr);
            result.buffer.update(detach_rows(tape, fwd.z_rows), batch);

            const double bw = static_cast<double>(batch.size()) / n;
            recon_sum += tape.scalar_value(recon) * bw;
            if (with_graph) graph_sum += tape.scalar_value(graph_term) * bw;
            total_sum += loss_value * bw;
        }

        // End of epoch: impute X' from a full masked forward pass and
        // rebuild the graphs; the network input itself is never swapped.
        FullForward full =
            forward_full(state, net_input.views, &mask, model::Stage::one, config.batch_size);
        data::ImputedDataset imputed = data::impute_all(net_input, full.x_bar, mask);
        result.graphs = graph::rebuild_graphs(imputed, config.k_neighbors);
        result.x_prime = std::move(imputed.views);

        result.losses.push_back({1, epoch, recon_sum, graph_sum, total_sum});
    }
    return result;
}

Stage2Result train_stage2(const std::vector<Matrix>& x_prime,
                          const std::vector<graph::NeighborGraph>& fixed_graphs,
                          graph::EmbeddingBuffer& buffer, model::ModelState& state,
                          const TrainConfig& config) {
    config.validate();
    if (!buffer.filled())
        throw SequenceError("train_stage2: embedding buffer not filled by Stage 1");
    const int n = x_prime[0].rows;

    AdamState adam = AdamState::for_params(state.parameters());
    const std::vector<ad::Tensor*> params = state.parameters();

    Stage2Result result;
    for (int epoch = 1; epoch <= config.e2; ++epoch) {
        Rng shuffle_rng(derive_seed(config.seed, 0x2000 + static_cast<std::uint64_t>(epoch)));
        double recon_sum = 0.0, graph_sum = 0.0, total_sum = 0.0;

        for (const std::vector<int>& batch : epoch_batches(n, config.batch_size, shuffle_rng)) {
            std::vector<Matrix> batch_views = model::slice_batch_views(x_prime, batch);

            state.zero_grad();
            ad::Tape tape;
            model::BatchForward fwd =
                model::forward_batch(tape, state, batch_views, nullptr, model::Stage::two);

            ad::Var recon = recon_loss_full(tape, fwd.x_bar, batch_views);
            ad::Var graph_term =
                graph::graph_loss_batch(tape, fwd.z_views, buffer, fixed_graphs, batch);
            ad::Var loss = total_loss(tape, recon, &graph_term, config.beta);

            const double loss_value = tape.scalar_value(loss);
            check_finite(loss_value, 2, epoch);
            tape.backward(loss);
            adam_step(params, adam, config.lr);
            buffer.update(detach_rows(tape, fwd.z_rows), batch);

            const double bw = static_cast<double>(batch.size()) / n;
            recon_sum += tape.scalar_value(recon) * bw;
            graph_sum += tape.scalar_value(graph_term) * bw;
            total_sum += loss_value * bw;
        }
        result.losses.push_back({2, epoch, recon_sum, graph_sum, total_sum});
    }

    FullForward full = forward_full(state, x_prime, nullptr, model::Stage::two, config.batch_size);
    result.z_bar = std::move(full.z_bar);
    return result;
}

PipelineResult run_pipeline(const data::MultiViewDataset& raw, const data::MaskMatrix& mask,
                            const TrainConfig& tconfig, model::ModelConfig mconfig) {
    tconfig.validate();
    raw.validate();
    mask.validate();
    if (mask.n() != raw.n || mask.m() != raw.m)
        throw ShapeError("pipeline: mask is " + std::to_string(mask.n()) + "x" +
                         std::to_string(mask.m()) + " for a dataset with n=" +
                         std::to_string(raw.n) + ", m=" + std::to_string(raw.m));
    if (!raw.c) throw ConfigError("pipeline: dataset does not declare a class count c");

    mconfig.view_dims = raw.dims;
    mconfig.validate();

    PipelineResult result;
    data::MultiViewDataset normalized = data::normalize(raw, mask, &result.scaling);
    data::MultiViewDataset net_input = data::zero_fill(normalized, mask);

    result.model = model::init_params(mconfig, derive_seed(tconfig.seed, 0x01));

    Stage1Result s1 = train_stage1(net_input, mask, result.model, tconfig);
    result.losses = s1.losses;
    result.recovered_views = s1.x_prime;
    result.graphs = s1.graphs;

    if (tconfig.stage2_reinit)
        result.model = model::init_params(mconfig, derive_seed(tconfig.seed, 0x02));

    Stage2Result s2 = train_stage2(s1.x_prime, s1.graphs, s1.buffer, result.model, tconfig);
    result.losses.insert(result.losses.end(), s2.losses.begin(), s2.losses.end());
    result.z_bar = std::move(s2.z_bar);

    cluster::ClusterResult clustering = cluster::kmeans(
        result.z_bar, *raw.c, tconfig.kmeans_restarts, derive_seed(tconfig.seed, 0x03));
    result.predictions = clustering.labels;
    result.kmeans_inertia = clustering.inertia;

    if (raw.labels) {
        Metrics metrics;
        metrics.acc = cluster::acc(result.predictions, *raw.labels);
        metrics.nmi = cluster::nmi(result.predictions, *raw.labels);
        metrics.purity = cluster::purity(result.predictions, *raw.labels);
        result.metrics = metrics;
    }
    return result;
}

void write_losses_csv(const std::string& path, const std::vector<EpochLoss>& losses) {
    std::ofstream out(path);
    if (!out) throw ParseError(path + ": cannot open file for writing");
    out << "epoch,stage,recon,graph,total\n";
    for (const EpochLoss& e : losses)
        out << e.epoch << ',' << e.stage << ',' << format_double(e.recon) << ','
            << format_double(e.graph) << ',' << format_double(e.total) << '\n';
    if (!out) throw ParseError(path + ": write failed");
}

void persist_run(const std::string& run_dir, const PipelineResult& result,
                 const TrainConfig& tconfig, const model::ModelConfig& mconfig) {
    fs::create_directories(run_dir);
    const fs::path root(run_dir);

    json cfg;
    cfg["lr"] = tconfig.lr;
    cfg["beta"] = tconfig.beta;
    cfg["k_neighbors"] = tconfig.k_neighbors;
    cfg["e1"] = tconfig.e1;
    cfg["e2"] = tconfig.e2;
    cfg["batch_size"] = tconfig.batch_size;
    cfg["seed"] = tconfig.seed;
    cfg["kmeans_restarts"] = tconfig.kmeans_restarts;
    cfg["stage2_reinit"] = tconfig.stage2_reinit;
    cfg["d_e"] = mconfig.d_e;
    cfg["heads"] = mconfig.heads;
    cfg["layers"] = mconfig.layers;
    cfg["mlp_hidden"] = mconfig.mlp_hidden;
    cfg["residual"] = mconfig.residual;
    cfg["ln_eps"] = mconfig.ln_eps;
    {
        std::ofstream out(root / "config.json");
        out << cfg.dump(2) << "\n";
    }

    write_losses_csv((root / "losses.csv").string(), result.losses);
    model::save_checkpoint((root / "model.json").string(), result.model);

    json scaling;
    scaling["min"] = result.scaling.min;
    scaling["range"] = result.scaling.range;
    {
        std::ofstream out(root / "scaling.json");
        out << scaling.dump() << "\n";
    }

    for (std::size_t v = 0; v < result.recovered_views.size(); ++v)
        write_csv_matrix((root / ("recovered_view_" + std::to_string(v + 1) + ".csv")).string(),
                         result.recovered_views[v]);
    write_csv_matrix((root / "embeddings.csv").string(), result.z_bar);
    write_csv_ints((root / "predictions.csv").string(), result.predictions);
    graph::export_graph_csv((root / "graphs.csv").string(), result.graphs);

    if (result.metrics) {
        json mj;
        mj["acc"] = result.metrics->acc;
        mj["nmi"] = result.metrics->nmi;
        mj["purity"] = result.metrics->purity;
        mj["inertia"] = result.kmeans_inertia;
        mj["seed"] = tconfig.seed;
        std::ofstream out(root / "metrics.json");
        out << mj.dump(2) << "\n";
    }
}

}  // namespace recformer::train
