#include "recformer/model.hpp"

#include <cmath>
#include <fstream>

#include "json.hpp"
#include "recformer/errors.hpp"
#include "recformer/rng.hpp"

using nlohmann::json;

namespace recformer::model {

void ModelConfig::validate() const {
    if (d_e <= 0 || heads <= 0 || layers < 1 || mlp_hidden <= 0)
        throw ConfigError("model config: d_e, heads, mlp_hidden must be positive, layers >= 1");
    if (d_e % heads != 0)
        throw ConfigError("model config: d_e=" + std::to_string(d_e) +
                          " not divisible by heads=" + std::to_string(heads));
    if (view_dims.empty()) throw ConfigError("model config: no view dims");
    for (int d : view_dims)
        if (d <= 0) throw ConfigError("model config: non-positive view dim");
    if (ln_eps <= 0.0) throw ConfigError("model config: ln_eps must be positive");
}

namespace {

void collect_block(std::vector<std::pair<std::string, ad::Tensor*>>& out, AttentionBlock& b,
                   const std::string& prefix) {
    for (std::size_t t = 0; t < b.wq.size(); ++t) {
        out.emplace_back(prefix + ".wq" + std::to_string(t), &b.wq[t]);
        out.emplace_back(prefix + ".wk" + std::to_string(t), &b.wk[t]);
        out.emplace_back(prefix + ".wv" + std::to_string(t), &b.wv[t]);
    }
    out.emplace_back(prefix + ".wo", &b.wo);
    out.emplace_back(prefix + ".bo", &b.bo);
    out.emplace_back(prefix + ".ln1_gamma", &b.ln1_gamma);
    out.emplace_back(prefix + ".ln1_beta", &b.ln1_beta);
    out.emplace_back(prefix + ".w1", &b.w1);
    out.emplace_back(prefix + ".b1", &b.b1);
    out.emplace_back(prefix + ".w2", &b.w2);
    out.emplace_back(prefix + ".b2", &b.b2);
    out.emplace_back(prefix + ".ln2_gamma", &b.ln2_gamma);
    out.emplace_back(prefix + ".ln2_beta", &b.ln2_beta);
}

}  // namespace

std::vector<std::pair<std::string, ad::Tensor*>> ModelState::named_parameters() {
    std::vector<std::pair<std::string, ad::Tensor*>> out;
    for (std::size_t v = 0; v < extractor_w.size(); ++v) {
        out.emplace_back("extractor" + std::to_string(v) + ".w", &extractor_w[v]);
        out.emplace_back("extractor" + std::to_string(v) + ".b", &extractor_b[v]);
    }
    for (std::size_t l = 0; l < encoder.size(); ++l)
        collect_block(out, encoder[l], "encoder" + std::to_string(l));
    for (std::size_t l = 0; l < decoder.size(); ++l)
        collect_block(out, decoder[l], "decoder" + std::to_string(l));
    for (std::size_t v = 0; v < head_w.size(); ++v) {
        out.emplace_back("head" + std::to_string(v) + ".w", &head_w[v]);
        out.emplace_back("head" + std::to_string(v) + ".b", &head_b[v]);
    }
    return out;
}

std::vector<ad::Tensor*> ModelState::parameters() {
    std::vector<ad::Tensor*> out;
    for (auto& [name, p] : named_parameters()) out.push_back(p);
    return out;
}

void ModelState::zero_grad() {
    for (ad::Tensor* p : parameters()) p->zero_grad();
}

std::int64_t ModelState::parameter_count() const {
    const auto& c = config;
    const std::int64_t de = c.d_e, dh = c.head_dim(), mh = c.mlp_hidden;
    std::int64_t total = 0;
    for (int dv : c.view_dims) total += static_cast<std::int64_t>(dv) * de + de;  // extractors
    const std::int64_t block = 3 * c.heads * de * dh  // q/k/v projections
                               + de * de + de         // output projection
                               + 2 * de               // ln1
                               + de * mh + mh + mh * de + de  // MLP
                               + 2 * de;              // ln2
    total += 2 * c.layers * block;  // encoder + decoder
    for (int dv : c.view_dims) total += de * static_cast<std::int64_t>(dv) + dv;  // heads
    return total;
}

namespace {

ad::Tensor xavier(Rng& rng, int fan_in, int fan_out) {
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    ad::Tensor t({fan_in, fan_out});
    for (double& x : t.values) x = rng.uniform(-limit, limit);
    t.requires_grad = true;
    return t;
}

ad::Tensor zeros_param(int d) {
    ad::Tensor t({1, d}, 0.0);
    t.requires_grad = true;
    return t;
}

ad::Tensor ones_param(int d) {
    ad::Tensor t({1, d}, 1.0);
    t.requires_grad = true;
    return t;
}

AttentionBlock init_block(Rng& rng, const ModelConfig& c) {
    AttentionBlock b;
    for (int t = 0; t < c.heads; ++t) {
        b.wq.push_back(xavier(rng, c.d_e, c.head_dim()));
        b.wk.push_back(xavier(rng, c.d_e, c.head_dim()));
        b.wv.push_back(xavier(rng, c.d_e, c.head_dim()));
    }
    b.wo = xavier(rng, c.d_e, c.d_e);
    b.bo = zeros_param(c.d_e);
    b.ln1_gamma = ones_param(c.d_e);
    b.ln1_beta = zeros_param(c.d_e);
    b.w1 = xavier(rng, c.d_e, c.mlp_hidden);
    b.b1 = zeros_param(c.mlp_hidden);
    b.w2 = xavier(rng, c.mlp_hidden, c.d_e);
    b.b2 = zeros_param(c.d_e);
    b.ln2_gamma = ones_param(c.d_e);
    b.ln2_beta = zeros_param(c.d_e);
    return b;
}

}  // namespace

ModelState init_params(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    ModelState s;
    s.config = config;
    Rng rng(derive_seed(seed, 0x11));
    for (int dv : config.view_dims) {
        s.extractor_w.push_back(xavier(rng, dv, config.d_e));
        s.extractor_b.push_back(zeros_param(config.d_e));
    }
    for (int l = 0; l < config.layers; ++l) s.encoder.push_back(init_block(rng, config));
    for (int l = 0; l < config.layers; ++l) s.decoder.push_back(init_block(rng, config));
    for (int dv : config.view_dims) {
        s.head_w.push_back(xavier(rng, config.d_e, dv));
        s.head_b.push_back(zeros_param(dv));
    }
    return s;
}

// ---------------------------------------------------------------------------
// Checkpoints

void save_checkpoint(const std::string& path, const ModelState& state) {
    json j;
    j["config"] = {{"d_e", state.config.d_e},
                   {"heads", state.config.heads},
                   {"layers", state.config.layers},
                   {"mlp_hidden", state.config.mlp_hidden},
                   {"view_dims", state.config.view_dims},
                   {"residual", state.config.residual},
                   {"ln_eps", state.config.ln_eps}};
    json params = json::array();
    for (auto& [name, p] : const_cast<ModelState&>(state).named_parameters()) {
        params.push_back({{"name", name}, {"shape", p->shape}, {"values", p->values}});
    }
    j["params"] = std::move(params);
    std::ofstream out(path);
    if (!out) throw ParseError(path + ": cannot open file for writing");
    out << j.dump() << "\n";
    if (!out) throw ParseError(path + ": write failed");
}

ModelState load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError(path + ": cannot open file");
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ParseError(path + ": " + e.what());
    }
    ModelConfig c;
    const json& jc = j.at("config");
    c.d_e = jc.at("d_e").get<int>();
    c.heads = jc.at("heads").get<int>();
    c.layers = jc.at("layers").get<int>();
    c.mlp_hidden = jc.at("mlp_hidden").get<int>();
    c.view_dims = jc.at("view_dims").get<std::vector<int>>();
    c.residual = jc.value("residual", true);
    c.ln_eps = jc.value("ln_eps", 1e-5);

    ModelState s = init_params(c, 0);
    auto named = s.named_parameters();
    if (named.size() != j.at("params").size())
        throw ParseError(path + ": checkpoint has " + std::to_string(j.at("params").size()) +
                         " parameters, model expects " + std::to_string(named.size()));
    for (std::size_t i = 0; i < named.size(); ++i) {
        const json& jp = j["params"][i];
        if (jp.at("name").get<std::string>() != named[i].first)
            throw ParseError(path + ": parameter order mismatch at '" +
                             jp.at("name").get<std::string>() + "'");
        ad::Tensor t(jp.at("shape").get<ad::Shape>(), jp.at("values").get<std::vector<double>>());
        if (t.shape != named[i].second->shape)
            throw ParseError(path + ": shape mismatch for '" + named[i].first + "'");
        t.requires_grad = true;
        *named[i].second = std::move(t);
    }
    return s;
}

// ---------------------------------------------------------------------------
// Forward pass

namespace {

BlockVars bind_block(ad::Tape& tape, AttentionBlock& b) {
    BlockVars v;
    for (auto& w : b.wq) v.wq.push_back(tape.leaf(w));
    for (auto& w : b.wk) v.wk.push_back(tape.leaf(w));
    for (auto& w : b.wv) v.wv.push_back(tape.leaf(w));
    v.wo = tape.leaf(b.wo);
    v.bo = tape.leaf(b.bo);
    v.ln1_gamma = tape.leaf(b.ln1_gamma);
    v.ln1_beta = tape.leaf(b.ln1_beta);
    v.w1 = tape.leaf(b.w1);
    v.b1 = tape.leaf(b.b1);
    v.w2 = tape.leaf(b.w2);
    v.b2 = tape.leaf(b.b2);
    v.ln2_gamma = tape.leaf(b.ln2_gamma);
    v.ln2_beta = tape.leaf(b.ln2_beta);
    return v;
}

}  // namespace

ModelVars ModelVars::bind(ad::Tape& tape, ModelState& state) {
    ModelVars v;
    for (auto& w : state.extractor_w) v.extractor_w.push_back(tape.leaf(w));
    for (auto& b : state.extractor_b) v.extractor_b.push_back(tape.leaf(b));
    for (auto& blk : state.encoder) v.encoder.push_back(bind_block(tape, blk));
    for (auto& blk : state.decoder) v.decoder.push_back(bind_block(tape, blk));
    for (auto& w : state.head_w) v.head_w.push_back(tape.leaf(w));
    for (auto& b : state.head_b) v.head_b.push_back(tape.leaf(b));
    return v;
}

std::vector<ad::Var> extract_low_level(ad::Tape& tape, const ModelVars& vars,
                                       const std::vector<Matrix>& batch_views) {
    std::vector<ad::Var> out;
    for (std::size_t v = 0; v < batch_views.size(); ++v) {
        ad::Var x = tape.constant_matrix(batch_views[v]);
        out.push_back(tape.relu(
            tape.add_bias(tape.matmul(x, vars.extractor_w[v]), vars.extractor_b[v])));
    }
    return out;
}

ad::Var cross_view_attention(ad::Tape& tape, const BlockVars& block, ad::Var x,
                             const std::vector<double>* w_row, const ModelConfig& config) {
    const int m = tape.value(x).rows();
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(config.head_dim()));

    // Stage-1 zerofill mask: outer product of the availability row.
    ad::Tensor mask;
    if (w_row) {
        bool any = false;
        for (double w : *w_row) any = any || w != 0.0;
        if (!any) throw MaskError("cross_view_attention: sample has no available view");
        mask = ad::Tensor({m, m});
        for (int a = 0; a < m; ++a)
            for (int b = 0; b < m; ++b)
                mask.values[static_cast<std::size_t>(a) * m + b] =
                    (*w_row)[static_cast<std::size_t>(a)] * (*w_row)[static_cast<std::size_t>(b)];
    }

    std::vector<ad::Var> heads;
    for (int t = 0; t < config.heads; ++t) {
        const std::size_t st = static_cast<std::size_t>(t);
        ad::Var q = tape.matmul(x, block.wq[st]);
        ad::Var k = tape.matmul(x, block.wk[st]);
        ad::Var v = tape.matmul(x, block.wv[st]);
        ad::Var scores = tape.scale(tape.matmul(q, tape.transpose(k)), inv_sqrt_dh);
        ad::Var probs = tape.softmax_masked(scores, w_row ? &mask : nullptr);
        heads.push_back(tape.matmul(probs, v));
    }
    return tape.concat_cols(heads);
}

ad::Var attention_block(ad::Tape& tape, const BlockVars& block, ad::Var x,
                        const std::vector<double>* w_row, const ModelConfig& config) {
    ad::Var attn = cross_view_attention(tape, block, x, w_row, config);
    ad::Var projected = tape.add_bias(tape.matmul(attn, block.wo), block.bo);
    ad::Var pre_norm = config.residual ? tape.add(x, projected) : projected;
    ad::Var u = tape.layer_norm(pre_norm, block.ln1_gamma, block.ln1_beta, config.ln_eps);
    ad::Var hidden = tape.relu(tape.add_bias(tape.matmul(u, block.w1), block.b1));
    ad::Var mlp_out = tape.add_bias(tape.matmul(hidden, block.w2), block.b2);
    ad::Var pre_norm2 = config.residual ? tape.add(u, mlp_out) : mlp_out;
    return tape.layer_norm(pre_norm2, block.ln2_gamma, block.ln2_beta, config.ln_eps);
}

namespace {

// Stage-1 zerofill mask for the stacked layout: rows [i*m, (i+1)*m) hold
// the outer product of sample i's availability row.
ad::Tensor stacked_mask(const MaskRows& mask_rows, int m) {
    const int b = static_cast<int>(mask_rows.size());
    ad::Tensor mask({b * m, m});
    for (int i = 0; i < b; ++i) {
        const auto& w = mask_rows[static_cast<std::size_t>(i)];
        bool any = false;
        for (double x : w) any = any || x != 0.0;
        if (!any)
            throw MaskError("encode: sample " + std::to_string(i) + " has no available view");
        for (int a = 0; a < m; ++a)
            for (int c = 0; c < m; ++c)
                mask.values[(static_cast<std::size_t>(i) * m + a) * m + c] =
                    w[static_cast<std::size_t>(a)] * w[static_cast<std::size_t>(c)];
    }
    return mask;
}

}  // namespace

ad::Var attention_block_batched(ad::Tape& tape, const BlockVars& block, ad::Var x_all,
                                const MaskRows* mask_rows, const ModelConfig& config) {
    const int m = config.views();
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(config.head_dim()));

    ad::Tensor mask;
    if (mask_rows) mask = stacked_mask(*mask_rows, m);

    std::vector<ad::Var> heads;
    for (int t = 0; t < config.heads; ++t) {
        const std::size_t st = static_cast<std::size_t>(t);
        ad::Var q = tape.matmul(x_all, block.wq[st]);
        ad::Var k = tape.matmul(x_all, block.wk[st]);
        ad::Var v = tape.matmul(x_all, block.wv[st]);
        ad::Var scores = tape.scale(tape.block_scores(q, k, m), inv_sqrt_dh);
        ad::Var probs = tape.softmax_masked(scores, mask_rows ? &mask : nullptr);
        heads.push_back(tape.block_apply(probs, v, m));
    }
    ad::Var attn = tape.concat_cols(heads);
    ad::Var projected = tape.add_bias(tape.matmul(attn, block.wo), block.bo);
    ad::Var pre_norm = config.residual ? tape.add(x_all, projected) : projected;
    ad::Var u = tape.layer_norm(pre_norm, block.ln1_gamma, block.ln1_beta, config.ln_eps);
    ad::Var hidden = tape.relu(tape.add_bias(tape.matmul(u, block.w1), block.b1));
    ad::Var mlp_out = tape.add_bias(tape.matmul(hidden, block.w2), block.b2);
    ad::Var pre_norm2 = config.residual ? tape.add(u, mlp_out) : mlp_out;
    return tape.layer_norm(pre_norm2, block.ln2_gamma, block.ln2_beta, config.ln_eps);
}

namespace {

ad::Var encode_all(ad::Tape& tape, const ModelVars& vars, const std::vector<Matrix>& batch_views,
                   const MaskRows* mask_rows, const ModelConfig& config, Stage stage) {
    if (stage == Stage::one && !mask_rows)
        throw MaskError("encode: Stage 1 requires availability rows");
    const int m = config.views();
    if (static_cast<int>(batch_views.size()) != m)
        throw ShapeError("encode: " + std::to_string(batch_views.size()) + " views, expected " +
                         std::to_string(m));
    const int b = batch_views[0].rows;
    for (int v = 0; v < m; ++v) {
        if (batch_views[static_cast<std::size_t>(v)].rows != b)
            throw ShapeError("encode: inconsistent batch sizes across views");
        if (batch_views[static_cast<std::size_t>(v)].cols != config.view_dims[static_cast<std::size_t>(v)])
            throw ShapeError("encode: view " + std::to_string(v + 1) + " has width " +
                             std::to_string(batch_views[static_cast<std::size_t>(v)].cols) +
                             ", config says " +
                             std::to_string(config.view_dims[static_cast<std::size_t>(v)]));
    }
    if (mask_rows && static_cast<int>(mask_rows->size()) != b)
        throw ShapeError("encode: " + std::to_string(mask_rows->size()) + " mask rows for batch of " +
                         std::to_string(b));

    std::vector<ad::Var> low = extract_low_level(tape, vars, batch_views);
    ad::Var x_all = tape.interleave_rows(low);
    const MaskRows* stage_mask = stage == Stage::one ? mask_rows : nullptr;
    for (const BlockVars& blk : vars.encoder)
        x_all = attention_block_batched(tape, blk, x_all, stage_mask, config);
    return x_all;
}

}  // namespace

std::vector<ad::Var> encode(ad::Tape& tape, const ModelVars& vars,
                            const std::vector<Matrix>& batch_views, const MaskRows* mask_rows,
                            const ModelConfig& config, Stage stage) {
    ad::Var x_all = encode_all(tape, vars, batch_views, mask_rows, config, stage);
    const int m = config.views();
    const int b = tape.value(x_all).rows() / m;
    std::vector<ad::Var> z_rows;
    z_rows.reserve(static_cast<std::size_t>(b));
    for (int i = 0; i < b; ++i) z_rows.push_back(tape.slice_rows(x_all, i * m, m));
    return z_rows;
}

std::vector<ad::Var> fuse(ad::Tape& tape, const std::vector<ad::Var>& z_rows,
                          const MaskRows* mask_rows, Stage stage) {
    if (stage == Stage::one && !mask_rows)
        throw MaskError("fuse: Stage 1 requires availability rows");
    std::vector<ad::Var> out;
    out.reserve(z_rows.size());
    for (std::size_t i = 0; i < z_rows.size(); ++i) {
        const int m = tape.value(z_rows[i]).rows();
        std::vector<double> weights(static_cast<std::size_t>(m), 1.0 / m);
        if (stage == Stage::one) {
            const auto& w = (*mask_rows)[i];
            double total = 0.0;
            for (double x : w) total += x;
            if (total == 0.0)
                throw MaskError("fuse: sample " + std::to_string(i) + " has no available view");
            for (int v = 0; v < m; ++v) weights[static_cast<std::size_t>(v)] = w[static_cast<std::size_t>(v)] / total;
        }
        ad::Var coeff = tape.constant(ad::Tensor::row(std::move(weights)));
        out.push_back(tape.matmul(coeff, z_rows[i]));
    }
    return out;
}

std::vector<ad::Var> decode(ad::Tape& tape, const ModelVars& vars, ad::Var z_bar,
                            const ModelConfig& config) {
    const int m = config.views();
    ad::Var x = tape.repeat_each_row(z_bar, m);
    for (const BlockVars& blk : vars.decoder)
        x = attention_block_batched(tape, blk, x, nullptr, config);
    std::vector<ad::Var> out;
    out.reserve(static_cast<std::size_t>(m));
    for (int v = 0; v < m; ++v) {
        const std::size_t sv = static_cast<std::size_t>(v);
        ad::Var rows = tape.take_rows_strided(x, m, v);
        out.push_back(tape.add_bias(tape.matmul(rows, vars.head_w[sv]), vars.head_b[sv]));
    }
    return out;
}

std::vector<ad::Var> view_blocks(ad::Tape& tape, const std::vector<ad::Var>& z_rows, int m) {
    std::vector<ad::Var> out;
    out.reserve(static_cast<std::size_t>(m));
    for (int v = 0; v < m; ++v) {
        std::vector<ad::Var> rows;
        rows.reserve(z_rows.size());
        for (ad::Var z : z_rows) rows.push_back(tape.slice_rows(z, v, 1));
        out.push_back(tape.concat_rows(rows));
    }
    return out;
}

BatchForward forward_batch(ad::Tape& tape, ModelState& state,
                           const std::vector<Matrix>& batch_views, const MaskRows* mask_rows,
                           Stage stage) {
    ModelVars vars = ModelVars::bind(tape, state);
    const ModelConfig& config = state.config;
    const int m = config.views();

    BatchForward fwd;
    fwd.z_all = encode_all(tape, vars, batch_views, mask_rows, config, stage);
    const int b = tape.value(fwd.z_all).rows() / m;
    fwd.z_rows.reserve(static_cast<std::size_t>(b));
    for (int i = 0; i < b; ++i) fwd.z_rows.push_back(tape.slice_rows(fwd.z_all, i * m, m));
    fwd.z_views.reserve(static_cast<std::size_t>(m));
    for (int v = 0; v < m; ++v) fwd.z_views.push_back(tape.take_rows_strided(fwd.z_all, m, v));

    // Availability-weighted fusion coefficients over the stacked layout.
    std::vector<double> weights(static_cast<std::size_t>(b) * m, 1.0 / m);
    if (stage == Stage::one) {
        for (int i = 0; i < b; ++i) {
            const auto& w = (*mask_rows)[static_cast<std::size_t>(i)];
            double total = 0.0;
            for (double x : w) total += x;
            if (total == 0.0)
                throw MaskError("fuse: sample " + std::to_string(i) + " has no available view");
            for (int v = 0; v < m; ++v)
                weights[static_cast<std::size_t>(i) * m + v] = w[static_cast<std::size_t>(v)] / total;
        }
    }
    fwd.z_bar = tape.group_weighted_sum(fwd.z_all, m, std::move(weights));
    fwd.x_bar = decode(tape, vars, fwd.z_bar, config);
    return fwd;
}

std::vector<Matrix> slice_batch_views(const std::vector<Matrix>& views,
                                      const std::vector<int>& batch_indices) {
    std::vector<Matrix> out;
    out.reserve(views.size());
    for (const Matrix& x : views) {
        Matrix b(static_cast<int>(batch_indices.size()), x.cols);
        for (std::size_t r = 0; r < batch_indices.size(); ++r)
            std::copy(x.row_ptr(batch_indices[r]), x.row_ptr(batch_indices[r]) + x.cols,
                      b.row_ptr(static_cast<int>(r)));
        out.push_back(std::move(b));
    }
    return out;
}

MaskRows slice_mask_rows(const data::MaskMatrix& mask, const std::vector<int>& batch_indices) {
    MaskRows out;
    out.reserve(batch_indices.size());
    for (int i : batch_indices) out.push_back(mask.row(i));
    return out;
}

}  // namespace recformer::model
