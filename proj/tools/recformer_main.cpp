#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "recformer/cluster.hpp"
#include "recformer/csv.hpp"
#include "recformer/data.hpp"
#include "recformer/errors.hpp"
#include "recformer/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace recformer;

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitNumeric = 3;

struct Configs {
    train::TrainConfig train;
    model::ModelConfig model;
};

Configs load_config_file(const std::string& path) {
    Configs c;
    if (path.empty()) return c;
    std::ifstream in(path);
    if (!in) throw ParseError(path + ": cannot open config file");
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ParseError(path + ": " + e.what());
    }
    auto& t = c.train;
    t.lr = j.value("lr", t.lr);
    t.beta = j.value("beta", t.beta);
    t.k_neighbors = j.value("k_neighbors", t.k_neighbors);
    t.e1 = j.value("e1", t.e1);
    t.e2 = j.value("e2", t.e2);
    t.batch_size = j.value("batch_size", t.batch_size);
    t.seed = j.value("seed", t.seed);
    t.kmeans_restarts = j.value("kmeans_restarts", t.kmeans_restarts);
    t.stage2_reinit = j.value("stage2_reinit", t.stage2_reinit);
    auto& m = c.model;
    m.d_e = j.value("d_e", m.d_e);
    m.heads = j.value("heads", m.heads);
    m.layers = j.value("layers", m.layers);
    m.mlp_hidden = j.value("mlp_hidden", m.mlp_hidden);
    m.residual = j.value("residual", m.residual);
    m.ln_eps = j.value("ln_eps", m.ln_eps);
    return c;
}

void print_metrics_json(const train::PipelineResult& result, std::uint64_t seed) {
    json out;
    if (result.metrics) {
        out["acc"] = result.metrics->acc;
        out["nmi"] = result.metrics->nmi;
        out["purity"] = result.metrics->purity;
    }
    out["inertia"] = result.kmeans_inertia;
    out["seed"] = seed;
    std::cout << out.dump(2) << "\n";
}

int cmd_simulate(const std::string& data_dir, double rate, double paired_rate, bool paired_mode,
                 std::uint64_t seed, const std::string& out_path) {
    data::MultiViewDataset ds = data::load_dataset(data_dir);
    if (paired_mode && ds.m != 2)
        throw ConfigError("the paired protocol needs exactly two views, dataset has " +
                          std::to_string(ds.m));
    data::MaskMatrix mask = paired_mode ? data::generate_paired_mask(ds.n, paired_rate, seed)
                                        : data::generate_mask(ds.n, ds.m, rate, seed);
    data::save_mask(out_path, mask);
    std::cout << "mask written to " << out_path << "\n";
    for (int v = 0; v < ds.m; ++v) {
        int missing = 0;
        for (int i = 0; i < ds.n; ++i) missing += mask.available(i, v) ? 0 : 1;
        std::cout << "view " << (v + 1) << ": " << missing << "/" << ds.n << " missing\n";
    }
    return 0;
}

int cmd_train(const std::string& data_dir, const std::string& mask_path, const Configs& cfg,
              const std::string& run_dir) {
    data::MultiViewDataset ds = data::load_dataset(data_dir);
    data::MaskMatrix mask = data::load_mask(mask_path, ds.n, ds.m);

    model::ModelConfig mconfig = cfg.model;
    mconfig.view_dims = ds.dims;

    train::PipelineResult result = train::run_pipeline(ds, mask, cfg.train, mconfig);
    train::persist_run(run_dir, result, cfg.train, mconfig);

    std::cout << "run artifacts in " << run_dir << "\n";
    print_metrics_json(result, cfg.train.seed);
    return 0;
}

int cmd_eval(const std::string& pred_path, const std::string& labels_path) {
    std::vector<int> pred = read_csv_ints(pred_path);
    std::vector<int> labels = read_csv_ints(labels_path);
    json out;
    out["acc"] = cluster::acc(pred, labels);
    out["nmi"] = cluster::nmi(pred, labels);
    out["purity"] = cluster::purity(pred, labels);
    std::cout << out.dump(2) << "\n";
    return 0;
}

int cmd_export(const std::string& run_dir, const std::string& what, std::string out_dir) {
    const fs::path run(run_dir);
    if (out_dir.empty()) out_dir = (run / "export").string();
    fs::create_directories(out_dir);
    const fs::path out(out_dir);

    if (what == "recovered") {
        std::ifstream in(run / "scaling.json");
        if (!in) throw ParseError((run / "scaling.json").string() + ": cannot open file");
        json j;
        in >> j;
        data::ScalingParams params;
        params.min = j.at("min").get<std::vector<std::vector<double>>>();
        params.range = j.at("range").get<std::vector<std::vector<double>>>();
        for (int v = 1;; ++v) {
            const fs::path src = run / ("recovered_view_" + std::to_string(v) + ".csv");
            if (!fs::exists(src)) {
                if (v == 1) throw ParseError(src.string() + ": no recovered views in run");
                break;
            }
            Matrix normalized = read_csv_matrix(src.string());
            Matrix raw = data::denormalize_view(normalized, params, v - 1);
            write_csv_matrix((out / ("recovered_view_" + std::to_string(v) + ".csv")).string(),
                             raw);
        }
    } else if (what == "embeddings" || what == "losses") {
        const std::string name = what == "embeddings" ? "embeddings.csv" : "losses.csv";
        if (!fs::exists(run / name)) throw ParseError((run / name).string() + ": missing");
        fs::copy_file(run / name, out / name, fs::copy_options::overwrite_existing);
    } else if (what == "graph") {
        if (!fs::exists(run / "graphs.csv"))
            throw ParseError((run / "graphs.csv").string() + ": missing");
        fs::copy_file(run / "graphs.csv", out / "graphs.csv",
                      fs::copy_options::overwrite_existing);
    } else {
        throw ConfigError("unknown artifact '" + what +
                          "' (expected recovered|embeddings|graph|losses)");
    }
    std::cout << what << " exported to " << out_dir << "\n";
    return 0;
}

int cmd_sweep(const std::string& data_dir, const std::string& mask_path, const Configs& base,
              const std::vector<double>& betas, const std::vector<int>& ks,
              const std::string& out_dir) {
    data::MultiViewDataset ds = data::load_dataset(data_dir);
    data::MaskMatrix mask = data::load_mask(mask_path, ds.n, ds.m);
    fs::create_directories(out_dir);

    std::ofstream summary(fs::path(out_dir) / "summary.csv");
    summary << "beta,k,seed,acc,nmi,purity,inertia,status\n";

    int cell = 0;
    for (double beta : betas) {
        for (int k : ks) {
            train::TrainConfig tcfg = base.train;
            tcfg.beta = beta;
            tcfg.k_neighbors = k;
            tcfg.seed = base.train.seed + static_cast<std::uint64_t>(cell);  // cell 0 == cmd_train
            model::ModelConfig mcfg = base.model;
            mcfg.view_dims = ds.dims;

            const std::string cell_dir =
                (fs::path(out_dir) / ("cell_b" + format_double(beta) + "_k" + std::to_string(k)))
                    .string();
            summary << format_double(beta) << ',' << k << ',' << tcfg.seed << ',';
            try {
                train::PipelineResult res = train::run_pipeline(ds, mask, tcfg, mcfg);
                train::persist_run(cell_dir, res, tcfg, mcfg);
                if (res.metrics)
                    summary << format_double(res.metrics->acc) << ','
                            << format_double(res.metrics->nmi) << ','
                            << format_double(res.metrics->purity) << ','
                            << format_double(res.kmeans_inertia) << ",ok\n";
                else
                    summary << ",,," << format_double(res.kmeans_inertia) << ",ok\n";
                std::cout << "cell beta=" << beta << " k=" << k << " done\n";
            } catch (const std::exception& e) {
                summary << ",,,,failed\n";
                std::cerr << "cell beta=" << beta << " k=" << k << " failed: " << e.what() << "\n";
            }
            ++cell;
        }
    }
    std::cout << "sweep summary in " << (fs::path(out_dir) / "summary.csv").string() << "\n";
    return 0;
}

int cmd_synth(const std::string& out_dir, int n, int m, int c, std::vector<int> dims,
              double noise, std::uint64_t seed) {
    if (dims.empty()) {
        dims.assign(static_cast<std::size_t>(m), 0);
        for (int v = 0; v < m; ++v) dims[static_cast<std::size_t>(v)] = 20 + 10 * v;
    }
    data::MultiViewDataset ds = data::synth_dataset(n, m, c, dims, noise, seed);
    data::save_dataset(out_dir, ds);
    std::cout << "synthetic dataset (n=" << n << ", m=" << m << ", c=" << c << ") in " << out_dir
              << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"RecFormer: incomplete multi-view clustering via masked cross-view"
                 " attention, missing-view recovery, and two-stage training"};
    app.require_subcommand(1);

    // simulate
    auto* sim = app.add_subcommand("simulate", "Generate a missing-view mask");
    std::string sim_data, sim_out = "mask.csv";
    double sim_rate = 0.0, sim_paired = 0.0;
    std::uint64_t sim_seed = 0;
    sim->add_option("--data", sim_data, "dataset directory")->required();
    auto* rate_opt = sim->add_option("--rate", sim_rate, "per-view missing rate in [0,1)");
    auto* paired_opt =
        sim->add_option("--paired-rate", sim_paired, "paired-sample rate (two-view datasets)");
    rate_opt->excludes(paired_opt);
    sim->add_option("--seed", sim_seed, "mask seed");
    sim->add_option("--out", sim_out, "output mask file");

    // train
    auto* tr = app.add_subcommand("train", "Run the full two-stage pipeline");
    std::string tr_data, tr_mask, tr_config, tr_out = "run";
    double f_lr = 0, f_beta = 0;
    int f_k = 0, f_e1 = 0, f_e2 = 0, f_batch = 0, f_restarts = 0;
    int f_de = 0, f_heads = 0, f_layers = 0, f_mlp = 0;
    std::uint64_t f_seed = 0;
    bool f_reinit = false, f_no_residual = false;
    tr->add_option("--data", tr_data, "dataset directory")->required();
    tr->add_option("--mask", tr_mask, "mask csv file")->required();
    tr->add_option("--config", tr_config, "JSON config file");
    tr->add_option("--out", tr_out, "run directory");
    tr->add_option("--lr", f_lr, "learning rate");
    tr->add_option("--beta", f_beta, "graph loss weight");
    tr->add_option("--k", f_k, "neighbor count K");
    tr->add_option("--epochs1", f_e1, "Stage-1 epochs");
    tr->add_option("--epochs2", f_e2, "Stage-2 epochs");
    tr->add_option("--batch", f_batch, "batch size");
    tr->add_option("--seed", f_seed, "master seed");
    tr->add_option("--kmeans-restarts", f_restarts, "k-means restarts");
    tr->add_option("--d-e", f_de, "embedding width");
    tr->add_option("--heads", f_heads, "attention heads");
    tr->add_option("--layers", f_layers, "encoder/decoder blocks");
    tr->add_option("--mlp-hidden", f_mlp, "MLP hidden width");
    tr->add_flag("--stage2-reinit", f_reinit, "re-initialize weights before Stage 2");
    tr->add_flag("--no-residual", f_no_residual, "disable residual connections");

    // eval
    auto* ev = app.add_subcommand("eval", "Score predictions against labels");
    std::string ev_pred, ev_labels;
    ev->add_option("--pred", ev_pred, "predictions csv")->required();
    ev->add_option("--labels", ev_labels, "labels csv")->required();

    // export
    auto* ex = app.add_subcommand("export", "Export run artifacts as CSV");
    std::string ex_run, ex_what, ex_out;
    ex->add_option("--run", ex_run, "run directory")->required();
    ex->add_option("--what", ex_what, "recovered|embeddings|graph|losses")->required();
    ex->add_option("--out", ex_out, "output directory (default <run>/export)");

    // sweep
    auto* sw = app.add_subcommand("sweep", "Grid over beta and K");
    std::string sw_data, sw_mask, sw_config, sw_out = "sweep";
    std::vector<double> sw_betas;
    std::vector<int> sw_ks;
    std::uint64_t sw_seed = 0;
    sw->add_option("--data", sw_data, "dataset directory")->required();
    sw->add_option("--mask", sw_mask, "mask csv file")->required();
    sw->add_option("--config", sw_config, "JSON config file");
    sw->add_option("--beta", sw_betas, "beta values")->required();
    sw->add_option("--k", sw_ks, "K values")->required();
    sw->add_option("--seed", sw_seed, "master seed");
    sw->add_option("--out", sw_out, "sweep output directory");

    // synth
    auto* sy = app.add_subcommand("synth", "Write a synthetic labeled dataset");
    std::string sy_out = "data/synth";
    int sy_n = 90, sy_m = 2, sy_c = 3;
    std::vector<int> sy_dims;
    double sy_noise = 0.05;
    std::uint64_t sy_seed = 0;
    sy->add_option("--out", sy_out, "output directory");
    sy->add_option("--n", sy_n, "sample count");
    sy->add_option("--m", sy_m, "view count");
    sy->add_option("--c", sy_c, "class count");
    sy->add_option("--dims", sy_dims, "view widths (default 20,30,...)");
    sy->add_option("--noise", sy_noise, "latent noise std-dev");
    sy->add_option("--seed", sy_seed, "generator seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitValidation;
    }

    try {
        if (sim->parsed())
            return cmd_simulate(sim_data, sim_rate, sim_paired, paired_opt->count() > 0, sim_seed,
                                sim_out);
        if (tr->parsed()) {
            Configs cfg = load_config_file(tr_config);
            if (tr->count("--lr")) cfg.train.lr = f_lr;
            if (tr->count("--beta")) cfg.train.beta = f_beta;
            if (tr->count("--k")) cfg.train.k_neighbors = f_k;
            if (tr->count("--epochs1")) cfg.train.e1 = f_e1;
            if (tr->count("--epochs2")) cfg.train.e2 = f_e2;
            if (tr->count("--batch")) cfg.train.batch_size = f_batch;
            if (tr->count("--seed")) cfg.train.seed = f_seed;
            if (tr->count("--kmeans-restarts")) cfg.train.kmeans_restarts = f_restarts;
            if (tr->count("--stage2-reinit")) cfg.train.stage2_reinit = true;
            if (tr->count("--d-e")) cfg.model.d_e = f_de;
            if (tr->count("--heads")) cfg.model.heads = f_heads;
            if (tr->count("--layers")) cfg.model.layers = f_layers;
            if (tr->count("--mlp-hidden")) cfg.model.mlp_hidden = f_mlp;
            if (tr->count("--no-residual")) cfg.model.residual = false;
            return cmd_train(tr_data, tr_mask, cfg, tr_out);
        }
        if (ev->parsed()) return cmd_eval(ev_pred, ev_labels);
        if (ex->parsed()) return cmd_export(ex_run, ex_what, ex_out);
        if (sw->parsed()) {
            Configs cfg = load_config_file(sw_config);
            if (sw->count("--seed")) cfg.train.seed = sw_seed;
            return cmd_sweep(sw_data, sw_mask, cfg, sw_betas, sw_ks, sw_out);
        }
        if (sy->parsed()) return cmd_synth(sy_out, sy_n, sy_m, sy_c, sy_dims, sy_noise, sy_seed);
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitValidation;
    }
    return 0;
}
