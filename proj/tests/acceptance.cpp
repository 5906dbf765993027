// Acceptance suite: runs every criterion at its stated tolerance and prints
// one PASS/FAIL line per criterion. Exits nonzero if any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <sstream>
#include <vector>

#include "recformer/cluster.hpp"
#include "recformer/csv.hpp"
#include "recformer/data.hpp"
#include "recformer/graph.hpp"
#include "recformer/model.hpp"
#include "recformer/rng.hpp"
#include "recformer/training.hpp"

using namespace recformer;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
    bool pass = false;
    bool skipped = false;
    std::string detail;
};

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string read_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// ---------------------------------------------------------------------------
// Criterion 1: full Stage-1 loss gradient vs central finite differences on
// the toy instance (n=6, m=2, dims=[3,5], d_e=8, h=2), max rel err < 1e-4,
// runtime < 10 s.

Outcome criterion1() {
    const auto start = Clock::now();

    data::MultiViewDataset raw = data::synth_dataset(6, 2, 3, {3, 5}, 0.1, 101);
    data::MaskMatrix mask = data::generate_mask(6, 2, 0.34, 7);
    data::MultiViewDataset net_input = data::zero_fill(data::normalize(raw, mask), mask);

    model::ModelConfig mcfg;
    mcfg.d_e = 8;
    mcfg.heads = 2;
    mcfg.mlp_hidden = 16;
    mcfg.view_dims = raw.dims;
    model::ModelState state = model::init_params(mcfg, 11);
    // Check at a generic point: zero-initialized biases put the zero-filled
    // rows exactly on the ReLU kink, where the derivative does not exist.
    Rng jitter(404);
    for (ad::Tensor* p : state.parameters())
        for (double& x : p->values) x += jitter.uniform(-0.05, 0.05);

    std::vector<int> all_idx(6);
    std::iota(all_idx.begin(), all_idx.end(), 0);
    model::MaskRows mask_rows = model::slice_mask_rows(mask, all_idx);

    // One evaluation pass fills the buffer and builds the previous-epoch
    // graphs so the graph term of the Stage-1 objective is active.
    graph::EmbeddingBuffer buffer(6, 2, mcfg.d_e);
    std::vector<graph::NeighborGraph> graphs;
    {
        ad::Tape tape;
        model::BatchForward fwd =
            model::forward_batch(tape, state, net_input.views, &mask_rows, model::Stage::one);
        std::vector<ad::Tensor> z_rows;
        for (ad::Var z : fwd.z_rows) z_rows.push_back(tape.value(z));
        buffer.update(z_rows, all_idx);

        data::ImputedDataset imputed;
        imputed.source_mask = mask;
        for (int v = 0; v < 2; ++v)
            imputed.views.push_back(data::impute(net_input.views[static_cast<std::size_t>(v)],
                                                 tape.value(fwd.x_bar[static_cast<std::size_t>(v)]).to_matrix(),
                                                 mask.column(v)));
        graphs = graph::rebuild_graphs(imputed, 2);
    }

    const double beta = 0.5;
    auto build = [&](ad::Tape& tape) {
        model::BatchForward fwd =
            model::forward_batch(tape, state, net_input.views, &mask_rows, model::Stage::one);
        ad::Var recon = train::recon_loss_masked(tape, fwd.x_bar, net_input.views, mask_rows);
        ad::Var graph_term = graph::graph_loss_batch(tape, fwd.z_views, buffer, graphs, all_idx);
        return train::total_loss(tape, recon, &graph_term, beta);
    };

    const double err = ad::grad_check(build, state.parameters(), 1e-5);
    const double elapsed = seconds_since(start);

    Outcome out;
    out.pass = err < 1e-4 && elapsed < 10.0;
    std::ostringstream d;
    d << "max rel err " << err << " over " << state.parameter_count() << " parameters, "
      << elapsed << " s";
    out.detail = d.str();
    return out;
}

// ---------------------------------------------------------------------------
// Criterion 2: perturbing raw features at every W=0 position by noise of
// magnitude 10 changes Z_bar by < 1e-12 and recon_loss_masked by exactly 0.

Outcome criterion2() {
    const auto start = Clock::now();
    Rng rng(55);

    data::MultiViewDataset raw = data::synth_dataset(24, 3, 3, {6, 9, 5}, 0.1, 201);
    data::MaskMatrix mask = data::generate_mask(24, 3, 0.4, 13);
    data::MultiViewDataset net_input = data::zero_fill(data::normalize(raw, mask), mask);

    model::ModelConfig mcfg;
    mcfg.d_e = 16;
    mcfg.heads = 4;
    mcfg.mlp_hidden = 32;
    mcfg.view_dims = raw.dims;
    model::ModelState state = model::init_params(mcfg, 17);

    std::vector<int> all_idx(24);
    std::iota(all_idx.begin(), all_idx.end(), 0);
    model::MaskRows mask_rows = model::slice_mask_rows(mask, all_idx);

    std::vector<Matrix> perturbed = net_input.views;
    for (int v = 0; v < 3; ++v)
        for (int i = 0; i < 24; ++i)
            if (!mask.available(i, v))
                for (int j = 0; j < perturbed[static_cast<std::size_t>(v)].cols; ++j)
                    perturbed[static_cast<std::size_t>(v)].at(i, j) += 10.0 * rng.uniform(-1.0, 1.0);

    ad::Tape t1, t2;
    model::BatchForward f1 =
        model::forward_batch(t1, state, net_input.views, &mask_rows, model::Stage::one);
    model::BatchForward f2 =
        model::forward_batch(t2, state, perturbed, &mask_rows, model::Stage::one);

    double worst = 0.0;
    const ad::Tensor& z1 = t1.value(f1.z_bar);
    const ad::Tensor& z2 = t2.value(f2.z_bar);
    for (std::size_t i = 0; i < z1.values.size(); ++i)
        worst = std::max(worst, std::abs(z1.values[i] - z2.values[i]));

    const double loss1 = t1.scalar_value(
        train::recon_loss_masked(t1, f1.x_bar, net_input.views, mask_rows));
    const double loss2 =
        t2.scalar_value(train::recon_loss_masked(t2, f2.x_bar, perturbed, mask_rows));
    const double elapsed = seconds_since(start);

    Outcome out;
    out.pass = worst < 1e-12 && loss1 == loss2 && elapsed < 1.0;
    std::ostringstream d;
    d << "max |dZ_bar| " << worst << ", |dLoss| " << std::abs(loss1 - loss2) << ", " << elapsed
      << " s";
    out.detail = d.str();
    return out;
}

// ---------------------------------------------------------------------------
// Criterion 3: recon_loss_full == recon_loss_masked(all-ones) bit-identical
// on 100 random instances; graph_loss_batch at b=n equals a direct
// evaluation of the full-batch summand structure within 1e-12.

Outcome criterion3() {
    Rng rng(77);
    bool identity_ok = true;
    for (int rep = 0; rep < 100; ++rep) {
        const int b = 1 + static_cast<int>(rng.below(6));
        const int m = 1 + static_cast<int>(rng.below(3));
        std::vector<Matrix> targets;
        std::vector<ad::Tensor> recon;
        for (int v = 0; v < m; ++v) {
            const int d = 1 + static_cast<int>(rng.below(5));
            Matrix t(b, d);
            for (double& x : t.v) x = rng.uniform(-3, 3);
            targets.push_back(t);
            ad::Tensor r({b, d});
            for (double& x : r.values) x = rng.uniform(-3, 3);
            recon.push_back(r);
        }
        ad::Tape tape;
        std::vector<ad::Var> x_bar;
        for (const auto& r : recon) x_bar.push_back(tape.constant(r));
        const double full = tape.scalar_value(train::recon_loss_full(tape, x_bar, targets));
        model::MaskRows ones(static_cast<std::size_t>(b),
                             std::vector<double>(static_cast<std::size_t>(m), 1.0));
        const double masked =
            tape.scalar_value(train::recon_loss_masked(tape, x_bar, targets, ones));
        identity_ok = identity_ok && full == masked;
    }

    // full-batch graph loss vs a direct all-pairs summation
    const int n = 12, m = 2, d_e = 5;
    graph::EmbeddingBuffer buffer(n, m, d_e);
    std::vector<int> all_idx(n);
    std::iota(all_idx.begin(), all_idx.end(), 0);
    for (int i = 0; i < n; ++i) {
        ad::Tensor z({m, d_e});
        for (double& x : z.values) x = rng.uniform(-2, 2);
        buffer.update({z}, {i});
    }
    std::vector<graph::NeighborGraph> graphs;
    std::vector<ad::Tensor> current;  // per view n x d_e
    for (int v = 0; v < m; ++v) {
        Matrix pts(n, 3);
        for (double& x : pts.v) x = rng.uniform(-1, 1);
        graphs.push_back(graph::knn_graph(pts, 3));
        ad::Tensor z({n, d_e});
        for (double& x : z.values) x = rng.uniform(-2, 2);
        current.push_back(z);
    }

    ad::Tape tape;
    std::vector<ad::Var> z_views;
    for (const auto& z : current) z_views.push_back(tape.constant(z));
    const double batch_value =
        tape.scalar_value(graph::graph_loss_batch(tape, z_views, buffer, graphs, all_idx));

    double direct = 0.0;  // (1/(m n^2)) sum_v sum_i sum_j ||z_i - zprev_j||^2 G[i,j]
    for (int v = 0; v < m; ++v)
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) {
                if (!graphs[static_cast<std::size_t>(v)].connected(i, j)) continue;
                double dist = 0.0;
                for (int f = 0; f < d_e; ++f) {
                    const double diff = current[static_cast<std::size_t>(v)].at(i, f) -
                                        buffer.view(v).at(j, f);
                    dist += diff * diff;
                }
                direct += dist;
            }
    direct /= static_cast<double>(m) * n * n;

    Outcome out;
    const double gap = std::abs(batch_value - direct);
    out.pass = identity_ok && gap <= 1e-12;
    std::ostringstream d;
    d << "degeneration identity " << (identity_ok ? "bit-exact" : "BROKEN") << " on 100 instances, "
      << "full-batch gap " << gap;
    out.detail = d.str();
    return out;
}

// ---------------------------------------------------------------------------
// Criterion 4: acc/nmi/purity and hungarian vs brute force on 200 random
// labelings (permutations up to 6!, partitions up to n=8).

double acc_brute(const std::vector<int>& pred, const std::vector<int>& truth) {
    std::vector<int> pv = pred, tv = truth;
    std::sort(pv.begin(), pv.end());
    pv.erase(std::unique(pv.begin(), pv.end()), pv.end());
    std::sort(tv.begin(), tv.end());
    tv.erase(std::unique(tv.begin(), tv.end()), tv.end());
    const int k = static_cast<int>(std::max(pv.size(), tv.size()));
    while (static_cast<int>(tv.size()) < k) tv.push_back(-9000 - static_cast<int>(tv.size()));
    std::vector<int> perm(static_cast<std::size_t>(k));
    std::iota(perm.begin(), perm.end(), 0);
    int best = 0;
    do {
        int matched = 0;
        for (std::size_t s = 0; s < pred.size(); ++s) {
            const int pi = static_cast<int>(
                std::find(pv.begin(), pv.end(), pred[s]) - pv.begin());
            if (tv[static_cast<std::size_t>(perm[static_cast<std::size_t>(pi)])] == truth[s])
                ++matched;
        }
        best = std::max(best, matched);
    } while (std::next_permutation(perm.begin(), perm.end()));
    return static_cast<double>(best) / pred.size();
}

double purity_brute(const std::vector<int>& pred, const std::vector<int>& truth) {
    double total = 0.0;
    std::vector<int> clusters = pred;
    std::sort(clusters.begin(), clusters.end());
    clusters.erase(std::unique(clusters.begin(), clusters.end()), clusters.end());
    for (int c : clusters) {
        std::vector<int> members;
        for (std::size_t i = 0; i < pred.size(); ++i)
            if (pred[i] == c) members.push_back(truth[i]);
        int best = 0;
        for (int t : members)
            best = std::max(best, static_cast<int>(std::count(members.begin(), members.end(), t)));
        total += best;
    }
    return total / pred.size();
}

double nmi_reference(const std::vector<int>& pred, const std::vector<int>& truth) {
    const int n = static_cast<int>(pred.size());
    auto compact = [](const std::vector<int>& xs) {
        std::vector<int> ids = xs;
        std::sort(ids.begin(), ids.end());
        ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
        std::vector<int> out;
        for (int x : xs)
            out.push_back(static_cast<int>(std::find(ids.begin(), ids.end(), x) - ids.begin()));
        return std::make_pair(out, static_cast<int>(ids.size()));
    };
    auto [p, kp] = compact(pred);
    auto [t, kt] = compact(truth);
    if (kp == 1 && kt == 1) return 1.0;
    if (kp == 1 || kt == 1) return 0.0;
    std::vector<std::vector<double>> joint(static_cast<std::size_t>(kp),
                                           std::vector<double>(static_cast<std::size_t>(kt), 0.0));
    std::vector<double> pp(static_cast<std::size_t>(kp), 0.0), pt(static_cast<std::size_t>(kt), 0.0);
    for (int i = 0; i < n; ++i) {
        joint[static_cast<std::size_t>(p[static_cast<std::size_t>(i)])]
             [static_cast<std::size_t>(t[static_cast<std::size_t>(i)])] += 1.0 / n;
        pp[static_cast<std::size_t>(p[static_cast<std::size_t>(i)])] += 1.0 / n;
        pt[static_cast<std::size_t>(t[static_cast<std::size_t>(i)])] += 1.0 / n;
    }
    double mi = 0.0, hp = 0.0, ht = 0.0;
    for (int a = 0; a < kp; ++a)
        for (int b = 0; b < kt; ++b) {
            const double pab = joint[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)];
            if (pab > 0)
                mi += pab * std::log(pab / (pp[static_cast<std::size_t>(a)] *
                                            pt[static_cast<std::size_t>(b)]));
        }
    for (double x : pp) hp -= x * std::log(x);
    for (double x : pt) ht -= x * std::log(x);
    return mi / std::sqrt(hp * ht);
}

double hungarian_brute(const Matrix& cost) {
    std::vector<int> perm(static_cast<std::size_t>(cost.rows));
    std::iota(perm.begin(), perm.end(), 0);
    double best = 1e300;
    do {
        double total = 0.0;
        for (int i = 0; i < cost.rows; ++i) total += cost.at(i, perm[static_cast<std::size_t>(i)]);
        best = std::min(best, total);
    } while (std::next_permutation(perm.begin(), perm.end()));
    return best;
}

Outcome criterion4() {
    Rng rng(88);
    int failures = 0;
    double worst_nmi_gap = 0.0;
    for (int rep = 0; rep < 200; ++rep) {
        const int n = 8;
        const int kp = 1 + static_cast<int>(rng.below(4));
        const int kt = 1 + static_cast<int>(rng.below(4));
        std::vector<int> pred(static_cast<std::size_t>(n)), truth(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) {
            pred[static_cast<std::size_t>(i)] = static_cast<int>(rng.below(static_cast<std::uint64_t>(kp)));
            truth[static_cast<std::size_t>(i)] = static_cast<int>(rng.below(static_cast<std::uint64_t>(kt)));
        }
        if (cluster::acc(pred, truth) != acc_brute(pred, truth)) ++failures;
        if (cluster::purity(pred, truth) != purity_brute(pred, truth)) ++failures;
        const double gap = std::abs(cluster::nmi(pred, truth) - nmi_reference(pred, truth));
        worst_nmi_gap = std::max(worst_nmi_gap, gap);
        if (gap > 1e-12) ++failures;

        Matrix cost(6, 6);
        for (double& x : cost.v) x = static_cast<double>(rng.below(40));
        const std::vector<int> perm = cluster::hungarian(cost);
        double total = 0.0;
        for (int i = 0; i < 6; ++i) total += cost.at(i, perm[static_cast<std::size_t>(i)]);
        if (total != hungarian_brute(cost)) ++failures;
    }

    Outcome out;
    out.pass = failures == 0;
    std::ostringstream d;
    d << failures << " mismatches over 200 labelings, worst NMI gap " << worst_nmi_gap;
    out.detail = d.str();
    return out;
}

// ---------------------------------------------------------------------------
// Criterion 5: knn_graph vs an O(n^2) sorted-distance oracle, exact, on 50
// random instances (n <= 64, k <= 8) including duplicate-point ties.

Outcome criterion5() {
    Rng rng(99);
    int failures = 0;
    for (int rep = 0; rep < 50; ++rep) {
        const int n = 2 + static_cast<int>(rng.below(63));
        const int d = 1 + static_cast<int>(rng.below(6));
        const int k = 1 + static_cast<int>(rng.below(std::min<std::uint64_t>(8, static_cast<std::uint64_t>(n - 1))));
        Matrix x(n, d);
        for (double& v : x.v) v = rng.uniform(-1, 1);
        if (rep % 2 == 0) {
            // plant duplicates: overwrite a few rows with copies
            for (int kdup = 0; kdup < std::min(4, n / 2); ++kdup) {
                const int src = static_cast<int>(rng.below(static_cast<std::uint64_t>(n)));
                const int dst = static_cast<int>(rng.below(static_cast<std::uint64_t>(n)));
                std::copy(x.row_ptr(src), x.row_ptr(src) + d, x.row_ptr(dst));
            }
        }
        graph::NeighborGraph g = graph::knn_graph(x, k);
        for (int i = 0; i < n; ++i) {
            std::vector<std::pair<double, int>> all;
            for (int j = 0; j < n; ++j) {
                if (j == i) continue;
                all.emplace_back(squared_distance(x.row_ptr(i), x.row_ptr(j), d), j);
            }
            std::sort(all.begin(), all.end());
            std::vector<int> expect;
            for (int t = 0; t < k; ++t) expect.push_back(all[static_cast<std::size_t>(t)].second);
            std::sort(expect.begin(), expect.end());
            if (g.rows[static_cast<std::size_t>(i)] != expect) ++failures;
        }
    }
    Outcome out;
    out.pass = failures == 0;
    out.detail = std::to_string(failures) + " row mismatches over 50 instances";
    return out;
}

// ---------------------------------------------------------------------------
// Criteria 6 and 7: synthetic end-to-end clustering quality and loss descent.
// Two views use the paired protocol: 50% of samples keep both views, the rest
// split between the views.

struct SynthRun {
    train::Metrics metrics;
    std::vector<train::EpochLoss> losses;
};

std::vector<SynthRun> run_synthetic_seeds() {
    std::vector<SynthRun> runs;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        data::MultiViewDataset raw =
            data::synth_dataset(90, 2, 3, {20, 30}, 0.05, derive_seed(seed, 0xDA7A));
        data::MaskMatrix mask = data::generate_paired_mask(90, 0.5, derive_seed(seed, 0x3A5C));
        train::TrainConfig tcfg;
        tcfg.beta = 1.0;
        tcfg.k_neighbors = 5;
        tcfg.e1 = 50;
        tcfg.e2 = 50;
        tcfg.batch_size = 32;
        tcfg.seed = seed;
        model::ModelConfig mcfg;  // defaults: d_e=128, 4 heads, 1 layer
        mcfg.view_dims = raw.dims;
        train::PipelineResult res = train::run_pipeline(raw, mask, tcfg, mcfg);
        runs.push_back({*res.metrics, res.losses});
    }
    return runs;
}

Outcome criterion6(const std::vector<SynthRun>& runs, double elapsed) {
    int good = 0;
    std::ostringstream d;
    for (const SynthRun& r : runs) {
        if (r.metrics.acc >= 0.90 && r.metrics.nmi >= 0.80) ++good;
        d << "(" << r.metrics.acc << ", " << r.metrics.nmi << ") ";
    }
    d << "- " << good << "/5 seeds good, " << elapsed << " s";
    Outcome out;
    out.pass = good >= 4 && elapsed < 120.0;
    out.detail = d.str();
    return out;
}

Outcome criterion7(const std::vector<SynthRun>& runs) {
    bool ok = true;
    double worst_margin = 1e300;
    for (const SynthRun& r : runs) {
        for (int stage = 1; stage <= 2; ++stage) {
            std::vector<double> totals;
            for (const auto& e : r.losses)
                if (e.stage == stage) totals.push_back(e.total);
            const double head =
                std::accumulate(totals.begin(), totals.begin() + 5, 0.0) / 5.0;
            const double tail = std::accumulate(totals.end() - 5, totals.end(), 0.0) / 5.0;
            ok = ok && tail < head;
            worst_margin = std::min(worst_margin, head - tail);
        }
    }
    Outcome out;
    out.pass = ok;
    std::ostringstream d;
    d << "final-5 mean below first-5 mean in every stage of every seed (worst margin "
      << worst_margin << ")";
    out.detail = d.str();
    return out;
}

// ---------------------------------------------------------------------------
// Criterion 8: conditional Handwritten reproduction.

Outcome criterion8() {
    std::string dir;
    if (const char* env = std::getenv("RECFORMER_HANDWRITTEN_DIR")) dir = env;
    if (dir.empty() && fs::exists("data/handwritten/meta.json")) dir = "data/handwritten";
    if (dir.empty()) {
        Outcome out;
        out.skipped = true;
        out.detail =
            "Handwritten not supplied (set RECFORMER_HANDWRITTEN_DIR or place the CSV-format "
            "dataset in data/handwritten); criteria 1-7 and 9 remain the binding suite";
        return out;
    }

    const auto start = Clock::now();
    data::MultiViewDataset raw = data::load_dataset(dir);
    double acc_sum = 0.0, nmi_sum = 0.0;
    const int n_seeds = 3;
    for (std::uint64_t seed = 1; seed <= n_seeds; ++seed) {
        data::MaskMatrix mask =
            data::generate_mask(raw.n, raw.m, 0.5, derive_seed(seed, 0x57EA));
        train::TrainConfig tcfg;  // stock defaults
        tcfg.seed = seed;
        model::ModelConfig mcfg;
        mcfg.view_dims = raw.dims;
        train::PipelineResult res = train::run_pipeline(raw, mask, tcfg, mcfg);
        acc_sum += res.metrics->acc;
        nmi_sum += res.metrics->nmi;
    }
    const double acc_pct = 100.0 * acc_sum / n_seeds;
    const double nmi_pct = 100.0 * nmi_sum / n_seeds;
    const double elapsed = seconds_since(start);

    Outcome out;
    out.pass = std::abs(acc_pct - 91.74) <= 6.0 && std::abs(nmi_pct - 83.39) <= 6.0;
    std::ostringstream d;
    d << "mean ACC " << acc_pct << " (target 91.74 +- 6), mean NMI " << nmi_pct
      << " (target 83.39 +- 6), " << elapsed << " s";
    out.detail = d.str();
    return out;
}

// ---------------------------------------------------------------------------
// Criterion 9: two identical cmd_train invocations produce byte-identical
// losses.csv and predictions.csv.

Outcome criterion9() {
    data::MultiViewDataset raw = data::synth_dataset(40, 2, 3, {8, 10}, 0.05, 301);
    data::MaskMatrix mask = data::generate_paired_mask(40, 0.5, 23);
    train::TrainConfig tcfg;
    tcfg.e1 = 8;
    tcfg.e2 = 8;
    tcfg.batch_size = 16;
    tcfg.k_neighbors = 5;
    tcfg.seed = 99;
    model::ModelConfig mcfg;
    mcfg.d_e = 32;
    mcfg.mlp_hidden = 64;
    mcfg.view_dims = raw.dims;

    const fs::path base = fs::temp_directory_path() / "recformer_acceptance_det";
    fs::remove_all(base);
    for (int run = 0; run < 2; ++run) {
        train::PipelineResult res = train::run_pipeline(raw, mask, tcfg, mcfg);
        train::persist_run((base / ("run" + std::to_string(run))).string(), res, tcfg, mcfg);
    }
    const bool losses_same =
        read_bytes(base / "run0/losses.csv") == read_bytes(base / "run1/losses.csv");
    const bool preds_same =
        read_bytes(base / "run0/predictions.csv") == read_bytes(base / "run1/predictions.csv");
    fs::remove_all(base);

    Outcome out;
    out.pass = losses_same && preds_same;
    std::ostringstream d;
    d << "losses.csv " << (losses_same ? "identical" : "DIFFER") << ", predictions.csv "
      << (preds_same ? "identical" : "DIFFER");
    out.detail = d.str();
    return out;
}

}  // namespace

int main() {
    int failed = 0;
    auto report = [&](int idx, const std::string& name, const Outcome& o) {
        const char* tag = o.skipped ? "SKIP" : (o.pass ? "PASS" : "FAIL");
        if (!o.pass && !o.skipped) ++failed;
        std::cout << "[" << tag << "] criterion " << idx << ": " << name << " -- " << o.detail
                  << "\n";
    };

    report(1, "stage-1 gradient vs finite differences", criterion1());
    report(2, "mask isolation of the fused representation", criterion2());
    report(3, "loss identities", criterion3());
    report(4, "metric brute-force oracles", criterion4());
    report(5, "kNN exhaustive oracle", criterion5());

    const auto synth_start = Clock::now();
    std::vector<SynthRun> runs = run_synthetic_seeds();
    const double synth_elapsed = seconds_since(synth_start);
    report(6, "synthetic end-to-end clustering", criterion6(runs, synth_elapsed));
    report(7, "loss descent per stage", criterion7(runs));

    report(8, "Handwritten reproduction (conditional)", criterion8());
    report(9, "byte-identical reruns", criterion9());

    if (failed) {
        std::cout << failed << " criterion(s) failed\n";
        return 1;
    }
    std::cout << "all binding criteria passed\n";
    return 0;
}
