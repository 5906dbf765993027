#include "recformer/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "json.hpp"
#include "recformer/csv.hpp"
#include "recformer/errors.hpp"
#include "recformer/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace recformer::data {

void MultiViewDataset::validate() const {
    if (m != static_cast<int>(views.size()) || m != static_cast<int>(dims.size()))
        throw ShapeError("dataset: view count disagrees with m=" + std::to_string(m));
    for (int v = 0; v < m; ++v) {
        if (views[v].rows != n)
            throw ShapeError("dataset: view " + std::to_string(v + 1) + " has " +
                             std::to_string(views[v].rows) + " rows, expected " +
                             std::to_string(n));
        if (views[v].cols != dims[v])
            throw ShapeError("dataset: view " + std::to_string(v + 1) + " has " +
                             std::to_string(views[v].cols) + " columns, expected " +
                             std::to_string(dims[v]));
    }
    if (labels) {
        if (static_cast<int>(labels->size()) != n)
            throw ShapeError("dataset: " + std::to_string(labels->size()) + " labels for " +
                             std::to_string(n) + " samples");
        if (c) {
            for (int y : *labels)
                if (y < 0 || y >= *c)
                    throw ShapeError("dataset: label " + std::to_string(y) + " outside [0, " +
                                     std::to_string(*c) + ")");
        }
    }
}

int MaskMatrix::row_sum(int i) const {
    int s = 0;
    for (int v = 0; v < m(); ++v) s += available(i, v) ? 1 : 0;
    return s;
}

std::vector<double> MaskMatrix::row(int i) const {
    std::vector<double> out(static_cast<std::size_t>(m()));
    for (int v = 0; v < m(); ++v) out[static_cast<std::size_t>(v)] = w.at(i, v);
    return out;
}

std::vector<double> MaskMatrix::column(int v) const {
    std::vector<double> out(static_cast<std::size_t>(n()));
    for (int i = 0; i < n(); ++i) out[static_cast<std::size_t>(i)] = w.at(i, v);
    return out;
}

void MaskMatrix::validate() const {
    for (int i = 0; i < n(); ++i) {
        for (int v = 0; v < m(); ++v) {
            const double x = w.at(i, v);
            if (x != 0.0 && x != 1.0)
                throw MaskError("mask: entry (" + std::to_string(i) + ", " + std::to_string(v) +
                                ") is " + std::to_string(x) + ", expected 0 or 1");
        }
        if (row_sum(i) < 1)
            throw MaskError("mask: sample " + std::to_string(i) + " has no available view");
    }
}

MultiViewDataset load_dataset(const std::string& dir) {
    const fs::path root(dir);
    const fs::path meta_path = root / "meta.json";
    std::ifstream meta_in(meta_path);
    if (!meta_in) throw ParseError(meta_path.string() + ": cannot open file");
    json meta;
    try {
        meta_in >> meta;
    } catch (const json::exception& e) {
        throw ParseError(meta_path.string() + ": " + e.what());
    }

    MultiViewDataset ds;
    try {
        ds.n = meta.at("n").get<int>();
        ds.m = meta.at("m").get<int>();
        ds.dims = meta.at("dims").get<std::vector<int>>();
        if (meta.contains("c") && !meta["c"].is_null()) ds.c = meta["c"].get<int>();
    } catch (const json::exception& e) {
        throw ParseError(meta_path.string() + ": " + e.what());
    }

    for (int v = 1; v <= ds.m; ++v) {
        const fs::path p = root / ("view_" + std::to_string(v) + ".csv");
        Matrix x = read_csv_matrix(p.string());
        if (x.rows != ds.n)
            throw ParseError(p.string() + ": " + std::to_string(x.rows) + " rows, expected " +
                             std::to_string(ds.n));
        ds.views.push_back(std::move(x));
    }

    const bool has_labels = meta.value("has_labels", false);
    if (has_labels) {
        const fs::path p = root / "labels.csv";
        std::vector<int> labels = read_csv_ints(p.string());
        if (static_cast<int>(labels.size()) != ds.n)
            throw ParseError(p.string() + ": " + std::to_string(labels.size()) +
                             " labels, expected " + std::to_string(ds.n));
        ds.labels = std::move(labels);
    }
    ds.validate();
    return ds;
}

void save_dataset(const std::string& dir, const MultiViewDataset& ds) {
    ds.validate();
    fs::create_directories(dir);
    const fs::path root(dir);

    json meta;
    meta["n"] = ds.n;
    meta["m"] = ds.m;
    meta["dims"] = ds.dims;
    if (ds.c) meta["c"] = *ds.c;
    meta["has_labels"] = ds.labels.has_value();
    std::ofstream meta_out(root / "meta.json");
    meta_out << meta.dump(2) << "\n";

    for (int v = 0; v < ds.m; ++v)
        write_csv_matrix((root / ("view_" + std::to_string(v + 1) + ".csv")).string(),
                         ds.views[static_cast<std::size_t>(v)]);
    if (ds.labels) write_csv_ints((root / "labels.csv").string(), *ds.labels);
}

MaskMatrix load_mask(const std::string& path, int expect_n, int expect_m) {
    MaskMatrix mask{read_csv_matrix(path)};
    if (mask.n() != expect_n || mask.m() != expect_m)
        throw ParseError(path + ": mask is " + std::to_string(mask.n()) + "x" +
                         std::to_string(mask.m()) + ", expected " + std::to_string(expect_n) +
                         "x" + std::to_string(expect_m));
    mask.validate();
    return mask;
}

void save_mask(const std::string& path, const MaskMatrix& mask) {
    write_csv_matrix(path, mask.w);
}

MaskMatrix generate_mask(int n, int m, double missing_rate, std::uint64_t seed) {
    if (missing_rate < 0.0 || missing_rate >= 1.0)
        throw ConfigError("missing rate must be in [0, 1), got " + std::to_string(missing_rate));
    if (m < 2 && missing_rate > 0.0)
        throw ConfigError("cannot remove views from a single-view dataset");

    MaskMatrix mask{Matrix(n, m, 1.0)};
    if (missing_rate == 0.0) return mask;

    const int target = static_cast<int>(std::llround(missing_rate * n));
    Rng rng(seed);
    for (int v = 0; v < m; ++v) {
        std::vector<int> order(static_cast<std::size_t>(n));
        std::iota(order.begin(), order.end(), 0);
        rng.shuffle(order);
        int removed = 0;
        for (int i : order) {
            if (removed == target) break;
            // Resample path: skip any removal that would zero the row.
            if (mask.row_sum(i) <= 1) continue;
            mask.w.at(i, v) = 0.0;
            ++removed;
        }
    }
    mask.validate();
    return mask;
}

MaskMatrix generate_paired_mask(int n, double paired_rate, std::uint64_t seed) {
    if (paired_rate < 0.0 || paired_rate > 1.0)
        throw ConfigError("paired rate must be in [0, 1], got " + std::to_string(paired_rate));

    const int paired = static_cast<int>(std::llround(paired_rate * n));
    MaskMatrix mask{Matrix(n, 2, 1.0)};

    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    Rng rng(seed);
    rng.shuffle(order);

    const int unpaired = n - paired;
    const int drop_first = unpaired / 2;  // floor convention
    for (int k = 0; k < unpaired; ++k) {
        const int i = order[static_cast<std::size_t>(paired + k)];
        mask.w.at(i, k < drop_first ? 0 : 1) = 0.0;
    }
    mask.validate();
    return mask;
}

MultiViewDataset zero_fill(const MultiViewDataset& ds, const MaskMatrix& mask) {
    if (mask.n() != ds.n || mask.m() != ds.m)
        throw ShapeError("zero_fill: mask is " + std::to_string(mask.n()) + "x" +
                         std::to_string(mask.m()) + " for a dataset with n=" +
                         std::to_string(ds.n) + ", m=" + std::to_string(ds.m));
    MultiViewDataset out = ds;
    for (int v = 0; v < ds.m; ++v) {
        Matrix& x = out.views[static_cast<std::size_t>(v)];
        for (int i = 0; i < ds.n; ++i)
            if (!mask.available(i, v))
                std::fill(x.row_ptr(i), x.row_ptr(i) + x.cols, 0.0);
    }
    return out;
}

MultiViewDataset normalize(const MultiViewDataset& ds, const MaskMatrix& mask,
                           ScalingParams* params_out) {
    MultiViewDataset out = ds;
    ScalingParams params;
    params.min.resize(static_cast<std::size_t>(ds.m));
    params.range.resize(static_cast<std::size_t>(ds.m));
    for (int v = 0; v < ds.m; ++v) {
        const Matrix& src = ds.views[static_cast<std::size_t>(v)];
        Matrix& dst = out.views[static_cast<std::size_t>(v)];
        auto& mn = params.min[static_cast<std::size_t>(v)];
        auto& rg = params.range[static_cast<std::size_t>(v)];
        mn.assign(static_cast<std::size_t>(src.cols), 0.0);
        rg.assign(static_cast<std::size_t>(src.cols), 0.0);
        for (int j = 0; j < src.cols; ++j) {
            double lo = std::numeric_limits<double>::infinity();
            double hi = -std::numeric_limits<double>::infinity();
            for (int i = 0; i < src.rows; ++i) {
                if (!mask.available(i, v)) continue;
                lo = std::min(lo, src.at(i, j));
                hi = std::max(hi, src.at(i, j));
            }
            if (!std::isfinite(lo)) {  // no available rows for this view at all
                lo = 0.0;
                hi = 0.0;
            }
            const double range = hi - lo;
            mn[static_cast<std::size_t>(j)] = lo;
            rg[static_cast<std::size_t>(j)] = range;
            for (int i = 0; i < src.rows; ++i)
                dst.at(i, j) = range > 0.0 ? (src.at(i, j) - lo) / range : 0.0;
        }
    }
    if (params_out) *params_out = std::move(params);
    return out;
}

Matrix denormalize_view(const Matrix& x, const ScalingParams& params, int view) {
    const auto& mn = params.min[static_cast<std::size_t>(view)];
    const auto& rg = params.range[static_cast<std::size_t>(view)];
    if (static_cast<int>(mn.size()) != x.cols)
        throw ShapeError("denormalize: scaling has " + std::to_string(mn.size()) +
                         " features, view has " + std::to_string(x.cols));
    Matrix out = x;
    for (int i = 0; i < x.rows; ++i)
        for (int j = 0; j < x.cols; ++j) {
            const std::size_t sj = static_cast<std::size_t>(j);
            out.at(i, j) = rg[sj] > 0.0 ? x.at(i, j) * rg[sj] + mn[sj] : mn[sj];
        }
    return out;
}

Matrix impute(const Matrix& x, const Matrix& x_bar, const std::vector<double>& w_col) {
    if (!x.same_shape(x_bar))
        throw ShapeError("impute: original is " + std::to_string(x.rows) + "x" +
                         std::to_string(x.cols) + ", reconstruction is " +
                         std::to_string(x_bar.rows) + "x" + std::to_string(x_bar.cols));
    if (static_cast<int>(w_col.size()) != x.rows)
        throw ShapeError("impute: " + std::to_string(w_col.size()) + " mask entries for " +
                         std::to_string(x.rows) + " rows");
    Matrix out = x;
    for (int i = 0; i < x.rows; ++i)
        if (w_col[static_cast<std::size_t>(i)] == 0.0)
            std::copy(x_bar.row_ptr(i), x_bar.row_ptr(i) + x.cols, out.row_ptr(i));
    return out;
}

ImputedDataset impute_all(const MultiViewDataset& ds, const std::vector<Matrix>& reconstructions,
                          const MaskMatrix& mask) {
    if (static_cast<int>(reconstructions.size()) != ds.m)
        throw ShapeError("impute_all: " + std::to_string(reconstructions.size()) +
                         " reconstructions for " + std::to_string(ds.m) + " views");
    ImputedDataset out;
    out.source_mask = mask;
    for (int v = 0; v < ds.m; ++v)
        out.views.push_back(impute(ds.views[static_cast<std::size_t>(v)],
                                   reconstructions[static_cast<std::size_t>(v)], mask.column(v)));
    return out;
}

MultiViewDataset synth_dataset(int n, int m, int c, const std::vector<int>& dims, double noise,
                               std::uint64_t seed) {
    if (c < 2 || n < c) throw ConfigError("synth_dataset: need n >= c >= 2");
    if (static_cast<int>(dims.size()) != m)
        throw ConfigError("synth_dataset: " + std::to_string(dims.size()) + " dims for m=" +
                          std::to_string(m));
    if (noise < 0.0) throw ConfigError("synth_dataset: noise must be non-negative");

    constexpr int kLatentDim = 16;
    Rng rng(derive_seed(seed, 0x5f));

    // Centers spread wide enough that 10x the noise radius separates them.
    const double min_sep = 10.0 * noise;
    std::vector<std::vector<double>> centers;
    bool ok = false;
    for (int attempt = 0; attempt < 100 && !ok; ++attempt) {
        centers.assign(static_cast<std::size_t>(c), std::vector<double>(kLatentDim));
        for (auto& ctr : centers)
            for (double& x : ctr) x = rng.gaussian() * std::max(1.0, 2.0 * noise);
        ok = true;
        for (int a = 0; a < c && ok; ++a)
            for (int b = a + 1; b < c && ok; ++b) {
                const double d2 = squared_distance(centers[static_cast<std::size_t>(a)].data(),
                                                   centers[static_cast<std::size_t>(b)].data(),
                                                   kLatentDim);
                if (d2 < min_sep * min_sep || d2 == 0.0) ok = false;
            }
    }
    if (!ok) throw ConfigError("synth_dataset: failed to separate centers after 100 redraws");

    // Latent samples: class i mod c, plus isotropic noise.
    std::vector<std::vector<double>> latent(static_cast<std::size_t>(n));
    std::vector<int> labels(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const int y = i % c;
        labels[static_cast<std::size_t>(i)] = y;
        latent[static_cast<std::size_t>(i)] = centers[static_cast<std::size_t>(y)];
        for (double& x : latent[static_cast<std::size_t>(i)]) x += noise * rng.gaussian();
    }

    MultiViewDataset ds;
    ds.n = n;
    ds.m = m;
    ds.c = c;
    ds.dims = dims;
    ds.labels = std::move(labels);
    for (int v = 0; v < m; ++v) {
        const int d = dims[static_cast<std::size_t>(v)];
        Rng proj_rng(derive_seed(seed, 0x100 + static_cast<std::uint64_t>(v)));
        Matrix proj(kLatentDim, d);
        for (double& x : proj.v) x = proj_rng.gaussian() / std::sqrt(double(kLatentDim));
        Matrix view(n, d, 0.0);
        for (int i = 0; i < n; ++i) {
            const auto& z = latent[static_cast<std::size_t>(i)];
            double* row = view.row_ptr(i);
            for (int k = 0; k < kLatentDim; ++k) {
                const double zk = z[static_cast<std::size_t>(k)];
                const double* prow = proj.row_ptr(k);
                for (int j = 0; j < d; ++j) row[j] += zk * prow[j];
            }
        }
        ds.views.push_back(std::move(view));
    }
    ds.validate();
    return ds;
}

}  // namespace recformer::data
