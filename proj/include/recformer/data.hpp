#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "recformer/matrix.hpp"

namespace recformer::data {

// m aligned feature matrices over n shared samples, plus optional labels.
struct MultiViewDataset {
    int n = 0;
    int m = 0;
    std::vector<int> dims;
    std::vector<Matrix> views;
    std::optional<std::vector<int>> labels;
    std::optional<int> c;

    void validate() const;
};

// n x m binary missing-view indicator; w[i][v] = 1 means view v of sample i
// is observed. Every row must keep at least one view.
struct MaskMatrix {
    Matrix w;

    int n() const { return w.rows; }
    int m() const { return w.cols; }
    bool available(int i, int v) const { return w.at(i, v) != 0.0; }
    int row_sum(int i) const;
    std::vector<double> row(int i) const;
    std::vector<double> column(int v) const;
    void validate() const;  // entries 0/1, row sums >= 1
};

// Views where observed rows are the original data bit-exactly and missing
// rows were filled with decoder reconstructions.
struct ImputedDataset {
    std::vector<Matrix> views;
    MaskMatrix source_mask;
};

// Per-view, per-feature min-max parameters recorded so recovered views can
// be mapped back to input scale.
struct ScalingParams {
    std::vector<std::vector<double>> min;    // [view][feature]
    std::vector<std::vector<double>> range;  // 0 for constant features
};

// Directory format: meta.json {n, m, c, dims, has_labels}, view_<v>.csv
// (n rows of d_v floats, no header), optional labels.csv.
MultiViewDataset load_dataset(const std::string& dir);
void save_dataset(const std::string& dir, const MultiViewDataset& ds);

MaskMatrix load_mask(const std::string& path, int expect_n, int expect_m);
void save_mask(const std::string& path, const MaskMatrix& mask);

// General protocol: disables exactly round(missing_rate * n) entries per
// view, drawn uniformly, resampling any removal that would leave a sample
// with no view. If a view runs out of feasible rows the remaining removals
// are skipped so the mask stays valid.
MaskMatrix generate_mask(int n, int m, double missing_rate, std::uint64_t seed);

// Two-view paired protocol: round(paired_rate * n) rows keep both views;
// floor of half the remainder drops view 1, the rest drop view 2.
MaskMatrix generate_paired_mask(int n, double paired_rate, std::uint64_t seed);

// Rows with w = 0 become all-zero in that view.
MultiViewDataset zero_fill(const MultiViewDataset& ds, const MaskMatrix& mask);

// Per-view per-feature min-max scaling to [0,1], statistics over available
// rows only. Constant features map to 0.
MultiViewDataset normalize(const MultiViewDataset& ds, const MaskMatrix& mask,
                           ScalingParams* params_out = nullptr);

Matrix denormalize_view(const Matrix& x, const ScalingParams& params, int view);

// Row i of the result is x's row where w_col[i] = 1, x_bar's row otherwise.
Matrix impute(const Matrix& x, const Matrix& x_bar, const std::vector<double>& w_col);

ImputedDataset impute_all(const MultiViewDataset& ds, const std::vector<Matrix>& reconstructions,
                          const MaskMatrix& mask);

// Round-robin class assignment over c well-separated centers in a 16-d
// latent space, projected to each view's width with a seeded random map.
MultiViewDataset synth_dataset(int n, int m, int c, const std::vector<int>& dims, double noise,
                               std::uint64_t seed);

}  // namespace recformer::data
