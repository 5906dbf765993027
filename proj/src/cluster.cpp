#include "recformer/cluster.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "recformer/errors.hpp"
#include "recformer/rng.hpp"

namespace recformer::cluster {

namespace {

double inertia_of(const Matrix& points, const Matrix& centroids, const std::vector<int>& labels) {
    double total = 0.0;
    for (int i = 0; i < points.rows; ++i)
        total += squared_distance(points.row_ptr(i),
                                  centroids.row_ptr(labels[static_cast<std::size_t>(i)]),
                                  points.cols);
    return total;
}

// Nearest centroid, ties toward the lower index.
int nearest(const Matrix& points, int i, const Matrix& centroids) {
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (int c = 0; c < centroids.rows; ++c) {
        const double d = squared_distance(points.row_ptr(i), centroids.row_ptr(c), points.cols);
        if (d < best_d) {
            best_d = d;
            best = c;
        }
    }
    return best;
}

ClusterResult kmeans_single(const Matrix& points, int c, Rng& rng) {
    const int n = points.rows;
    const int d = points.cols;

    // k-means++ seeding: distance-proportional draws after a uniform first pick.
    Matrix centroids(c, d);
    std::vector<double> dist2(static_cast<std::size_t>(n),
                              std::numeric_limits<double>::infinity());
    int first = static_cast<int>(rng.below(static_cast<std::uint64_t>(n)));
    std::copy(points.row_ptr(first), points.row_ptr(first) + d, centroids.row_ptr(0));
    for (int k = 1; k < c; ++k) {
        double total = 0.0;
        for (int i = 0; i < n; ++i) {
            const double dd =
                squared_distance(points.row_ptr(i), centroids.row_ptr(k - 1), d);
            dist2[static_cast<std::size_t>(i)] = std::min(dist2[static_cast<std::size_t>(i)], dd);
            total += dist2[static_cast<std::size_t>(i)];
        }
        int chosen = -1;
        if (total > 0.0) {
            double target = rng.uniform() * total;
            for (int i = 0; i < n; ++i) {
                target -= dist2[static_cast<std::size_t>(i)];
                if (target <= 0.0) {
                    chosen = i;
                    break;
                }
            }
            if (chosen < 0) chosen = n - 1;
        } else {
            chosen = static_cast<int>(rng.below(static_cast<std::uint64_t>(n)));
        }
        std::copy(points.row_ptr(chosen), points.row_ptr(chosen) + d, centroids.row_ptr(k));
    }

    std::vector<int> labels(static_cast<std::size_t>(n), 0);
    std::vector<int> counts(static_cast<std::size_t>(c), 0);
    for (int iter = 0; iter < 300; ++iter) {
        bool changed = iter == 0;
        for (int i = 0; i < n; ++i) {
            const int a = nearest(points, i, centroids);
            if (a != labels[static_cast<std::size_t>(i)]) changed = true;
            labels[static_cast<std::size_t>(i)] = a;
        }
        if (!changed) break;

        counts.assign(static_cast<std::size_t>(c), 0);
        for (int i = 0; i < n; ++i) ++counts[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])];

        // Repair empty clusters: steal the farthest point from the largest one.
        for (int k = 0; k < c; ++k) {
            if (counts[static_cast<std::size_t>(k)] > 0) continue;
            int biggest = 0;
            for (int q = 1; q < c; ++q)
                if (counts[static_cast<std::size_t>(q)] > counts[static_cast<std::size_t>(biggest)])
                    biggest = q;
            int farthest = -1;
            double far_d = -1.0;
            for (int i = 0; i < n; ++i) {
                if (labels[static_cast<std::size_t>(i)] != biggest) continue;
                const double dd =
                    squared_distance(points.row_ptr(i), centroids.row_ptr(biggest), d);
                if (dd > far_d) {
                    far_d = dd;
                    farthest = i;
                }
            }
            if (farthest >= 0) {
                labels[static_cast<std::size_t>(farthest)] = k;
                --counts[static_cast<std::size_t>(biggest)];
                ++counts[static_cast<std::size_t>(k)];
            }
        }

        for (int k = 0; k < c; ++k)
            std::fill(centroids.row_ptr(k), centroids.row_ptr(k) + d, 0.0);
        for (int i = 0; i < n; ++i) {
            double* cr = centroids.row_ptr(labels[static_cast<std::size_t>(i)]);
            const double* pr = points.row_ptr(i);
            for (int j = 0; j < d; ++j) cr[j] += pr[j];
        }
        for (int k = 0; k < c; ++k) {
            if (counts[static_cast<std::size_t>(k)] == 0) continue;
            double* cr = centroids.row_ptr(k);
            for (int j = 0; j < d; ++j) cr[j] /= counts[static_cast<std::size_t>(k)];
        }
    }

    ClusterResult out;
    out.labels = std::move(labels);
    out.centroids = std::move(centroids);
    out.inertia = inertia_of(points, out.centroids, out.labels);
    return out;
}

}  // namespace

ClusterResult kmeans(const Matrix& points, int c, int restarts, std::uint64_t seed) {
    if (c < 1) throw ConfigError("kmeans: c must be >= 1");
    if (c > points.rows)
        throw ConfigError("kmeans: c=" + std::to_string(c) + " exceeds n=" +
                          std::to_string(points.rows));
    if (restarts < 1) restarts = 1;

    ClusterResult best;
    bool have = false;
    for (int r = 0; r < restarts; ++r) {
        Rng rng(derive_seed(seed, static_cast<std::uint64_t>(r)));
        ClusterResult res = kmeans_single(points, c, rng);
        if (!have || res.inertia < best.inertia) {
            best = std::move(res);
            have = true;
        }
    }
    return best;
}

std::vector<int> hungarian(const Matrix& cost) {
    if (cost.rows != cost.cols) throw ShapeError("hungarian: cost matrix must be square");
    const int n = cost.rows;
    for (double x : cost.v)
        if (!std::isfinite(x)) throw ConfigError("hungarian: non-finite cost");

    // Potentials-based Kuhn-Munkres with 1-based sentinel column 0.
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(static_cast<std::size_t>(n + 1), 0.0);
    std::vector<double> v(static_cast<std::size_t>(n + 1), 0.0);
    std::vector<int> p(static_cast<std::size_t>(n + 1), 0);
    std::vector<int> way(static_cast<std::size_t>(n + 1), 0);
    for (int i = 1; i <= n; ++i) {
        p[0] = i;
        int j0 = 0;
        std::vector<double> minv(static_cast<std::size_t>(n + 1), inf);
        std::vector<char> used(static_cast<std::size_t>(n + 1), 0);
        do {
            used[static_cast<std::size_t>(j0)] = 1;
            const int i0 = p[static_cast<std::size_t>(j0)];
            double delta = inf;
            int j1 = -1;
            for (int j = 1; j <= n; ++j) {
                if (used[static_cast<std::size_t>(j)]) continue;
                const double cur = cost.at(i0 - 1, j - 1) - u[static_cast<std::size_t>(i0)] -
                                   v[static_cast<std::size_t>(j)];
                if (cur < minv[static_cast<std::size_t>(j)]) {
                    minv[static_cast<std::size_t>(j)] = cur;
                    way[static_cast<std::size_t>(j)] = j0;
                }
                if (minv[static_cast<std::size_t>(j)] < delta) {
                    delta = minv[static_cast<std::size_t>(j)];
                    j1 = j;
                }
            }
            for (int j = 0; j <= n; ++j) {
                if (used[static_cast<std::size_t>(j)]) {
                    u[static_cast<std::size_t>(p[static_cast<std::size_t>(j)])] += delta;
                    v[static_cast<std::size_t>(j)] -= delta;
                } else {
                    minv[static_cast<std::size_t>(j)] -= delta;
                }
            }
            j0 = j1;
        } while (p[static_cast<std::size_t>(j0)] != 0);
        do {
            const int j1 = way[static_cast<std::size_t>(j0)];
            p[static_cast<std::size_t>(j0)] = p[static_cast<std::size_t>(j1)];
            j0 = j1;
        } while (j0);
    }

    std::vector<int> perm(static_cast<std::size_t>(n), -1);
    for (int j = 1; j <= n; ++j)
        if (p[static_cast<std::size_t>(j)] > 0)
            perm[static_cast<std::size_t>(p[static_cast<std::size_t>(j)] - 1)] = j - 1;
    return perm;
}

namespace {

// Contingency counts and compact relabelings.
struct Contingency {
    int n = 0;
    int kp = 0, kt = 0;
    std::vector<std::vector<int>> table;  // kp x kt
    std::vector<int> pred_counts, true_counts;
};

Contingency contingency(const std::vector<int>& pred, const std::vector<int>& truth) {
    if (pred.size() != truth.size())
        throw ShapeError("metrics: " + std::to_string(pred.size()) + " predictions vs " +
                         std::to_string(truth.size()) + " labels");
    if (pred.empty()) throw ShapeError("metrics: empty labelings");

    std::map<int, int> pmap, tmap;
    for (int x : pred)
        if (!pmap.count(x)) {
            const int idx = static_cast<int>(pmap.size());
            pmap[x] = idx;
        }
    for (int x : truth)
        if (!tmap.count(x)) {
            const int idx = static_cast<int>(tmap.size());
            tmap[x] = idx;
        }

    Contingency c;
    c.n = static_cast<int>(pred.size());
    c.kp = static_cast<int>(pmap.size());
    c.kt = static_cast<int>(tmap.size());
    c.table.assign(static_cast<std::size_t>(c.kp), std::vector<int>(static_cast<std::size_t>(c.kt), 0));
    c.pred_counts.assign(static_cast<std::size_t>(c.kp), 0);
    c.true_counts.assign(static_cast<std::size_t>(c.kt), 0);
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const int a = pmap[pred[i]];
        const int b = tmap[truth[i]];
        ++c.table[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)];
        ++c.pred_counts[static_cast<std::size_t>(a)];
        ++c.true_counts[static_cast<std::size_t>(b)];
    }
    return c;
}

}  // namespace

double acc(const std::vector<int>& pred, const std::vector<int>& truth) {
    const Contingency c = contingency(pred, truth);
    const int k = std::max(c.kp, c.kt);
    // Hungarian on the negated contingency table, zero-padded to square.
    Matrix cost(k, k, 0.0);
    for (int a = 0; a < c.kp; ++a)
        for (int b = 0; b < c.kt; ++b)
            cost.at(a, b) = -static_cast<double>(c.table[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)]);
    const std::vector<int> perm = hungarian(cost);
    std::int64_t matched = 0;
    for (int a = 0; a < c.kp; ++a) {
        const int b = perm[static_cast<std::size_t>(a)];
        if (b < c.kt) matched += c.table[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)];
    }
    return static_cast<double>(matched) / c.n;
}

double nmi(const std::vector<int>& pred, const std::vector<int>& truth) {
    const Contingency c = contingency(pred, truth);
    const double n = c.n;

    double h_pred = 0.0, h_true = 0.0;
    for (int count : c.pred_counts) {
        const double p = count / n;
        if (p > 0.0) h_pred -= p * std::log(p);
    }
    for (int count : c.true_counts) {
        const double p = count / n;
        if (p > 0.0) h_true -= p * std::log(p);
    }

    if (h_pred == 0.0 || h_true == 0.0) {
        // Both constant and identical in structure (single cluster each).
        return (c.kp == 1 && c.kt == 1) ? 1.0 : 0.0;
    }

    double mi = 0.0;
    for (int a = 0; a < c.kp; ++a)
        for (int b = 0; b < c.kt; ++b) {
            const int nij = c.table[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)];
            if (nij == 0) continue;
            const double pij = nij / n;
            mi += pij * std::log(pij * n * n /
                                 (static_cast<double>(c.pred_counts[static_cast<std::size_t>(a)]) *
                                  c.true_counts[static_cast<std::size_t>(b)]));
        }
    const double value = mi / std::sqrt(h_pred * h_true);
    return std::clamp(value, 0.0, 1.0);
}

double purity(const std::vector<int>& pred, const std::vector<int>& truth) {
    const Contingency c = contingency(pred, truth);
    std::int64_t majority = 0;
    for (int a = 0; a < c.kp; ++a) {
        int best = 0;
        for (int b = 0; b < c.kt; ++b)
            best = std::max(best, c.table[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)]);
        majority += best;
    }
    return static_cast<double>(majority) / c.n;
}

}  // namespace recformer::cluster
