#pragma once

#include <cstdint>
#include <vector>

#include "recformer/matrix.hpp"

namespace recformer::cluster {

struct ClusterResult {
    std::vector<int> labels;  // in [0, c)
    Matrix centroids;         // c x d
    double inertia = 0.0;
};

// k-means++ seeding, Lloyd iterations to an assignment fixpoint (at most
// 300), best of `restarts` runs by (inertia, restart index). Empty
// clusters are repaired by stealing the farthest point from the largest
// cluster. Deterministic per seed.
ClusterResult kmeans(const Matrix& points, int c, int restarts, std::uint64_t seed);

// Minimal-cost assignment (Kuhn-Munkres) on a square cost matrix. Returns
// perm with perm[row] = assigned column.
std::vector<int> hungarian(const Matrix& cost);

// Clustering accuracy under the best cluster-to-class matching.
double acc(const std::vector<int>& pred, const std::vector<int>& truth);

// Mutual information normalized by sqrt(H(pred) * H(truth)); 0 when either
// entropy is 0, except 1 for two identical constant labelings.
double nmi(const std::vector<int>& pred, const std::vector<int>& truth);

// Fraction of samples in the majority true class of their cluster.
double purity(const std::vector<int>& pred, const std::vector<int>& truth);

}  // namespace recformer::cluster
