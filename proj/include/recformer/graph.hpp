#pragma once

#include <string>
#include <vector>

#include "recformer/autodiff.hpp"
#include "recformer/data.hpp"
#include "recformer/matrix.hpp"

namespace recformer::graph {

// Row-wise kNN adjacency for one view. rows[i] holds the neighbor indices
// of sample i, ascending; exactly k of them (n-1 when k was clamped),
// never i itself. Directed; no symmetrization.
struct NeighborGraph {
    int n = 0;
    int k = 0;
    bool clamped = false;  // set when k >= n forced k = n-1
    std::vector<std::vector<int>> rows;

    bool connected(int i, int j) const;
};

// G[i,j] = 1 iff j is among the k nearest rows of i by Euclidean distance,
// self excluded, ties broken toward the lower index.
NeighborGraph knn_graph(const Matrix& x, int k);

// One graph per view over the imputed data.
std::vector<NeighborGraph> rebuild_graphs(const data::ImputedDataset& imputed, int k);

// Per-sample, per-view embeddings kept from the previous epoch. Rows are
// replaced (detached) after each batch's parameter step; the loss reads
// the buffer as a constant.
class EmbeddingBuffer {
public:
    EmbeddingBuffer() = default;
    EmbeddingBuffer(int n, int m, int d_e);

    int n() const { return n_; }
    int m() const { return m_; }
    int embed_dim() const { return d_e_; }
    bool filled() const;
    bool row_filled(int i) const { return filled_[static_cast<std::size_t>(i)]; }

    const Matrix& view(int v) const { return per_view_[static_cast<std::size_t>(v)]; }

    // z_rows[b] is the m x d_e embedding of sample batch_indices[b].
    void update(const std::vector<ad::Tensor>& z_rows, const std::vector<int>& batch_indices);

private:
    int n_ = 0, m_ = 0, d_e_ = 0;
    std::vector<Matrix> per_view_;  // m matrices of n x d_e
    std::vector<bool> filled_;
};

// Mini-batch graph penalty:
//   (1 / (m*n*b)) * sum_v sum_{i in batch} sum_j ||z[i,v,:] - buffer[j,v,:]||^2 * G_v[global(i), j]
// Gradient flows into z_view_blocks only. z_view_blocks[v] is the b x d_e
// tape tensor of view v for this batch; the buffer and graphs are constants
// and must outlive the tape's backward pass.
ad::Var graph_loss_batch(ad::Tape& tape, const std::vector<ad::Var>& z_view_blocks,
                         const EmbeddingBuffer& buffer, const std::vector<NeighborGraph>& graphs,
                         const std::vector<int>& batch_indices);

// CSV triplets (view, i, j), one edge per line. Views are 1-based.
void export_graph_csv(const std::string& path, const std::vector<NeighborGraph>& graphs);

}  // namespace recformer::graph
