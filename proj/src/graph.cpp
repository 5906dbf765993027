#include "recformer/graph.hpp"

#include <algorithm>
#include <fstream>
#include <unordered_set>

#include "recformer/errors.hpp"

namespace recformer::graph {

bool NeighborGraph::connected(int i, int j) const {
    const auto& r = rows[static_cast<std::size_t>(i)];
    return std::binary_search(r.begin(), r.end(), j);
}

NeighborGraph knn_graph(const Matrix& x, int k) {
    const int n = x.rows;
    if (n < 2) throw ConfigError("knn_graph: need at least 2 samples");
    if (k < 1) throw ConfigError("knn_graph: k must be >= 1");

    NeighborGraph g;
    g.n = n;
    g.k = k;
    if (k >= n) {
        g.k = n - 1;
        g.clamped = true;
    }

    g.rows.resize(static_cast<std::size_t>(n));
    std::vector<std::pair<double, int>> cand(static_cast<std::size_t>(n - 1));

    // For moderate n, compute each pair distance once; (a-b)^2 == (b-a)^2
    // bit-exactly, so mirroring cannot change any ordering.
    const bool full_matrix = static_cast<std::size_t>(n) * n * sizeof(double) <= (std::size_t{1} << 29);
    std::vector<double> dist;
    if (full_matrix) {
        dist.assign(static_cast<std::size_t>(n) * n, 0.0);
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j) {
                const double d = squared_distance(x.row_ptr(i), x.row_ptr(j), x.cols);
                dist[static_cast<std::size_t>(i) * n + j] = d;
                dist[static_cast<std::size_t>(j) * n + i] = d;
            }
    }

    for (int i = 0; i < n; ++i) {
        int idx = 0;
        for (int j = 0; j < n; ++j) {
            if (j == i) continue;
            const double d = full_matrix
                                 ? dist[static_cast<std::size_t>(i) * n + j]
                                 : squared_distance(x.row_ptr(i), x.row_ptr(j), x.cols);
            cand[static_cast<std::size_t>(idx++)] = {d, j};
        }
        std::partial_sort(cand.begin(), cand.begin() + g.k, cand.end());
        auto& row = g.rows[static_cast<std::size_t>(i)];
        row.resize(static_cast<std::size_t>(g.k));
        for (int t = 0; t < g.k; ++t) row[static_cast<std::size_t>(t)] = cand[static_cast<std::size_t>(t)].second;
        std::sort(row.begin(), row.end());
    }
    return g;
}

std::vector<NeighborGraph> rebuild_graphs(const data::ImputedDataset& imputed, int k) {
    std::vector<NeighborGraph> out;
    out.reserve(imputed.views.size());
    for (const Matrix& x : imputed.views) out.push_back(knn_graph(x, k));
    return out;
}

EmbeddingBuffer::EmbeddingBuffer(int n, int m, int d_e)
    : n_(n), m_(m), d_e_(d_e), filled_(static_cast<std::size_t>(n), false) {
    per_view_.assign(static_cast<std::size_t>(m), Matrix(n, d_e));
}

bool EmbeddingBuffer::filled() const {
    for (bool f : filled_)
        if (!f) return false;
    return n_ > 0;
}

void EmbeddingBuffer::update(const std::vector<ad::Tensor>& z_rows,
                             const std::vector<int>& batch_indices) {
    if (z_rows.size() != batch_indices.size())
        throw ShapeError("buffer update: " + std::to_string(z_rows.size()) + " embeddings for " +
                         std::to_string(batch_indices.size()) + " indices");
    std::unordered_set<int> seen;
    for (int i : batch_indices) {
        if (i < 0 || i >= n_)
            throw ShapeError("buffer update: index " + std::to_string(i) + " out of range");
        if (!seen.insert(i).second)
            throw SequenceError("buffer update: duplicate index " + std::to_string(i) +
                                " within one batch");
    }
    for (std::size_t b = 0; b < z_rows.size(); ++b) {
        const ad::Tensor& z = z_rows[b];
        if (z.rows() != m_ || z.cols() != d_e_)
            throw ShapeError("buffer update: embedding is " + ad::shape_str(z.shape) +
                             ", expected [" + std::to_string(m_) + "x" + std::to_string(d_e_) +
                             "]");
        const int i = batch_indices[b];
        for (int v = 0; v < m_; ++v) {
            Matrix& dst = per_view_[static_cast<std::size_t>(v)];
            for (int j = 0; j < d_e_; ++j) dst.at(i, j) = z.at(v, j);
        }
        filled_[static_cast<std::size_t>(i)] = true;
    }
}

ad::Var graph_loss_batch(ad::Tape& tape, const std::vector<ad::Var>& z_view_blocks,
                         const EmbeddingBuffer& buffer, const std::vector<NeighborGraph>& graphs,
                         const std::vector<int>& batch_indices) {
    if (!buffer.filled())
        throw SequenceError("graph loss requested before the embedding buffer is filled");
    const int m = buffer.m();
    if (static_cast<int>(z_view_blocks.size()) != m ||
        static_cast<int>(graphs.size()) != m)
        throw ShapeError("graph loss: expected " + std::to_string(m) + " views, got " +
                         std::to_string(z_view_blocks.size()) + " embeddings and " +
                         std::to_string(graphs.size()) + " graphs");
    const int n = buffer.n();
    const int b = static_cast<int>(batch_indices.size());

    ad::Var total;
    for (int v = 0; v < m; ++v) {
        const NeighborGraph& g = graphs[static_cast<std::size_t>(v)];
        std::vector<std::pair<int, int>> pairs;
        pairs.reserve(static_cast<std::size_t>(b) * g.k);
        for (int bi = 0; bi < b; ++bi) {
            const int gi = batch_indices[static_cast<std::size_t>(bi)];
            for (int j : g.rows[static_cast<std::size_t>(gi)]) pairs.emplace_back(bi, j);
        }
        ad::Var term = tape.neighbor_sse(z_view_blocks[static_cast<std::size_t>(v)],
                                         &buffer.view(v), std::move(pairs));
        total = total.valid() ? tape.add(total, term) : term;
    }
    return tape.scale(total, 1.0 / (static_cast<double>(m) * n * b));
}

void export_graph_csv(const std::string& path, const std::vector<NeighborGraph>& graphs) {
    std::ofstream out(path);
    if (!out) throw ParseError(path + ": cannot open file for writing");
    for (std::size_t v = 0; v < graphs.size(); ++v)
        for (int i = 0; i < graphs[v].n; ++i)
            for (int j : graphs[v].rows[static_cast<std::size_t>(i)])
                out << (v + 1) << ',' << i << ',' << j << '\n';
    if (!out) throw ParseError(path + ": write failed");
}

}  // namespace recformer::graph
