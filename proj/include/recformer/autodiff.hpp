#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "recformer/errors.hpp"
#include "recformer/matrix.hpp"

namespace recformer::ad {

using Shape = std::vector<int>;

std::int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

// Dense 64-bit float array with an optional gradient buffer of the same
// shape. Parameters are Tensors with requires_grad set; Tape::backward
// accumulates (+=) into their grad.
struct Tensor {
    Shape shape;
    std::vector<double> values;
    bool requires_grad = false;
    std::vector<double> grad;

    Tensor() = default;
    explicit Tensor(Shape s, double fill = 0.0);
    Tensor(Shape s, std::vector<double> v);

    static Tensor scalar(double x) { return Tensor({1}, std::vector<double>{x}); }
    static Tensor row(std::vector<double> v);
    static Tensor matrix(int r, int c, std::vector<double> v);
    static Tensor from_matrix(const Matrix& m);

    std::int64_t numel() const { return static_cast<std::int64_t>(values.size()); }
    int rows() const { return shape.size() == 2 ? shape[0] : (shape.size() == 1 ? 1 : -1); }
    int cols() const { return shape.size() == 2 ? shape[1] : (shape.size() == 1 ? shape[0] : -1); }

    double& at(int i, int j) { return values[static_cast<std::size_t>(i) * cols() + j]; }
    double at(int i, int j) const { return values[static_cast<std::size_t>(i) * cols() + j]; }

    Matrix to_matrix() const;

    void ensure_grad();
    void zero_grad();
};

// Handle to a node on a Tape.
struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

// Reverse-mode tape. Operations record themselves in insertion order as
// they execute; backward() replays the records in exact reverse insertion
// order, which is a valid topological order by construction. One tape per
// forward pass; tapes are not shared across threads.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Leaf bound to an external tensor. Values are copied in; gradients
    // flow back into `external.grad` with += on each backward call.
    // The referenced tensor must outlive the tape.
    Var leaf(Tensor& external);

    // Unbound constant; never receives gradient.
    Var constant(Tensor value);
    Var constant_matrix(const Matrix& m) { return constant(Tensor::from_matrix(m)); }

    // --- elementwise / linear algebra ---
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);          // elementwise
    Var scale(Var a, double s);
    Var matmul(Var a, Var b);       // 2-D: [p x q] * [q x r]
    Var transpose(Var a);           // 2-D
    Var add_bias(Var a, Var bias);  // [r x d] + broadcast row [d]
    Var relu(Var a);

    // --- structural ---
    Var concat_rows(const std::vector<Var>& parts);
    Var slice_rows(Var a, int start, int count);
    Var concat_cols(const std::vector<Var>& parts);  // concat along last axis
    Var slice_cols(Var a, int start, int count);     // split along last axis
    Var repeat_rows(Var a, int times);               // [1 x d] -> [times x d]
    // out[i*parts.size() + v] = parts[v] row i; all parts [s x d].
    Var interleave_rows(const std::vector<Var>& parts);
    // each row repeated `times` consecutively: [s x d] -> [s*times x d]
    Var repeat_each_row(Var a, int times);
    // rows offset, offset+stride, ...: [s*stride x d] -> [s x d]
    Var take_rows_strided(Var a, int stride, int offset);

    // --- per-sample blocks batched over a stacked [s*block x d] layout ---
    // scores rows of block i = Q_i * K_i^T, output [s*block x block]
    Var block_scores(Var q, Var k, int block);
    // rows of block i = P_i * V_i; p: [s*block x block], v: [s*block x d]
    Var block_apply(Var p, Var v, int block);
    // out[i,:] = sum_g weights[i*group+g] * a[i*group+g,:], output [s x d]
    Var group_weighted_sum(Var a, int group, std::vector<double> weights);

    // --- reductions / losses ---
    Var sum(Var a);
    Var mean(Var a);
    Var sse(Var a, Var b);  // sum((a-b)^2), scalar
    // sum_i w[i] * ||a[i,:] - b[i,:]||^2 over rows.
    Var row_weighted_sse(Var a, Var b, std::vector<double> row_weights);
    // sum over (i, j) pairs of ||a[i,:] - ref[j,:]||^2 where ref is an
    // external, non-differentiated matrix. `ref` must stay alive and
    // unmodified until backward() finishes.
    Var neighbor_sse(Var a, const Matrix* ref, std::vector<std::pair<int, int>> pairs);

    // --- neural-net ops ---
    // Softmax over the last axis. The mask, when present, is either a
    // vector of length last-axis (same keys masked in every row; must
    // contain at least one 1) or a 0/1 tensor of the logits' full shape
    // (rows may be fully masked; such rows come out uniform). Masked
    // logits are replaced by -1e9 before the softmax and receive no
    // gradient.
    Var softmax_masked(Var logits, const Tensor* mask);
    Var softmax(Var logits) { return softmax_masked(logits, nullptr); }

    // Per-row normalization over the last axis (population variance + eps
    // under the root), then elementwise gamma/beta affine.
    Var layer_norm(Var x, Var gamma, Var beta, double eps);

    // --- execution ---
    // Propagates d(loss)/d(node) to every node, then accumulates into the
    // bound tensors of requires_grad leaves. loss must be scalar. Calling
    // twice accumulates twice into the leaves.
    void backward(Var loss);

    const Tensor& value(Var v) const;
    double scalar_value(Var v) const;
    // Node-local gradient from the latest backward(); zeros if untouched.
    std::vector<double> grad_of(Var v) const;

    std::size_t node_count() const { return nodes_.size(); }

private:
    struct Node {
        const char* op = "";
        std::vector<int> inputs;
        Tensor value;
        std::vector<double> grad;        // lazily allocated during backward
        Tensor* bound = nullptr;         // external tensor for leaves
        std::function<void(Tape&)> backprop;
        bool needs_grad = false;
    };

    std::vector<Node> nodes_;

    int push(Node n);
    Node& node(Var v);
    const Node& node(Var v) const;
    bool any_needs_grad(const std::vector<Var>& vs) const;
    std::vector<double>& grad_buf(int id);
    const std::vector<double>* grad_if_any(int id) const;
    void check_valid(Var v, const char* op) const;
};

// Central-difference gradient checker. `build` must deterministically
// construct the scalar loss on a fresh tape from the current values of
// `params`. Returns max over all parameter entries of
//   |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
double grad_check(const std::function<Var(Tape&)>& build, const std::vector<Tensor*>& params,
                  double h);

}  // namespace recformer::ad
