#include "recformer/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <memory>

namespace recformer::ad {

namespace {

constexpr double kZerofill = -1e9;

// C[p x r] += A[p x q] * B[q x r]. Four-row blocking so each loaded B row
// feeds four output rows; per-element accumulation order (ascending k)
// matches the plain triple loop, keeping results deterministic.
void matmul_acc(double* c, const double* a, const double* b, int p, int q, int r) {
    int i = 0;
    for (; i + 4 <= p; i += 4) {
        const double* a0 = a + static_cast<std::size_t>(i) * q;
        const double* a1 = a0 + q;
        const double* a2 = a1 + q;
        const double* a3 = a2 + q;
        double* c0 = c + static_cast<std::size_t>(i) * r;
        double* c1 = c0 + r;
        double* c2 = c1 + r;
        double* c3 = c2 + r;
        for (int k = 0; k < q; ++k) {
            const double x0 = a0[k], x1 = a1[k], x2 = a2[k], x3 = a3[k];
            if (x0 == 0.0 && x1 == 0.0 && x2 == 0.0 && x3 == 0.0) continue;
            const double* brow = b + static_cast<std::size_t>(k) * r;
            for (int j = 0; j < r; ++j) {
                const double bj = brow[j];
                c0[j] += x0 * bj;
                c1[j] += x1 * bj;
                c2[j] += x2 * bj;
                c3[j] += x3 * bj;
            }
        }
    }
    for (; i < p; ++i) {
        const double* arow = a + static_cast<std::size_t>(i) * q;
        double* crow = c + static_cast<std::size_t>(i) * r;
        for (int k = 0; k < q; ++k) {
            const double aik = arow[k];
            if (aik == 0.0) continue;
            const double* brow = b + static_cast<std::size_t>(k) * r;
            for (int j = 0; j < r; ++j) crow[j] += aik * brow[j];
        }
    }
}

// C[p x q] += A[p x r] * B^T where B is [q x r]. 2x2 dot-product blocks.
void matmul_nt_acc(double* c, const double* a, const double* b, int p, int r, int q) {
    int i = 0;
    for (; i + 2 <= p; i += 2) {
        const double* a0 = a + static_cast<std::size_t>(i) * r;
        const double* a1 = a0 + r;
        double* c0 = c + static_cast<std::size_t>(i) * q;
        double* c1 = c0 + q;
        int j = 0;
        for (; j + 2 <= q; j += 2) {
            const double* b0 = b + static_cast<std::size_t>(j) * r;
            const double* b1 = b0 + r;
            double s00 = 0.0, s01 = 0.0, s10 = 0.0, s11 = 0.0;
            for (int k = 0; k < r; ++k) {
                s00 += a0[k] * b0[k];
                s01 += a0[k] * b1[k];
                s10 += a1[k] * b0[k];
                s11 += a1[k] * b1[k];
            }
            c0[j] += s00;
            c0[j + 1] += s01;
            c1[j] += s10;
            c1[j + 1] += s11;
        }
        for (; j < q; ++j) {
            const double* brow = b + static_cast<std::size_t>(j) * r;
            double s0 = 0.0, s1 = 0.0;
            for (int k = 0; k < r; ++k) {
                s0 += a0[k] * brow[k];
                s1 += a1[k] * brow[k];
            }
            c0[j] += s0;
            c1[j] += s1;
        }
    }
    for (; i < p; ++i) {
        const double* arow = a + static_cast<std::size_t>(i) * r;
        double* crow = c + static_cast<std::size_t>(i) * q;
        for (int j = 0; j < q; ++j) {
            const double* brow = b + static_cast<std::size_t>(j) * r;
            double s = 0.0;
            for (int k = 0; k < r; ++k) s += arow[k] * brow[k];
            crow[j] += s;
        }
    }
}

// C[q x r] += A^T * B where A is [p x q], B is [p x r]. Four input rows per
// pass so each C row is touched once per group.
void matmul_tn_acc(double* c, const double* a, const double* b, int p, int q, int r) {
    int i = 0;
    for (; i + 4 <= p; i += 4) {
        const double* a0 = a + static_cast<std::size_t>(i) * q;
        const double* a1 = a0 + q;
        const double* a2 = a1 + q;
        const double* a3 = a2 + q;
        const double* b0 = b + static_cast<std::size_t>(i) * r;
        const double* b1 = b0 + r;
        const double* b2 = b1 + r;
        const double* b3 = b2 + r;
        for (int k = 0; k < q; ++k) {
            const double x0 = a0[k], x1 = a1[k], x2 = a2[k], x3 = a3[k];
            if (x0 == 0.0 && x1 == 0.0 && x2 == 0.0 && x3 == 0.0) continue;
            double* crow = c + static_cast<std::size_t>(k) * r;
            for (int j = 0; j < r; ++j)
                crow[j] += x0 * b0[j] + x1 * b1[j] + x2 * b2[j] + x3 * b3[j];
        }
    }
    for (; i < p; ++i) {
        const double* arow = a + static_cast<std::size_t>(i) * q;
        const double* brow = b + static_cast<std::size_t>(i) * r;
        for (int k = 0; k < q; ++k) {
            const double aik = arow[k];
            if (aik == 0.0) continue;
            double* crow = c + static_cast<std::size_t>(k) * r;
            for (int j = 0; j < r; ++j) crow[j] += aik * brow[j];
        }
    }
}

}  // namespace

std::int64_t shape_numel(const Shape& s) {
    std::int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

Tensor::Tensor(Shape s, double fill)
    : shape(std::move(s)), values(static_cast<std::size_t>(shape_numel(shape)), fill) {
    for (int d : shape)
        if (d <= 0) throw ShapeError("Tensor: non-positive dimension in " + shape_str(shape));
}

Tensor::Tensor(Shape s, std::vector<double> v) : shape(std::move(s)), values(std::move(v)) {
    if (shape_numel(shape) != static_cast<std::int64_t>(values.size()))
        throw ShapeError("Tensor: " + std::to_string(values.size()) + " values for shape " +
                         shape_str(shape));
}

Tensor Tensor::row(std::vector<double> v) {
    const int d = static_cast<int>(v.size());
    return Tensor({1, d}, std::move(v));
}

Tensor Tensor::matrix(int r, int c, std::vector<double> v) { return Tensor({r, c}, std::move(v)); }

Tensor Tensor::from_matrix(const Matrix& m) { return Tensor({m.rows, m.cols}, m.v); }

Matrix Tensor::to_matrix() const {
    if (shape.size() != 2) throw ShapeError("to_matrix: tensor is not 2-D: " + shape_str(shape));
    return Matrix(shape[0], shape[1], values);
}

void Tensor::ensure_grad() {
    if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
}

void Tensor::zero_grad() { grad.assign(values.size(), 0.0); }

// ---------------------------------------------------------------------------
// Tape internals

int Tape::push(Node n) {
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
}

Tape::Node& Tape::node(Var v) { return nodes_[static_cast<std::size_t>(v.id)]; }
const Tape::Node& Tape::node(Var v) const { return nodes_[static_cast<std::size_t>(v.id)]; }

void Tape::check_valid(Var v, const char* op) const {
    if (v.id < 0 || v.id >= static_cast<int>(nodes_.size()))
        throw ShapeError(std::string(op) + ": invalid tape handle");
}

bool Tape::any_needs_grad(const std::vector<Var>& vs) const {
    for (Var v : vs)
        if (node(v).needs_grad) return true;
    return false;
}

std::vector<double>& Tape::grad_buf(int id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.size() != n.value.values.size()) n.grad.assign(n.value.values.size(), 0.0);
    return n.grad;
}

const std::vector<double>* Tape::grad_if_any(int id) const {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    return n.grad.empty() ? nullptr : &n.grad;
}

const Tensor& Tape::value(Var v) const {
    check_valid(v, "value");
    return node(v).value;
}

double Tape::scalar_value(Var v) const {
    const Tensor& t = value(v);
    if (t.numel() != 1) throw ShapeError("scalar_value: tensor has shape " + shape_str(t.shape));
    return t.values[0];
}

std::vector<double> Tape::grad_of(Var v) const {
    check_valid(v, "grad_of");
    const Node& n = node(v);
    if (n.grad.empty()) return std::vector<double>(n.value.values.size(), 0.0);
    return n.grad;
}

Var Tape::leaf(Tensor& external) {
    Node n;
    n.op = "leaf";
    n.value = external;  // copy of current values
    n.bound = &external;
    n.needs_grad = external.requires_grad;
    return Var{push(std::move(n))};
}

Var Tape::constant(Tensor value) {
    Node n;
    n.op = "const";
    n.value = std::move(value);
    n.needs_grad = false;
    return Var{push(std::move(n))};
}

// ---------------------------------------------------------------------------
// Ops

Var Tape::add(Var a, Var b) {
    check_valid(a, "add");
    check_valid(b, "add");
    const Tensor& ta = node(a).value;
    const Tensor& tb = node(b).value;
    if (ta.shape != tb.shape)
        throw ShapeError("add: shape mismatch " + shape_str(ta.shape) + " vs " +
                         shape_str(tb.shape));
    Node n;
    n.op = "add";
    n.inputs = {a.id, b.id};
    n.value = Tensor(ta.shape);
    for (std::size_t i = 0; i < ta.values.size(); ++i)
        n.value.values[i] = ta.values[i] + tb.values[i];
    n.needs_grad = any_needs_grad({a, b});
    int id = push(std::move(n));
    if (nodes_.back().needs_grad) {
        nodes_.back().backprop = [id, a, b](Tape& t) {
            const std::vector<double>* up = t.grad_if_any(id);
            if (!up) return;
            if (t.node(a).needs_grad) {
                auto& ga = t.grad_buf(a.id);
                for (std::size_t i = 0; i < up->size(); ++i) ga[i] += (*up)[i];
            }
            if (t.node(b).needs_grad) {
                auto& gb = t.grad_buf(b.id);
                for (std::size_t i = 0; i < up->size(); ++i) gb[i] += (*up)[i];
            }
        };
    }
    return Var{id};
}

Var Tape::sub(Var a, Var b) {
    check_valid(a, "sub");
    check_valid(b, "sub");
    const Tensor& ta = node(a).value;
    const Tensor& tb = node(b).value;
    if (ta.shape != tb.shape)
        throw ShapeError("sub: shape mismatch " + shape_str(ta.shape) + " vs " +
                         shape_str(tb.shape));
    Node n;
    n.op = "sub";
    n.inputs = {a.id, b.id};
    n.value = Tensor(ta.shape);
    for (std::size_t i = 0; i < ta.values.size(); ++i)
        n.value.values[i] = ta.values[i] - tb.values[i];
    n.needs_grad = any_needs_grad({a, b});
    int id = push(std::move(n));
    if (nodes_.back().needs_grad) {
        nodes_.back().backprop = [id, a, b](Tape& t) {
            const std::vector<double>* up = t.grad_if_any(id);
            if (!up) return;
            if (t.node(a).needs_grad) {
                auto& ga = t.grad_buf(a.id);
                for (std::size_t i = 0; i < up->size(); ++i) ga[i] += (*up)[i];
            }
            if (t.node(b).needs_grad) {
                auto& gb = t.grad_buf(b.id);
                for (std::size_t i = 0; i < up->size(); ++i) gb[i] -= (*up)[i];
            }
        };
    }
    return Var{id};
}

Var Tape::mul(Var a, Var b) {
    check_valid(a, "mul");
    check_valid(b, "mul");
    const Tensor& ta = node(a).value;
    const Tensor& tb = node(b).value;
    if (ta.shape != tb.shape)
        throw ShapeError("mul: shape mismatch " + shape_str(ta.shape) + " vs " +
                         shape_str(tb.shape));
    Node n;
    n.op = "mul";
    n.inputs = {a.id, b.id};
    n.value = Tensor(ta.shape);
    for (std::size_t i = 0; i < ta.values.size(); ++i)
        n.value.values[i] = ta.values[i] * tb.values[i];
    n.needs_grad = any_needs_grad({a, b});
    int id = push(std::move(n));
    if (nodes_.back().needs_grad) {
        nodes_.back().backprop = [id, a, b](Tape& t) {
            const std::vector<double>* up = t.grad_if_any(id);
            if (!up) return;
            const auto& va = t.node(a).value.values;
            const auto& vb = t.node(b).value.values;
            if (t.node(a).needs_grad) {
                auto& ga = t.grad_buf(a.id);
                for (std::size_t i = 0; i < up->size(); ++i) ga[i] += (*up)[i] * vb[i];
            }
            if (t.node(b).needs_grad) {
                auto& gb = t.grad_buf(b.id);
                for (std::size_t i = 0; i < up->size(); ++i) gb[i] += (*up)[i] * va[i];
            }
        };
    }
    return Var{id};
}

Var Tape::scale(Var a, double s) {
    check_valid(a, "scale");
    const Tensor& ta = node(a).value;
    Node n;
    n.op = "scale";
    n.inputs = {a.id};
    n.value = Tensor(ta.shape);
    for (std::size_t i = 0; i < ta.values.size(); ++i) n.value.values[i] = ta.values[i] * s;
    n.needs_grad = node(a).needs_grad;
    int id = push(std::move(n));
    if (nodes_.back().needs_grad) {
        nodes_.back().backprop = [id, a, s](Tape& t) {
            const std::vector<double>* up = t.grad_if_any(id);
            if (!up) return;
            auto& ga = t.grad_buf(a.id);
            for (std::size_t i = 0; i < up->size(); ++i) ga[i] += (*up)[i] * s;
        };
    }
    return Var{id};
}

Var Tape::matmul(Var a, Var b) {
    check_valid(a, "matmul");
    check_valid(b, "matmul");
    const Tensor& ta = node(a).value;
    const Tensor& tb = node(b).value;
    if (ta.shape.size() != 2 || tb.shape.size() != 2 || ta.shape[1] != tb.shape[0])
        throw ShapeError("matmul: incompatible shapes " + shape_str(ta.shape) + " and " +
                         shape_str(tb.shape));
    const int p = ta.shape[0], q = ta.shape[1], r = tb.shape[1];
    Node n;
    n.op = "matmul";
    n.inputs = {a.id, b.id};
    n.value = Tensor({p, r});
    matmul_acc(n.value.values.data(), ta.values.data(), tb.values.data(), p, q, r);
    n.needs_grad = any_needs_grad({a, b});
    int id = push(std::move(n));
    if (nodes_.back().needs_grad) {
        nodes_.back().backprop = [id, a, b, p, q, r](Tape& t) {
            const std::vector<double>* up = t.grad_if_any(id);
            if (!up) return;
            const auto& va = t.node(a).value.values;
            const auto& vb = t.node(b).value.values;
            if (t.node(a).needs_grad)
                matmul_nt_acc(t.grad_buf(a.id).data(), up->data(), vb.data(), p, r, q);
            if (t.node(b).needs_grad)
                matmul_tn_acc(t.grad_buf(b.id).data(), va.data(), up->data(), p, q, r);
        };
    }
    return Var{id};
}

Var Tape::transpose(Var a) {
    check_valid(a, "transpose");
    const Tensor& ta = node(a).value;
    if (ta.shape.size() != 2)
        throw ShapeError("transpose: tensor is not 2-D: " + shape_str(ta.shape));
    const int r = ta.shape[0], c = ta.shape[1];
    Node n;
    n.op = "transpose";
    n.inputs = {a.id};
    n.value = Tensor({c, r});
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) n.value.values[static_cast<std::size_t>(j) * r + i] = ta.at(i, j);
    n.needs_grad = node(a).needs_grad;
    int id = push(std::move(n));
    if (nodes_.back().needs_grad) {
        nodes_.back().backprop = [id, a, r, c](Tape& t) {
            const std::vector<double>* up = t.grad_if_any(id);
            if (!up) return;
            auto& ga = t.grad_buf(a.id);
            for (int j = 0; j < c; ++j)
                for (int i = 0; i < r; ++i)
                    ga[static_cast<std::size_t>(i) * c + j] += (*up)[static_cast<std::size_t>(j) * r + i];
        };
    }
    return Var{id};
}

Var Tape::add_bias(Var a, Var bias) {
    check_valid(a, "add_bias");
    check_valid(bias, "add_bias");
    const Tensor& ta = node(a).value;
    const Tensor& tb = node(bias).value;
    const int d = static_cast<int>(tb.values.size());
    if (ta.shape.empty() || ta.shape.back() != d)
        throw ShapeError("add_bias: bias of length " + std::to_string(d) +
                         " against tensor " + shape_str(ta.shape));
    const int nrows = static_cast<int>(ta.numel() / d);
    Node n;
    n.op = "add_bias";
    n.inputs = {a.id, bias.id};
    n.value = Tensor(ta.shape);
    for (int i = 0; i < nrows; ++i) {
        const double* src = ta.values.data() + static_cast<std::size_t>(i) * d;
        double* dst = n.value.values.data() + static_cast<std::size_t>(i) * d;
        for (int j = 0; j < d; ++j) dst[j] = src[j] + tb.values[j];
    }
    n.needs_grad = any_needs_grad({a, bias});
    int id = push(std::move(n));
    if (nodes_.back().needs_grad) {
        nodes_.back().backprop = [id, a, bias, nrows, d](Tape& t) {
            const std::vector<double>* up = t.grad_if_any(id);
            if (!up) return;
            if (t.node(a).needs_grad) {
                auto& ga = t.grad_buf(a.id);
                for (std::size_t i = 0; i < up->size(); ++i) ga[i] += (*up)[i];
            }
            if (t.node(bias).needs_grad) {
                auto& gb = t.grad_buf(bias.id);
                for (int i = 0; i < nrows; ++i) {
                    const double* u = up->data() + static_cast<std::size_t>(i) * d;
                    for (int j = 0; j < d; ++j) gb[j] += u[j];
                }
            }
        };
    }
    return Var{id};
}

Var Tape::relu(Var a) {
    check_valid(a, "relu");
    const Tensor& ta = node(a).value;
    Node n;
    n.op = "relu";
    n.inputs = {a.id};
    n.value = Tensor(ta.shape);
    for (std::size_t i = 0; i < ta.values.size(); ++i)
        n.value.values[i] = ta.values[i] > 0.0 ? ta.values[i] : 0.0;
    n.needs_grad = node(a).needs_grad;
    int id = push(std::move(n));
    if (nodes_.back().needs_grad) {
        nodes_.back().backprop = [id, a](Tape& t) {
            const std::vector<double>* up = t.grad_if_any(id);
            if (!up) return;
            const auto& va = t.node(a).value.values;
            auto& ga = t.grad_buf(a.id);
            for (std::size_t i = 0; i < up->size(); ++i)
                if (va[i] > 0.0) ga[i] += (*up)[i];
        };
    }
    return Var{id};
}

Var Tape::concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw ShapeError("concat_rows: no inputs");
    for (Var v : parts) check_valid(v, "concat_rows");
    const int cols = node(parts[0]).value.cols();
    int total_rows = 0;
    for (Var v : parts) {
        const Tensor& t = node(v).value;
        if (t.shape.size() != 2 || t.cols() != cols)
            throw ShapeError("concat_rows: column mismatch, expected " + std::to_string(cols) +
                             " got " + shape_str(t.shape));
        total_rows += t.rows();
    }
    Node n;
    n.op = "concat_rows";
    for (Var v : parts) n.inputs.push_back(v.id);
    n.value = Tensor({total_rows, cols});
    std::size_t off = 0;
    for (Var v : parts) {
        const auto& src = node(v).value.values;
        std::copy(src.begin(), src.end(), n.value.values.begin() + off);
        off += src.size();
    }
    n.needs_grad = any_needs_grad(parts);
    int id = push(std::move(n));
    if (nodes_.back().needs_grad) {
        std::vector<Var> ins = parts;
        nodes_.back().backprop = [id, ins](Tape& t) {
            const std::vector<double>* up = t.grad_if_any(id);
            if (!up) return;
            std::size_t off = 0;
            for (Var v : ins) {
                const std::size_t len = t.node(v).value.values.size();
                if (t.node(v).needs_grad) {
                    auto& g = t.grad_buf(v.id);
                    for (std::size_t i = 0; i < len; ++i) g[i] += (*up)[off + i];
                }
                off += len;
            }
        };
    }
    return Var{id};
}

Var Tape::slice_rows(Var a, int start, int count) {
    check_valid(a, "slice_rows");
    const Tensor& ta = node(a).value;
    if (ta.shape.size() != 2 || start < 0 || count <= 0 || start + count > ta.rows())
        throw ShapeError("slice_rows: rows [" + std::to_string(start) + ", " +
                         std::to_string(start + count) + ") out of " + shape_str(ta.shape));
    const int cols = ta.cols();
    Node n;
    n.op = "slice_rows";
    n.inputs = {a.id};
    n.value = Tensor({count, cols});
    std::copy(ta.values.begin() + static_cast<std::size_t>(start) * cols,
              ta.values.begin() + static_cast<std::size_t>(start + count) * cols,
              n.value.values.begin());
    n.needs_grad = node(a).needs_grad;
    int id = push(std::move(n));
    if (nodes_.back().needs_grad) {
        nodes_.back().backprop = [id, a, start, cols](Tape& t) {
            const std::vector<double>* up = t.grad_if_any(id);
            if (!up) return;
            auto& ga = t.grad_buf(a.id);
            const std::size_t off = static_cast<std::size_t>(start) * cols;
            for (std::size_t i = 0; i < up->size(); ++i) ga[off + i] += (*up)[i];
        };
    }
    return Var{id};
}

Var Tape::concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols: no inputs");
    for (Var v : parts) check_valid(v, "concat_cols");
    const int rows = node(parts[0]).value.rows();
    int total_cols = 0;
    std::vector<int> widths;
    for (Var v : parts) {
        const Tensor& t = node(v).value;
        if (t.shape.size() != 2 || t.rows() != rows)
            throw ShapeError("concat_cols: row mismatch, expected " + std::to_string(rows) +
                             " got " + shape_str(t.shape));
        widths.push_back(t.cols());
        total_cols += t.cols();
    }
    Node n;
    n.op = "concat_cols";
    for (Var v : parts) n.inputs.push_back(v.id);
    n.value = Tensor({rows, total_cols});
    int col_off = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const Tensor& t = node(parts[k]).value;
        for (int i = 0; i < rows; ++i)
            std::memcpy(n.value.values.data() + static_cast<std::size_t>(i) * total_cols + col_off,
                        t.values.data() + static_cast<std::size_t>(i) * widths[k],
                        sizeof(double) * static_cast<std::size_t>(widths[k]));
        col_off += widths[k];
    }
    n.needs_grad = any_needs_grad(parts);
    int id = push(std::move(n));
    if (nodes_.back().needs_grad) {
        std::vector<Var> ins = parts;
        nodes_.back().backprop = [id, ins, rows, total_cols, widths](Tape& t) {
            const std::vector<double>* up = t.grad_if_any(id);
            if (!up) return;
            int col_off = 0;
            for (std::size_t k = 0; k < ins.size(); ++k) {
                if (t.node(ins[k]).needs_grad) {
                    auto& g = t.grad_buf(ins[k].id);
                    for (int i = 0; i < rows; ++i) {
                        const double* u =
                            up->data() + static_cast<std::size_t>(i) * total_cols + col_off;
                        double* dst = g.data() + static_cast<std::size_t>(i) * widths[k];
                        for (int j = 0; j < widths[k]; ++j) dst[j] += u[j];
                    }
                }
                col_off += widths[k];
            }
        };
    }
    return Var{id};
}

Var Tape::slice_cols(Var a, int start, int count) {
    check_valid(a, "slice_cols");
    const Tensor& ta = node(a).value;
    if (ta.shape.size() != 2 || start < 0 || count <= 0 || start + count > ta.cols())
        throw ShapeError("slice_cols: cols [" + std::to_string(start) + ", " +
                         std::to_string(start + count) + ") out of " + shape_str(ta.shape));
    const int rows = ta.rows(), cols = ta.cols();
    Node n;
    n.op = "slice_cols";
    n.inputs = {a.id};
    n.value = Tensor({rows, count});
    for (int i = 0; i < rows; ++i)
        std::memcpy(n.value.values.data() + static_cast<std::size_t>(i) * count,
                    ta.values.data() + static_cast<std::size_t>(i) * cols + start,
                    sizeof(double) * static_cast<std::size_t>(count));
    n.needs_grad = node(a).needs_grad;
    int id = push(std::move(n));
    if (nodes_.back().needs_grad) {
        nodes_.back().backprop = [id, a, start, count, rows, cols](Tape& t) {
            const std::vector<double>* up = t.grad_if_any(id);
            if (!up) return;
            auto& ga = t.grad_buf(a.id);
            for (int i = 0; i < rows; ++i) {
                const double* u = up->data() + static_cast<std::size_t>(i) * count;
                double* dst = ga.data() + static_cast<std::size_t>(i) * cols + start;
                for (int j = 0; j < count; ++j) dst[j] += u[j];
            }
        };
    }
    return Var{id};
}

Var Tape::repeat_rows(Var a, int times) {
    check_valid(a, "repeat_rows");
    const Tensor& ta = node(a).value;
    if (ta.shape.size() != 2 || ta.rows() != 1)
        throw ShapeError("repeat_rows: expected a [1 x d] tensor, got " + shape_str(ta.shape));
    if (times <= 0) throw ShapeError("repeat_rows: times must be positive");
    const int d = ta.cols();
    Node n;
    n.op = "repeat_rows";
    n.inputs = {a.id};
    n.value = Tensor({times, d});
    for (int i = 0; i < times; ++i)
        std::memcpy(n.value.values.data() + static_cast<std::size_t>(i) * d, ta.values.data(),
                    sizeof(double) * static_cast<std::size_t>(d));
    n.needs_grad = node(a).needs_grad;
    int id = push(std::move(n));
    if (nodes_.back().needs_grad) {
        nodes_.back().backprop = [id, a, times, d](Tape& t) {
            const std::vector<double>* up = t.grad_if_any(id);
            if (!up) return;
            auto& ga = t.grad_buf(a.id);
            for (int i = 0; i < times; ++i) {
                const double* u = up->data() + static_cast<std::size_t>(i) * d;
                for (int j = 0; j < d; ++j) ga[j] += u[j];
            }
        };
    }
    return Var{id};
}

Var Tape::interleave_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw ShapeError("interleave_rows: no inputs");
    for (Var v : parts) check_valid(v, "interleave_rows");
    const int s = node(parts[0]).value.rows();
    const int d = node(parts[0]).value.cols();
    const int m = static_cast<int>(parts.size());
    for (Var v : parts) {
        const Tensor& t = node(v).value;
        if (t.shape.size() != 2 || t.rows() != s || t.cols() != d)
            throw ShapeError("interleave_rows: mismatched part shape " + shape_str(t.shape));
    }
    Node n;
    n.op = "interleave_rows";
    for (Var v : parts) n.inputs.push_back(v.id);
    n.value = Tensor({s * m, d});
    for (int i = 0; i < s; ++i)
        for (int v = 0; v < m; ++v)
            std::memcpy(n.value.values.data() + (static_cast<std::size_t>(i) * m + v) * d,
                        node(parts[static_cast<std::size_t>(v)]).value.values.data() +
                            static_cast<std::size_t>(i) * d,
                        sizeof(double) * static_cast<std::size_t>(d));
    n.needs_grad = any_needs_grad(parts);
    int id = push(std::move(n));
    if (nodes_.back().needs_grad) {
        std::vector<Var> ins = parts;
        nodes_.back().backprop = [id, ins, s, d, m](Tape& t) {
            const std::vector<double>* up = t.grad_if_any(id);
            if (!up) return;
            for (int v = 0; v < m; ++v) {
                if (!t.node(ins[static_cast<std::size_t>(v)]).needs_grad) continue;
                auto& g = t.grad_buf(ins[static_cast<std::size_t>(v)].id);
                for (int i = 0; i < s; ++i) {
                    const double* u = up->data() + (static_cast<std::size_t>(i) * m + v) * d;
                    double* dst = g.data() + static_cast<std::size_t>(i) * d;
                    for (int j = 0; j < d; ++j) dst[j] += u[j];
                }
            }
        };
    }
    return Var{id};
}

Var Tape::repeat_each_row(Var a, int times) {
    check_valid(a, "repeat_each_row");
    const Tensor& ta = node(a).value;
    if (ta.shape.size() != 2) throw ShapeError("repeat_each_row: need a 2-D tensor");
    if (times <= 0) throw ShapeError("repeat_each_row: times must be positive");
    const int s = ta.rows(), d = ta.cols();
    Node n;
    n.op = "repeat_each_row";
    n.inputs = {a.id};
    n.value = Tensor({s * times, d});
    for (int i = 0; i < s; ++i)
        for (int t = 0; t < times; ++t)
            std::memcpy(n.value.values.data() + (static_cast<std::size_t>(i) * times + t) * d,
                        ta.values.data() + static_cast<std::size_t>(i) * d,
                        sizeof(double) * static_cast<std::size_t>(d));
    n.needs_grad = node(a).needs_grad;
    int id = push(std::move(n));
    if (nodes_.back().needs_grad) {
        nodes_.back().backprop = [id, a, s, d, times](Tape& t) {
            const std::vector<double>* up = t.grad_if_any(id);
            if (!up) return;
            auto& ga = t.grad_buf(a.id);
            for (int i = 0; i < s; ++i) {
                double* dst = ga.data() + static_cast<std::size_t>(i) * d;
                for (int k = 0; k < times; ++k) {
                    const double* u = up->data() + (static_cast<std::size_t>(i) * times + k) * d;
                    for (int j = 0; j < d; ++j) dst[j] += u[j];
                }
            }
        };
    }
    return Var{id};
}

Var Tape::take_rows_strided(Var a, int stride, int offset) {
    check_valid(a, "take_rows_strided");
    const Tensor& ta = node(a).value;
    if (ta.shape.size() != 2 || stride <= 0 || offset < 0 || offset >= stride ||
        ta.rows() % stride != 0)
        throw ShapeError("take_rows_strided: bad stride/offset for " + shape_str(ta.shape));
    const int s = ta.rows() / stride, d = ta.cols();
    Node n;
    n.op = "take_rows_strided";
    n.inputs = {a.id};
    n.value = Tensor({s, d});
    for (int i = 0; i < s; ++i)
        std::memcpy(n.value.values.data() + static_cast<std::size_t>(i) * d,
                    ta.values.data() + (static_cast<std::size_t>(i) * stride + offset) * d,
                    sizeof(double) * static_cast<std::size_t>(d));
    n.needs_grad = node(a).needs_grad;
    int id = push(std::move(n));
    if (nodes_.back().needs_grad) {
        nodes_.back().backprop = [id, a, s, d, stride, offset](Tape& t) {
            const std::vector<double>* up = t.grad_if_any(id);
            if (!up) return;
            auto& ga = t.grad_buf(a.id);
            for (int i = 0; i < s; ++i) {
                const double* u = up->data() + static_cast<std::size_t>(i) * d;
                double* dst = ga.data() + (static_cast<std::size_t>(i) * stride + offset) * d;
                for (int j = 0; j < d; ++j) dst[j] += u[j];
            }
        };
    }
    return Var{id};
}

Var Tape::block_scores(Var q, Var k, int block) {
    check_valid(q, "block_scores");
    check_valid(k, "block_scores");
    const Tensor& tq = node(q).value;
    const Tensor& tk = node(k).value;
    if (tq.shape != tk.shape || tq.shape.size() != 2 || block <= 0 || tq.rows() % block != 0)
        throw ShapeError("block_scores: incompatible shapes " + shape_str(tq.shape) + " / " +
                         shape_str(tk.shape));
    const int s = tq.rows() / block, d = tq.cols();
    Node n;
    n.op = "block_scores";
    n.inputs = {q.id, k.id};
    n.value = Tensor({s * block, block});
    for (int i = 0; i < s; ++i) {
        const double* qb = tq.values.data() + static_cast<std::size_t>(i) * block * d;
        const double* kb = tk.values.data() + static_cast<std::size_t>(i) * block * d;
        double* ob = n.value.values.data() + static_cast<std::size_t>(i) * block * block;
        matmul_nt_acc(ob, qb, kb, block, d, block);
    }
    n.needs_grad = any_needs_grad({q, k});
    int id = push(std::move(n));
    if (nodes_.back().needs_grad) {
        nodes_.back().backprop = [id, q, k, s, d, block](Tape& t) {
            const std::vector<double>* up = t.grad_if_any(id);
            if (!up) return;
            const auto& vq = t.node(q).value.values;
            const auto& vk = t.node(k).value.values;
            for (int i = 0; i < s; ++i) {
                const double* gs = up->data() + static_cast<std::size_t>(i) * block * block;
                const std::size_t off = static_cast<std::size_t>(i) * block * d;
                if (t.node(q).needs_grad)  // gQ_i += gS_i * K_i
                    matmul_acc(t.grad_buf(q.id).data() + off, gs, vk.data() + off, block, block, d);
                if (t.node(k).needs_grad)  // gK_i += gS_i^T * Q_i
                    matmul_tn_acc(t.grad_buf(k.id).data() + off, gs, vq.data() + off, block, block,
                                  d);
            }
        };
    }
    return Var{id};
}

Var Tape::block_apply(Var p, Var v, int block) {
    check_valid(p, "block_apply");
    check_valid(v, "block_apply");
    const Tensor& tp = node(p).value;
    const Tensor& tv = node(v).value;
    if (tp.shape.size() != 2 || tv.shape.size() != 2 || tp.cols() != block ||
        tp.rows() != tv.rows() || tp.rows() % block != 0)
        throw ShapeError("block_apply: incompatible shapes " + shape_str(tp.shape) + " / " +
                         shape_str(tv.shape));
    const int s = tp.rows() / block, d = tv.cols();
    Node n;
    n.op = "block_apply";
    n.inputs = {p.id, v.id};
    n.value = Tensor({s * block, d});
    for (int i = 0; i < s; ++i) {
        const double* pb = tp.values.data() + static_cast<std::size_t>(i) * block * block;
        const double* vb = tv.values.data() + static_cast<std::size_t>(i) * block * d;
        double* ob = n.value.values.data() + static_cast<std::size_t>(i) * block * d;
        matmul_acc(ob, pb, vb, block, block, d);
    }
    n.needs_grad = any_needs_grad({p, v});
    int id = push(std::move(n));
    if (nodes_.back().needs_grad) {
        nodes_.back().backprop = [id, p, v, s, d, block](Tape& t) {
            const std::vector<double>* up = t.grad_if_any(id);
            if (!up) return;
            const auto& vp = t.node(p).value.values;
            const auto& vv = t.node(v).value.values;
            for (int i = 0; i < s; ++i) {
                const double* ga = up->data() + static_cast<std::size_t>(i) * block * d;
                const std::size_t poff = static_cast<std::size_t>(i) * block * block;
                const std::size_t voff = static_cast<std::size_t>(i) * block * d;
                if (t.node(p).needs_grad)  // gP_i += gA_i * V_i^T
                    matmul_nt_acc(t.grad_buf(p.id).data() + poff, ga, vv.data() + voff, block, d,
                                  block);
                if (t.node(v).needs_grad)  // gV_i += P_i^T * gA_i
                    matmul_tn_acc(t.grad_buf(v.id).data() + voff, vp.data() + poff, ga, block,
                                  block, d);
            }
        };
    }
    return Var{id};
}

Var Tape::group_weighted_sum(Var a, int group, std::vector<double> weights) {
    check_valid(a, "group_weighted_sum");
    const Tensor& ta = node(a).value;
    if (ta.shape.size() != 2 || group <= 0 || ta.rows() % group != 0 ||
        static_cast<int>(weights.size()) != ta.rows())
        throw ShapeError("group_weighted_sum: bad group/weights for " + shape_str(ta.shape));
    const int s = ta.rows() / group, d = ta.cols();
    Node n;
    n.op = "group_weighted_sum";
    n.inputs = {a.id};
    n.value = Tensor({s, d});
    for (int i = 0; i < s; ++i) {
        double* out = n.value.values.data() + static_cast<std::size_t>(i) * d;
        for (int g = 0; g < group; ++g) {
            const double w = weights[static_cast<std::size_t>(i) * group + g];
            if (w == 0.0) continue;
            const double* src =
                ta.values.data() + (static_cast<std::size_t>(i) * group + g) * d;
            for (int j = 0; j < d; ++j) out[j] += w * src[j];
        }
    }
    n.needs_grad = node(a).needs_grad;
    int id = push(std::move(n));
    if (nodes_.back().needs_grad) {
        auto w = std::move(weights);
        nodes_.back().backprop = [id, a, s, d, group, w](Tape& t) {
            const std::vector<double>* up = t.grad_if_any(id);
            if (!up) return;
            auto& ga = t.grad_buf(a.id);
            for (int i = 0; i < s; ++i) {
                const double* u = up->data() + static_cast<std::size_t>(i) * d;
                for (int g = 0; g < group; ++g) {
                    const double wg = w[static_cast<std::size_t>(i) * group + g];
                    if (wg == 0.0) continue;
                    double* dst = ga.data() + (static_cast<std::size_t>(i) * group + g) * d;
                    for (int j = 0; j < d; ++j) dst[j] += wg * u[j];
                }
            }
        };
    }
    return Var{id};
}

Var Tape::sum(Var a) {
    check_valid(a, "sum");
    const Tensor& ta = node(a).value;
    double s = 0.0;
    for (double x : ta.values) s += x;
    Node n;
    n.op = "sum";
    n.inputs = {a.id};
    n.value = Tensor::scalar(s);
    n.needs_grad = node(a).needs_grad;
    int id = push(std::move(n));
    if (nodes_.back().needs_grad) {
        nodes_.back().backprop = [id, a](Tape& t) {
            const std::vector<double>* up = t.grad_if_any(id);
            if (!up) return;
            auto& ga = t.grad_buf(a.id);
            for (double& g : ga) g += (*up)[0];
        };
    }
    return Var{id};
}

Var Tape::mean(Var a) {
    check_valid(a, "mean");
    const Tensor& ta = node(a).value;
    const double inv = 1.0 / static_cast<double>(ta.numel());
    double s = 0.0;
    for (double x : ta.values) s += x;
    Node n;
    n.op = "mean";
    n.inputs = {a.id};
    n.value = Tensor::scalar(s * inv);
    n.needs_grad = node(a).needs_grad;
    int id = push(std::move(n));
    if (nodes_.back().needs_grad) {
        nodes_.back().backprop = [id, a, inv](Tape& t) {
            const std::vector<double>* up = t.grad_if_any(id);
            if (!up) return;
            auto& ga = t.grad_buf(a.id);
            const double g = (*up)[0] * inv;
            for (double& x : ga) x += g;
        };
    }
    return Var{id};
}

Var Tape::sse(Var a, Var b) {
    check_valid(a, "sse");
    check_valid(b, "sse");
    const Tensor& ta = node(a).value;
    const Tensor& tb = node(b).value;
    if (ta.shape != tb.shape)
        throw ShapeError("sse: shape mismatch " + shape_str(ta.shape) + " vs " +
                         shape_str(tb.shape));
    double s = 0.0;
    for (std::size_t i = 0; i < ta.values.size(); ++i) {
        const double d = ta.values[i] - tb.values[i];
        s += d * d;
    }
    Node n;
    n.op = "sse";
    n.inputs = {a.id, b.id};
    n.value = Tensor::scalar(s);
    n.needs_grad = any_needs_grad({a, b});
    int id = push(std::move(n));
    if (nodes_.back().needs_grad) {
        nodes_.back().backprop = [id, a, b](Tape& t) {
            const std::vector<double>* up = t.grad_if_any(id);
            if (!up) return;
            const double g = (*up)[0];
            const auto& va = t.node(a).value.values;
            const auto& vb = t.node(b).value.values;
            if (t.node(a).needs_grad) {
                auto& ga = t.grad_buf(a.id);
                for (std::size_t i = 0; i < va.size(); ++i)
                    ga[i] += 2.0 * g * (va[i] - vb[i]);
            }
            if (t.node(b).needs_grad) {
                auto& gb = t.grad_buf(b.id);
                for (std::size_t i = 0; i < va.size(); ++i)
                    gb[i] -= 2.0 * g * (va[i] - vb[i]);
            }
        };
    }
    return Var{id};
}

Var Tape::row_weighted_sse(Var a, Var b, std::vector<double> row_weights) {
    check_valid(a, "row_weighted_sse");
    check_valid(b, "row_weighted_sse");
    const Tensor& ta = node(a).value;
    const Tensor& tb = node(b).value;
    if (ta.shape != tb.shape || ta.shape.size() != 2)
        throw ShapeError("row_weighted_sse: need matching 2-D shapes, got " +
                         shape_str(ta.shape) + " vs " + shape_str(tb.shape));
    const int rows = ta.rows(), cols = ta.cols();
    if (static_cast<int>(row_weights.size()) != rows)
        throw ShapeError("row_weighted_sse: " + std::to_string(row_weights.size()) +
                         " weights for " + std::to_string(rows) + " rows");
    double s = 0.0;
    for (int i = 0; i < rows; ++i) {
        const double w = row_weights[static_cast<std::size_t>(i)];
        if (w == 0.0) continue;
        double rs = 0.0;
        const double* pa = ta.values.data() + static_cast<std::size_t>(i) * cols;
        const double* pb = tb.values.data() + static_cast<std::size_t>(i) * cols;
        for (int j = 0; j < cols; ++j) {
            const double d = pa[j] - pb[j];
            rs += d * d;
        }
        s += w * rs;
    }
    Node n;
    n.op = "row_weighted_sse";
    n.inputs = {a.id, b.id};
    n.value = Tensor::scalar(s);
    n.needs_grad = any_needs_grad({a, b});
    int id = push(std::move(n));
    if (nodes_.back().needs_grad) {
        auto w = std::move(row_weights);
        nodes_.back().backprop = [id, a, b, rows, cols, w](Tape& t) {
            const std::vector<double>* up = t.grad_if_any(id);
            if (!up) return;
            const double g = (*up)[0];
            const auto& va = t.node(a).value.values;
            const auto& vb = t.node(b).value.values;
            for (int i = 0; i < rows; ++i) {
                const double c = 2.0 * g * w[static_cast<std::size_t>(i)];
                if (c == 0.0) continue;
                const std::size_t off = static_cast<std::size_t>(i) * cols;
                if (t.node(a).needs_grad) {
                    auto& ga = t.grad_buf(a.id);
                    for (int j = 0; j < cols; ++j)
                        ga[off + j] += c * (va[off + j] - vb[off + j]);
                }
                if (t.node(b).needs_grad) {
                    auto& gb = t.grad_buf(b.id);
                    for (int j = 0; j < cols; ++j)
                        gb[off + j] -= c * (va[off + j] - vb[off + j]);
                }
            }
        };
    }
    return Var{id};
}

Var Tape::neighbor_sse(Var a, const Matrix* ref, std::vector<std::pair<int, int>> pairs) {
    check_valid(a, "neighbor_sse");
    const Tensor& ta = node(a).value;
    if (ta.shape.size() != 2 || ta.cols() != ref->cols)
        throw ShapeError("neighbor_sse: tensor " + shape_str(ta.shape) + " vs reference with " +
                         std::to_string(ref->cols) + " columns");
    const int cols = ta.cols();
    double s = 0.0;
    for (const auto& [i, j] : pairs) {
        s += squared_distance(ta.values.data() + static_cast<std::size_t>(i) * cols,
                              ref->row_ptr(j), cols);
    }
    Node n;
    n.op = "neighbor_sse";
    n.inputs = {a.id};
    n.value = Tensor::scalar(s);
    n.needs_grad = node(a).needs_grad;
    int id = push(std::move(n));
    if (nodes_.back().needs_grad) {
        auto ps = std::move(pairs);
        nodes_.back().backprop = [id, a, ref, cols, ps](Tape& t) {
            const std::vector<double>* up = t.grad_if_any(id);
            if (!up) return;
            const double g = (*up)[0];
            const auto& va = t.node(a).value.values;
            auto& ga = t.grad_buf(a.id);
            for (const auto& [i, j] : ps) {
                const std::size_t off = static_cast<std::size_t>(i) * cols;
                const double* r = ref->row_ptr(j);
                for (int k = 0; k < cols; ++k)
                    ga[off + k] += 2.0 * g * (va[off + k] - r[k]);
            }
        };
    }
    return Var{id};
}

Var Tape::softmax_masked(Var logits, const Tensor* mask) {
    check_valid(logits, "softmax_masked");
    const Tensor& tl = node(logits).value;
    if (tl.shape.empty()) throw ShapeError("softmax_masked: scalar input");
    const int d = tl.shape.back();
    const int nrows = static_cast<int>(tl.numel() / d);

    // Mask layout: vector applied to every row, or one entry per logit.
    bool vector_mask = false;
    if (mask) {
        if (static_cast<std::int64_t>(mask->values.size()) == d) {
            vector_mask = true;
            bool any = false;
            for (double m : mask->values) any = any || m != 0.0;
            if (!any) throw MaskError("softmax_masked: mask has no available entry");
        } else if (mask->values.size() != tl.values.size()) {
            throw ShapeError("softmax_masked: mask shape " + shape_str(mask->shape) +
                             " incompatible with logits " + shape_str(tl.shape));
        }
    }

    Node n;
    n.op = "softmax_masked";
    n.inputs = {logits.id};
    n.value = Tensor(tl.shape);
    std::vector<double> mask_copy;
    if (mask) mask_copy = mask->values;
    for (int i = 0; i < nrows; ++i) {
        const std::size_t off = static_cast<std::size_t>(i) * d;
        double mx = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < d; ++j) {
            double x = tl.values[off + j];
            if (mask) {
                const double m = vector_mask ? mask_copy[static_cast<std::size_t>(j)]
                                             : mask_copy[off + j];
                if (m == 0.0) x = kZerofill;
            }
            n.value.values[off + j] = x;
            mx = std::max(mx, x);
        }
        double total = 0.0;
        for (int j = 0; j < d; ++j) {
            const double e = std::exp(n.value.values[off + j] - mx);
            n.value.values[off + j] = e;
            total += e;
        }
        for (int j = 0; j < d; ++j) n.value.values[off + j] /= total;
    }
    n.needs_grad = node(logits).needs_grad;
    int id = push(std::move(n));
    if (nodes_.back().needs_grad) {
        nodes_.back().backprop = [id, logits, nrows, d, mask_copy, vector_mask,
                                  has_mask = mask != nullptr](Tape& t) {
            const std::vector<double>* up = t.grad_if_any(id);
            if (!up) return;
            const auto& y = t.node(Var{id}).value.values;
            auto& gl = t.grad_buf(logits.id);
            for (int i = 0; i < nrows; ++i) {
                const std::size_t off = static_cast<std::size_t>(i) * d;
                double dot = 0.0;
                for (int j = 0; j < d; ++j) dot += (*up)[off + j] * y[off + j];
                for (int j = 0; j < d; ++j) {
                    if (has_mask) {
                        const double m = vector_mask ? mask_copy[static_cast<std::size_t>(j)]
                                                     : mask_copy[off + j];
                        if (m == 0.0) continue;  // zerofilled entries are constants
                    }
                    gl[off + j] += y[off + j] * ((*up)[off + j] - dot);
                }
            }
        };
    }
    return Var{id};
}

Var Tape::layer_norm(Var x, Var gamma, Var beta, double eps) {
    check_valid(x, "layer_norm");
    check_valid(gamma, "layer_norm");
    check_valid(beta, "layer_norm");
    const Tensor& tx = node(x).value;
    const Tensor& tg = node(gamma).value;
    const Tensor& tb = node(beta).value;
    if (tx.shape.empty()) throw ShapeError("layer_norm: scalar input");
    const int d = tx.shape.back();
    if (static_cast<std::int64_t>(tg.values.size()) != d ||
        static_cast<std::int64_t>(tb.values.size()) != d)
        throw ShapeError("layer_norm: gamma/beta length must be " + std::to_string(d));
    if (eps <= 0.0) throw ConfigError("layer_norm: eps must be positive");
    const int nrows = static_cast<int>(tx.numel() / d);

    Node n;
    n.op = "layer_norm";
    n.inputs = {x.id, gamma.id, beta.id};
    n.value = Tensor(tx.shape);
    // Cache per-row inv std and the normalized values for the backward pass.
    auto inv_std = std::make_shared<std::vector<double>>(static_cast<std::size_t>(nrows));
    auto x_hat = std::make_shared<std::vector<double>>(tx.values.size());
    for (int i = 0; i < nrows; ++i) {
        const std::size_t off = static_cast<std::size_t>(i) * d;
        double mu = 0.0;
        for (int j = 0; j < d; ++j) mu += tx.values[off + j];
        mu /= d;
        double var = 0.0;
        for (int j = 0; j < d; ++j) {
            const double c = tx.values[off + j] - mu;
            var += c * c;
        }
        var /= d;
        const double inv = 1.0 / std::sqrt(var + eps);
        (*inv_std)[static_cast<std::size_t>(i)] = inv;
        for (int j = 0; j < d; ++j) {
            const double xh = (tx.values[off + j] - mu) * inv;
            (*x_hat)[off + j] = xh;
            n.value.values[off + j] = tg.values[static_cast<std::size_t>(j)] * xh +
                                      tb.values[static_cast<std::size_t>(j)];
        }
    }
    n.needs_grad = any_needs_grad({x, gamma, beta});
    int id = push(std::move(n));
    if (nodes_.back().needs_grad) {
        nodes_.back().backprop = [id, x, gamma, beta, nrows, d, inv_std, x_hat](Tape& t) {
            const std::vector<double>* up = t.grad_if_any(id);
            if (!up) return;
            const auto& vg = t.node(gamma).value.values;
            for (int i = 0; i < nrows; ++i) {
                const std::size_t off = static_cast<std::size_t>(i) * d;
                if (t.node(gamma).needs_grad) {
                    auto& gg = t.grad_buf(gamma.id);
                    for (int j = 0; j < d; ++j)
                        gg[static_cast<std::size_t>(j)] += (*up)[off + j] * (*x_hat)[off + j];
                }
                if (t.node(beta).needs_grad) {
                    auto& gb = t.grad_buf(beta.id);
                    for (int j = 0; j < d; ++j) gb[static_cast<std::size_t>(j)] += (*up)[off + j];
                }
                if (t.node(x).needs_grad) {
                    // dxhat = up * gamma; dx = inv*(dxhat - mean(dxhat) - xhat*mean(dxhat*xhat))
                    double m1 = 0.0, m2 = 0.0;
                    for (int j = 0; j < d; ++j) {
                        const double dxh = (*up)[off + j] * vg[static_cast<std::size_t>(j)];
                        m1 += dxh;
                        m2 += dxh * (*x_hat)[off + j];
                    }
                    m1 /= d;
                    m2 /= d;
                    auto& gx = t.grad_buf(x.id);
                    const double inv = (*inv_std)[static_cast<std::size_t>(i)];
                    for (int j = 0; j < d; ++j) {
                        const double dxh = (*up)[off + j] * vg[static_cast<std::size_t>(j)];
                        gx[off + j] += inv * (dxh - m1 - (*x_hat)[off + j] * m2);
                    }
                }
            }
        };
    }
    return Var{id};
}

void Tape::backward(Var loss) {
    check_valid(loss, "backward");
    if (node(loss).value.numel() != 1)
        throw ShapeError("backward: loss must be scalar, got " +
                         shape_str(node(loss).value.shape));
    // Per-node buffers are reset each call; accumulation across calls
    // happens in the bound external tensors.
    for (Node& n : nodes_) n.grad.clear();
    grad_buf(loss.id)[0] = 1.0;
    for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
        Node& n = nodes_[static_cast<std::size_t>(i)];
        if (n.backprop && !n.grad.empty()) n.backprop(*this);
    }
    for (Node& n : nodes_) {
        if (n.bound && n.bound->requires_grad) {
            n.bound->ensure_grad();
            if (!n.grad.empty())
                for (std::size_t i = 0; i < n.grad.size(); ++i) n.bound->grad[i] += n.grad[i];
        }
    }
}

double grad_check(const std::function<Var(Tape&)>& build, const std::vector<Tensor*>& params,
                  double h) {
    // Analytic gradients.
    std::vector<std::vector<double>> saved_grads;
    for (Tensor* p : params) {
        saved_grads.push_back(p->grad);
        p->zero_grad();
    }
    {
        Tape tape;
        Var loss = build(tape);
        tape.backward(loss);
    }
    std::vector<std::vector<double>> analytic;
    for (Tensor* p : params) analytic.push_back(p->grad);

    auto eval = [&]() {
        Tape tape;
        return tape.scalar_value(build(tape));
    };

    double worst = 0.0;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Tensor* p = params[pi];
        for (std::size_t k = 0; k < p->values.size(); ++k) {
            const double orig = p->values[k];
            p->values[k] = orig + h;
            const double up = eval();
            p->values[k] = orig - h;
            const double down = eval();
            p->values[k] = orig;
            const double numeric = (up - down) / (2.0 * h);
            const double a = analytic[pi][k];
            const double err = std::abs(a - numeric) /
                               std::max(1e-8, std::abs(a) + std::abs(numeric));
            worst = std::max(worst, err);
        }
    }
    for (std::size_t pi = 0; pi < params.size(); ++pi) params[pi]->grad = saved_grads[pi];
    return worst;
}

}  // namespace recformer::ad
