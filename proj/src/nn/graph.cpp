#include <cmath>

#include "refgame/error.hpp"
#include "refgame/nn.hpp"

namespace refgame::nn {

namespace {

void check_same_shape(const Var& a, const Var& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        fail(ErrorCode::shape_mismatch,
             std::string(op) + ": shape mismatch [" + std::to_string(a.rows()) + "x" +
                 std::to_string(a.cols()) + "] vs [" + std::to_string(b.rows()) + "x" +
                 std::to_string(b.cols()) + "]");
}

Graph& graph_of(const Var& a) {
    require(a.valid(), ErrorCode::invalid_argument, "operation on an unrecorded value");
    return *a.graph;
}

bool needs(Graph& g, std::initializer_list<Var> in) {
    if (!g.grad_enabled()) return false;
    for (const Var& v : in)
        if (g.requires_grad(v.id)) return true;
    return false;
}

}  // namespace

const Tensor& Var::value() const { return graph->value(id); }

Var Graph::record(Tensor value, bool requires_grad, BackwardFn fn) {
    Node node;
    node.value = std::move(value);
    node.requires_grad = requires_grad && grad_enabled_;
    if (node.requires_grad) node.backward = std::move(fn);
    nodes_.push_back(std::move(node));
    return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Graph::constant(Tensor value) { return record(std::move(value), false, nullptr); }

Var Graph::constant_scalar(double value) { return constant(Tensor::Constant(1, 1, value)); }

Var Graph::variable(Tensor value) { return record(std::move(value), true, nullptr); }

Var Graph::param(const ParamStore& store, const std::string& name) {
    if (auto it = param_nodes_.find(name); it != param_nodes_.end()) return Var{this, it->second};
    const bool trainable = !store.frozen(name);
    Var v = record(store.value(name), trainable, nullptr);
    param_nodes_.emplace(name, v.id);
    if (nodes_[v.id].requires_grad) param_order_.emplace_back(name, v.id);
    return v;
}

void Graph::accumulate(int id, const Tensor& g) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0)
        n.grad = g;
    else
        n.grad += g;
}

void Graph::backward(Var loss) {
    require(loss.valid() && loss.graph == this, ErrorCode::invalid_argument,
            "backward: loss was not recorded on this graph");
    require(loss.rows() == 1 && loss.cols() == 1, ErrorCode::shape_mismatch,
            "backward: loss must be a scalar");
    require(grad_enabled_ && nodes_[loss.id].requires_grad, ErrorCode::invalid_argument,
            "backward: loss does not depend on any trainable value");
    require(!backward_done_, ErrorCode::invalid_argument, "backward: already called on this graph");
    backward_done_ = true;
    nodes_[loss.id].grad = Tensor::Ones(1, 1);
    for (int id = loss.id; id >= 0; --id) {
        Node& n = nodes_[id];
        if (!n.requires_grad || n.grad.size() == 0 || !n.backward) continue;
        n.backward(*this, id);
    }
}

Gradients Graph::param_gradients() const {
    Gradients out;
    for (const auto& [name, id] : param_order_) {
        const Node& n = nodes_[id];
        if (n.grad.size() == 0)
            out.emplace(name, Tensor::Zero(n.value.rows(), n.value.cols()));
        else
            out.emplace(name, n.grad);
    }
    return out;
}

// ---- primitive operations -------------------------------------------------

Var matmul(Var a, Var b) {
    Graph& g = graph_of(a);
    if (a.cols() != b.rows())
        fail(ErrorCode::shape_mismatch, "matmul: inner dimensions " + std::to_string(a.cols()) +
                                            " and " + std::to_string(b.rows()) + " differ");
    const int ia = a.id, ib = b.id;
    return g.record(a.value() * b.value(), needs(g, {a, b}), [ia, ib](Graph& g, int self) {
        const Tensor& go = g.grad(self);
        if (g.requires_grad(ia)) g.accumulate(ia, go * g.value(ib).transpose());
        if (g.requires_grad(ib)) g.accumulate(ib, g.value(ia).transpose() * go);
    });
}

Var add(Var a, Var b) {
    Graph& g = graph_of(a);
    check_same_shape(a, b, "add");
    const int ia = a.id, ib = b.id;
    return g.record(a.value() + b.value(), needs(g, {a, b}), [ia, ib](Graph& g, int self) {
        g.accumulate(ia, g.grad(self));
        g.accumulate(ib, g.grad(self));
    });
}

Var sub(Var a, Var b) {
    Graph& g = graph_of(a);
    check_same_shape(a, b, "sub");
    const int ia = a.id, ib = b.id;
    return g.record(a.value() - b.value(), needs(g, {a, b}), [ia, ib](Graph& g, int self) {
        g.accumulate(ia, g.grad(self));
        if (g.requires_grad(ib)) g.accumulate(ib, -g.grad(self));
    });
}

Var mul(Var a, Var b) {
    Graph& g = graph_of(a);
    check_same_shape(a, b, "mul");
    const int ia = a.id, ib = b.id;
    return g.record(a.value().cwiseProduct(b.value()), needs(g, {a, b}),
                    [ia, ib](Graph& g, int self) {
                        const Tensor& go = g.grad(self);
                        if (g.requires_grad(ia)) g.accumulate(ia, go.cwiseProduct(g.value(ib)));
                        if (g.requires_grad(ib)) g.accumulate(ib, go.cwiseProduct(g.value(ia)));
                    });
}

Var scale(Var a, double s) {
    Graph& g = graph_of(a);
    const int ia = a.id;
    return g.record(a.value() * s, needs(g, {a}),
                    [ia, s](Graph& g, int self) { g.accumulate(ia, g.grad(self) * s); });
}

Var add_scalar(Var a, double s) {
    Graph& g = graph_of(a);
    const int ia = a.id;
    return g.record(a.value().array() + s, needs(g, {a}),
                    [ia](Graph& g, int self) { g.accumulate(ia, g.grad(self)); });
}

Var add_row(Var a, Var row) {
    Graph& g = graph_of(a);
    if (row.rows() != 1 || row.cols() != a.cols())
        fail(ErrorCode::shape_mismatch, "add_row: bias width " + std::to_string(row.cols()) +
                                            " does not match " + std::to_string(a.cols()));
    const int ia = a.id, ir = row.id;
    Tensor out = a.value().rowwise() + row.value().row(0);
    return g.record(std::move(out), needs(g, {a, row}), [ia, ir](Graph& g, int self) {
        g.accumulate(ia, g.grad(self));
        if (g.requires_grad(ir)) g.accumulate(ir, g.grad(self).colwise().sum());
    });
}

Var mul_col(Var a, Var col) {
    Graph& g = graph_of(a);
    if (col.cols() != 1 || col.rows() != a.rows())
        fail(ErrorCode::shape_mismatch, "mul_col: column of " + std::to_string(col.rows()) +
                                            " rows does not match " + std::to_string(a.rows()));
    const int ia = a.id, ic = col.id;
    Tensor out = a.value().array().colwise() * col.value().col(0).array();
    return g.record(std::move(out), needs(g, {a, col}), [ia, ic](Graph& g, int self) {
        const Tensor& go = g.grad(self);
        if (g.requires_grad(ia))
            g.accumulate(ia, go.array().colwise() * g.value(ic).col(0).array());
        if (g.requires_grad(ic))
            g.accumulate(ic, go.cwiseProduct(g.value(ia)).rowwise().sum());
    });
}

Var sigmoid(Var a) {
    Graph& g = graph_of(a);
    const int ia = a.id;
    Tensor out = (1.0 + (-a.value().array()).exp()).inverse().matrix();
    return g.record(std::move(out), needs(g, {a}), [ia](Graph& g, int self) {
        const auto y = g.value(self).array();
        g.accumulate(ia, (g.grad(self).array() * y * (1.0 - y)).matrix());
    });
}

Var tanh(Var a) {
    Graph& g = graph_of(a);
    const int ia = a.id;
    Tensor out = a.value().array().tanh().matrix();
    return g.record(std::move(out), needs(g, {a}), [ia](Graph& g, int self) {
        const auto y = g.value(self).array();
        g.accumulate(ia, (g.grad(self).array() * (1.0 - y * y)).matrix());
    });
}

Var exp(Var a) {
    Graph& g = graph_of(a);
    const int ia = a.id;
    Tensor out = a.value().array().exp().matrix();
    return g.record(std::move(out), needs(g, {a}), [ia](Graph& g, int self) {
        g.accumulate(ia, g.grad(self).cwiseProduct(g.value(self)));
    });
}

Var concat_cols(std::span<const Var> parts) {
    require(!parts.empty(), ErrorCode::invalid_argument, "concat_cols: no inputs");
    Graph& g = graph_of(parts[0]);
    const long rows = parts[0].rows();
    long cols = 0;
    bool rg = false;
    for (const Var& p : parts) {
        if (p.rows() != rows)
            fail(ErrorCode::shape_mismatch, "concat_cols: row counts differ (" +
                                                std::to_string(rows) + " vs " +
                                                std::to_string(p.rows()) + ")");
        cols += p.cols();
        rg = rg || (g.grad_enabled() && g.requires_grad(p.id));
    }
    Tensor out(rows, cols);
    std::vector<std::pair<int, long>> ids;  // (node, width)
    long at = 0;
    for (const Var& p : parts) {
        out.middleCols(at, p.cols()) = p.value();
        at += p.cols();
        ids.emplace_back(p.id, p.cols());
    }
    return g.record(std::move(out), rg, [ids](Graph& g, int self) {
        const Tensor& go = g.grad(self);
        long at = 0;
        for (const auto& [id, width] : ids) {
            if (g.requires_grad(id)) g.accumulate(id, go.middleCols(at, width));
            at += width;
        }
    });
}

Var slice_cols(Var a, int start, int count) {
    Graph& g = graph_of(a);
    if (start < 0 || count < 0 || start + count > a.cols())
        fail(ErrorCode::shape_mismatch, "slice_cols: range out of bounds");
    const int ia = a.id;
    const long total = a.cols();
    return g.record(a.value().middleCols(start, count), needs(g, {a}),
                    [ia, start, count, total](Graph& g, int self) {
                        Tensor full = Tensor::Zero(g.value(self).rows(), total);
                        full.middleCols(start, count) = g.grad(self);
                        g.accumulate(ia, full);
                    });
}

Var reshape(Var a, int rows, int cols) {
    Graph& g = graph_of(a);
    if (static_cast<long>(rows) * cols != a.rows() * a.cols())
        fail(ErrorCode::shape_mismatch, "reshape: element count differs");
    using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    const RowMajor src = a.value();
    Tensor out = Eigen::Map<const RowMajor>(src.data(), rows, cols);
    const int ia = a.id;
    const long r0 = a.rows(), c0 = a.cols();
    return g.record(std::move(out), needs(g, {a}), [ia, r0, c0](Graph& g, int self) {
        const RowMajor go = g.grad(self);
        g.accumulate(ia, Tensor(Eigen::Map<const RowMajor>(go.data(), r0, c0)));
    });
}

Var gather_rows(Var table, std::span<const int> ids) {
    Graph& g = graph_of(table);
    const long n = static_cast<long>(ids.size());
    Tensor out(n, table.cols());
    const Tensor& t = table.value();
    for (long i = 0; i < n; ++i) {
        if (ids[i] < 0 || ids[i] >= t.rows())
            fail(ErrorCode::invalid_argument, "gather_rows: id " + std::to_string(ids[i]) +
                                                  " outside table of " +
                                                  std::to_string(t.rows()) + " rows");
        out.row(i) = t.row(ids[i]);
    }
    const int it = table.id;
    std::vector<int> idv(ids.begin(), ids.end());
    return g.record(std::move(out), needs(g, {table}), [it, idv](Graph& g, int self) {
        const Tensor& go = g.grad(self);
        Tensor gt = Tensor::Zero(g.value(it).rows(), g.value(it).cols());
        for (size_t i = 0; i < idv.size(); ++i) gt.row(idv[i]) += go.row(static_cast<long>(i));
        g.accumulate(it, gt);
    });
}

Var log_softmax(Var a) {
    Graph& g = graph_of(a);
    const Tensor& x = a.value();
    Tensor out(x.rows(), x.cols());
    for (long i = 0; i < x.rows(); ++i) {
        const double m = x.row(i).maxCoeff();
        const double lse = m + std::log((x.row(i).array() - m).exp().sum());
        out.row(i) = x.row(i).array() - lse;
    }
    const int ia = a.id;
    return g.record(std::move(out), needs(g, {a}), [ia](Graph& g, int self) {
        const Tensor& go = g.grad(self);
        const Tensor p = g.value(self).array().exp().matrix();
        Tensor gx = go - (p.array().colwise() * go.rowwise().sum().array()).matrix();
        g.accumulate(ia, gx);
    });
}

Var softmax(Var a) { return exp(log_softmax(a)); }

Var pick(Var a, std::span<const int> ids) {
    Graph& g = graph_of(a);
    if (static_cast<long>(ids.size()) != a.rows())
        fail(ErrorCode::shape_mismatch, "pick: " + std::to_string(ids.size()) + " indices for " +
                                            std::to_string(a.rows()) + " rows");
    Tensor out(a.rows(), 1);
    for (long i = 0; i < a.rows(); ++i) {
        if (ids[i] < 0 || ids[i] >= a.cols())
            fail(ErrorCode::invalid_argument, "pick: index " + std::to_string(ids[i]) +
                                                  " outside " + std::to_string(a.cols()) +
                                                  " columns");
        out(i, 0) = a.value()(i, ids[i]);
    }
    const int ia = a.id;
    std::vector<int> idv(ids.begin(), ids.end());
    return g.record(std::move(out), needs(g, {a}), [ia, idv](Graph& g, int self) {
        const Tensor& go = g.grad(self);
        Tensor ga = Tensor::Zero(g.value(ia).rows(), g.value(ia).cols());
        for (size_t i = 0; i < idv.size(); ++i) ga(static_cast<long>(i), idv[i]) = go(i, 0);
        g.accumulate(ia, ga);
    });
}

Var row_sum(Var a) {
    Graph& g = graph_of(a);
    const int ia = a.id;
    const long cols = a.cols();
    return g.record(a.value().rowwise().sum(), needs(g, {a}), [ia, cols](Graph& g, int self) {
        g.accumulate(ia, g.grad(self).replicate(1, cols));
    });
}

Var row_dot(Var a, Var b) { return row_sum(mul(a, b)); }

Var sum(Var a) {
    Graph& g = graph_of(a);
    const int ia = a.id;
    const long r = a.rows(), c = a.cols();
    return g.record(Tensor::Constant(1, 1, a.value().sum()), needs(g, {a}),
                    [ia, r, c](Graph& g, int self) {
                        g.accumulate(ia, Tensor::Constant(r, c, g.grad(self)(0, 0)));
                    });
}

Var mean(Var a) {
    const double n = static_cast<double>(a.rows() * a.cols());
    require(n > 0, ErrorCode::invalid_argument, "mean: empty tensor");
    return scale(sum(a), 1.0 / n);
}

Var entropy_from_log_probs(Var log_probs) {
    return scale(row_sum(mul(exp(log_probs), log_probs)), -1.0);
}

Var cross_entropy(Var log_probs, std::span<const int> targets) {
    return scale(mean(pick(log_probs, targets)), -1.0);
}

}  // namespace refgame::nn
