#include "ecor/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace ecor {

namespace {

std::string dims(int64_t r, int64_t c) {
    return "[" + std::to_string(r) + "x" + std::to_string(c) + "]";
}

bool all_finite(const std::vector<double>& v) {
    for (double x : v) {
        if (!std::isfinite(x)) return false;
    }
    return true;
}

// C[m x n] += A[m x k] * B[k x n], ikj order for cache locality.
void mm_accum(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n) {
    for (int64_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        for (int64_t p = 0; p < k; ++p) {
            const double av = arow[p];
            if (av == 0.0) continue;
            const double* brow = b + p * n;
            for (int64_t j = 0; j < n; ++j) {
                crow[j] += av * brow[j];
            }
        }
    }
}

// C[m x k] += A[m x n] * B^T where B is [k x n].
void mm_accum_nt(const double* a, const double* b, double* c, int64_t m, int64_t n, int64_t k) {
    for (int64_t i = 0; i < m; ++i) {
        const double* arow = a + i * n;
        double* crow = c + i * k;
        for (int64_t j = 0; j < k; ++j) {
            const double* brow = b + j * n;
            double acc = 0.0;
            for (int64_t p = 0; p < n; ++p) {
                acc += arow[p] * brow[p];
            }
            crow[j] += acc;
        }
    }
}

// C[k x n] += A^T * B where A is [m x k], B is [m x n].
void mm_accum_tn(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n) {
    for (int64_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        const double* brow = b + i * n;
        for (int64_t p = 0; p < k; ++p) {
            const double av = arow[p];
            if (av == 0.0) continue;
            double* crow = c + p * n;
            for (int64_t j = 0; j < n; ++j) {
                crow[j] += av * brow[j];
            }
        }
    }
}

}  // namespace

// Grants the op implementations access to Graph internals.
struct OpAccess {
    static Graph::Node& node(Graph& g, int id) { return g.node(id); }
    static const Graph::Node& node(const Graph& g, int id) { return g.node(id); }
    static void ensure_grad(Graph& g, int id) { g.ensure_grad(id); }
    static Tensor emplace(Graph& g, int64_t rows, int64_t cols, std::vector<double> data,
                          const char* op, std::vector<int> inputs) {
        return g.emplace(rows, cols, std::move(data), op, std::move(inputs));
    }
    static void set_backward(Graph& g, int id, std::function<void(Graph&, int)> fn) {
        g.node(id).backward_fn = std::move(fn);
    }
};

namespace {

Graph& common_graph(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.valid() || !b.valid()) {
        throw contract_error(std::string(op) + ": tensor handle is not bound to a graph");
    }
    if (a.graph() != b.graph()) {
        throw contract_error(std::string(op) + ": operands belong to different graphs");
    }
    return *a.graph();
}

Graph& own_graph(const Tensor& a, const char* op) {
    if (!a.valid()) {
        throw contract_error(std::string(op) + ": tensor handle is not bound to a graph");
    }
    return *a.graph();
}

bool track(const Graph& g, std::initializer_list<const Tensor*> ins) {
    if (!g.grad_enabled()) return false;
    for (const Tensor* t : ins) {
        if (t->requires_grad()) return true;
    }
    return false;
}

// Result node whose requires_grad follows its inputs; inputs are only
// recorded when gradients will flow.
Tensor make_result(Graph& g, int64_t rows, int64_t cols, std::vector<double> data,
                   const char* op, std::initializer_list<const Tensor*> ins) {
    const bool rg = track(g, ins);
    std::vector<int> input_ids;
    if (rg) {
        for (const Tensor* t : ins) input_ids.push_back(t->id());
    }
    Tensor out = OpAccess::emplace(g, rows, cols, std::move(data), op, std::move(input_ids));
    OpAccess::node(g, out.id()).requires_grad = rg;
    return out;
}

std::vector<double>& grad_of(Graph& g, int id) {
    OpAccess::ensure_grad(g, id);
    return OpAccess::node(g, id).grad;
}

}  // namespace

// ---- Tensor ---------------------------------------------------------------

int64_t Tensor::rows() const { return OpAccess::node(*graph_, id_).rows; }
int64_t Tensor::cols() const { return OpAccess::node(*graph_, id_).cols; }

const std::vector<double>& Tensor::data() const {
    return OpAccess::node(*graph_, id_).data;
}

double Tensor::at(int64_t r, int64_t c) const {
    const auto& n = OpAccess::node(*graph_, id_);
    if (r < 0 || r >= n.rows || c < 0 || c >= n.cols) {
        throw shape_error("Tensor::at(" + std::to_string(r) + "," + std::to_string(c) +
                          ") out of range for " + dims(n.rows, n.cols));
    }
    return n.data[r * n.cols + c];
}

double Tensor::scalar() const {
    const auto& n = OpAccess::node(*graph_, id_);
    if (n.rows != 1 || n.cols != 1) {
        throw shape_error("Tensor::scalar on non-scalar " + dims(n.rows, n.cols));
    }
    return n.data[0];
}

const std::vector<double>& Tensor::grad() const {
    OpAccess::ensure_grad(*graph_, id_);
    return OpAccess::node(*graph_, id_).grad;
}

bool Tensor::requires_grad() const {
    return OpAccess::node(*graph_, id_).requires_grad;
}

// ---- Graph ----------------------------------------------------------------

Tensor Graph::emplace(int64_t rows, int64_t cols, std::vector<double> data,
                      const char* op, std::vector<int> inputs) {
    if (rows < 0 || cols < 0 ||
        data.size() != static_cast<size_t>(rows) * static_cast<size_t>(cols)) {
        throw shape_error(std::string(op) + ": data length " + std::to_string(data.size()) +
                          " does not match shape " + dims(rows, cols));
    }
    Node n;
    n.rows = rows;
    n.cols = cols;
    n.data = std::move(data);
    n.inputs = std::move(inputs);
    n.op = op;
    nodes_.push_back(std::move(n));
    return Tensor(this, static_cast<int>(nodes_.size()) - 1);
}

Tensor Graph::leaf(int64_t rows, int64_t cols, std::vector<double> data, bool requires_grad) {
    Tensor t = emplace(rows, cols, std::move(data), "leaf", {});
    nodes_.back().requires_grad = grad_enabled_ && requires_grad;
    return t;
}

Tensor Graph::constant(int64_t rows, int64_t cols, double fill) {
    return emplace(rows, cols, std::vector<double>(rows * cols, fill), "const", {});
}

void Graph::ensure_grad(int id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) {
        n.grad.assign(n.data.size(), 0.0);
    }
}

void Graph::backward(const Tensor& loss) {
    if (loss.graph() != this) {
        throw contract_error("backward: loss belongs to a different graph");
    }
    const Node& ln = nodes_[loss.id()];
    if (ln.rows != 1 || ln.cols != 1) {
        throw contract_error("backward: loss must be scalar, got " + dims(ln.rows, ln.cols));
    }

    for (Node& n : nodes_) {
        if (!n.grad.empty()) {
            std::fill(n.grad.begin(), n.grad.end(), 0.0);
        }
    }

    // Nodes that can reach the loss along recorded edges.
    std::vector<char> reachable(nodes_.size(), 0);
    std::vector<int> stack{loss.id()};
    reachable[loss.id()] = 1;
    while (!stack.empty()) {
        const int id = stack.back();
        stack.pop_back();
        for (int in : nodes_[id].inputs) {
            if (!reachable[in]) {
                reachable[in] = 1;
                stack.push_back(in);
            }
        }
    }

    ensure_grad(loss.id());
    nodes_[loss.id()].grad[0] = 1.0;

    // Insertion order is topological, so the reverse sweep is just a
    // descending id scan. This keeps accumulation order fixed across runs.
    for (int id = loss.id(); id >= 0; --id) {
        Node& n = nodes_[id];
        if (!reachable[id] || !n.requires_grad || !n.backward_fn) continue;
        n.backward_fn(*this, id);
    }
}

// ---- ops ------------------------------------------------------------------

std::string shape_str(const Tensor& t) { return dims(t.rows(), t.cols()); }

Tensor matmul(const Tensor& a, const Tensor& b) {
    Graph& g = common_graph(a, b, "matmul");
    if (a.cols() != b.rows()) {
        throw shape_error("matmul: inner dims disagree, " + shape_str(a) + " x " + shape_str(b));
    }
    const int64_t m = a.rows(), k = a.cols(), n = b.cols();
    std::vector<double> out(m * n, 0.0);
    mm_accum(a.data().data(), b.data().data(), out.data(), m, k, n);
    Tensor r = make_result(g, m, n, std::move(out), "matmul", {&a, &b});
    if (r.requires_grad()) {
        OpAccess::set_backward(g, r.id(), [aid = a.id(), bid = b.id(), m, k, n](Graph& gg, int out_id) {
            const auto& on = OpAccess::node(gg, out_id);
            auto& an = OpAccess::node(gg, aid);
            auto& bn = OpAccess::node(gg, bid);
            if (an.requires_grad) {
                mm_accum_nt(on.grad.data(), bn.data.data(), grad_of(gg, aid).data(), m, n, k);
            }
            if (bn.requires_grad) {
                mm_accum_tn(an.data.data(), on.grad.data(), grad_of(gg, bid).data(), m, k, n);
            }
        });
    }
    return r;
}

Tensor add(const Tensor& a, const Tensor& b) {
    Graph& g = common_graph(a, b, "add");
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw shape_error("add: shape mismatch " + shape_str(a) + " vs " + shape_str(b));
    }
    std::vector<double> out(a.data());
    const auto& bd = b.data();
    for (size_t i = 0; i < out.size(); ++i) out[i] += bd[i];
    Tensor r = make_result(g, a.rows(), a.cols(), std::move(out), "add", {&a, &b});
    if (r.requires_grad()) {
        OpAccess::set_backward(g, r.id(), [aid = a.id(), bid = b.id()](Graph& gg, int out_id) {
            const auto& og = OpAccess::node(gg, out_id).grad;
            for (int id : {aid, bid}) {
                if (OpAccess::node(gg, id).requires_grad) {
                    auto& grad = grad_of(gg, id);
                    for (size_t i = 0; i < og.size(); ++i) grad[i] += og[i];
                }
            }
        });
    }
    return r;
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
    Graph& g = common_graph(x, bias, "add_bias");
    if (bias.rows() != 1 || bias.cols() != x.cols()) {
        throw shape_error("add_bias: bias " + shape_str(bias) + " does not match " + shape_str(x));
    }
    const int64_t m = x.rows(), n = x.cols();
    std::vector<double> out(x.data());
    const auto& bd = bias.data();
    for (int64_t i = 0; i < m; ++i) {
        for (int64_t j = 0; j < n; ++j) out[i * n + j] += bd[j];
    }
    Tensor r = make_result(g, m, n, std::move(out), "add_bias", {&x, &bias});
    if (r.requires_grad()) {
        OpAccess::set_backward(g, r.id(), [xid = x.id(), bid = bias.id(), m, n](Graph& gg, int out_id) {
            const auto& og = OpAccess::node(gg, out_id).grad;
            if (OpAccess::node(gg, xid).requires_grad) {
                auto& gx = grad_of(gg, xid);
                for (size_t i = 0; i < og.size(); ++i) gx[i] += og[i];
            }
            if (OpAccess::node(gg, bid).requires_grad) {
                auto& gb = grad_of(gg, bid);
                for (int64_t i = 0; i < m; ++i) {
                    for (int64_t j = 0; j < n; ++j) gb[j] += og[i * n + j];
                }
            }
        });
    }
    return r;
}

Tensor scale(const Tensor& x, double c) {
    Graph& g = own_graph(x, "scale");
    std::vector<double> out(x.data());
    for (double& v : out) v *= c;
    Tensor r = make_result(g, x.rows(), x.cols(), std::move(out), "scale", {&x});
    if (r.requires_grad()) {
        OpAccess::set_backward(g, r.id(), [xid = x.id(), c](Graph& gg, int out_id) {
            const auto& og = OpAccess::node(gg, out_id).grad;
            auto& gx = grad_of(gg, xid);
            for (size_t i = 0; i < og.size(); ++i) gx[i] += c * og[i];
        });
    }
    return r;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    Graph& g = common_graph(a, b, "mul");
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw shape_error("mul: shape mismatch " + shape_str(a) + " vs " + shape_str(b));
    }
    std::vector<double> out(a.data());
    const auto& bd = b.data();
    for (size_t i = 0; i < out.size(); ++i) out[i] *= bd[i];
    Tensor r = make_result(g, a.rows(), a.cols(), std::move(out), "mul", {&a, &b});
    if (r.requires_grad()) {
        OpAccess::set_backward(g, r.id(), [aid = a.id(), bid = b.id()](Graph& gg, int out_id) {
            const auto& og = OpAccess::node(gg, out_id).grad;
            const auto& an = OpAccess::node(gg, aid);
            const auto& bn = OpAccess::node(gg, bid);
            if (an.requires_grad) {
                auto& ga = grad_of(gg, aid);
                for (size_t i = 0; i < og.size(); ++i) ga[i] += og[i] * bn.data[i];
            }
            if (bn.requires_grad) {
                auto& gb = grad_of(gg, bid);
                for (size_t i = 0; i < og.size(); ++i) gb[i] += og[i] * an.data[i];
            }
        });
    }
    return r;
}

Tensor mul_scalar(const Tensor& x, const Tensor& s) {
    Graph& g = common_graph(x, s, "mul_scalar");
    if (s.rows() != 1 || s.cols() != 1) {
        throw shape_error("mul_scalar: scale must be 1x1, got " + shape_str(s));
    }
    const double sv = s.data()[0];
    std::vector<double> out(x.data());
    for (double& v : out) v *= sv;
    Tensor r = make_result(g, x.rows(), x.cols(), std::move(out), "mul_scalar", {&x, &s});
    if (r.requires_grad()) {
        OpAccess::set_backward(g, r.id(), [xid = x.id(), sid = s.id()](Graph& gg, int out_id) {
            const auto& og = OpAccess::node(gg, out_id).grad;
            const auto& xn = OpAccess::node(gg, xid);
            const auto& sn = OpAccess::node(gg, sid);
            if (xn.requires_grad) {
                auto& gx = grad_of(gg, xid);
                const double sv = sn.data[0];
                for (size_t i = 0; i < og.size(); ++i) gx[i] += sv * og[i];
            }
            if (sn.requires_grad) {
                double acc = 0.0;
                for (size_t i = 0; i < og.size(); ++i) acc += og[i] * xn.data[i];
                grad_of(gg, sid)[0] += acc;
            }
        });
    }
    return r;
}

Tensor exp_elem(const Tensor& x) {
    Graph& g = own_graph(x, "exp");
    std::vector<double> out(x.data());
    for (double& v : out) v = std::exp(v);
    Tensor r = make_result(g, x.rows(), x.cols(), std::move(out), "exp", {&x});
    if (r.requires_grad()) {
        OpAccess::set_backward(g, r.id(), [xid = x.id()](Graph& gg, int out_id) {
            const auto& on = OpAccess::node(gg, out_id);
            auto& gx = grad_of(gg, xid);
            for (size_t i = 0; i < on.data.size(); ++i) gx[i] += on.grad[i] * on.data[i];
        });
    }
    return r;
}

Tensor transpose(const Tensor& x) {
    Graph& g = own_graph(x, "transpose");
    const int64_t m = x.rows(), n = x.cols();
    std::vector<double> out(m * n);
    const auto& xd = x.data();
    for (int64_t i = 0; i < m; ++i) {
        for (int64_t j = 0; j < n; ++j) out[j * m + i] = xd[i * n + j];
    }
    Tensor r = make_result(g, n, m, std::move(out), "transpose", {&x});
    if (r.requires_grad()) {
        OpAccess::set_backward(g, r.id(), [xid = x.id(), m, n](Graph& gg, int out_id) {
            const auto& og = OpAccess::node(gg, out_id).grad;
            auto& gx = grad_of(gg, xid);
            for (int64_t i = 0; i < m; ++i) {
                for (int64_t j = 0; j < n; ++j) gx[i * n + j] += og[j * m + i];
            }
        });
    }
    return r;
}

Tensor slice_rows(const Tensor& x, int64_t r0, int64_t r1) {
    Graph& g = own_graph(x, "slice_rows");
    if (r0 < 0 || r1 > x.rows() || r0 >= r1) {
        throw shape_error("slice_rows: invalid range [" + std::to_string(r0) + "," +
                          std::to_string(r1) + ") for " + shape_str(x));
    }
    const int64_t n = x.cols();
    std::vector<double> out(x.data().begin() + r0 * n, x.data().begin() + r1 * n);
    Tensor r = make_result(g, r1 - r0, n, std::move(out), "slice_rows", {&x});
    if (r.requires_grad()) {
        OpAccess::set_backward(g, r.id(), [xid = x.id(), r0, n](Graph& gg, int out_id) {
            const auto& og = OpAccess::node(gg, out_id).grad;
            auto& gx = grad_of(gg, xid);
            for (size_t i = 0; i < og.size(); ++i) gx[r0 * n + i] += og[i];
        });
    }
    return r;
}

Tensor slice_cols(const Tensor& x, int64_t c0, int64_t c1) {
    Graph& g = own_graph(x, "slice_cols");
    if (c0 < 0 || c1 > x.cols() || c0 >= c1) {
        throw shape_error("slice_cols: invalid range [" + std::to_string(c0) + "," +
                          std::to_string(c1) + ") for " + shape_str(x));
    }
    const int64_t m = x.rows(), n = x.cols(), w = c1 - c0;
    std::vector<double> out(m * w);
    const auto& xd = x.data();
    for (int64_t i = 0; i < m; ++i) {
        std::copy(xd.begin() + i * n + c0, xd.begin() + i * n + c1, out.begin() + i * w);
    }
    Tensor r = make_result(g, m, w, std::move(out), "slice_cols", {&x});
    if (r.requires_grad()) {
        OpAccess::set_backward(g, r.id(), [xid = x.id(), c0, m, n, w](Graph& gg, int out_id) {
            const auto& og = OpAccess::node(gg, out_id).grad;
            auto& gx = grad_of(gg, xid);
            for (int64_t i = 0; i < m; ++i) {
                for (int64_t j = 0; j < w; ++j) gx[i * n + c0 + j] += og[i * w + j];
            }
        });
    }
    return r;
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) {
        throw contract_error("concat_rows: no parts");
    }
    Graph& g = own_graph(parts[0], "concat_rows");
    const int64_t n = parts[0].cols();
    int64_t m = 0;
    bool rg = false;
    for (const Tensor& p : parts) {
        if (p.graph() != &g) throw contract_error("concat_rows: parts from different graphs");
        if (p.cols() != n) {
            throw shape_error("concat_rows: column mismatch " + shape_str(parts[0]) + " vs " +
                              shape_str(p));
        }
        m += p.rows();
        rg = rg || p.requires_grad();
    }
    rg = rg && g.grad_enabled();
    std::vector<double> out;
    out.reserve(m * n);
    for (const Tensor& p : parts) {
        out.insert(out.end(), p.data().begin(), p.data().end());
    }
    std::vector<int> ids;
    if (rg) {
        for (const Tensor& p : parts) ids.push_back(p.id());
    }
    Tensor r = OpAccess::emplace(g, m, n, std::move(out), "concat_rows", ids);
    OpAccess::node(g, r.id()).requires_grad = rg;
    if (rg) {
        std::vector<int> all_ids;
        for (const Tensor& p : parts) all_ids.push_back(p.id());
        OpAccess::set_backward(g, r.id(), [all_ids](Graph& gg, int out_id) {
            const auto& og = OpAccess::node(gg, out_id).grad;
            size_t off = 0;
            for (int id : all_ids) {
                const auto& pn = OpAccess::node(gg, id);
                const size_t len = pn.data.size();
                if (pn.requires_grad) {
                    auto& gp = grad_of(gg, id);
                    for (size_t i = 0; i < len; ++i) gp[i] += og[off + i];
                }
                off += len;
            }
        });
    }
    return r;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) {
        throw contract_error("concat_cols: no parts");
    }
    Graph& g = own_graph(parts[0], "concat_cols");
    const int64_t m = parts[0].rows();
    int64_t n = 0;
    bool rg = false;
    for (const Tensor& p : parts) {
        if (p.graph() != &g) throw contract_error("concat_cols: parts from different graphs");
        if (p.rows() != m) {
            throw shape_error("concat_cols: row mismatch " + shape_str(parts[0]) + " vs " +
                              shape_str(p));
        }
        n += p.cols();
        rg = rg || p.requires_grad();
    }
    rg = rg && g.grad_enabled();
    std::vector<double> out(m * n);
    int64_t col_off = 0;
    for (const Tensor& p : parts) {
        const int64_t w = p.cols();
        const auto& pd = p.data();
        for (int64_t i = 0; i < m; ++i) {
            std::copy(pd.begin() + i * w, pd.begin() + (i + 1) * w,
                      out.begin() + i * n + col_off);
        }
        col_off += w;
    }
    std::vector<int> ids;
    if (rg) {
        for (const Tensor& p : parts) ids.push_back(p.id());
    }
    Tensor r = OpAccess::emplace(g, m, n, std::move(out), "concat_cols", ids);
    OpAccess::node(g, r.id()).requires_grad = rg;
    if (rg) {
        std::vector<int> all_ids;
        std::vector<int64_t> widths;
        for (const Tensor& p : parts) {
            all_ids.push_back(p.id());
            widths.push_back(p.cols());
        }
        OpAccess::set_backward(g, r.id(), [all_ids, widths, m, n](Graph& gg, int out_id) {
            const auto& og = OpAccess::node(gg, out_id).grad;
            int64_t col_off = 0;
            for (size_t pi = 0; pi < all_ids.size(); ++pi) {
                const int64_t w = widths[pi];
                const auto& pn = OpAccess::node(gg, all_ids[pi]);
                if (pn.requires_grad) {
                    auto& gp = grad_of(gg, all_ids[pi]);
                    for (int64_t i = 0; i < m; ++i) {
                        for (int64_t j = 0; j < w; ++j) {
                            gp[i * w + j] += og[i * n + col_off + j];
                        }
                    }
                }
                col_off += w;
            }
        });
    }
    return r;
}

Tensor embedding(const Tensor& table, const std::vector<int>& ids) {
    Graph& g = own_graph(table, "embedding");
    const int64_t v = table.rows(), d = table.cols();
    for (int id : ids) {
        if (id < 0 || id >= v) {
            throw lookup_error("embedding: token id " + std::to_string(id) +
                               " out of range [0," + std::to_string(v) + ")");
        }
    }
    const int64_t t = static_cast<int64_t>(ids.size());
    std::vector<double> out(t * d);
    const auto& td = table.data();
    for (int64_t i = 0; i < t; ++i) {
        std::copy(td.begin() + ids[i] * d, td.begin() + (ids[i] + 1) * d, out.begin() + i * d);
    }
    Tensor r = make_result(g, t, d, std::move(out), "embedding", {&table});
    if (r.requires_grad()) {
        OpAccess::set_backward(g, r.id(), [tid = table.id(), ids, d](Graph& gg, int out_id) {
            const auto& og = OpAccess::node(gg, out_id).grad;
            auto& gt = grad_of(gg, tid);
            for (size_t i = 0; i < ids.size(); ++i) {
                for (int64_t j = 0; j < d; ++j) {
                    gt[ids[i] * d + j] += og[i * d + j];
                }
            }
        });
    }
    return r;
}

Tensor sum(const Tensor& x) {
    Graph& g = own_graph(x, "sum");
    double acc = 0.0;
    for (double v : x.data()) acc += v;
    Tensor r = make_result(g, 1, 1, {acc}, "sum", {&x});
    if (r.requires_grad()) {
        OpAccess::set_backward(g, r.id(), [xid = x.id()](Graph& gg, int out_id) {
            const double og = OpAccess::node(gg, out_id).grad[0];
            auto& gx = grad_of(gg, xid);
            for (double& v : gx) v += og;
        });
    }
    return r;
}

namespace {

// softmax over contiguous strided lanes; lane l reads base + l*inner + i*stride.
void softmax_lanes(const std::vector<double>& in, std::vector<double>& out, int64_t lanes,
                   int64_t len, int64_t lane_stride, int64_t elem_stride) {
    for (int64_t l = 0; l < lanes; ++l) {
        const int64_t base = l * lane_stride;
        double mx = in[base];
        for (int64_t i = 1; i < len; ++i) mx = std::max(mx, in[base + i * elem_stride]);
        double denom = 0.0;
        for (int64_t i = 0; i < len; ++i) {
            const double e = std::exp(in[base + i * elem_stride] - mx);
            out[base + i * elem_stride] = e;
            denom += e;
        }
        for (int64_t i = 0; i < len; ++i) out[base + i * elem_stride] /= denom;
    }
}

}  // namespace

Tensor softmax(const Tensor& x, int axis) {
    Graph& g = own_graph(x, "softmax");
    if (axis != 0 && axis != 1) {
        throw contract_error("softmax: axis must be 0 or 1");
    }
    if (!all_finite(x.data())) {
        throw numeric_error("softmax: input contains NaN or Inf");
    }
    const int64_t m = x.rows(), n = x.cols();
    std::vector<double> out(x.data().size());
    if (axis == 1) {
        softmax_lanes(x.data(), out, m, n, n, 1);
    } else {
        softmax_lanes(x.data(), out, n, m, 1, n);
    }
    Tensor r = make_result(g, m, n, std::move(out), "softmax", {&x});
    if (r.requires_grad()) {
        OpAccess::set_backward(g, r.id(), [xid = x.id(), axis, m, n](Graph& gg, int out_id) {
            const auto& on = OpAccess::node(gg, out_id);
            auto& gx = grad_of(gg, xid);
            const int64_t lanes = axis == 1 ? m : n;
            const int64_t len = axis == 1 ? n : m;
            const int64_t lane_stride = axis == 1 ? n : 1;
            const int64_t elem_stride = axis == 1 ? 1 : n;
            for (int64_t l = 0; l < lanes; ++l) {
                const int64_t base = l * lane_stride;
                double inner = 0.0;
                for (int64_t i = 0; i < len; ++i) {
                    const int64_t k = base + i * elem_stride;
                    inner += on.grad[k] * on.data[k];
                }
                for (int64_t i = 0; i < len; ++i) {
                    const int64_t k = base + i * elem_stride;
                    gx[k] += on.data[k] * (on.grad[k] - inner);
                }
            }
        });
    }
    return r;
}

namespace {

void check_target_row(const std::vector<double>& t, size_t row) {
    double s = 0.0;
    for (double v : t) {
        if (v < 0.0) {
            throw contract_error("cross_entropy: negative target weight in row " +
                                 std::to_string(row));
        }
        s += v;
    }
    if (s == 0.0) {
        throw contract_error("cross_entropy: all-zero target vector in row " +
                             std::to_string(row));
    }
    if (std::abs(s - 1.0) > 1e-6) {
        throw contract_error("cross_entropy: target weights sum to " + std::to_string(s) +
                             " in row " + std::to_string(row));
    }
}

double row_cross_entropy(const double* logits, const double* targets, int64_t n) {
    double mx = logits[0];
    for (int64_t j = 1; j < n; ++j) mx = std::max(mx, logits[j]);
    double denom = 0.0;
    for (int64_t j = 0; j < n; ++j) denom += std::exp(logits[j] - mx);
    const double lse = mx + std::log(denom);
    double ce = 0.0;
    for (int64_t j = 0; j < n; ++j) ce += targets[j] * (lse - logits[j]);
    return ce;
}

}  // namespace

Tensor cross_entropy_rows(const Tensor& logits,
                          const std::vector<std::vector<double>>& targets) {
    Graph& g = own_graph(logits, "cross_entropy_rows");
    const int64_t m = logits.rows(), n = logits.cols();
    if (static_cast<int64_t>(targets.size()) != m) {
        throw shape_error("cross_entropy_rows: " + std::to_string(targets.size()) +
                          " target rows for logits " + shape_str(logits));
    }
    for (int64_t i = 0; i < m; ++i) {
        if (static_cast<int64_t>(targets[i].size()) != n) {
            throw shape_error("cross_entropy_rows: target row " + std::to_string(i) +
                              " has length " + std::to_string(targets[i].size()));
        }
        check_target_row(targets[i], i);
    }
    if (!all_finite(logits.data())) {
        throw numeric_error("cross_entropy_rows: logits contain NaN or Inf");
    }
    const auto& ld = logits.data();
    double total = 0.0;
    for (int64_t i = 0; i < m; ++i) {
        total += row_cross_entropy(ld.data() + i * n, targets[i].data(), n);
    }
    Tensor r = make_result(g, 1, 1, {total / static_cast<double>(m)}, "cross_entropy_rows",
                           {&logits});
    if (r.requires_grad()) {
        OpAccess::set_backward(g, r.id(), [lid = logits.id(), targets, m, n](Graph& gg, int out_id) {
            const double og = OpAccess::node(gg, out_id).grad[0];
            const auto& ln = OpAccess::node(gg, lid);
            auto& gl = grad_of(gg, lid);
            std::vector<double> sm(n);
            for (int64_t i = 0; i < m; ++i) {
                const double* row = ln.data.data() + i * n;
                double mx = row[0];
                for (int64_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
                double denom = 0.0;
                for (int64_t j = 0; j < n; ++j) {
                    sm[j] = std::exp(row[j] - mx);
                    denom += sm[j];
                }
                const double w = og / static_cast<double>(m);
                for (int64_t j = 0; j < n; ++j) {
                    gl[i * n + j] += w * (sm[j] / denom - targets[i][j]);
                }
            }
        });
    }
    return r;
}

Tensor cross_entropy(const Tensor& logits, const std::vector<double>& targets) {
    if (logits.rows() != 1) {
        throw shape_error("cross_entropy: logits must be 1xN, got " + shape_str(logits));
    }
    return cross_entropy_rows(logits, {targets});
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    Graph& g = common_graph(x, gamma, "layer_norm");
    if (beta.graph() != &g) throw contract_error("layer_norm: operands from different graphs");
    const int64_t m = x.rows(), n = x.cols();
    if (gamma.rows() != 1 || gamma.cols() != n || beta.rows() != 1 || beta.cols() != n) {
        throw shape_error("layer_norm: gamma " + shape_str(gamma) + " / beta " + shape_str(beta) +
                          " do not match " + shape_str(x));
    }
    const auto& xd = x.data();
    const auto& gd = gamma.data();
    const auto& bd = beta.data();
    std::vector<double> out(m * n);
    std::vector<double> mean(m), inv_std(m);
    for (int64_t i = 0; i < m; ++i) {
        double mu = 0.0;
        for (int64_t j = 0; j < n; ++j) mu += xd[i * n + j];
        mu /= static_cast<double>(n);
        double var = 0.0;
        for (int64_t j = 0; j < n; ++j) {
            const double d = xd[i * n + j] - mu;
            var += d * d;
        }
        var /= static_cast<double>(n);
        mean[i] = mu;
        inv_std[i] = 1.0 / std::sqrt(var + eps);
        for (int64_t j = 0; j < n; ++j) {
            out[i * n + j] = gd[j] * (xd[i * n + j] - mu) * inv_std[i] + bd[j];
        }
    }
    bool rg = track(g, {&x, &gamma, &beta});
    std::vector<int> ids;
    if (rg) ids = {x.id(), gamma.id(), beta.id()};
    Tensor r = OpAccess::emplace(g, m, n, std::move(out), "layer_norm", ids);
    OpAccess::node(g, r.id()).requires_grad = rg;
    if (rg) {
        OpAccess::set_backward(g, r.id(),
                               [xid = x.id(), gid = gamma.id(), bid = beta.id(), mean, inv_std, m,
                                n](Graph& gg, int out_id) {
            const auto& og = OpAccess::node(gg, out_id).grad;
            const auto& xn = OpAccess::node(gg, xid);
            const auto& gn = OpAccess::node(gg, gid);
            const bool need_x = xn.requires_grad;
            const bool need_g = gn.requires_grad;
            const bool need_b = OpAccess::node(gg, bid).requires_grad;
            for (int64_t i = 0; i < m; ++i) {
                // xhat, and the two row means the x-gradient needs
                double dot_g = 0.0, dot_gx = 0.0;
                for (int64_t j = 0; j < n; ++j) {
                    const double xhat = (xn.data[i * n + j] - mean[i]) * inv_std[i];
                    const double dy = og[i * n + j];
                    const double dyg = dy * gn.data[j];
                    dot_g += dyg;
                    dot_gx += dyg * xhat;
                    if (need_g) grad_of(gg, gid)[j] += dy * xhat;
                    if (need_b) grad_of(gg, bid)[j] += dy;
                }
                if (need_x) {
                    auto& gx = grad_of(gg, xid);
                    const double inv_n = 1.0 / static_cast<double>(n);
                    for (int64_t j = 0; j < n; ++j) {
                        const double xhat = (xn.data[i * n + j] - mean[i]) * inv_std[i];
                        const double dyg = og[i * n + j] * gn.data[j];
                        gx[i * n + j] +=
                            inv_std[i] * (dyg - inv_n * dot_g - xhat * inv_n * dot_gx);
                    }
                }
            }
        });
    }
    return r;
}

Tensor gelu(const Tensor& x) {
    Graph& g = own_graph(x, "gelu");
    std::vector<double> out(x.data());
    for (double& v : out) {
        v = 0.5 * v * (1.0 + std::erf(v / std::numbers::sqrt2));
    }
    Tensor r = make_result(g, x.rows(), x.cols(), std::move(out), "gelu", {&x});
    if (r.requires_grad()) {
        OpAccess::set_backward(g, r.id(), [xid = x.id()](Graph& gg, int out_id) {
            const auto& og = OpAccess::node(gg, out_id).grad;
            const auto& xn = OpAccess::node(gg, xid);
            auto& gx = grad_of(gg, xid);
            constexpr double inv_sqrt_2pi = 0.3989422804014327;
            for (size_t i = 0; i < og.size(); ++i) {
                const double v = xn.data[i];
                const double cdf = 0.5 * (1.0 + std::erf(v / std::numbers::sqrt2));
                const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
                gx[i] += og[i] * (cdf + v * pdf);
            }
        });
    }
    return r;
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v) {
    if (q.cols() != k.cols()) {
        throw shape_error("attention: q " + shape_str(q) + " and k " + shape_str(k) +
                          " key dims disagree");
    }
    if (k.rows() != v.rows()) {
        throw shape_error("attention: k " + shape_str(k) + " and v " + shape_str(v) +
                          " row counts disagree");
    }
    Tensor scores = matmul(q, transpose(k));
    Tensor probs = softmax(scale(scores, 1.0 / std::sqrt(static_cast<double>(q.cols()))), 1);
    return matmul(probs, v);
}

Tensor mean_pool(const Tensor& x) {
    return mean_pool(x, std::vector<double>(x.rows(), 1.0));
}

Tensor mean_pool(const Tensor& x, const std::vector<double>& row_mask) {
    Graph& g = own_graph(x, "mean_pool");
    const int64_t m = x.rows(), n = x.cols();
    if (static_cast<int64_t>(row_mask.size()) != m) {
        throw shape_error("mean_pool: mask length " + std::to_string(row_mask.size()) +
                          " vs rows " + std::to_string(m));
    }
    double count = 0.0;
    for (double w : row_mask) count += w;
    if (count <= 0.0) {
        throw contract_error("mean_pool: mask selects no rows");
    }
    const auto& xd = x.data();
    std::vector<double> out(n, 0.0);
    for (int64_t i = 0; i < m; ++i) {
        if (row_mask[i] == 0.0) continue;
        for (int64_t j = 0; j < n; ++j) out[j] += row_mask[i] * xd[i * n + j];
    }
    for (double& v : out) v /= count;
    Tensor r = make_result(g, 1, n, std::move(out), "mean_pool", {&x});
    if (r.requires_grad()) {
        OpAccess::set_backward(g, r.id(), [xid = x.id(), row_mask, count, m, n](Graph& gg,
                                                                               int out_id) {
            const auto& og = OpAccess::node(gg, out_id).grad;
            auto& gx = grad_of(gg, xid);
            for (int64_t i = 0; i < m; ++i) {
                if (row_mask[i] == 0.0) continue;
                const double w = row_mask[i] / count;
                for (int64_t j = 0; j < n; ++j) gx[i * n + j] += w * og[j];
            }
        });
    }
    return r;
}

Tensor l2_normalize(const Tensor& x) {
    Graph& g = own_graph(x, "l2_normalize");
    const int64_t m = x.rows(), n = x.cols();
    const auto& xd = x.data();
    std::vector<double> out(m * n);
    std::vector<double> inv_norm(m);
    for (int64_t i = 0; i < m; ++i) {
        double sq = 0.0;
        for (int64_t j = 0; j < n; ++j) sq += xd[i * n + j] * xd[i * n + j];
        if (sq == 0.0) {
            throw numeric_error("l2_normalize: zero row " + std::to_string(i));
        }
        inv_norm[i] = 1.0 / std::sqrt(sq);
        for (int64_t j = 0; j < n; ++j) out[i * n + j] = xd[i * n + j] * inv_norm[i];
    }
    Tensor r = make_result(g, m, n, std::move(out), "l2_normalize", {&x});
    if (r.requires_grad()) {
        OpAccess::set_backward(g, r.id(), [xid = x.id(), inv_norm, m, n](Graph& gg, int out_id) {
            const auto& on = OpAccess::node(gg, out_id);
            auto& gx = grad_of(gg, xid);
            for (int64_t i = 0; i < m; ++i) {
                double dot = 0.0;
                for (int64_t j = 0; j < n; ++j) {
                    dot += on.grad[i * n + j] * on.data[i * n + j];
                }
                for (int64_t j = 0; j < n; ++j) {
                    gx[i * n + j] +=
                        inv_norm[i] * (on.grad[i * n + j] - dot * on.data[i * n + j]);
                }
            }
        });
    }
    return r;
}

}  // namespace ecor
