#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ecor/errors.hpp"

namespace ecor {

class Graph;

/// Handle to one node of a Graph. Values are immutable after the op that
/// produced them; gradients are filled in by Graph::backward.
class Tensor {
public:
    Tensor() = default;

    int64_t rows() const;
    int64_t cols() const;
    int64_t size() const { return rows() * cols(); }
    const std::vector<double>& data() const;
    double at(int64_t r, int64_t c) const;
    double scalar() const;

    /// Accumulated gradient; all zeros for leaves the loss never reached.
    const std::vector<double>& grad() const;
    bool requires_grad() const;

    int id() const { return id_; }
    Graph* graph() const { return graph_; }
    bool valid() const { return graph_ != nullptr; }

private:
    friend class Graph;
    Tensor(Graph* g, int id) : graph_(g), id_(id) {}

    Graph* graph_ = nullptr;
    int id_ = -1;
};

/// Define-by-run tape. Nodes are appended in execution order, which is a
/// topological order by construction; backward walks it in reverse. One
/// graph instance is single-threaded, distinct instances are independent.
class Graph {
public:
    explicit Graph(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    Tensor leaf(int64_t rows, int64_t cols, std::vector<double> data,
                bool requires_grad = false);
    Tensor constant(int64_t rows, int64_t cols, double fill);

    /// Reverse accumulation from a scalar loss. Gradients of earlier calls
    /// on the same graph are cleared first.
    void backward(const Tensor& loss);

    int size() const { return static_cast<int>(nodes_.size()); }
    bool grad_enabled() const { return grad_enabled_; }
    const char* op_name(int id) const { return nodes_[id].op; }

private:
    struct Node {
        int64_t rows = 0;
        int64_t cols = 0;
        std::vector<double> data;
        std::vector<double> grad;
        bool requires_grad = false;
        std::vector<int> inputs;
        std::function<void(Graph&, int)> backward_fn;
        const char* op = "leaf";
    };

    Node& node(int id) { return nodes_[id]; }
    const Node& node(int id) const { return nodes_[id]; }
    void ensure_grad(int id);
    Tensor emplace(int64_t rows, int64_t cols, std::vector<double> data,
                   const char* op, std::vector<int> inputs);

    std::vector<Node> nodes_;
    bool grad_enabled_ = true;

    friend class Tensor;
    friend struct OpAccess;
};

// ---- ops ------------------------------------------------------------------
// All tensors are rank-2; vectors are 1xN and scalars 1x1.

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor add_bias(const Tensor& x, const Tensor& bias);  // bias is 1xN, added to every row
Tensor scale(const Tensor& x, double c);
Tensor mul(const Tensor& a, const Tensor& b);           // elementwise
Tensor mul_scalar(const Tensor& x, const Tensor& s);    // s is 1x1
Tensor exp_elem(const Tensor& x);
Tensor transpose(const Tensor& x);
Tensor slice_rows(const Tensor& x, int64_t r0, int64_t r1);
Tensor slice_cols(const Tensor& x, int64_t c0, int64_t c1);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor embedding(const Tensor& table, const std::vector<int>& ids);
Tensor sum(const Tensor& x);

/// Max-subtracted softmax along axis (1 = per row, 0 = per column).
Tensor softmax(const Tensor& x, int axis = 1);

/// -sum(targets * log softmax(logits)) for a 1xN logit row, log-sum-exp
/// stabilized. Target weights must be nonnegative and sum to 1.
Tensor cross_entropy(const Tensor& logits, const std::vector<double>& targets);

/// Mean over rows of the per-row cross entropy; targets[i] applies to row i.
Tensor cross_entropy_rows(const Tensor& logits,
                          const std::vector<std::vector<double>>& targets);

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-5);
Tensor gelu(const Tensor& x);

/// softmax(q k^T / sqrt(d_k)) v, composed from the primitives above.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v);

Tensor mean_pool(const Tensor& x);  // mean over rows -> 1xN
Tensor mean_pool(const Tensor& x, const std::vector<double>& row_mask);
Tensor l2_normalize(const Tensor& x);  // per row

std::string shape_str(const Tensor& t);

}  // namespace ecor
