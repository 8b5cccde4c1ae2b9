#pragma once

#include <functional>
#include <string>
#include <tuple>
#include <vector>

#include "madi/model.hpp"
#include "madi/tensor.hpp"

namespace madi {

struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

// Reverse-mode tape. One graph per loss evaluation; nodes are created in
// topological order, backward walks them in reverse. When grads are disabled
// (inference) no backward closures are recorded.
class Graph {
  public:
    explicit Graph(bool enable_grads = true) : grads_(enable_grads) {}

    bool grads_enabled() const { return grads_; }

    Var constant(Tensor t);
    Var param(ParamTensor& p);

    Var matmul(Var a, Var b);     // [m x k] * [k x n]
    Var matmul_nt(Var a, Var b);  // [m x k] * [n x k]^T
    Var affine(Var x, Var w, Var b);  // x*w + b broadcast over rows
    Var add(Var a, Var b);
    Var mul(Var a, Var b);
    Var scale(Var a, double c);
    Var add_rows(Var x, Var bias);
    Var concat_rows(const std::vector<Var>& parts);
    Var concat_cols(const std::vector<Var>& parts);
    Var slice_rows(Var x, int r0, int r1);
    Var slice_cols(Var x, int c0, int c1);
    Var softmax_rows(Var x);
    Var log_softmax_rows(Var x);
    Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);
    Var gelu(Var x);
    Var logistic(Var x);
    Var softplus(Var x);  // log(1 + exp(x)), numerically stable
    Var conv1d(Var x, Var w, Var b, int stride, int pad);
    Var embed_rows(Var table, std::vector<int> ids);
    // sum of w * x[r][c] over the given (row, col, weight) entries -> scalar
    Var gather_weighted(Var x, std::vector<std::tuple<int, int, double>> entries);
    Var add_scalars(const std::vector<Var>& xs);
    Var mean_scalars(const std::vector<Var>& xs);

    const Tensor& value(Var v) const { return nodes_[v.id].val; }
    double scalar(Var v) const {
        MADI_CHECK(nodes_[v.id].val.size() == 1, "scalar() on non-scalar node");
        return nodes_[v.id].val.v[0];
    }

    void backward(Var root, double seed = 1.0);
    // Accumulated grads of every bound non-frozen parameter, keyed by name.
    GradMap take_param_grads();

    // Name of the first node (creation order) holding a non-finite value, or
    // the empty string. Used to attribute numeric failures.
    std::string first_nonfinite_name() const;

    size_t node_count() const { return nodes_.size(); }

  private:
    struct Node {
        Tensor val;
        Tensor grad;
        Tensor aux;   // op-specific saved state (layernorm xhat, ...)
        Tensor aux2;  // (layernorm rstd)
        const char* op = "";
        std::string pname;  // non-empty for parameter leaves
        bool needs_grad = false;
        std::function<void(Graph&, int)> bwd;
    };

    int push(Node n) {
        nodes_.push_back(std::move(n));
        return static_cast<int>(nodes_.size()) - 1;
    }
    Node& nd(Var v) { return nodes_[v.id]; }
    const Node& nd(Var v) const { return nodes_[v.id]; }
    Tensor& grad_of(int id) {
        Node& n = nodes_[id];
        if (n.grad.v.empty()) n.grad = Tensor(n.val.dims);
        return n.grad;
    }
    bool track(std::initializer_list<Var> ins) const;

    bool grads_;
    std::vector<Node> nodes_;
    std::map<std::string, int> bound_;  // param name -> node id (bind once)
    std::vector<int> bound_order_;
};

// Runs builder under a fresh graph, checks the loss is finite (throws
// numeric_error naming the first offending tensor otherwise), backprops and
// returns the loss value plus grads of all non-frozen bound parameters.
std::pair<double, GradMap> evaluate_and_grad(const std::function<Var(Graph&)>& builder);

// Value-only evaluation (no tape).
double evaluate_value(const std::function<Var(Graph&)>& builder);

}  // namespace madi
