#include "madi/graph.hpp"

#include <cmath>
#include <cstring>

#include "madi/kernels.hpp"

namespace madi {

namespace k = kernels;

bool Graph::track(std::initializer_list<Var> ins) const {
    if (!grads_) return false;
    for (Var v : ins)
        if (nodes_[v.id].needs_grad) return true;
    return false;
}

Var Graph::constant(Tensor t) {
    Node n;
    n.val = std::move(t);
    n.op = "constant";
    return {push(std::move(n))};
}

Var Graph::param(ParamTensor& p) {
    auto it = bound_.find(p.name);
    if (it != bound_.end()) return {it->second};
    Node n;
    n.val = p.value;
    n.op = "param";
    n.pname = p.name;
    n.needs_grad = grads_ && !p.frozen;
    int id = push(std::move(n));
    bound_.emplace(p.name, id);
    bound_order_.push_back(id);
    return {id};
}

Var Graph::matmul(Var a, Var b) {
    const Tensor& ta = nd(a).val;
    const Tensor& tb = nd(b).val;
    MADI_CHECK(ta.rank() == 2 && tb.rank() == 2 && ta.dims[1] == tb.dims[0],
               "matmul shape mismatch");
    const int m = ta.dims[0], kk = ta.dims[1], nn = tb.dims[1];
    Node n;
    n.val = Tensor({m, nn});
    k::mm_nn(ta.v.data(), tb.v.data(), n.val.v.data(), m, kk, nn, false);
    n.op = "matmul";
    n.needs_grad = track({a, b});
    if (n.needs_grad) {
        n.bwd = [a, b, m, kk, nn](Graph& g, int self) {
            const Tensor& dy = g.nodes_[self].grad;
            if (g.nodes_[a.id].needs_grad)
                k::mm_nt(dy.v.data(), g.nodes_[b.id].val.v.data(), g.grad_of(a.id).v.data(), m,
                         nn, kk, true);
            if (g.nodes_[b.id].needs_grad)
                k::mm_tn(g.nodes_[a.id].val.v.data(), dy.v.data(), g.grad_of(b.id).v.data(), m,
                         kk, nn, true);
        };
    }
    return {push(std::move(n))};
}

Var Graph::matmul_nt(Var a, Var b) {
    const Tensor& ta = nd(a).val;
    const Tensor& tb = nd(b).val;
    MADI_CHECK(ta.rank() == 2 && tb.rank() == 2 && ta.dims[1] == tb.dims[1],
               "matmul_nt shape mismatch");
    const int m = ta.dims[0], kk = ta.dims[1], nn = tb.dims[0];
    Node n;
    n.val = Tensor({m, nn});
    k::mm_nt(ta.v.data(), tb.v.data(), n.val.v.data(), m, kk, nn, false);
    n.op = "matmul_nt";
    n.needs_grad = track({a, b});
    if (n.needs_grad) {
        n.bwd = [a, b, m, kk, nn](Graph& g, int self) {
            const Tensor& dy = g.nodes_[self].grad;
            if (g.nodes_[a.id].needs_grad)
                k::mm_nn(dy.v.data(), g.nodes_[b.id].val.v.data(), g.grad_of(a.id).v.data(), m,
                         nn, kk, true);
            if (g.nodes_[b.id].needs_grad)
                k::mm_tn(dy.v.data(), g.nodes_[a.id].val.v.data(), g.grad_of(b.id).v.data(), m,
                         nn, kk, true);
        };
    }
    return {push(std::move(n))};
}

Var Graph::affine(Var x, Var w, Var b) {
    const Tensor& tx = nd(x).val;
    const Tensor& tw = nd(w).val;
    const Tensor& tb = nd(b).val;
    MADI_CHECK(tx.rank() == 2 && tw.rank() == 2 && tx.dims[1] == tw.dims[0],
               "affine shape mismatch");
    MADI_CHECK(static_cast<int>(tb.size()) == tw.dims[1], "affine bias mismatch");
    const int m = tx.dims[0], kk = tx.dims[1], nn = tw.dims[1];
    Node n;
    n.val = Tensor({m, nn});
    k::mm_nn(tx.v.data(), tw.v.data(), n.val.v.data(), m, kk, nn, false);
    k::add_bias_rows(n.val.v.data(), tb.v.data(), m, nn);
    n.op = "affine";
    n.needs_grad = track({x, w, b});
    if (n.needs_grad) {
        n.bwd = [x, w, b, m, kk, nn](Graph& g, int self) {
            const Tensor& dy = g.nodes_[self].grad;
            if (g.nodes_[x.id].needs_grad)
                k::mm_nt(dy.v.data(), g.nodes_[w.id].val.v.data(), g.grad_of(x.id).v.data(), m,
                         nn, kk, true);
            if (g.nodes_[w.id].needs_grad)
                k::mm_tn(g.nodes_[x.id].val.v.data(), dy.v.data(), g.grad_of(w.id).v.data(), m,
                         kk, nn, true);
            if (g.nodes_[b.id].needs_grad)
                k::col_sum(dy.v.data(), g.grad_of(b.id).v.data(), m, nn, true);
        };
    }
    return {push(std::move(n))};
}

Var Graph::add(Var a, Var b) {
    const Tensor& ta = nd(a).val;
    const Tensor& tb = nd(b).val;
    MADI_CHECK(ta.dims == tb.dims, "add shape mismatch");
    Node n;
    n.val = ta;
    for (size_t i = 0; i < n.val.size(); ++i) n.val.v[i] += tb.v[i];
    n.op = "add";
    n.needs_grad = track({a, b});
    if (n.needs_grad) {
        n.bwd = [a, b](Graph& g, int self) {
            const Tensor& dy = g.nodes_[self].grad;
            for (Var in : {a, b})
                if (g.nodes_[in.id].needs_grad) {
                    Tensor& dst = g.grad_of(in.id);
                    for (size_t i = 0; i < dy.size(); ++i) dst.v[i] += dy.v[i];
                }
        };
    }
    return {push(std::move(n))};
}

Var Graph::mul(Var a, Var b) {
    const Tensor& ta = nd(a).val;
    const Tensor& tb = nd(b).val;
    MADI_CHECK(ta.dims == tb.dims, "mul shape mismatch");
    Node n;
    n.val = ta;
    for (size_t i = 0; i < n.val.size(); ++i) n.val.v[i] *= tb.v[i];
    n.op = "mul";
    n.needs_grad = track({a, b});
    if (n.needs_grad) {
        n.bwd = [a, b](Graph& g, int self) {
            const Tensor& dy = g.nodes_[self].grad;
            if (g.nodes_[a.id].needs_grad) {
                Tensor& da = g.grad_of(a.id);
                const Tensor& vb = g.nodes_[b.id].val;
                for (size_t i = 0; i < dy.size(); ++i) da.v[i] += dy.v[i] * vb.v[i];
            }
            if (g.nodes_[b.id].needs_grad) {
                Tensor& db = g.grad_of(b.id);
                const Tensor& va = g.nodes_[a.id].val;
                for (size_t i = 0; i < dy.size(); ++i) db.v[i] += dy.v[i] * va.v[i];
            }
        };
    }
    return {push(std::move(n))};
}

Var Graph::scale(Var a, double c) {
    Node n;
    n.val = nd(a).val;
    for (double& x : n.val.v) x *= c;
    n.op = "scale";
    n.needs_grad = track({a});
    if (n.needs_grad) {
        n.bwd = [a, c](Graph& g, int self) {
            const Tensor& dy = g.nodes_[self].grad;
            Tensor& da = g.grad_of(a.id);
            for (size_t i = 0; i < dy.size(); ++i) da.v[i] += c * dy.v[i];
        };
    }
    return {push(std::move(n))};
}

Var Graph::add_rows(Var x, Var bias) {
    const Tensor& tx = nd(x).val;
    const Tensor& tb = nd(bias).val;
    MADI_CHECK(tx.rank() == 2 && static_cast<int>(tb.size()) == tx.dims[1],
               "add_rows shape mismatch");
    Node n;
    n.val = tx;
    k::add_bias_rows(n.val.v.data(), tb.v.data(), tx.dims[0], tx.dims[1]);
    n.op = "add_rows";
    n.needs_grad = track({x, bias});
    if (n.needs_grad) {
        const int rows = tx.dims[0], cols = tx.dims[1];
        n.bwd = [x, bias, rows, cols](Graph& g, int self) {
            const Tensor& dy = g.nodes_[self].grad;
            if (g.nodes_[x.id].needs_grad) {
                Tensor& dx = g.grad_of(x.id);
                for (size_t i = 0; i < dy.size(); ++i) dx.v[i] += dy.v[i];
            }
            if (g.nodes_[bias.id].needs_grad)
                k::col_sum(dy.v.data(), g.grad_of(bias.id).v.data(), rows, cols, true);
        };
    }
    return {push(std::move(n))};
}

Var Graph::concat_rows(const std::vector<Var>& parts) {
    MADI_CHECK(!parts.empty(), "concat_rows of nothing");
    const int cols = nd(parts[0]).val.dims[1];
    int rows = 0;
    for (Var p : parts) {
        MADI_CHECK(nd(p).val.rank() == 2 && nd(p).val.dims[1] == cols, "concat_rows col mismatch");
        rows += nd(p).val.dims[0];
    }
    Node n;
    n.val = Tensor({rows, cols});
    size_t off = 0;
    for (Var p : parts) {
        const Tensor& t = nd(p).val;
        std::memcpy(n.val.v.data() + off, t.v.data(), t.size() * sizeof(double));
        off += t.size();
    }
    n.op = "concat_rows";
    bool need = false;
    for (Var p : parts) need = need || nd(p).needs_grad;
    n.needs_grad = grads_ && need;
    if (n.needs_grad) {
        std::vector<Var> ps = parts;
        n.bwd = [ps](Graph& g, int self) {
            const Tensor& dy = g.nodes_[self].grad;
            size_t off = 0;
            for (Var p : ps) {
                const size_t sz = g.nodes_[p.id].val.size();
                if (g.nodes_[p.id].needs_grad) {
                    Tensor& dp = g.grad_of(p.id);
                    for (size_t i = 0; i < sz; ++i) dp.v[i] += dy.v[off + i];
                }
                off += sz;
            }
        };
    }
    return {push(std::move(n))};
}

Var Graph::concat_cols(const std::vector<Var>& parts) {
    MADI_CHECK(!parts.empty(), "concat_cols of nothing");
    const int rows = nd(parts[0]).val.dims[0];
    int cols = 0;
    for (Var p : parts) {
        MADI_CHECK(nd(p).val.rank() == 2 && nd(p).val.dims[0] == rows, "concat_cols row mismatch");
        cols += nd(p).val.dims[1];
    }
    Node n;
    n.val = Tensor({rows, cols});
    int c0 = 0;
    for (Var p : parts) {
        const Tensor& t = nd(p).val;
        const int pc = t.dims[1];
        for (int r = 0; r < rows; ++r)
            std::memcpy(n.val.v.data() + static_cast<size_t>(r) * cols + c0,
                        t.v.data() + static_cast<size_t>(r) * pc, pc * sizeof(double));
        c0 += pc;
    }
    n.op = "concat_cols";
    bool need = false;
    for (Var p : parts) need = need || nd(p).needs_grad;
    n.needs_grad = grads_ && need;
    if (n.needs_grad) {
        std::vector<Var> ps = parts;
        n.bwd = [ps, rows, cols](Graph& g, int self) {
            const Tensor& dy = g.nodes_[self].grad;
            int c0 = 0;
            for (Var p : ps) {
                const int pc = g.nodes_[p.id].val.dims[1];
                if (g.nodes_[p.id].needs_grad) {
                    Tensor& dp = g.grad_of(p.id);
                    for (int r = 0; r < rows; ++r)
                        for (int c = 0; c < pc; ++c)
                            dp.v[static_cast<size_t>(r) * pc + c] +=
                                dy.v[static_cast<size_t>(r) * cols + c0 + c];
                }
                c0 += pc;
            }
        };
    }
    return {push(std::move(n))};
}

Var Graph::slice_rows(Var x, int r0, int r1) {
    const Tensor& tx = nd(x).val;
    MADI_CHECK(tx.rank() == 2 && 0 <= r0 && r0 < r1 && r1 <= tx.dims[0], "slice_rows range");
    const int cols = tx.dims[1];
    Node n;
    n.val = Tensor({r1 - r0, cols});
    std::memcpy(n.val.v.data(), tx.v.data() + static_cast<size_t>(r0) * cols,
                n.val.size() * sizeof(double));
    n.op = "slice_rows";
    n.needs_grad = track({x});
    if (n.needs_grad) {
        n.bwd = [x, r0, cols](Graph& g, int self) {
            const Tensor& dy = g.nodes_[self].grad;
            Tensor& dx = g.grad_of(x.id);
            double* base = dx.v.data() + static_cast<size_t>(r0) * cols;
            for (size_t i = 0; i < dy.size(); ++i) base[i] += dy.v[i];
        };
    }
    return {push(std::move(n))};
}

Var Graph::slice_cols(Var x, int c0, int c1) {
    const Tensor& tx = nd(x).val;
    MADI_CHECK(tx.rank() == 2 && 0 <= c0 && c0 < c1 && c1 <= tx.dims[1], "slice_cols range");
    const int rows = tx.dims[0], cols = tx.dims[1], w = c1 - c0;
    Node n;
    n.val = Tensor({rows, w});
    for (int r = 0; r < rows; ++r)
        std::memcpy(n.val.v.data() + static_cast<size_t>(r) * w,
                    tx.v.data() + static_cast<size_t>(r) * cols + c0, w * sizeof(double));
    n.op = "slice_cols";
    n.needs_grad = track({x});
    if (n.needs_grad) {
        n.bwd = [x, c0, rows, cols, w](Graph& g, int self) {
            const Tensor& dy = g.nodes_[self].grad;
            Tensor& dx = g.grad_of(x.id);
            for (int r = 0; r < rows; ++r)
                for (int c = 0; c < w; ++c)
                    dx.v[static_cast<size_t>(r) * cols + c0 + c] +=
                        dy.v[static_cast<size_t>(r) * w + c];
        };
    }
    return {push(std::move(n))};
}

Var Graph::softmax_rows(Var x) {
    const Tensor& tx = nd(x).val;
    MADI_CHECK(tx.rank() == 2, "softmax_rows wants a matrix");
    Node n;
    n.val = Tensor(tx.dims);
    k::softmax_rows(tx.v.data(), n.val.v.data(), tx.dims[0], tx.dims[1]);
    n.op = "softmax_rows";
    n.needs_grad = track({x});
    if (n.needs_grad) {
        const int rows = tx.dims[0], cols = tx.dims[1];
        n.bwd = [x, rows, cols](Graph& g, int self) {
            k::softmax_rows_backward(g.nodes_[self].val.v.data(), g.nodes_[self].grad.v.data(),
                                     g.grad_of(x.id).v.data(), rows, cols, true);
        };
    }
    return {push(std::move(n))};
}

Var Graph::log_softmax_rows(Var x) {
    const Tensor& tx = nd(x).val;
    MADI_CHECK(tx.rank() == 2, "log_softmax_rows wants a matrix");
    Node n;
    n.val = Tensor(tx.dims);
    k::log_softmax_rows(tx.v.data(), n.val.v.data(), tx.dims[0], tx.dims[1]);
    n.op = "log_softmax_rows";
    n.needs_grad = track({x});
    if (n.needs_grad) {
        const int rows = tx.dims[0], cols = tx.dims[1];
        n.bwd = [x, rows, cols](Graph& g, int self) {
            k::log_softmax_rows_backward(g.nodes_[self].val.v.data(), g.nodes_[self].grad.v.data(),
                                         g.grad_of(x.id).v.data(), rows, cols, true);
        };
    }
    return {push(std::move(n))};
}

Var Graph::layer_norm(Var x, Var gain, Var bias, double eps) {
    const Tensor& tx = nd(x).val;
    MADI_CHECK(tx.rank() == 2, "layer_norm wants a matrix");
    const int rows = tx.dims[0], cols = tx.dims[1];
    MADI_CHECK(static_cast<int>(nd(gain).val.size()) == cols &&
                   static_cast<int>(nd(bias).val.size()) == cols,
               "layer_norm gain/bias size");
    Node n;
    n.val = Tensor(tx.dims);
    n.aux = Tensor(tx.dims);       // xhat
    n.aux2 = Tensor({rows});       // rstd
    k::layer_norm_rows(tx.v.data(), nd(gain).val.v.data(), nd(bias).val.v.data(), n.val.v.data(),
                       n.aux.v.data(), n.aux2.v.data(), rows, cols, eps);
    n.op = "layer_norm";
    n.needs_grad = track({x, gain, bias});
    if (n.needs_grad) {
        n.bwd = [x, gain, bias, rows, cols](Graph& g, int self) {
            Node& sn = g.nodes_[self];
            // Scratch buffers when a leg is frozen; kernel always writes all three.
            Tensor sdx, sdg, sdb;
            double* dx;
            double* dg;
            double* db;
            if (g.nodes_[x.id].needs_grad)
                dx = g.grad_of(x.id).v.data();
            else {
                sdx = Tensor({rows, cols});
                dx = sdx.v.data();
            }
            if (g.nodes_[gain.id].needs_grad)
                dg = g.grad_of(gain.id).v.data();
            else {
                sdg = Tensor({cols});
                dg = sdg.v.data();
            }
            if (g.nodes_[bias.id].needs_grad)
                db = g.grad_of(bias.id).v.data();
            else {
                sdb = Tensor({cols});
                db = sdb.v.data();
            }
            k::layer_norm_rows_backward(sn.aux.v.data(), sn.aux2.v.data(),
                                        g.nodes_[gain.id].val.v.data(), sn.grad.v.data(), dx, dg,
                                        db, rows, cols);
        };
    }
    return {push(std::move(n))};
}

Var Graph::gelu(Var x) {
    const Tensor& tx = nd(x).val;
    Node n;
    n.val = Tensor(tx.dims);
    k::gelu(tx.v.data(), n.val.v.data(), tx.size());
    n.op = "gelu";
    n.needs_grad = track({x});
    if (n.needs_grad) {
        n.bwd = [x](Graph& g, int self) {
            const Tensor& dy = g.nodes_[self].grad;
            k::gelu_backward(g.nodes_[x.id].val.v.data(), dy.v.data(), g.grad_of(x.id).v.data(),
                             dy.size(), true);
        };
    }
    return {push(std::move(n))};
}

Var Graph::logistic(Var x) {
    const Tensor& tx = nd(x).val;
    Node n;
    n.val = Tensor(tx.dims);
    k::logistic(tx.v.data(), n.val.v.data(), tx.size());
    n.op = "logistic";
    n.needs_grad = track({x});
    if (n.needs_grad) {
        n.bwd = [x](Graph& g, int self) {
            const Tensor& dy = g.nodes_[self].grad;
            k::logistic_backward(g.nodes_[self].val.v.data(), dy.v.data(),
                                 g.grad_of(x.id).v.data(), dy.size(), true);
        };
    }
    return {push(std::move(n))};
}

Var Graph::softplus(Var x) {
    const Tensor& tx = nd(x).val;
    Node n;
    n.val = Tensor(tx.dims);
    for (size_t i = 0; i < tx.size(); ++i) {
        const double v = tx.v[i];
        n.val.v[i] = std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v)));
    }
    n.op = "softplus";
    n.needs_grad = track({x});
    if (n.needs_grad) {
        n.bwd = [x](Graph& g, int self) {
            const Tensor& dy = g.nodes_[self].grad;
            const Tensor& vx = g.nodes_[x.id].val;
            Tensor& dx = g.grad_of(x.id);
            for (size_t i = 0; i < dy.size(); ++i)
                dx.v[i] += dy.v[i] / (1.0 + std::exp(-vx.v[i]));
        };
    }
    return {push(std::move(n))};
}

Var Graph::conv1d(Var x, Var w, Var b, int stride, int pad) {
    const Tensor& tx = nd(x).val;
    const Tensor& tw = nd(w).val;
    const Tensor& tb = nd(b).val;
    MADI_CHECK(tx.rank() == 2 && tw.rank() == 3, "conv1d shapes");
    const int frames = tx.dims[0], in_ch = tx.dims[1];
    const int ksize = tw.dims[0], out_ch = tw.dims[2];
    MADI_CHECK(tw.dims[1] == in_ch && static_cast<int>(tb.size()) == out_ch, "conv1d channels");
    const int out_frames = k::conv1d_out_frames(frames, ksize, stride, pad);
    MADI_CHECK(out_frames > 0, "conv1d output empty");
    Node n;
    n.val = Tensor({out_frames, out_ch});
    k::conv1d(tx.v.data(), tw.v.data(), tb.v.data(), n.val.v.data(), frames, in_ch, out_ch, ksize,
              stride, pad);
    n.op = "conv1d";
    n.needs_grad = track({x, w, b});
    if (n.needs_grad) {
        n.bwd = [x, w, b, frames, in_ch, out_ch, ksize, stride, pad](Graph& g, int self) {
            Tensor sdx, sdw, sdb;
            double* dx;
            double* dw;
            double* db;
            if (g.nodes_[x.id].needs_grad)
                dx = g.grad_of(x.id).v.data();
            else {
                sdx = Tensor({frames, in_ch});
                dx = sdx.v.data();
            }
            if (g.nodes_[w.id].needs_grad)
                dw = g.grad_of(w.id).v.data();
            else {
                sdw = Tensor({ksize, in_ch, out_ch});
                dw = sdw.v.data();
            }
            if (g.nodes_[b.id].needs_grad)
                db = g.grad_of(b.id).v.data();
            else {
                sdb = Tensor({out_ch});
                db = sdb.v.data();
            }
            k::conv1d_backward(g.nodes_[x.id].val.v.data(), g.nodes_[w.id].val.v.data(),
                               g.nodes_[self].grad.v.data(), dx, dw, db, frames, in_ch, out_ch,
                               ksize, stride, pad);
        };
    }
    return {push(std::move(n))};
}

Var Graph::embed_rows(Var table, std::vector<int> ids) {
    const Tensor& tt = nd(table).val;
    MADI_CHECK(tt.rank() == 2, "embed_rows wants a matrix table");
    MADI_CHECK(!ids.empty(), "embed_rows with no ids");
    const int d = tt.dims[1];
    Node n;
    n.val = Tensor({static_cast<int>(ids.size()), d});
    for (size_t i = 0; i < ids.size(); ++i) {
        MADI_CHECK(ids[i] >= 0 && ids[i] < tt.dims[0], "embed_rows id out of range");
        std::memcpy(n.val.v.data() + i * d, tt.v.data() + static_cast<size_t>(ids[i]) * d,
                    d * sizeof(double));
    }
    n.op = "embed_rows";
    n.needs_grad = track({table});
    if (n.needs_grad) {
        n.bwd = [table, ids, d](Graph& g, int self) {
            const Tensor& dy = g.nodes_[self].grad;
            Tensor& dt = g.grad_of(table.id);
            for (size_t i = 0; i < ids.size(); ++i) {
                double* row = dt.v.data() + static_cast<size_t>(ids[i]) * d;
                const double* src = dy.v.data() + i * d;
                for (int c = 0; c < d; ++c) row[c] += src[c];
            }
        };
    }
    return {push(std::move(n))};
}

Var Graph::gather_weighted(Var x, std::vector<std::tuple<int, int, double>> entries) {
    const Tensor& tx = nd(x).val;
    MADI_CHECK(tx.rank() == 2, "gather_weighted wants a matrix");
    double acc = 0.0;
    for (const auto& [r, c, w] : entries) {
        MADI_CHECK(r >= 0 && r < tx.dims[0] && c >= 0 && c < tx.dims[1],
                   "gather_weighted index out of range");
        acc += w * tx.at(r, c);
    }
    Node n;
    n.val = Tensor::scalar(acc);
    n.op = "gather_weighted";
    n.needs_grad = track({x});
    if (n.needs_grad) {
        n.bwd = [x, entries](Graph& g, int self) {
            const double dy = g.nodes_[self].grad.v[0];
            Tensor& dx = g.grad_of(x.id);
            const int cols = dx.dims[1];
            for (const auto& [r, c, w] : entries)
                dx.v[static_cast<size_t>(r) * cols + c] += w * dy;
        };
    }
    return {push(std::move(n))};
}

Var Graph::add_scalars(const std::vector<Var>& xs) {
    MADI_CHECK(!xs.empty(), "add_scalars of nothing");
    double acc = 0.0;
    for (Var v : xs) acc += scalar(v);
    Node n;
    n.val = Tensor::scalar(acc);
    n.op = "add_scalars";
    bool need = false;
    for (Var v : xs) need = need || nd(v).needs_grad;
    n.needs_grad = grads_ && need;
    if (n.needs_grad) {
        std::vector<Var> vs = xs;
        n.bwd = [vs](Graph& g, int self) {
            const double dy = g.nodes_[self].grad.v[0];
            for (Var v : vs)
                if (g.nodes_[v.id].needs_grad) g.grad_of(v.id).v[0] += dy;
        };
    }
    return {push(std::move(n))};
}

Var Graph::mean_scalars(const std::vector<Var>& xs) {
    Var s = add_scalars(xs);
    return scale(s, 1.0 / static_cast<double>(xs.size()));
}

void Graph::backward(Var root, double seed) {
    MADI_CHECK(root.valid() && nd(root).val.size() == 1, "backward root must be scalar");
    grad_of(root.id).v[0] += seed;
    for (int id = root.id; id >= 0; --id) {
        Node& n = nodes_[id];
        if (n.bwd && n.needs_grad && !n.grad.v.empty()) n.bwd(*this, id);
    }
}

GradMap Graph::take_param_grads() {
    GradMap out;
    for (int id : bound_order_) {
        Node& n = nodes_[id];
        if (!n.needs_grad) continue;
        if (n.grad.v.empty()) n.grad = Tensor(n.val.dims);
        out[n.pname] = std::move(n.grad);
        n.grad = Tensor();
    }
    return out;
}

std::string Graph::first_nonfinite_name() const {
    for (size_t id = 0; id < nodes_.size(); ++id) {
        const Node& n = nodes_[id];
        if (!all_finite(n.val))
            return n.pname.empty() ? std::string(n.op) + "#" + std::to_string(id) : n.pname;
    }
    return "";
}

std::pair<double, GradMap> evaluate_and_grad(const std::function<Var(Graph&)>& builder) {
    Graph g(true);
    Var loss = builder(g);
    const double value = g.scalar(loss);
    if (!std::isfinite(value)) {
        std::string name = g.first_nonfinite_name();
        throw numeric_error("non-finite loss", name.empty() ? "loss" : name);
    }
    g.backward(loss);
    return {value, g.take_param_grads()};
}

double evaluate_value(const std::function<Var(Graph&)>& builder) {
    Graph g(false);
    Var loss = builder(g);
    return g.scalar(loss);
}

}  // namespace madi
