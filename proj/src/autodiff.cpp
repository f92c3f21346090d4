#include "dyadit/autodiff.hpp"

#include <cmath>
#include <unordered_set>

namespace dyadit::ad {

namespace {

constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;

thread_local bool g_no_grad = false;

Var make_node(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backprop) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    bool needs = false;
    if (!g_no_grad)
        for (const auto& p : parents) needs = needs || p->requires_grad;
    n->requires_grad = needs;
    if (needs) {
        n->parents = std::move(parents);
        n->backprop = std::move(backprop);
    }
    return n;
}

void require_rows(const Var& x, const char* what) {
    if (x->value.rank() != 2) throw ShapeError(std::string(what) + ": expected 2-D tensor");
}

void require_row_vector(const Var& v, const Var& x, const char* what) {
    if (v->value.rank() != 2 || v->value.dim(0) != 1 || v->value.dim(1) != x->value.dim(1))
        throw ShapeError(std::string(what) + ": expected [1," + std::to_string(x->value.dim(1)) +
                         "] row vector, got " + v->value.shape_str());
}

}  // namespace

Tensor& Node::ensure_grad() {
    if (grad.empty() && value.size() > 0) grad = Tensor(value.shape());
    return grad;
}

void Node::accumulate(const Tensor& g) {
    Tensor& dst = ensure_grad();
    const double* src = g.data();
    double* d = dst.data();
    for (std::int64_t i = 0; i < dst.size(); ++i) d[i] += src[i];
}

NoGradGuard::NoGradGuard() : prev_(g_no_grad) { g_no_grad = true; }
NoGradGuard::~NoGradGuard() { g_no_grad = prev_; }

Var constant(Tensor value) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad = false;
    return n;
}

Var parameter(Tensor value) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad = true;
    return n;
}

void backward(const Var& root) {
    if (root->value.size() != 1) throw ShapeError("backward: root must be scalar");
    if (!root->requires_grad) return;

    // Iterative post-order DFS, then reverse for the backward sweep.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(root.get(), 0);
    visited.insert(root.get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            Node* p = node->parents[idx].get();
            ++idx;
            if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    root->ensure_grad().fill(1.0);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backprop && !n->grad.empty()) n->backprop(*n);
    }
}

Var add(const Var& a, const Var& b) {
    check_same_shape(a->value, b->value, "add");
    Tensor out = a->value;
    const double* bd = b->value.data();
    double* od = out.data();
    for (std::int64_t i = 0; i < out.size(); ++i) od[i] += bd[i];
    return make_node(std::move(out), {a, b}, [](Node& n) {
        if (n.parents[0]->requires_grad) n.parents[0]->accumulate(n.grad);
        if (n.parents[1]->requires_grad) n.parents[1]->accumulate(n.grad);
    });
}

Var sub(const Var& a, const Var& b) {
    check_same_shape(a->value, b->value, "sub");
    Tensor out = a->value;
    const double* bd = b->value.data();
    double* od = out.data();
    for (std::int64_t i = 0; i < out.size(); ++i) od[i] -= bd[i];
    return make_node(std::move(out), {a, b}, [](Node& n) {
        if (n.parents[0]->requires_grad) n.parents[0]->accumulate(n.grad);
        if (n.parents[1]->requires_grad) {
            Tensor& g = n.parents[1]->ensure_grad();
            const double* src = n.grad.data();
            double* d = g.data();
            for (std::int64_t i = 0; i < g.size(); ++i) d[i] -= src[i];
        }
    });
}

Var mul(const Var& a, const Var& b) {
    check_same_shape(a->value, b->value, "mul");
    Tensor out = a->value;
    const double* bd = b->value.data();
    double* od = out.data();
    for (std::int64_t i = 0; i < out.size(); ++i) od[i] *= bd[i];
    return make_node(std::move(out), {a, b}, [](Node& n) {
        const Tensor& av = n.parents[0]->value;
        const Tensor& bv = n.parents[1]->value;
        if (n.parents[0]->requires_grad) {
            Tensor& g = n.parents[0]->ensure_grad();
            for (std::int64_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * bv[i];
        }
        if (n.parents[1]->requires_grad) {
            Tensor& g = n.parents[1]->ensure_grad();
            for (std::int64_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * av[i];
        }
    });
}

Var scale(const Var& a, double s) {
    Tensor out = a->value;
    for (auto& x : out.vec()) x *= s;
    return make_node(std::move(out), {a}, [s](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        Tensor& g = n.parents[0]->ensure_grad();
        for (std::int64_t i = 0; i < g.size(); ++i) g[i] += s * n.grad[i];
    });
}

Var add_scalar(const Var& a, double s) {
    Tensor out = a->value;
    for (auto& x : out.vec()) x += s;
    return make_node(std::move(out), {a}, [](Node& n) {
        if (n.parents[0]->requires_grad) n.parents[0]->accumulate(n.grad);
    });
}

Var add_bias_row(const Var& x, const Var& v) {
    require_rows(x, "add_bias_row");
    require_row_vector(v, x, "add_bias_row");
    const std::int64_t t = x->value.dim(0), c = x->value.dim(1);
    Tensor out = x->value;
    const double* vd = v->value.data();
    for (std::int64_t i = 0; i < t; ++i) {
        double* row = out.data() + i * c;
        for (std::int64_t j = 0; j < c; ++j) row[j] += vd[j];
    }
    return make_node(std::move(out), {x, v}, [t, c](Node& n) {
        if (n.parents[0]->requires_grad) n.parents[0]->accumulate(n.grad);
        if (n.parents[1]->requires_grad) {
            Tensor& g = n.parents[1]->ensure_grad();
            for (std::int64_t i = 0; i < t; ++i) {
                const double* row = n.grad.data() + i * c;
                for (std::int64_t j = 0; j < c; ++j) g[j] += row[j];
            }
        }
    });
}

Var mul_row(const Var& x, const Var& v) {
    require_rows(x, "mul_row");
    require_row_vector(v, x, "mul_row");
    const std::int64_t t = x->value.dim(0), c = x->value.dim(1);
    Tensor out = x->value;
    const double* vd = v->value.data();
    for (std::int64_t i = 0; i < t; ++i) {
        double* row = out.data() + i * c;
        for (std::int64_t j = 0; j < c; ++j) row[j] *= vd[j];
    }
    return make_node(std::move(out), {x, v}, [t, c](Node& n) {
        const Tensor& xv = n.parents[0]->value;
        const Tensor& vv = n.parents[1]->value;
        if (n.parents[0]->requires_grad) {
            Tensor& g = n.parents[0]->ensure_grad();
            for (std::int64_t i = 0; i < t; ++i)
                for (std::int64_t j = 0; j < c; ++j) g[i * c + j] += n.grad[i * c + j] * vv[j];
        }
        if (n.parents[1]->requires_grad) {
            Tensor& g = n.parents[1]->ensure_grad();
            for (std::int64_t i = 0; i < t; ++i)
                for (std::int64_t j = 0; j < c; ++j) g[j] += n.grad[i * c + j] * xv[i * c + j];
        }
    });
}

Var broadcast_row(const Var& v, std::int64_t rows) {
    if (v->value.rank() != 2 || v->value.dim(0) != 1) throw ShapeError("broadcast_row: expected [1,C]");
    const std::int64_t c = v->value.dim(1);
    Tensor out({rows, c});
    for (std::int64_t i = 0; i < rows; ++i)
        for (std::int64_t j = 0; j < c; ++j) out.at(i, j) = v->value[j];
    return make_node(std::move(out), {v}, [rows, c](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        Tensor& g = n.parents[0]->ensure_grad();
        for (std::int64_t i = 0; i < rows; ++i)
            for (std::int64_t j = 0; j < c; ++j) g[j] += n.grad[i * c + j];
    });
}

Var matmul(const Var& a, const Var& b) {
    Tensor out = dyadit::matmul(a->value, b->value);
    return make_node(std::move(out), {a, b}, [](Node& n) {
        const Tensor& av = n.parents[0]->value;
        const Tensor& bv = n.parents[1]->value;
        if (n.parents[0]->requires_grad) n.parents[0]->accumulate(matmul_nt(n.grad, bv));
        if (n.parents[1]->requires_grad) n.parents[1]->accumulate(matmul_tn(av, n.grad));
    });
}

Var transpose(const Var& a) {
    Tensor out = dyadit::transpose(a->value);
    return make_node(std::move(out), {a}, [](Node& n) {
        if (n.parents[0]->requires_grad) n.parents[0]->accumulate(dyadit::transpose(n.grad));
    });
}

Var leaky_relu(const Var& x, double slope) {
    Tensor out = x->value;
    for (auto& v : out.vec())
        if (v < 0.0) v *= slope;
    return make_node(std::move(out), {x}, [slope](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        const Tensor& xv = n.parents[0]->value;
        Tensor& g = n.parents[0]->ensure_grad();
        for (std::int64_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * (xv[i] > 0.0 ? 1.0 : slope);
    });
}

Var sigmoid(const Var& x) {
    Tensor out = x->value;
    for (auto& v : out.vec()) v = 1.0 / (1.0 + std::exp(-v));
    Tensor saved = out;
    return make_node(std::move(out), {x}, [saved](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        Tensor& g = n.parents[0]->ensure_grad();
        for (std::int64_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * saved[i] * (1.0 - saved[i]);
    });
}

Var gelu(const Var& x) {
    Tensor out = x->value;
    for (auto& v : out.vec()) v = 0.5 * v * (1.0 + std::erf(v * kInvSqrt2));
    return make_node(std::move(out), {x}, [](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        const Tensor& xv = n.parents[0]->value;
        Tensor& g = n.parents[0]->ensure_grad();
        for (std::int64_t i = 0; i < g.size(); ++i) {
            double v = xv[i];
            double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
            double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
            g[i] += n.grad[i] * (cdf + v * pdf);
        }
    });
}

Var softmax_rows(const Var& x) {
    require_rows(x, "softmax_rows");
    const std::int64_t t = x->value.dim(0), c = x->value.dim(1);
    Tensor out = x->value;
    for (std::int64_t i = 0; i < t; ++i) {
        double* row = out.data() + i * c;
        double m = row[0];
        for (std::int64_t j = 1; j < c; ++j) m = std::max(m, row[j]);
        double z = 0.0;
        for (std::int64_t j = 0; j < c; ++j) {
            row[j] = std::exp(row[j] - m);
            z += row[j];
        }
        for (std::int64_t j = 0; j < c; ++j) row[j] /= z;
    }
    Tensor saved = out;
    return make_node(std::move(out), {x}, [saved, t, c](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        Tensor& g = n.parents[0]->ensure_grad();
        for (std::int64_t i = 0; i < t; ++i) {
            const double* p = saved.data() + i * c;
            const double* go = n.grad.data() + i * c;
            double dot = 0.0;
            for (std::int64_t j = 0; j < c; ++j) dot += go[j] * p[j];
            double* gi = g.data() + i * c;
            for (std::int64_t j = 0; j < c; ++j) gi[j] += p[j] * (go[j] - dot);
        }
    });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
    require_rows(x, "layer_norm");
    require_row_vector(gamma, x, "layer_norm");
    require_row_vector(beta, x, "layer_norm");
    const std::int64_t t = x->value.dim(0), c = x->value.dim(1);
    Tensor out({t, c});
    Tensor mean({t, 1});
    Tensor rstd({t, 1});
    for (std::int64_t i = 0; i < t; ++i) {
        const double* row = x->value.data() + i * c;
        double m = 0.0;
        for (std::int64_t j = 0; j < c; ++j) m += row[j];
        m /= static_cast<double>(c);
        double var = 0.0;
        for (std::int64_t j = 0; j < c; ++j) {
            double d = row[j] - m;
            var += d * d;
        }
        var /= static_cast<double>(c);
        double rs = 1.0 / std::sqrt(var + eps);
        mean[i] = m;
        rstd[i] = rs;
        double* orow = out.data() + i * c;
        for (std::int64_t j = 0; j < c; ++j)
            orow[j] = (row[j] - m) * rs * gamma->value[j] + beta->value[j];
    }
    return make_node(std::move(out), {x, gamma, beta}, [mean, rstd, t, c](Node& n) {
        const Tensor& xv = n.parents[0]->value;
        const Tensor& gv = n.parents[1]->value;
        for (std::int64_t i = 0; i < t; ++i) {
            const double* row = xv.data() + i * c;
            const double* go = n.grad.data() + i * c;
            const double m = mean[i], rs = rstd[i];
            if (n.parents[1]->requires_grad || n.parents[2]->requires_grad) {
                Tensor& gg = n.parents[1]->ensure_grad();
                Tensor& gb = n.parents[2]->ensure_grad();
                for (std::int64_t j = 0; j < c; ++j) {
                    gg[j] += go[j] * (row[j] - m) * rs;
                    gb[j] += go[j];
                }
            }
            if (n.parents[0]->requires_grad) {
                double dnorm_mean = 0.0, dnorm_norm_mean = 0.0;
                for (std::int64_t j = 0; j < c; ++j) {
                    double norm = (row[j] - m) * rs;
                    double dnorm = gv[j] * go[j];
                    dnorm_mean += dnorm;
                    dnorm_norm_mean += dnorm * norm;
                }
                dnorm_mean /= static_cast<double>(c);
                dnorm_norm_mean /= static_cast<double>(c);
                Tensor& gx = n.parents[0]->ensure_grad();
                double* gi = gx.data() + i * c;
                for (std::int64_t j = 0; j < c; ++j) {
                    double norm = (row[j] - m) * rs;
                    double dnorm = gv[j] * go[j];
                    gi[j] += (dnorm - dnorm_mean - norm * dnorm_norm_mean) * rs;
                }
            }
        }
    });
}

Var custom(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backprop) {
    return make_node(std::move(value), std::move(parents), std::move(backprop));
}

Var concat_cols(const Var& a, const Var& b) {
    require_rows(a, "concat_cols");
    require_rows(b, "concat_cols");
    const std::int64_t t = a->value.dim(0);
    if (b->value.dim(0) != t) throw ShapeError("concat_cols: row count mismatch");
    const std::int64_t ca = a->value.dim(1), cb = b->value.dim(1);
    Tensor out({t, ca + cb});
    for (std::int64_t i = 0; i < t; ++i) {
        std::copy(a->value.data() + i * ca, a->value.data() + (i + 1) * ca, out.data() + i * (ca + cb));
        std::copy(b->value.data() + i * cb, b->value.data() + (i + 1) * cb,
                  out.data() + i * (ca + cb) + ca);
    }
    return make_node(std::move(out), {a, b}, [t, ca, cb](Node& n) {
        if (n.parents[0]->requires_grad) {
            Tensor& g = n.parents[0]->ensure_grad();
            for (std::int64_t i = 0; i < t; ++i)
                for (std::int64_t j = 0; j < ca; ++j) g[i * ca + j] += n.grad[i * (ca + cb) + j];
        }
        if (n.parents[1]->requires_grad) {
            Tensor& g = n.parents[1]->ensure_grad();
            for (std::int64_t i = 0; i < t; ++i)
                for (std::int64_t j = 0; j < cb; ++j) g[i * cb + j] += n.grad[i * (ca + cb) + ca + j];
        }
    });
}

Var concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw ShapeError("concat_rows: empty input");
    const std::int64_t c = parts[0]->value.dim(1);
    std::int64_t total = 0;
    for (const auto& p : parts) {
        require_rows(p, "concat_rows");
        if (p->value.dim(1) != c) throw ShapeError("concat_rows: column mismatch");
        total += p->value.dim(0);
    }
    Tensor out({total, c});
    std::int64_t row = 0;
    for (const auto& p : parts) {
        std::copy(p->value.data(), p->value.data() + p->value.size(), out.data() + row * c);
        row += p->value.dim(0);
    }
    std::vector<Var> parents(parts.begin(), parts.end());
    return make_node(std::move(out), std::move(parents), [c](Node& n) {
        std::int64_t row = 0;
        for (auto& p : n.parents) {
            const std::int64_t rows = p->value.dim(0);
            if (p->requires_grad) {
                Tensor& g = p->ensure_grad();
                const double* src = n.grad.data() + row * c;
                for (std::int64_t i = 0; i < rows * c; ++i) g[i] += src[i];
            }
            row += rows;
        }
    });
}

Var slice_rows(const Var& x, std::int64_t begin, std::int64_t end) {
    require_rows(x, "slice_rows");
    const std::int64_t t = x->value.dim(0), c = x->value.dim(1);
    if (begin < 0 || end > t || begin >= end) throw ShapeError("slice_rows: bad range");
    Tensor out({end - begin, c});
    std::copy(x->value.data() + begin * c, x->value.data() + end * c, out.data());
    return make_node(std::move(out), {x}, [begin, c](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        Tensor& g = n.parents[0]->ensure_grad();
        const std::int64_t rows = n.value.dim(0);
        for (std::int64_t i = 0; i < rows * c; ++i) g[begin * c + i] += n.grad[i];
    });
}

Var slice_cols(const Var& x, std::int64_t begin, std::int64_t end) {
    require_rows(x, "slice_cols");
    const std::int64_t t = x->value.dim(0), c = x->value.dim(1);
    if (begin < 0 || end > c || begin >= end) throw ShapeError("slice_cols: bad range");
    const std::int64_t w = end - begin;
    Tensor out({t, w});
    for (std::int64_t i = 0; i < t; ++i)
        std::copy(x->value.data() + i * c + begin, x->value.data() + i * c + end, out.data() + i * w);
    return make_node(std::move(out), {x}, [begin, c, w](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        Tensor& g = n.parents[0]->ensure_grad();
        const std::int64_t t = n.value.dim(0);
        for (std::int64_t i = 0; i < t; ++i)
            for (std::int64_t j = 0; j < w; ++j) g[i * c + begin + j] += n.grad[i * w + j];
    });
}

Var mean_rows(const Var& x) {
    require_rows(x, "mean_rows");
    const std::int64_t t = x->value.dim(0), c = x->value.dim(1);
    Tensor out({1, c});
    for (std::int64_t i = 0; i < t; ++i)
        for (std::int64_t j = 0; j < c; ++j) out[j] += x->value[i * c + j];
    for (std::int64_t j = 0; j < c; ++j) out[j] /= static_cast<double>(t);
    return make_node(std::move(out), {x}, [t, c](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        Tensor& g = n.parents[0]->ensure_grad();
        const double inv = 1.0 / static_cast<double>(t);
        for (std::int64_t i = 0; i < t; ++i)
            for (std::int64_t j = 0; j < c; ++j) g[i * c + j] += n.grad[j] * inv;
    });
}

Var mean_all(const Var& x) {
    const std::int64_t n_elem = x->value.size();
    if (n_elem == 0) throw ShapeError("mean_all: empty tensor");
    Tensor out({1});
    double acc = 0.0;
    for (std::int64_t i = 0; i < n_elem; ++i) acc += x->value[i];
    out[0] = acc / static_cast<double>(n_elem);
    return make_node(std::move(out), {x}, [n_elem](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        Tensor& g = n.parents[0]->ensure_grad();
        const double s = n.grad[0] / static_cast<double>(n_elem);
        for (std::int64_t i = 0; i < n_elem; ++i) g[i] += s;
    });
}

Var sum_all(const Var& x) {
    const std::int64_t n_elem = x->value.size();
    Tensor out({1});
    double acc = 0.0;
    for (std::int64_t i = 0; i < n_elem; ++i) acc += x->value[i];
    out[0] = acc;
    return make_node(std::move(out), {x}, [n_elem](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        Tensor& g = n.parents[0]->ensure_grad();
        const double s = n.grad[0];
        for (std::int64_t i = 0; i < n_elem; ++i) g[i] += s;
    });
}

Var mean_sq_rows(const Var& x) {
    require_rows(x, "mean_sq_rows");
    return scale(mean_all(mul(x, x)), static_cast<double>(x->value.dim(1)));
}

namespace {

std::int64_t conv_out_len(std::int64_t t, std::int64_t k, std::int64_t s, std::int64_t p) {
    return (t + 2 * p - k) / s + 1;
}

// Gathers conv patches: row t_out holds x[t_out*s - p .. +k) x Cin, zero padded.
Tensor im2row(const Tensor& x, std::int64_t k, std::int64_t s, std::int64_t p) {
    const std::int64_t t = x.dim(0), cin = x.dim(1);
    const std::int64_t tout = conv_out_len(t, k, s, p);
    Tensor patches({tout, cin * k});
    for (std::int64_t o = 0; o < tout; ++o) {
        double* prow = patches.data() + o * cin * k;
        for (std::int64_t kk = 0; kk < k; ++kk) {
            std::int64_t ti = o * s + kk - p;
            if (ti < 0 || ti >= t) continue;
            const double* xrow = x.data() + ti * cin;
            std::copy(xrow, xrow + cin, prow + kk * cin);
        }
    }
    return patches;
}

}  // namespace

Var conv1d(const Var& x, const Var& w, const Var& b, std::int64_t kernel, std::int64_t stride,
           std::int64_t pad) {
    require_rows(x, "conv1d");
    const std::int64_t t = x->value.dim(0), cin = x->value.dim(1);
    const std::int64_t cout = w->value.dim(0);
    if (w->value.dim(1) != cin * kernel)
        throw ShapeError("conv1d: weight shape " + w->value.shape_str() + " does not match Cin*K");
    const std::int64_t tout = conv_out_len(t, kernel, stride, pad);
    if (tout < 1) throw ShapeError("conv1d: input too short for kernel/stride");

    Tensor patches = im2row(x->value, kernel, stride, pad);
    Tensor out = matmul_nt(patches, w->value);  // [tout, cout]
    for (std::int64_t i = 0; i < tout; ++i)
        for (std::int64_t j = 0; j < cout; ++j) out[i * cout + j] += b->value[j];

    return make_node(std::move(out), {x, w, b},
                     [patches, kernel, stride, pad, t, cin, cout, tout](Node& n) {
                         // dW += g^T * patches ; db += colsum(g) ; dx += scatter(g * W).
                         if (n.parents[1]->requires_grad)
                             n.parents[1]->accumulate(matmul_tn(n.grad, patches));
                         if (n.parents[2]->requires_grad) {
                             Tensor& gb = n.parents[2]->ensure_grad();
                             for (std::int64_t i = 0; i < tout; ++i)
                                 for (std::int64_t j = 0; j < cout; ++j) gb[j] += n.grad[i * cout + j];
                         }
                         if (n.parents[0]->requires_grad) {
                             Tensor dpatch = dyadit::matmul(n.grad, n.parents[1]->value);  // [tout, cin*k]
                             Tensor& gx = n.parents[0]->ensure_grad();
                             for (std::int64_t o = 0; o < tout; ++o) {
                                 const double* prow = dpatch.data() + o * cin * kernel;
                                 for (std::int64_t kk = 0; kk < kernel; ++kk) {
                                     std::int64_t ti = o * stride + kk - pad;
                                     if (ti < 0 || ti >= t) continue;
                                     double* grow = gx.data() + ti * cin;
                                     const double* src = prow + kk * cin;
                                     for (std::int64_t ci = 0; ci < cin; ++ci) grow[ci] += src[ci];
                                 }
                             }
                         }
                     });
}

Var upsample_linear_2x(const Var& x) {
    require_rows(x, "upsample_linear_2x");
    const std::int64_t t = x->value.dim(0), c = x->value.dim(1);
    Tensor out({2 * t, c});
    for (std::int64_t i = 0; i < t; ++i) {
        const double* a = x->value.data() + i * c;
        const double* nx = x->value.data() + std::min(i + 1, t - 1) * c;
        double* even = out.data() + (2 * i) * c;
        double* odd = out.data() + (2 * i + 1) * c;
        for (std::int64_t j = 0; j < c; ++j) {
            even[j] = a[j];
            odd[j] = 0.5 * (a[j] + nx[j]);
        }
    }
    return make_node(std::move(out), {x}, [t, c](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        Tensor& g = n.parents[0]->ensure_grad();
        for (std::int64_t i = 0; i < t; ++i) {
            const double* even = n.grad.data() + (2 * i) * c;
            const double* odd = n.grad.data() + (2 * i + 1) * c;
            double* gi = g.data() + i * c;
            double* gn = g.data() + std::min(i + 1, t - 1) * c;
            for (std::int64_t j = 0; j < c; ++j) {
                gi[j] += even[j] + 0.5 * odd[j];
                gn[j] += 0.5 * odd[j];
            }
        }
    });
}

Var attention(const Var& q, const Var& k, const Var& v, int heads, Tensor* probs_out) {
    require_rows(q, "attention");
    require_rows(k, "attention");
    require_rows(v, "attention");
    const std::int64_t tq = q->value.dim(0), c = q->value.dim(1);
    const std::int64_t tk = k->value.dim(0);
    if (k->value.dim(1) != c || v->value.dim(1) != c || v->value.dim(0) != tk)
        throw ShapeError("attention: q/k/v width or kv length mismatch");
    if (heads < 1 || c % heads != 0) throw ShapeError("attention: heads must divide width");
    const std::int64_t hd = c / heads;
    const double sc = 1.0 / std::sqrt(static_cast<double>(hd));

    // probs[h*tq + i][j] = softmax_j(q_i . k_j * sc) per head.
    Tensor probs({static_cast<std::int64_t>(heads) * tq, tk});
    Tensor out({tq, c});
    for (int h = 0; h < heads; ++h) {
        const std::int64_t off = h * hd;
        for (std::int64_t i = 0; i < tq; ++i) {
            double* prow = probs.data() + (h * tq + i) * tk;
            const double* qi = q->value.data() + i * c + off;
            double m = -1e300;
            for (std::int64_t j = 0; j < tk; ++j) {
                const double* kj = k->value.data() + j * c + off;
                double dot = 0.0;
                for (std::int64_t d = 0; d < hd; ++d) dot += qi[d] * kj[d];
                prow[j] = dot * sc;
                m = std::max(m, prow[j]);
            }
            double z = 0.0;
            for (std::int64_t j = 0; j < tk; ++j) {
                prow[j] = std::exp(prow[j] - m);
                z += prow[j];
            }
            double* orow = out.data() + i * c + off;
            for (std::int64_t j = 0; j < tk; ++j) {
                prow[j] /= z;
                const double* vj = v->value.data() + j * c + off;
                for (std::int64_t d = 0; d < hd; ++d) orow[d] += prow[j] * vj[d];
            }
        }
    }
    if (probs_out) *probs_out = probs;

    return make_node(std::move(out), {q, k, v}, [probs, heads, hd, sc, tq, tk, c](Node& n) {
        const Tensor& qv = n.parents[0]->value;
        const Tensor& kv = n.parents[1]->value;
        const Tensor& vv = n.parents[2]->value;
        const bool need_q = n.parents[0]->requires_grad;
        const bool need_k = n.parents[1]->requires_grad;
        const bool need_v = n.parents[2]->requires_grad;
        Tensor* gq = need_q ? &n.parents[0]->ensure_grad() : nullptr;
        Tensor* gk = need_k ? &n.parents[1]->ensure_grad() : nullptr;
        Tensor* gv = need_v ? &n.parents[2]->ensure_grad() : nullptr;
        std::vector<double> dp(static_cast<std::size_t>(tk));
        for (int h = 0; h < heads; ++h) {
            const std::int64_t off = h * hd;
            for (std::int64_t i = 0; i < tq; ++i) {
                const double* prow = probs.data() + (h * tq + i) * tk;
                const double* go = n.grad.data() + i * c + off;
                // dV[j] += p[j] * go ; dp[j] = go . v[j]
                double dot = 0.0;
                for (std::int64_t j = 0; j < tk; ++j) {
                    const double* vj = vv.data() + j * c + off;
                    double d = 0.0;
                    for (std::int64_t dd = 0; dd < hd; ++dd) d += go[dd] * vj[dd];
                    dp[static_cast<std::size_t>(j)] = d;
                    dot += d * prow[j];
                    if (need_v) {
                        double* gvr = gv->data() + j * c + off;
                        for (std::int64_t dd = 0; dd < hd; ++dd) gvr[dd] += prow[j] * go[dd];
                    }
                }
                // dscore[j] = p[j] * (dp[j] - dot); dq += sc * dscore . k ; dk += sc * dscore . q
                if (need_q || need_k) {
                    const double* qi = qv.data() + i * c + off;
                    double* gqr = need_q ? gq->data() + i * c + off : nullptr;
                    for (std::int64_t j = 0; j < tk; ++j) {
                        double ds = prow[j] * (dp[static_cast<std::size_t>(j)] - dot) * sc;
                        const double* kj = kv.data() + j * c + off;
                        if (need_q)
                            for (std::int64_t dd = 0; dd < hd; ++dd) gqr[dd] += ds * kj[dd];
                        if (need_k) {
                            double* gkr = gk->data() + j * c + off;
                            for (std::int64_t dd = 0; dd < hd; ++dd) gkr[dd] += ds * qi[dd];
                        }
                    }
                }
            }
        }
    });
}

}  // namespace dyadit::ad
