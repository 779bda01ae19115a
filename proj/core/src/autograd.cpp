#include "locinv/autograd.hpp"

#include <cmath>
#include <unordered_set>

#include "locinv/errors.hpp"

namespace locinv::ag {

void Node::ensure_grad() {
    if (grad.shape != value.shape) {
        grad = Tensor(value.shape, 0.0);
    }
}

void Node::accumulate(const Tensor& g) {
    ensure_grad();
    for (int64_t i = 0; i < grad.numel(); ++i) grad[i] += g[i];
}

Var Var::constant(Tensor v) {
    auto n = std::make_shared<Node>();
    n->value = std::move(v);
    n->requires_grad = false;
    return Var(n);
}

Var Var::leaf(Tensor v) {
    auto n = std::make_shared<Node>();
    n->value = std::move(v);
    n->requires_grad = true;
    return Var(n);
}

void Var::zero_grad() {
    if (node_) node_->grad = Tensor(node_->value.shape, 0.0);
}

static Var make_op(Tensor value, std::vector<Var> parents,
                   std::function<void(const Tensor&)> backprop) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    for (const auto& p : parents) {
        n->parents.push_back(p.node());
        if (p.requires_grad()) n->requires_grad = true;
    }
    if (n->requires_grad) n->backprop = std::move(backprop);
    return Var(n);
}

void backward(const Var& root) {
    if (!root.defined()) throw DataError("backward on undefined var");
    if (root.value().numel() != 1) throw DataError("backward root must be scalar");
    if (!root.requires_grad()) return;

    // Iterative post-order topological sort.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    struct Frame {
        Node* n;
        size_t next_parent;
    };
    std::vector<Frame> stack{{root.node().get(), 0}};
    visited.insert(root.node().get());
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next_parent < f.n->parents.size()) {
            Node* p = f.n->parents[f.next_parent++].get();
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.push_back({p, 0});
            }
        } else {
            order.push_back(f.n);
            stack.pop_back();
        }
    }

    root.node()->ensure_grad();
    root.node()->grad.data[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backprop) n->backprop(n->grad);
    }
}

static void check_same(const Var& a, const Var& b, const char* op) {
    if (!a.value().same_shape(b.value()))
        throw DataError(std::string(op) + ": shape mismatch " + a.value().shape_str() + " vs " +
                        b.value().shape_str());
}

Var add(const Var& a, const Var& b) {
    check_same(a, b, "add");
    Tensor out = a.value() + b.value();
    auto an = a.node(), bn = b.node();
    return make_op(std::move(out), {a, b}, [an, bn](const Tensor& g) {
        if (an->requires_grad) an->accumulate(g);
        if (bn->requires_grad) bn->accumulate(g);
    });
}

Var sub(const Var& a, const Var& b) {
    check_same(a, b, "sub");
    Tensor out = a.value() - b.value();
    auto an = a.node(), bn = b.node();
    return make_op(std::move(out), {a, b}, [an, bn](const Tensor& g) {
        if (an->requires_grad) an->accumulate(g);
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (int64_t i = 0; i < g.numel(); ++i) bn->grad[i] -= g[i];
        }
    });
}

Var mul(const Var& a, const Var& b) {
    check_same(a, b, "mul");
    Tensor out = a.value() * b.value();
    auto an = a.node(), bn = b.node();
    return make_op(std::move(out), {a, b}, [an, bn](const Tensor& g) {
        if (an->requires_grad) {
            an->ensure_grad();
            for (int64_t i = 0; i < g.numel(); ++i) an->grad[i] += g[i] * bn->value[i];
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (int64_t i = 0; i < g.numel(); ++i) bn->grad[i] += g[i] * an->value[i];
        }
    });
}

Var scale(const Var& a, scalar_t s) {
    Tensor out = s * a.value();
    auto an = a.node();
    return make_op(std::move(out), {a}, [an, s](const Tensor& g) {
        an->ensure_grad();
        for (int64_t i = 0; i < g.numel(); ++i) an->grad[i] += s * g[i];
    });
}

Var add_scalar(const Var& a, scalar_t s) {
    Tensor out = a.value();
    for (auto& v : out.data) v += s;
    auto an = a.node();
    return make_op(std::move(out), {a}, [an](const Tensor& g) { an->accumulate(g); });
}

Var vpow(const Var& a, scalar_t p) {
    Tensor out = a.value();
    for (auto& v : out.data) v = std::pow(v, p);
    auto an = a.node();
    return make_op(std::move(out), {a}, [an, p](const Tensor& g) {
        an->ensure_grad();
        for (int64_t i = 0; i < g.numel(); ++i)
            an->grad[i] += g[i] * p * std::pow(an->value[i], p - 1.0);
    });
}

Var silu(const Var& a) {
    Tensor out = a.value();
    for (auto& v : out.data) v = v / (1.0 + std::exp(-v));
    auto an = a.node();
    return make_op(std::move(out), {a}, [an](const Tensor& g) {
        an->ensure_grad();
        for (int64_t i = 0; i < g.numel(); ++i) {
            scalar_t x = an->value[i];
            scalar_t sig = 1.0 / (1.0 + std::exp(-x));
            an->grad[i] += g[i] * sig * (1.0 + x * (1.0 - sig));
        }
    });
}

Var relu(const Var& a) {
    Tensor out = a.value();
    for (auto& v : out.data) v = v > 0 ? v : 0.0;
    auto an = a.node();
    return make_op(std::move(out), {a}, [an](const Tensor& g) {
        an->ensure_grad();
        for (int64_t i = 0; i < g.numel(); ++i)
            if (an->value[i] > 0) an->grad[i] += g[i];
    });
}

Var matmul(const Var& a, const Var& b) {
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    if (A.ndim() != 2 || B.ndim() != 2 || A.shape[1] != B.shape[0])
        throw DataError("matmul: bad shapes " + A.shape_str() + " * " + B.shape_str());
    int m = A.shape[0], k = A.shape[1], n = B.shape[1];
    Tensor out({m, n});
    for (int i = 0; i < m; ++i)
        for (int kk = 0; kk < k; ++kk) {
            scalar_t av = A.at2(i, kk);
            if (av == 0.0) continue;
            for (int j = 0; j < n; ++j) out.at2(i, j) += av * B.at2(kk, j);
        }
    auto an = a.node(), bn = b.node();
    return make_op(std::move(out), {a, b}, [an, bn, m, k, n](const Tensor& g) {
        if (an->requires_grad) {  // dA = g * B^T
            an->ensure_grad();
            for (int i = 0; i < m; ++i)
                for (int kk = 0; kk < k; ++kk) {
                    scalar_t s = 0;
                    for (int j = 0; j < n; ++j) s += g.at2(i, j) * bn->value.at2(kk, j);
                    an->grad.at2(i, kk) += s;
                }
        }
        if (bn->requires_grad) {  // dB = A^T * g
            bn->ensure_grad();
            for (int kk = 0; kk < k; ++kk)
                for (int i = 0; i < m; ++i) {
                    scalar_t av = an->value.at2(i, kk);
                    if (av == 0.0) continue;
                    for (int j = 0; j < n; ++j) bn->grad.at2(kk, j) += av * g.at2(i, j);
                }
        }
    });
}

Var matmul_nt(const Var& a, const Var& b) {
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    if (A.ndim() != 2 || B.ndim() != 2 || A.shape[1] != B.shape[1])
        throw DataError("matmul_nt: bad shapes " + A.shape_str() + " * " + B.shape_str() + "^T");
    int m = A.shape[0], k = A.shape[1], n = B.shape[0];
    Tensor out({m, n});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
            scalar_t s = 0;
            for (int kk = 0; kk < k; ++kk) s += A.at2(i, kk) * B.at2(j, kk);
            out.at2(i, j) = s;
        }
    auto an = a.node(), bn = b.node();
    return make_op(std::move(out), {a, b}, [an, bn, m, k, n](const Tensor& g) {
        if (an->requires_grad) {  // dA = g * B
            an->ensure_grad();
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j) {
                    scalar_t gv = g.at2(i, j);
                    if (gv == 0.0) continue;
                    for (int kk = 0; kk < k; ++kk) an->grad.at2(i, kk) += gv * bn->value.at2(j, kk);
                }
        }
        if (bn->requires_grad) {  // dB = g^T * A
            bn->ensure_grad();
            for (int j = 0; j < n; ++j)
                for (int i = 0; i < m; ++i) {
                    scalar_t gv = g.at2(i, j);
                    if (gv == 0.0) continue;
                    for (int kk = 0; kk < k; ++kk) bn->grad.at2(j, kk) += gv * an->value.at2(i, kk);
                }
        }
    });
}

Var softmax_rows(const Var& a) {
    const Tensor& A = a.value();
    if (A.ndim() != 2) throw DataError("softmax_rows: expected 2-d, got " + A.shape_str());
    int m = A.shape[0], n = A.shape[1];
    Tensor out({m, n});
    for (int i = 0; i < m; ++i) {
        scalar_t mx = -1e300;
        for (int j = 0; j < n; ++j) mx = std::max(mx, A.at2(i, j));
        scalar_t z = 0;
        for (int j = 0; j < n; ++j) {
            scalar_t e = std::exp(A.at2(i, j) - mx);
            out.at2(i, j) = e;
            z += e;
        }
        for (int j = 0; j < n; ++j) out.at2(i, j) /= z;
    }
    auto an = a.node();
    Tensor out_copy = out;
    return make_op(std::move(out), {a}, [an, out_copy, m, n](const Tensor& g) {
        an->ensure_grad();
        for (int i = 0; i < m; ++i) {
            scalar_t dotsg = 0;
            for (int j = 0; j < n; ++j) dotsg += g.at2(i, j) * out_copy.at2(i, j);
            for (int j = 0; j < n; ++j)
                an->grad.at2(i, j) += out_copy.at2(i, j) * (g.at2(i, j) - dotsg);
        }
    });
}

Var layer_norm_rows(const Var& a, const Var& gain, const Var& bias) {
    const Tensor& A = a.value();
    if (A.ndim() != 2) throw DataError("layer_norm_rows: expected 2-d");
    int m = A.shape[0], n = A.shape[1];
    require_shape(gain.value(), {n}, "layer_norm gain");
    require_shape(bias.value(), {n}, "layer_norm bias");
    const scalar_t eps = 1e-5;
    Tensor out({m, n});
    Tensor mu({m}), inv_sd({m});
    for (int i = 0; i < m; ++i) {
        scalar_t s = 0;
        for (int j = 0; j < n; ++j) s += A.at2(i, j);
        scalar_t u = s / n;
        scalar_t var = 0;
        for (int j = 0; j < n; ++j) {
            scalar_t d = A.at2(i, j) - u;
            var += d * d;
        }
        var /= n;
        mu[i] = u;
        inv_sd[i] = 1.0 / std::sqrt(var + eps);
        for (int j = 0; j < n; ++j)
            out.at2(i, j) = (A.at2(i, j) - u) * inv_sd[i] * gain.value()[j] + bias.value()[j];
    }
    auto an = a.node(), gn = gain.node(), bn = bias.node();
    return make_op(std::move(out), {a, gain, bias}, [an, gn, bn, mu, inv_sd, m, n](const Tensor& g) {
        for (int i = 0; i < m; ++i) {
            for (int j = 0; j < n; ++j) {
                scalar_t xhat = (an->value.at2(i, j) - mu[i]) * inv_sd[i];
                if (gn->requires_grad) {
                    gn->ensure_grad();
                    gn->grad[j] += g.at2(i, j) * xhat;
                }
                if (bn->requires_grad) {
                    bn->ensure_grad();
                    bn->grad[j] += g.at2(i, j);
                }
            }
            if (an->requires_grad) {
                an->ensure_grad();
                scalar_t sum_gy = 0, sum_gy_xhat = 0;
                for (int j = 0; j < n; ++j) {
                    scalar_t gy = g.at2(i, j) * gn->value[j];
                    scalar_t xhat = (an->value.at2(i, j) - mu[i]) * inv_sd[i];
                    sum_gy += gy;
                    sum_gy_xhat += gy * xhat;
                }
                for (int j = 0; j < n; ++j) {
                    scalar_t gy = g.at2(i, j) * gn->value[j];
                    scalar_t xhat = (an->value.at2(i, j) - mu[i]) * inv_sd[i];
                    an->grad.at2(i, j) +=
                        inv_sd[i] * (gy - sum_gy / n - xhat * sum_gy_xhat / n);
                }
            }
        }
    });
}

Var concat_rows(const std::vector<Var>& rows) {
    if (rows.empty()) throw DataError("concat_rows: empty input");
    int d = static_cast<int>(rows[0].value().numel());
    int k = static_cast<int>(rows.size());
    Tensor out({k, d});
    for (int i = 0; i < k; ++i) {
        if (rows[i].value().numel() != d) throw DataError("concat_rows: row size mismatch");
        for (int j = 0; j < d; ++j) out.at2(i, j) = rows[i].value()[j];
    }
    std::vector<std::shared_ptr<Node>> nodes;
    for (const auto& r : rows) nodes.push_back(r.node());
    return make_op(std::move(out), rows, [nodes, d](const Tensor& g) {
        for (size_t i = 0; i < nodes.size(); ++i) {
            if (!nodes[i]->requires_grad) continue;
            nodes[i]->ensure_grad();
            for (int j = 0; j < d; ++j) nodes[i]->grad[j] += g.at2(static_cast<int>(i), j);
        }
    });
}

Var col(const Var& a, int j) {
    const Tensor& A = a.value();
    if (A.ndim() != 2) throw DataError("col: expected 2-d");
    if (j < 0 || j >= A.shape[1]) throw DataError("col: index " + std::to_string(j) + " out of range");
    int m = A.shape[0];
    Tensor out({m});
    for (int i = 0; i < m; ++i) out[i] = A.at2(i, j);
    auto an = a.node();
    return make_op(std::move(out), {a}, [an, j, m](const Tensor& g) {
        an->ensure_grad();
        for (int i = 0; i < m; ++i) an->grad.at2(i, j) += g[i];
    });
}

Var reshape(const Var& a, std::vector<int> shape) {
    Tensor out = Tensor::from(shape, a.value().data);
    auto an = a.node();
    return make_op(std::move(out), {a}, [an](const Tensor& g) {
        an->ensure_grad();
        for (int64_t i = 0; i < g.numel(); ++i) an->grad[i] += g[i];
    });
}

Var add_row_bias(const Var& x, const Var& b) {
    const Tensor& X = x.value();
    if (X.ndim() != 2) throw DataError("add_row_bias: expected 2-d");
    int m = X.shape[0], n = X.shape[1];
    require_shape(b.value(), {n}, "row bias");
    Tensor out = X;
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out.at2(i, j) += b.value()[j];
    auto xn = x.node(), bn = b.node();
    return make_op(std::move(out), {x, b}, [xn, bn, m, n](const Tensor& g) {
        if (xn->requires_grad) xn->accumulate(g);
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (int j = 0; j < n; ++j) {
                scalar_t s = 0;
                for (int i = 0; i < m; ++i) s += g.at2(i, j);
                bn->grad[j] += s;
            }
        }
    });
}

Var to_cell_rows(const Var& x) {
    const Tensor& X = x.value();
    if (X.ndim() != 3) throw DataError("to_cell_rows: expected 3-d");
    int c = X.shape[0], h = X.shape[1], w = X.shape[2];
    Tensor out({h * w, c});
    for (int ic = 0; ic < c; ++ic)
        for (int y = 0; y < h; ++y)
            for (int xx = 0; xx < w; ++xx) out.at2(y * w + xx, ic) = X.at3(ic, y, xx);
    auto xn = x.node();
    return make_op(std::move(out), {x}, [xn, c, h, w](const Tensor& g) {
        xn->ensure_grad();
        for (int ic = 0; ic < c; ++ic)
            for (int y = 0; y < h; ++y)
                for (int xx = 0; xx < w; ++xx) xn->grad.at3(ic, y, xx) += g.at2(y * w + xx, ic);
    });
}

Var from_cell_rows(const Var& x, int h, int w) {
    const Tensor& X = x.value();
    if (X.ndim() != 2 || X.shape[0] != h * w) throw DataError("from_cell_rows: bad shape");
    int c = X.shape[1];
    Tensor out({c, h, w});
    for (int ic = 0; ic < c; ++ic)
        for (int y = 0; y < h; ++y)
            for (int xx = 0; xx < w; ++xx) out.at3(ic, y, xx) = X.at2(y * w + xx, ic);
    auto xn = x.node();
    return make_op(std::move(out), {x}, [xn, c, h, w](const Tensor& g) {
        xn->ensure_grad();
        for (int ic = 0; ic < c; ++ic)
            for (int y = 0; y < h; ++y)
                for (int xx = 0; xx < w; ++xx) xn->grad.at2(y * w + xx, ic) += g.at3(ic, y, xx);
    });
}

Var conv3x3(const Var& x, const Var& w, const Var& b) {
    const Tensor& X = x.value();
    const Tensor& W = w.value();
    if (X.ndim() != 3 || W.ndim() != 4 || W.shape[2] != 3 || W.shape[3] != 3)
        throw DataError("conv3x3: bad shapes " + X.shape_str() + ", " + W.shape_str());
    int ci = X.shape[0], h = X.shape[1], wd = X.shape[2], co = W.shape[0];
    if (W.shape[1] != ci) throw DataError("conv3x3: channel mismatch");
    require_shape(b.value(), {co}, "conv3x3 bias");
    Tensor out({co, h, wd});
    for (int oc = 0; oc < co; ++oc) {
        for (int y = 0; y < h; ++y)
            for (int xx = 0; xx < wd; ++xx) out.at3(oc, y, xx) = b.value()[oc];
        for (int ic = 0; ic < ci; ++ic) {
            for (int ky = 0; ky < 3; ++ky) {
                for (int kx = 0; kx < 3; ++kx) {
                    scalar_t wv = W.data[((static_cast<size_t>(oc) * ci + ic) * 3 + ky) * 3 + kx];
                    if (wv == 0.0) continue;
                    int y0 = std::max(0, 1 - ky), y1 = std::min(h, h + 1 - ky);
                    int x0 = std::max(0, 1 - kx), x1 = std::min(wd, wd + 1 - kx);
                    for (int y = y0; y < y1; ++y) {
                        const scalar_t* in_row = &X.data[(static_cast<size_t>(ic) * h + (y + ky - 1)) * wd];
                        scalar_t* out_row = &out.data[(static_cast<size_t>(oc) * h + y) * wd];
                        for (int xx = x0; xx < x1; ++xx) out_row[xx] += wv * in_row[xx + kx - 1];
                    }
                }
            }
        }
    }
    auto xn = x.node(), wn = w.node(), bn = b.node();
    return make_op(std::move(out), {x, w, b}, [xn, wn, bn, ci, co, h, wd](const Tensor& g) {
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (int oc = 0; oc < co; ++oc) {
                scalar_t s = 0;
                for (int y = 0; y < h; ++y)
                    for (int xx = 0; xx < wd; ++xx) s += g.at3(oc, y, xx);
                bn->grad[oc] += s;
            }
        }
        for (int oc = 0; oc < co; ++oc) {
            for (int ic = 0; ic < ci; ++ic) {
                for (int ky = 0; ky < 3; ++ky) {
                    for (int kx = 0; kx < 3; ++kx) {
                        int y0 = std::max(0, 1 - ky), y1 = std::min(h, h + 1 - ky);
                        int x0 = std::max(0, 1 - kx), x1 = std::min(wd, wd + 1 - kx);
                        size_t widx = ((static_cast<size_t>(oc) * ci + ic) * 3 + ky) * 3 + kx;
                        if (wn->requires_grad) {
                            wn->ensure_grad();
                            scalar_t s = 0;
                            for (int y = y0; y < y1; ++y) {
                                const scalar_t* in_row =
                                    &xn->value.data[(static_cast<size_t>(ic) * h + (y + ky - 1)) * wd];
                                const scalar_t* g_row = &g.data[(static_cast<size_t>(oc) * h + y) * wd];
                                for (int xx = x0; xx < x1; ++xx) s += g_row[xx] * in_row[xx + kx - 1];
                            }
                            wn->grad.data[widx] += s;
                        }
                        if (xn->requires_grad) {
                            xn->ensure_grad();
                            scalar_t wv = wn->value.data[widx];
                            if (wv == 0.0) continue;
                            for (int y = y0; y < y1; ++y) {
                                scalar_t* xg_row =
                                    &xn->grad.data[(static_cast<size_t>(ic) * h + (y + ky - 1)) * wd];
                                const scalar_t* g_row = &g.data[(static_cast<size_t>(oc) * h + y) * wd];
                                for (int xx = x0; xx < x1; ++xx) xg_row[xx + kx - 1] += wv * g_row[xx];
                            }
                        }
                    }
                }
            }
        }
    });
}

Var avg_pool2(const Var& x) {
    const Tensor& X = x.value();
    if (X.ndim() != 3 || X.shape[1] % 2 || X.shape[2] % 2) throw DataError("avg_pool2: bad shape");
    int c = X.shape[0], h = X.shape[1] / 2, w = X.shape[2] / 2;
    Tensor out({c, h, w});
    for (int ic = 0; ic < c; ++ic)
        for (int y = 0; y < h; ++y)
            for (int xx = 0; xx < w; ++xx)
                out.at3(ic, y, xx) = 0.25 * (X.at3(ic, 2 * y, 2 * xx) + X.at3(ic, 2 * y, 2 * xx + 1) +
                                             X.at3(ic, 2 * y + 1, 2 * xx) + X.at3(ic, 2 * y + 1, 2 * xx + 1));
    auto xn = x.node();
    return make_op(std::move(out), {x}, [xn, c, h, w](const Tensor& g) {
        xn->ensure_grad();
        for (int ic = 0; ic < c; ++ic)
            for (int y = 0; y < h; ++y)
                for (int xx = 0; xx < w; ++xx) {
                    scalar_t gv = 0.25 * g.at3(ic, y, xx);
                    xn->grad.at3(ic, 2 * y, 2 * xx) += gv;
                    xn->grad.at3(ic, 2 * y, 2 * xx + 1) += gv;
                    xn->grad.at3(ic, 2 * y + 1, 2 * xx) += gv;
                    xn->grad.at3(ic, 2 * y + 1, 2 * xx + 1) += gv;
                }
    });
}

Var upsample2(const Var& x) {
    const Tensor& X = x.value();
    if (X.ndim() != 3) throw DataError("upsample2: expected 3-d");
    int c = X.shape[0], h = X.shape[1], w = X.shape[2];
    Tensor out({c, 2 * h, 2 * w});
    for (int ic = 0; ic < c; ++ic)
        for (int y = 0; y < 2 * h; ++y)
            for (int xx = 0; xx < 2 * w; ++xx) out.at3(ic, y, xx) = X.at3(ic, y / 2, xx / 2);
    auto xn = x.node();
    return make_op(std::move(out), {x}, [xn, c, h, w](const Tensor& g) {
        xn->ensure_grad();
        for (int ic = 0; ic < c; ++ic)
            for (int y = 0; y < 2 * h; ++y)
                for (int xx = 0; xx < 2 * w; ++xx) xn->grad.at3(ic, y / 2, xx / 2) += g.at3(ic, y, xx);
    });
}

Var concat_channels(const Var& a, const Var& b) {
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    if (A.ndim() != 3 || B.ndim() != 3 || A.shape[1] != B.shape[1] || A.shape[2] != B.shape[2])
        throw DataError("concat_channels: bad shapes");
    int ca = A.shape[0], cb = B.shape[0], h = A.shape[1], w = A.shape[2];
    Tensor out({ca + cb, h, w});
    std::copy(A.data.begin(), A.data.end(), out.data.begin());
    std::copy(B.data.begin(), B.data.end(), out.data.begin() + A.numel());
    auto an = a.node(), bn = b.node();
    return make_op(std::move(out), {a, b}, [an, bn, ca, cb, h, w](const Tensor& g) {
        int64_t na = static_cast<int64_t>(ca) * h * w;
        if (an->requires_grad) {
            an->ensure_grad();
            for (int64_t i = 0; i < na; ++i) an->grad[i] += g[i];
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            int64_t nb = static_cast<int64_t>(cb) * h * w;
            for (int64_t i = 0; i < nb; ++i) bn->grad[i] += g[na + i];
        }
    });
}

Var add_channel_bias(const Var& x, const Var& b) {
    const Tensor& X = x.value();
    if (X.ndim() != 3) throw DataError("add_channel_bias: expected 3-d");
    int c = X.shape[0], h = X.shape[1], w = X.shape[2];
    require_shape(b.value(), {c}, "channel bias");
    Tensor out = X;
    for (int ic = 0; ic < c; ++ic)
        for (int y = 0; y < h; ++y)
            for (int xx = 0; xx < w; ++xx) out.at3(ic, y, xx) += b.value()[ic];
    auto xn = x.node(), bn = b.node();
    return make_op(std::move(out), {x, b}, [xn, bn, c, h, w](const Tensor& g) {
        if (xn->requires_grad) xn->accumulate(g);
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (int ic = 0; ic < c; ++ic) {
                scalar_t s = 0;
                for (int y = 0; y < h; ++y)
                    for (int xx = 0; xx < w; ++xx) s += g.at3(ic, y, xx);
                bn->grad[ic] += s;
            }
        }
    });
}

Var sum(const Var& a) {
    Tensor out = Tensor::scalar(a.value().sum());
    auto an = a.node();
    return make_op(std::move(out), {a}, [an](const Tensor& g) {
        an->ensure_grad();
        for (int64_t i = 0; i < an->grad.numel(); ++i) an->grad[i] += g[0];
    });
}

Var mean(const Var& a) { return scale(sum(a), 1.0 / static_cast<scalar_t>(a.value().numel())); }

Var dot(const Var& a, const Var& b) {
    if (a.value().numel() != b.value().numel()) throw DataError("dot: size mismatch");
    scalar_t s = 0;
    for (int64_t i = 0; i < a.value().numel(); ++i) s += a.value()[i] * b.value()[i];
    auto an = a.node(), bn = b.node();
    return make_op(Tensor::scalar(s), {a, b}, [an, bn](const Tensor& g) {
        if (an->requires_grad) {
            an->ensure_grad();
            for (int64_t i = 0; i < an->grad.numel(); ++i) an->grad[i] += g[0] * bn->value[i];
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (int64_t i = 0; i < bn->grad.numel(); ++i) bn->grad[i] += g[0] * an->value[i];
        }
    });
}

Var mean_squared_error(const Var& a, const Var& b) {
    Var d = sub(a, b);
    return mean(mul(d, d));
}

Var cosine(const Var& a, const Var& b) {
    Var num = dot(a, b);
    Var den = mul(vpow(dot(a, a), 0.5), vpow(dot(b, b), 0.5));
    return mul(num, vpow(den, -1.0));
}

}  // namespace locinv::ag
