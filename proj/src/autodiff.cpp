#include "moss/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "moss/error.hpp"

namespace moss::ad {

namespace {

NodePtr make_node(Tensor value, std::vector<NodePtr> inputs,
                  std::function<void(Node&)> backward_fn) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->inputs = std::move(inputs);
    n->backward_fn = std::move(backward_fn);
    for (const auto& in : n->inputs) {
        if (in->requires_grad) {
            n->requires_grad = true;
            break;
        }
    }
    return n;
}

void check_same_shape(const Var& a, const Var& b, const char* op) {
    if (!a.value().same_shape(b.value()))
        throw DomainError(std::string(op) + ": shape mismatch " + a.value().shape_str() +
                          " vs " + b.value().shape_str());
}

int conv_out_dim(int in, int k, int s, int p) { return (in + 2 * p - k) / s + 1; }

}  // namespace

Var Var::leaf(Tensor value, bool requires_grad) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    return Var(n);
}

void backward(const Var& loss) {
    if (loss.value().numel() != 1)
        throw DomainError("backward: loss must be a scalar");
    // Iterative post-order DFS for the topological order.
    std::vector<Node*> topo;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, size_t>> stack;
    stack.emplace_back(loss.node().get(), 0);
    visited.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->inputs.size()) {
            Node* child = node->inputs[idx++].get();
            if (child->requires_grad && !visited.count(child)) {
                visited.insert(child);
                stack.emplace_back(child, 0);
            }
        } else {
            topo.push_back(node);
            stack.pop_back();
        }
    }
    loss.node()->ensure_grad().fill(1.0);
    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn && n->requires_grad) n->backward_fn(*n);
    }
}

Var add(const Var& a, const Var& b) {
    check_same_shape(a, b, "add");
    Tensor out = a.value();
    const Tensor& bv = b.value();
    for (size_t i = 0; i < out.numel(); ++i) out[i] += bv[i];
    return Var(make_node(std::move(out), {a.node(), b.node()}, [](Node& n) {
        for (int k = 0; k < 2; ++k) {
            Node* in = n.inputs[k].get();
            if (!in->requires_grad) continue;
            Tensor& g = in->ensure_grad();
            for (size_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i];
        }
    }));
}

Var sub(const Var& a, const Var& b) {
    check_same_shape(a, b, "sub");
    Tensor out = a.value();
    const Tensor& bv = b.value();
    for (size_t i = 0; i < out.numel(); ++i) out[i] -= bv[i];
    return Var(make_node(std::move(out), {a.node(), b.node()}, [](Node& n) {
        if (n.inputs[0]->requires_grad) {
            Tensor& g = n.inputs[0]->ensure_grad();
            for (size_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i];
        }
        if (n.inputs[1]->requires_grad) {
            Tensor& g = n.inputs[1]->ensure_grad();
            for (size_t i = 0; i < g.numel(); ++i) g[i] -= n.grad[i];
        }
    }));
}

Var mul(const Var& a, const Var& b) {
    check_same_shape(a, b, "mul");
    Tensor out = a.value();
    const Tensor& bv = b.value();
    for (size_t i = 0; i < out.numel(); ++i) out[i] *= bv[i];
    return Var(make_node(std::move(out), {a.node(), b.node()}, [](Node& n) {
        const Tensor& av = n.inputs[0]->value;
        const Tensor& bv2 = n.inputs[1]->value;
        if (n.inputs[0]->requires_grad) {
            Tensor& g = n.inputs[0]->ensure_grad();
            for (size_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i] * bv2[i];
        }
        if (n.inputs[1]->requires_grad) {
            Tensor& g = n.inputs[1]->ensure_grad();
            for (size_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i] * av[i];
        }
    }));
}

Var scale(const Var& a, double s) {
    Tensor out = a.value();
    for (size_t i = 0; i < out.numel(); ++i) out[i] *= s;
    return Var(make_node(std::move(out), {a.node()}, [s](Node& n) {
        if (!n.inputs[0]->requires_grad) return;
        Tensor& g = n.inputs[0]->ensure_grad();
        for (size_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i] * s;
    }));
}

Var square(const Var& a) { return mul(a, a); }

Var matmul(const Var& x, const Var& w) {
    const Tensor& xv = x.value();
    const Tensor& wv = w.value();
    if (xv.rank() != 2 || wv.rank() != 2 || xv.dim(1) != wv.dim(0))
        throw DomainError("matmul: incompatible shapes " + xv.shape_str() + " x " + wv.shape_str());
    const int B = xv.dim(0), I = xv.dim(1), O = wv.dim(1);
    Tensor out({B, O});
    for (int b = 0; b < B; ++b) {
        const double* xr = xv.data() + static_cast<size_t>(b) * I;
        double* orow = out.data() + static_cast<size_t>(b) * O;
        for (int i = 0; i < I; ++i) {
            const double xi = xr[i];
            const double* wr = wv.data() + static_cast<size_t>(i) * O;
            for (int o = 0; o < O; ++o) orow[o] += xi * wr[o];
        }
    }
    return Var(make_node(std::move(out), {x.node(), w.node()}, [B, I, O](Node& n) {
        const Tensor& xv2 = n.inputs[0]->value;
        const Tensor& wv2 = n.inputs[1]->value;
        if (n.inputs[0]->requires_grad) {
            Tensor& gx = n.inputs[0]->ensure_grad();
            for (int b = 0; b < B; ++b)
                for (int i = 0; i < I; ++i) {
                    const double* wr = wv2.data() + static_cast<size_t>(i) * O;
                    const double* gr = n.grad.data() + static_cast<size_t>(b) * O;
                    double acc = 0.0;
                    for (int o = 0; o < O; ++o) acc += gr[o] * wr[o];
                    gx[static_cast<size_t>(b) * I + i] += acc;
                }
        }
        if (n.inputs[1]->requires_grad) {
            Tensor& gw = n.inputs[1]->ensure_grad();
            for (int b = 0; b < B; ++b) {
                const double* xr = xv2.data() + static_cast<size_t>(b) * I;
                const double* gr = n.grad.data() + static_cast<size_t>(b) * O;
                for (int i = 0; i < I; ++i) {
                    double* gwr = gw.data() + static_cast<size_t>(i) * O;
                    const double xi = xr[i];
                    for (int o = 0; o < O; ++o) gwr[o] += xi * gr[o];
                }
            }
        }
    }));
}

Var add_rows(const Var& x, const Var& bias) {
    const Tensor& xv = x.value();
    const Tensor& bv = bias.value();
    if (xv.rank() != 2 || bv.rank() != 1 || xv.dim(1) != bv.dim(0))
        throw DomainError("add_rows: incompatible shapes");
    const int B = xv.dim(0), O = xv.dim(1);
    Tensor out = xv;
    for (int b = 0; b < B; ++b)
        for (int o = 0; o < O; ++o) out[static_cast<size_t>(b) * O + o] += bv[o];
    return Var(make_node(std::move(out), {x.node(), bias.node()}, [B, O](Node& n) {
        if (n.inputs[0]->requires_grad) {
            Tensor& g = n.inputs[0]->ensure_grad();
            for (size_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i];
        }
        if (n.inputs[1]->requires_grad) {
            Tensor& g = n.inputs[1]->ensure_grad();
            for (int b = 0; b < B; ++b)
                for (int o = 0; o < O; ++o) g[o] += n.grad[static_cast<size_t>(b) * O + o];
        }
    }));
}

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
    const Tensor& xv = x.value();
    const Tensor& wv = w.value();
    const Tensor& bv = b.value();
    if (xv.rank() != 4 || wv.rank() != 4)
        throw DomainError("conv2d: expected 4-d input and weight");
    if (xv.dim(1) != wv.dim(1))
        throw DomainError("conv2d: channel mismatch " + xv.shape_str() + " vs " + wv.shape_str());
    const int B = xv.dim(0), IC = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    const int OC = wv.dim(0), KH = wv.dim(2), KW = wv.dim(3);
    const int OH = conv_out_dim(H, KH, stride, pad), OW = conv_out_dim(W, KW, stride, pad);
    if (OH <= 0 || OW <= 0) throw DomainError("conv2d: output collapses to zero size");
    Tensor out({B, OC, OH, OW});
    for (int bb = 0; bb < B; ++bb)
        for (int oc = 0; oc < OC; ++oc) {
            const double bias_v = bv[oc];
            for (int oh = 0; oh < OH; ++oh)
                for (int ow = 0; ow < OW; ++ow) {
                    double acc = bias_v;
                    const int ih0 = oh * stride - pad, iw0 = ow * stride - pad;
                    for (int ic = 0; ic < IC; ++ic)
                        for (int kh = 0; kh < KH; ++kh) {
                            const int ih = ih0 + kh;
                            if (ih < 0 || ih >= H) continue;
                            const double* xrow = &xv.at4(bb, ic, ih, 0);
                            const double* wrow = &wv.at4(oc, ic, kh, 0);
                            for (int kw = 0; kw < KW; ++kw) {
                                const int iw = iw0 + kw;
                                if (iw < 0 || iw >= W) continue;
                                acc += xrow[iw] * wrow[kw];
                            }
                        }
                    out.at4(bb, oc, oh, ow) = acc;
                }
        }
    auto bwd = [B, IC, H, W, OC, KH, KW, OH, OW, stride, pad](Node& n) {
        const Tensor& xv2 = n.inputs[0]->value;
        const Tensor& wv2 = n.inputs[1]->value;
        const bool need_x = n.inputs[0]->requires_grad;
        const bool need_w = n.inputs[1]->requires_grad;
        const bool need_b = n.inputs[2]->requires_grad;
        Tensor* gx = need_x ? &n.inputs[0]->ensure_grad() : nullptr;
        Tensor* gw = need_w ? &n.inputs[1]->ensure_grad() : nullptr;
        Tensor* gb = need_b ? &n.inputs[2]->ensure_grad() : nullptr;
        for (int bb = 0; bb < B; ++bb)
            for (int oc = 0; oc < OC; ++oc)
                for (int oh = 0; oh < OH; ++oh)
                    for (int ow = 0; ow < OW; ++ow) {
                        const double g = n.grad.at4(bb, oc, oh, ow);
                        if (g == 0.0) continue;
                        if (need_b) (*gb)[oc] += g;
                        const int ih0 = oh * stride - pad, iw0 = ow * stride - pad;
                        for (int ic = 0; ic < IC; ++ic)
                            for (int kh = 0; kh < KH; ++kh) {
                                const int ih = ih0 + kh;
                                if (ih < 0 || ih >= H) continue;
                                for (int kw = 0; kw < KW; ++kw) {
                                    const int iw = iw0 + kw;
                                    if (iw < 0 || iw >= W) continue;
                                    if (need_w) gw->at4(oc, ic, kh, kw) += g * xv2.at4(bb, ic, ih, iw);
                                    if (need_x) gx->at4(bb, ic, ih, iw) += g * wv2.at4(oc, ic, kh, kw);
                                }
                            }
                    }
    };
    return Var(make_node(std::move(out), {x.node(), w.node(), b.node()}, std::move(bwd)));
}

Var dwconv2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
    const Tensor& xv = x.value();
    const Tensor& wv = w.value();
    const Tensor& bv = b.value();
    if (xv.rank() != 4 || wv.rank() != 3 || xv.dim(1) != wv.dim(0))
        throw DomainError("dwconv2d: bad shapes " + xv.shape_str() + " / " + wv.shape_str());
    const int B = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    const int KH = wv.dim(1), KW = wv.dim(2);
    const int OH = conv_out_dim(H, KH, stride, pad), OW = conv_out_dim(W, KW, stride, pad);
    if (OH <= 0 || OW <= 0) throw DomainError("dwconv2d: output collapses to zero size");
    Tensor out({B, C, OH, OW});
    for (int bb = 0; bb < B; ++bb)
        for (int c = 0; c < C; ++c)
            for (int oh = 0; oh < OH; ++oh)
                for (int ow = 0; ow < OW; ++ow) {
                    double acc = bv[c];
                    const int ih0 = oh * stride - pad, iw0 = ow * stride - pad;
                    for (int kh = 0; kh < KH; ++kh) {
                        const int ih = ih0 + kh;
                        if (ih < 0 || ih >= H) continue;
                        for (int kw = 0; kw < KW; ++kw) {
                            const int iw = iw0 + kw;
                            if (iw < 0 || iw >= W) continue;
                            acc += xv.at4(bb, c, ih, iw) *
                                   wv[(static_cast<size_t>(c) * KH + kh) * KW + kw];
                        }
                    }
                    out.at4(bb, c, oh, ow) = acc;
                }
    auto bwd = [B, C, H, W, KH, KW, OH, OW, stride, pad](Node& n) {
        const Tensor& xv2 = n.inputs[0]->value;
        const Tensor& wv2 = n.inputs[1]->value;
        const bool need_x = n.inputs[0]->requires_grad;
        const bool need_w = n.inputs[1]->requires_grad;
        const bool need_b = n.inputs[2]->requires_grad;
        Tensor* gx = need_x ? &n.inputs[0]->ensure_grad() : nullptr;
        Tensor* gw = need_w ? &n.inputs[1]->ensure_grad() : nullptr;
        Tensor* gb = need_b ? &n.inputs[2]->ensure_grad() : nullptr;
        for (int bb = 0; bb < B; ++bb)
            for (int c = 0; c < C; ++c)
                for (int oh = 0; oh < OH; ++oh)
                    for (int ow = 0; ow < OW; ++ow) {
                        const double g = n.grad.at4(bb, c, oh, ow);
                        if (g == 0.0) continue;
                        if (need_b) (*gb)[c] += g;
                        const int ih0 = oh * stride - pad, iw0 = ow * stride - pad;
                        for (int kh = 0; kh < KH; ++kh) {
                            const int ih = ih0 + kh;
                            if (ih < 0 || ih >= H) continue;
                            for (int kw = 0; kw < KW; ++kw) {
                                const int iw = iw0 + kw;
                                if (iw < 0 || iw >= W) continue;
                                const size_t wi = (static_cast<size_t>(c) * KH + kh) * KW + kw;
                                if (need_w) (*gw)[wi] += g * xv2.at4(bb, c, ih, iw);
                                if (need_x) gx->at4(bb, c, ih, iw) += g * wv2[wi];
                            }
                        }
                    }
    };
    return Var(make_node(std::move(out), {x.node(), w.node(), b.node()}, std::move(bwd)));
}

Var relu(const Var& x) {
    Tensor out = x.value();
    for (size_t i = 0; i < out.numel(); ++i)
        if (out[i] < 0.0) out[i] = 0.0;
    return Var(make_node(std::move(out), {x.node()}, [](Node& n) {
        if (!n.inputs[0]->requires_grad) return;
        const Tensor& xv = n.inputs[0]->value;
        Tensor& g = n.inputs[0]->ensure_grad();
        for (size_t i = 0; i < g.numel(); ++i)
            if (xv[i] > 0.0) g[i] += n.grad[i];
    }));
}

Var avgpool2d(const Var& x, int k, int s) {
    const Tensor& xv = x.value();
    if (xv.rank() != 4) throw DomainError("avgpool2d: expected 4-d input");
    const int B = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    const int OH = (H - k) / s + 1, OW = (W - k) / s + 1;
    if (OH <= 0 || OW <= 0) throw DomainError("avgpool2d: output collapses to zero size");
    const double inv = 1.0 / (k * k);
    Tensor out({B, C, OH, OW});
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c)
            for (int oh = 0; oh < OH; ++oh)
                for (int ow = 0; ow < OW; ++ow) {
                    double acc = 0.0;
                    for (int kh = 0; kh < k; ++kh)
                        for (int kw = 0; kw < k; ++kw)
                            acc += xv.at4(b, c, oh * s + kh, ow * s + kw);
                    out.at4(b, c, oh, ow) = acc * inv;
                }
    return Var(make_node(std::move(out), {x.node()}, [B, C, OH, OW, k, s, inv](Node& n) {
        if (!n.inputs[0]->requires_grad) return;
        Tensor& g = n.inputs[0]->ensure_grad();
        for (int b = 0; b < B; ++b)
            for (int c = 0; c < C; ++c)
                for (int oh = 0; oh < OH; ++oh)
                    for (int ow = 0; ow < OW; ++ow) {
                        const double gv = n.grad.at4(b, c, oh, ow) * inv;
                        for (int kh = 0; kh < k; ++kh)
                            for (int kw = 0; kw < k; ++kw)
                                g.at4(b, c, oh * s + kh, ow * s + kw) += gv;
                    }
    }));
}

Var global_avgpool(const Var& x) {
    const Tensor& xv = x.value();
    if (xv.rank() != 4) throw DomainError("global_avgpool: expected 4-d input");
    const int B = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    const double inv = 1.0 / (H * W);
    Tensor out({B, C});
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
            double acc = 0.0;
            const double* p = &xv.at4(b, c, 0, 0);
            for (int i = 0; i < H * W; ++i) acc += p[i];
            out.at2(b, c) = acc * inv;
        }
    return Var(make_node(std::move(out), {x.node()}, [B, C, H, W, inv](Node& n) {
        if (!n.inputs[0]->requires_grad) return;
        Tensor& g = n.inputs[0]->ensure_grad();
        for (int b = 0; b < B; ++b)
            for (int c = 0; c < C; ++c) {
                const double gv = n.grad.at2(b, c) * inv;
                double* p = &g.at4(b, c, 0, 0);
                for (int i = 0; i < H * W; ++i) p[i] += gv;
            }
    }));
}

Var flatten(const Var& x) {
    const Tensor& xv = x.value();
    if (xv.rank() < 2) throw DomainError("flatten: expected rank >= 2");
    const int B = xv.dim(0);
    const int D = static_cast<int>(xv.numel()) / B;
    Tensor out({B, D});
    for (size_t i = 0; i < xv.numel(); ++i) out[i] = xv[i];
    return Var(make_node(std::move(out), {x.node()}, [](Node& n) {
        if (!n.inputs[0]->requires_grad) return;
        Tensor& g = n.inputs[0]->ensure_grad();
        for (size_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i];
    }));
}

// Bilinear with half-pixel centers: src = (dst + 0.5) * in/out - 0.5, clamped.
Var bilinear_resize(const Var& x, int out_h, int out_w) {
    const Tensor& xv = x.value();
    if (xv.rank() != 4) throw DomainError("bilinear_resize: expected 4-d input");
    const int B = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    if (out_h == H && out_w == W) {
        // Identity resize still creates a node so adapters stay uniform.
    }
    struct Tap {
        int i0, i1;
        double w0, w1;
    };
    auto make_taps = [](int in, int out) {
        std::vector<Tap> taps(out);
        const double scale = static_cast<double>(in) / out;
        for (int o = 0; o < out; ++o) {
            double src = (o + 0.5) * scale - 0.5;
            if (src < 0) src = 0;
            if (src > in - 1) src = in - 1;
            int i0 = static_cast<int>(src);
            int i1 = std::min(i0 + 1, in - 1);
            double w1 = src - i0;
            taps[o] = {i0, i1, 1.0 - w1, w1};
        }
        return taps;
    };
    auto ty = make_taps(H, out_h);
    auto tx = make_taps(W, out_w);
    Tensor out({B, C, out_h, out_w});
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c)
            for (int oh = 0; oh < out_h; ++oh)
                for (int ow = 0; ow < out_w; ++ow) {
                    const Tap& y = ty[oh];
                    const Tap& xw = tx[ow];
                    out.at4(b, c, oh, ow) =
                        y.w0 * (xw.w0 * xv.at4(b, c, y.i0, xw.i0) + xw.w1 * xv.at4(b, c, y.i0, xw.i1)) +
                        y.w1 * (xw.w0 * xv.at4(b, c, y.i1, xw.i0) + xw.w1 * xv.at4(b, c, y.i1, xw.i1));
                }
    return Var(make_node(std::move(out), {x.node()}, [B, C, out_h, out_w, ty, tx](Node& n) {
        if (!n.inputs[0]->requires_grad) return;
        Tensor& g = n.inputs[0]->ensure_grad();
        for (int b = 0; b < B; ++b)
            for (int c = 0; c < C; ++c)
                for (int oh = 0; oh < out_h; ++oh)
                    for (int ow = 0; ow < out_w; ++ow) {
                        const Tap& y = ty[oh];
                        const Tap& xw = tx[ow];
                        const double gv = n.grad.at4(b, c, oh, ow);
                        g.at4(b, c, y.i0, xw.i0) += gv * y.w0 * xw.w0;
                        g.at4(b, c, y.i0, xw.i1) += gv * y.w0 * xw.w1;
                        g.at4(b, c, y.i1, xw.i0) += gv * y.w1 * xw.w0;
                        g.at4(b, c, y.i1, xw.i1) += gv * y.w1 * xw.w1;
                    }
    }));
}

Var mul_channels(const Var& x, const Var& w) {
    const Tensor& xv = x.value();
    const Tensor& wv = w.value();
    if (xv.rank() != 4 || wv.rank() != 1 || xv.dim(1) != wv.dim(0))
        throw DomainError("mul_channels: bad shapes");
    const int B = xv.dim(0), C = xv.dim(1), HW = xv.dim(2) * xv.dim(3);
    Tensor out = xv;
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
            double* p = out.data() + (static_cast<size_t>(b) * C + c) * HW;
            const double s = wv[c];
            for (int i = 0; i < HW; ++i) p[i] *= s;
        }
    return Var(make_node(std::move(out), {x.node(), w.node()}, [B, C, HW](Node& n) {
        const Tensor& xv2 = n.inputs[0]->value;
        const Tensor& wv2 = n.inputs[1]->value;
        if (n.inputs[0]->requires_grad) {
            Tensor& g = n.inputs[0]->ensure_grad();
            for (int b = 0; b < B; ++b)
                for (int c = 0; c < C; ++c) {
                    const size_t base = (static_cast<size_t>(b) * C + c) * HW;
                    for (int i = 0; i < HW; ++i) g[base + i] += n.grad[base + i] * wv2[c];
                }
        }
        if (n.inputs[1]->requires_grad) {
            Tensor& g = n.inputs[1]->ensure_grad();
            for (int b = 0; b < B; ++b)
                for (int c = 0; c < C; ++c) {
                    const size_t base = (static_cast<size_t>(b) * C + c) * HW;
                    double acc = 0.0;
                    for (int i = 0; i < HW; ++i) acc += n.grad[base + i] * xv2[base + i];
                    g[c] += acc;
                }
        }
    }));
}

Var mul_cols(const Var& x, const Var& w) {
    const Tensor& xv = x.value();
    const Tensor& wv = w.value();
    if (xv.rank() != 2 || wv.rank() != 1 || xv.dim(1) != wv.dim(0))
        throw DomainError("mul_cols: bad shapes");
    const int B = xv.dim(0), D = xv.dim(1);
    Tensor out = xv;
    for (int b = 0; b < B; ++b)
        for (int d = 0; d < D; ++d) out[static_cast<size_t>(b) * D + d] *= wv[d];
    return Var(make_node(std::move(out), {x.node(), w.node()}, [B, D](Node& n) {
        const Tensor& xv2 = n.inputs[0]->value;
        const Tensor& wv2 = n.inputs[1]->value;
        if (n.inputs[0]->requires_grad) {
            Tensor& g = n.inputs[0]->ensure_grad();
            for (int b = 0; b < B; ++b)
                for (int d = 0; d < D; ++d)
                    g[static_cast<size_t>(b) * D + d] += n.grad[static_cast<size_t>(b) * D + d] * wv2[d];
        }
        if (n.inputs[1]->requires_grad) {
            Tensor& g = n.inputs[1]->ensure_grad();
            for (int b = 0; b < B; ++b)
                for (int d = 0; d < D; ++d)
                    g[d] += n.grad[static_cast<size_t>(b) * D + d] * xv2[static_cast<size_t>(b) * D + d];
        }
    }));
}

Var broadcast_spatial(const Var& x, int h, int w) {
    const Tensor& xv = x.value();
    if (xv.rank() != 2) throw DomainError("broadcast_spatial: expected 2-d input");
    const int B = xv.dim(0), C = xv.dim(1);
    Tensor out({B, C, h, w});
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
            const double v = xv.at2(b, c);
            double* p = &out.at4(b, c, 0, 0);
            for (int i = 0; i < h * w; ++i) p[i] = v;
        }
    return Var(make_node(std::move(out), {x.node()}, [B, C, h, w](Node& n) {
        if (!n.inputs[0]->requires_grad) return;
        Tensor& g = n.inputs[0]->ensure_grad();
        for (int b = 0; b < B; ++b)
            for (int c = 0; c < C; ++c) {
                const double* p = &n.grad.at4(b, c, 0, 0);
                double acc = 0.0;
                for (int i = 0; i < h * w; ++i) acc += p[i];
                g.at2(b, c) += acc;
            }
    }));
}

Var softmax_rows(const Var& x) {
    const Tensor& xv = x.value();
    if (xv.rank() != 2) throw DomainError("softmax_rows: expected 2-d input");
    const int B = xv.dim(0), N = xv.dim(1);
    Tensor out({B, N});
    for (int b = 0; b < B; ++b) {
        const double* row = xv.data() + static_cast<size_t>(b) * N;
        double m = row[0];
        for (int i = 1; i < N; ++i) m = std::max(m, row[i]);
        double sum = 0.0;
        double* orow = out.data() + static_cast<size_t>(b) * N;
        for (int i = 0; i < N; ++i) {
            orow[i] = std::exp(row[i] - m);
            sum += orow[i];
        }
        for (int i = 0; i < N; ++i) orow[i] /= sum;
    }
    return Var(make_node(std::move(out), {x.node()}, [B, N](Node& n) {
        if (!n.inputs[0]->requires_grad) return;
        Tensor& g = n.inputs[0]->ensure_grad();
        for (int b = 0; b < B; ++b) {
            const double* y = n.value.data() + static_cast<size_t>(b) * N;
            const double* gy = n.grad.data() + static_cast<size_t>(b) * N;
            double dot = 0.0;
            for (int i = 0; i < N; ++i) dot += y[i] * gy[i];
            double* gx = g.data() + static_cast<size_t>(b) * N;
            for (int i = 0; i < N; ++i) gx[i] += y[i] * (gy[i] - dot);
        }
    }));
}

Var cross_entropy_with_logits(const Var& logits, const std::vector<int>& labels) {
    const Tensor& lv = logits.value();
    if (lv.rank() != 2) throw DomainError("cross_entropy: expected 2-d logits");
    const int B = lv.dim(0), C = lv.dim(1);
    if (static_cast<int>(labels.size()) != B)
        throw DomainError("cross_entropy: label count does not match batch");
    for (int y : labels)
        if (y < 0 || y >= C) throw DomainError("cross_entropy: label out of range");
    double total = 0.0;
    for (int b = 0; b < B; ++b) {
        const double* row = lv.data() + static_cast<size_t>(b) * C;
        double m = row[0];
        for (int i = 1; i < C; ++i) m = std::max(m, row[i]);
        double sum = 0.0;
        for (int i = 0; i < C; ++i) sum += std::exp(row[i] - m);
        total += std::log(sum) + m - row[labels[b]];
    }
    Tensor out = Tensor::scalar(total / B);
    return Var(make_node(std::move(out), {logits.node()}, [B, C, labels](Node& n) {
        if (!n.inputs[0]->requires_grad) return;
        const Tensor& lv2 = n.inputs[0]->value;
        Tensor& g = n.inputs[0]->ensure_grad();
        const double gscale = n.grad[0] / B;
        for (int b = 0; b < B; ++b) {
            const double* row = lv2.data() + static_cast<size_t>(b) * C;
            double m = row[0];
            for (int i = 1; i < C; ++i) m = std::max(m, row[i]);
            double sum = 0.0;
            for (int i = 0; i < C; ++i) sum += std::exp(row[i] - m);
            double* grow = g.data() + static_cast<size_t>(b) * C;
            for (int i = 0; i < C; ++i) {
                double p = std::exp(row[i] - m) / sum;
                grow[i] += gscale * (p - (i == labels[b] ? 1.0 : 0.0));
            }
        }
    }));
}

Var mean_all(const Var& x) {
    const Tensor& xv = x.value();
    const size_t n = xv.numel();
    double acc = 0.0;
    for (size_t i = 0; i < n; ++i) acc += xv[i];
    Tensor out = Tensor::scalar(acc / n);
    return Var(make_node(std::move(out), {x.node()}, [n](Node& nd) {
        if (!nd.inputs[0]->requires_grad) return;
        Tensor& g = nd.inputs[0]->ensure_grad();
        const double gv = nd.grad[0] / static_cast<double>(n);
        for (size_t i = 0; i < n; ++i) g[i] += gv;
    }));
}

Var sum_all(const Var& x) {
    const Tensor& xv = x.value();
    const size_t n = xv.numel();
    double acc = 0.0;
    for (size_t i = 0; i < n; ++i) acc += xv[i];
    Tensor out = Tensor::scalar(acc);
    return Var(make_node(std::move(out), {x.node()}, [n](Node& nd) {
        if (!nd.inputs[0]->requires_grad) return;
        Tensor& g = nd.inputs[0]->ensure_grad();
        const double gv = nd.grad[0];
        for (size_t i = 0; i < n; ++i) g[i] += gv;
    }));
}

Var mean_rows(const Var& x) {
    const Tensor& xv = x.value();
    if (xv.rank() != 2) throw DomainError("mean_rows: expected 2-d input");
    const int B = xv.dim(0), N = xv.dim(1);
    Tensor out({N});
    for (int b = 0; b < B; ++b)
        for (int i = 0; i < N; ++i) out[i] += xv[static_cast<size_t>(b) * N + i];
    for (int i = 0; i < N; ++i) out[i] /= B;
    return Var(make_node(std::move(out), {x.node()}, [B, N](Node& n) {
        if (!n.inputs[0]->requires_grad) return;
        Tensor& g = n.inputs[0]->ensure_grad();
        for (int b = 0; b < B; ++b)
            for (int i = 0; i < N; ++i) g[static_cast<size_t>(b) * N + i] += n.grad[i] / B;
    }));
}

Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw DomainError("concat_cols: empty input");
    const int B = parts[0].value().dim(0);
    int total = 0;
    std::vector<int> widths;
    std::vector<NodePtr> inputs;
    for (const auto& p : parts) {
        if (p.value().rank() != 2 || p.value().dim(0) != B)
            throw DomainError("concat_cols: inconsistent shapes");
        widths.push_back(p.value().dim(1));
        total += p.value().dim(1);
        inputs.push_back(p.node());
    }
    Tensor out({B, total});
    int off = 0;
    for (size_t k = 0; k < parts.size(); ++k) {
        const Tensor& pv = parts[k].value();
        for (int b = 0; b < B; ++b)
            for (int i = 0; i < widths[k]; ++i)
                out[static_cast<size_t>(b) * total + off + i] = pv[static_cast<size_t>(b) * widths[k] + i];
        off += widths[k];
    }
    return Var(make_node(std::move(out), std::move(inputs), [B, total, widths](Node& n) {
        int off2 = 0;
        for (size_t k = 0; k < n.inputs.size(); ++k) {
            const int w = widths[k];
            if (n.inputs[k]->requires_grad) {
                Tensor& g = n.inputs[k]->ensure_grad();
                for (int b = 0; b < B; ++b)
                    for (int i = 0; i < w; ++i)
                        g[static_cast<size_t>(b) * w + i] += n.grad[static_cast<size_t>(b) * total + off2 + i];
            }
            off2 += w;
        }
    }));
}

Var gather_scalar(const Var& v, int index) {
    const Tensor& vv = v.value();
    if (vv.rank() != 1 || index < 0 || index >= vv.dim(0))
        throw DomainError("gather_scalar: bad index");
    Tensor out = Tensor::scalar(vv[index]);
    return Var(make_node(std::move(out), {v.node()}, [index](Node& n) {
        if (!n.inputs[0]->requires_grad) return;
        n.inputs[0]->ensure_grad()[index] += n.grad[0];
    }));
}

}  // namespace moss::ad
