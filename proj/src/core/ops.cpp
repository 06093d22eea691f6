#include "core/ops.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>

namespace dfkd {
namespace ops {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using MapConst = Eigen::Map<const RowMat>;

void require(bool cond, const std::string& msg) {
    if (!cond) throw std::runtime_error("ops: " + msg);
}

Var make_node(Tensor value, std::vector<Var> parents) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->parents = std::move(parents);
    for (const auto& p : n->parents)
        if (p->requires_grad) n->requires_grad = true;
    return n;
}

// Unpacks (B,C,H,W).
struct Shape4 {
    int b, c, h, w;
};
Shape4 as4(const Var& v, const char* who) {
    require(v->value.rank() == 4, std::string(who) + " expects a rank-4 input, got " + v->value.shape_str());
    const auto& s = v->value.shape();
    return {s[0], s[1], s[2], s[3]};
}

// x plane (C,H,W) scattered into col (C*kh*kw, OH*OW) with zero padding.
void im2col(const double* x, int C, int H, int W, int kh, int kw, int stride, int pad,
            int OH, int OW, double* col) {
    for (int c = 0; c < C; ++c) {
        const double* xc = x + static_cast<int64_t>(c) * H * W;
        for (int ki = 0; ki < kh; ++ki) {
            for (int kj = 0; kj < kw; ++kj) {
                double* row = col + (static_cast<int64_t>(c) * kh * kw + ki * kw + kj) * OH * OW;
                for (int oh = 0; oh < OH; ++oh) {
                    int ih = oh * stride - pad + ki;
                    if (ih < 0 || ih >= H) {
                        for (int ow = 0; ow < OW; ++ow) row[oh * OW + ow] = 0.0;
                        continue;
                    }
                    const double* xr = xc + static_cast<int64_t>(ih) * W;
                    for (int ow = 0; ow < OW; ++ow) {
                        int iw = ow * stride - pad + kj;
                        row[oh * OW + ow] = (iw >= 0 && iw < W) ? xr[iw] : 0.0;
                    }
                }
            }
        }
    }
}

void col2im_add(const double* col, int C, int H, int W, int kh, int kw, int stride, int pad,
                int OH, int OW, double* x) {
    for (int c = 0; c < C; ++c) {
        double* xc = x + static_cast<int64_t>(c) * H * W;
        for (int ki = 0; ki < kh; ++ki) {
            for (int kj = 0; kj < kw; ++kj) {
                const double* row = col + (static_cast<int64_t>(c) * kh * kw + ki * kw + kj) * OH * OW;
                for (int oh = 0; oh < OH; ++oh) {
                    int ih = oh * stride - pad + ki;
                    if (ih < 0 || ih >= H) continue;
                    double* xr = xc + static_cast<int64_t>(ih) * W;
                    for (int ow = 0; ow < OW; ++ow) {
                        int iw = ow * stride - pad + kj;
                        if (iw >= 0 && iw < W) xr[iw] += row[oh * OW + ow];
                    }
                }
            }
        }
    }
}

} // namespace

// ----------------------------------------------------------------------------
// elementwise
// ----------------------------------------------------------------------------

Var add(const Var& a, const Var& b) {
    require(a->value.same_shape(b->value), "add shape mismatch " + a->value.shape_str() + " vs " + b->value.shape_str());
    Tensor y = a->value;
    const double* pb = b->value.data();
    for (int64_t i = 0; i < y.numel(); ++i) y[i] += pb[i];
    Var n = make_node(std::move(y), {a, b});
    n->backprop = [](Node& self) {
        const Tensor& g = self.grad;
        for (int k = 0; k < 2; ++k) {
            Node* p = self.parents[static_cast<size_t>(k)].get();
            if (!p->requires_grad) continue;
            double* pg = p->grad_ref().data();
            for (int64_t i = 0; i < g.numel(); ++i) pg[i] += g[i];
        }
    };
    return n;
}

Var sub(const Var& a, const Var& b) {
    require(a->value.same_shape(b->value), "sub shape mismatch " + a->value.shape_str() + " vs " + b->value.shape_str());
    Tensor y = a->value;
    const double* pb = b->value.data();
    for (int64_t i = 0; i < y.numel(); ++i) y[i] -= pb[i];
    Var n = make_node(std::move(y), {a, b});
    n->backprop = [](Node& self) {
        const Tensor& g = self.grad;
        Node* pa = self.parents[0].get();
        Node* pb2 = self.parents[1].get();
        if (pa->requires_grad) {
            double* pg = pa->grad_ref().data();
            for (int64_t i = 0; i < g.numel(); ++i) pg[i] += g[i];
        }
        if (pb2->requires_grad) {
            double* pg = pb2->grad_ref().data();
            for (int64_t i = 0; i < g.numel(); ++i) pg[i] -= g[i];
        }
    };
    return n;
}

Var mul(const Var& a, const Var& b) {
    require(a->value.same_shape(b->value), "mul shape mismatch " + a->value.shape_str() + " vs " + b->value.shape_str());
    Tensor y = a->value;
    const double* pb = b->value.data();
    for (int64_t i = 0; i < y.numel(); ++i) y[i] *= pb[i];
    Var n = make_node(std::move(y), {a, b});
    n->backprop = [](Node& self) {
        const Tensor& g = self.grad;
        Node* pa = self.parents[0].get();
        Node* pb2 = self.parents[1].get();
        if (pa->requires_grad) {
            double* pg = pa->grad_ref().data();
            const double* vb = pb2->value.data();
            for (int64_t i = 0; i < g.numel(); ++i) pg[i] += g[i] * vb[i];
        }
        if (pb2->requires_grad) {
            double* pg = pb2->grad_ref().data();
            const double* va = pa->value.data();
            for (int64_t i = 0; i < g.numel(); ++i) pg[i] += g[i] * va[i];
        }
    };
    return n;
}

Var scale(const Var& a, double k) {
    Tensor y = a->value;
    for (int64_t i = 0; i < y.numel(); ++i) y[i] *= k;
    Var n = make_node(std::move(y), {a});
    n->backprop = [k](Node& self) {
        Node* p = self.parents[0].get();
        if (!p->requires_grad) return;
        double* pg = p->grad_ref().data();
        const Tensor& g = self.grad;
        for (int64_t i = 0; i < g.numel(); ++i) pg[i] += k * g[i];
    };
    return n;
}

Var abs_val(const Var& a) {
    Tensor y = a->value;
    for (int64_t i = 0; i < y.numel(); ++i) y[i] = std::fabs(y[i]);
    Var n = make_node(std::move(y), {a});
    n->backprop = [](Node& self) {
        Node* p = self.parents[0].get();
        if (!p->requires_grad) return;
        double* pg = p->grad_ref().data();
        const double* x = p->value.data();
        const Tensor& g = self.grad;
        for (int64_t i = 0; i < g.numel(); ++i) {
            double s = x[i] > 0.0 ? 1.0 : (x[i] < 0.0 ? -1.0 : 0.0);
            pg[i] += s * g[i];
        }
    };
    return n;
}

Var exp_val(const Var& a) {
    Tensor y = a->value;
    for (int64_t i = 0; i < y.numel(); ++i) y[i] = std::exp(y[i]);
    Var n = make_node(std::move(y), {a});
    n->backprop = [](Node& self) {
        Node* p = self.parents[0].get();
        if (!p->requires_grad) return;
        double* pg = p->grad_ref().data();
        const double* y = self.value.data();
        const Tensor& g = self.grad;
        for (int64_t i = 0; i < g.numel(); ++i) pg[i] += y[i] * g[i];
    };
    return n;
}

Var sqrt_val(const Var& a) {
    Tensor y = a->value;
    for (int64_t i = 0; i < y.numel(); ++i) {
        require(!(y[i] < 0.0), "sqrt of negative value"); // nan passes through
        y[i] = std::sqrt(y[i]);
    }
    Var n = make_node(std::move(y), {a});
    n->backprop = [](Node& self) {
        Node* p = self.parents[0].get();
        if (!p->requires_grad) return;
        double* pg = p->grad_ref().data();
        const double* y = self.value.data();
        const Tensor& g = self.grad;
        for (int64_t i = 0; i < g.numel(); ++i)
            if (y[i] > 0.0) pg[i] += g[i] / (2.0 * y[i]);
    };
    return n;
}

Var relu(const Var& a) {
    Tensor y = a->value;
    // keep nan in the negative branch so divergence stays visible downstream
    for (int64_t i = 0; i < y.numel(); ++i) y[i] = y[i] > 0.0 ? y[i] : (y[i] == y[i] ? 0.0 : y[i]);
    Var n = make_node(std::move(y), {a});
    n->backprop = [](Node& self) {
        Node* p = self.parents[0].get();
        if (!p->requires_grad) return;
        double* pg = p->grad_ref().data();
        const double* x = p->value.data();
        const Tensor& g = self.grad;
        for (int64_t i = 0; i < g.numel(); ++i)
            if (x[i] > 0.0) pg[i] += g[i];
    };
    return n;
}

Var leaky_relu(const Var& a, double slope) {
    Tensor y = a->value;
    for (int64_t i = 0; i < y.numel(); ++i) y[i] = y[i] > 0.0 ? y[i] : slope * y[i];
    Var n = make_node(std::move(y), {a});
    n->backprop = [slope](Node& self) {
        Node* p = self.parents[0].get();
        if (!p->requires_grad) return;
        double* pg = p->grad_ref().data();
        const double* x = p->value.data();
        const Tensor& g = self.grad;
        for (int64_t i = 0; i < g.numel(); ++i) pg[i] += (x[i] > 0.0 ? 1.0 : slope) * g[i];
    };
    return n;
}

Var tanh_val(const Var& a) {
    Tensor y = a->value;
    for (int64_t i = 0; i < y.numel(); ++i) y[i] = std::tanh(y[i]);
    Var n = make_node(std::move(y), {a});
    n->backprop = [](Node& self) {
        Node* p = self.parents[0].get();
        if (!p->requires_grad) return;
        double* pg = p->grad_ref().data();
        const double* y = self.value.data();
        const Tensor& g = self.grad;
        for (int64_t i = 0; i < g.numel(); ++i) pg[i] += (1.0 - y[i] * y[i]) * g[i];
    };
    return n;
}

Var average_list(const std::vector<Var>& xs) {
    require(!xs.empty(), "average_list needs at least one input");
    Tensor y = xs[0]->value;
    for (size_t k = 1; k < xs.size(); ++k) {
        require(xs[k]->value.same_shape(y), "average_list shape mismatch");
        const double* p = xs[k]->value.data();
        for (int64_t i = 0; i < y.numel(); ++i) y[i] += p[i];
    }
    double inv = 1.0 / static_cast<double>(xs.size());
    for (int64_t i = 0; i < y.numel(); ++i) y[i] *= inv;
    Var n = make_node(std::move(y), xs);
    n->backprop = [inv](Node& self) {
        const Tensor& g = self.grad;
        for (auto& pv : self.parents) {
            Node* p = pv.get();
            if (!p->requires_grad) continue;
            double* pg = p->grad_ref().data();
            for (int64_t i = 0; i < g.numel(); ++i) pg[i] += inv * g[i];
        }
    };
    return n;
}

// ----------------------------------------------------------------------------
// shape
// ----------------------------------------------------------------------------

Var reshape(const Var& a, std::vector<int> shape) {
    require(Tensor::shape_numel(shape) == a->value.numel(),
            "reshape to " + shape_to_string(shape) + " changes element count from " + a->value.shape_str());
    Tensor y = Tensor::from_vector(std::move(shape), a->value.vec());
    Var n = make_node(std::move(y), {a});
    n->backprop = [](Node& self) {
        Node* p = self.parents[0].get();
        if (!p->requires_grad) return;
        double* pg = p->grad_ref().data();
        const Tensor& g = self.grad;
        for (int64_t i = 0; i < g.numel(); ++i) pg[i] += g[i];
    };
    return n;
}

Var concat_channels(const Var& a, const Var& b) {
    Shape4 sa = as4(a, "concat_channels");
    Shape4 sb = as4(b, "concat_channels");
    require(sa.b == sb.b && sa.h == sb.h && sa.w == sb.w,
            "concat_channels needs matching batch and spatial dims, got " + a->value.shape_str() + " vs " + b->value.shape_str());
    Tensor y({sa.b, sa.c + sb.c, sa.h, sa.w});
    int64_t plane = static_cast<int64_t>(sa.h) * sa.w;
    const double* pa = a->value.data();
    const double* pb = b->value.data();
    double* py = y.data();
    for (int i = 0; i < sa.b; ++i) {
        std::copy(pa + i * sa.c * plane, pa + (i + 1) * sa.c * plane, py + static_cast<int64_t>(i) * (sa.c + sb.c) * plane);
        std::copy(pb + i * sb.c * plane, pb + (i + 1) * sb.c * plane, py + static_cast<int64_t>(i) * (sa.c + sb.c) * plane + sa.c * plane);
    }
    Var n = make_node(std::move(y), {a, b});
    int ca = sa.c, cb = sb.c;
    n->backprop = [ca, cb, plane](Node& self) {
        Node* pa2 = self.parents[0].get();
        Node* pb2 = self.parents[1].get();
        const Tensor& g = self.grad;
        int batch = self.value.size(0);
        for (int i = 0; i < batch; ++i) {
            const double* gi = g.data() + static_cast<int64_t>(i) * (ca + cb) * plane;
            if (pa2->requires_grad) {
                double* pg = pa2->grad_ref().data() + static_cast<int64_t>(i) * ca * plane;
                for (int64_t k = 0; k < ca * plane; ++k) pg[k] += gi[k];
            }
            if (pb2->requires_grad) {
                double* pg = pb2->grad_ref().data() + static_cast<int64_t>(i) * cb * plane;
                for (int64_t k = 0; k < cb * plane; ++k) pg[k] += gi[ca * plane + k];
            }
        }
    };
    return n;
}

Var stack_rows(const std::vector<Var>& xs) {
    require(!xs.empty(), "stack_rows needs at least one input");
    const Tensor& first = xs[0]->value;
    require(first.rank() == 2, "stack_rows expects (B,D) inputs, got " + first.shape_str());
    int b = first.size(0);
    int d = first.size(1);
    for (const Var& x : xs)
        require(x->value.rank() == 2 && x->value.size(0) == b && x->value.size(1) == d,
                "stack_rows inputs must share one shape, got " + first.shape_str() + " vs " + x->value.shape_str());
    int n = static_cast<int>(xs.size());
    Tensor y({b, n, d});
    double* py = y.data();
    for (int j = 0; j < n; ++j) {
        const double* px = xs[j]->value.data();
        for (int i = 0; i < b; ++i)
            std::copy(px + static_cast<int64_t>(i) * d, px + static_cast<int64_t>(i + 1) * d,
                      py + (static_cast<int64_t>(i) * n + j) * d);
    }
    Var node = make_node(std::move(y), xs);
    node->backprop = [b, n, d](Node& self) {
        const double* g = self.grad.data();
        for (int j = 0; j < n; ++j) {
            Node* p = self.parents[j].get();
            if (!p->requires_grad) continue;
            double* pg = p->grad_ref().data();
            for (int i = 0; i < b; ++i) {
                const double* gi = g + (static_cast<int64_t>(i) * n + j) * d;
                double* po = pg + static_cast<int64_t>(i) * d;
                for (int k = 0; k < d; ++k) po[k] += gi[k];
            }
        }
    };
    return node;
}

Var select_item(const Var& a, int64_t flat_index) {
    require(flat_index >= 0 && flat_index < a->value.numel(), "select_item index out of range");
    Var n = make_node(Tensor::scalar(a->value[flat_index]), {a});
    n->backprop = [flat_index](Node& self) {
        Node* p = self.parents[0].get();
        if (!p->requires_grad) return;
        p->grad_ref()[flat_index] += self.grad[0];
    };
    return n;
}

Var upsample_nearest2(const Var& a) {
    Shape4 s = as4(a, "upsample_nearest2");
    Tensor y({s.b, s.c, s.h * 2, s.w * 2});
    const double* px = a->value.data();
    double* py = y.data();
    for (int b = 0; b < s.b; ++b)
        for (int c = 0; c < s.c; ++c) {
            const double* xp = px + (static_cast<int64_t>(b) * s.c + c) * s.h * s.w;
            double* yp = py + (static_cast<int64_t>(b) * s.c + c) * s.h * s.w * 4;
            for (int h = 0; h < s.h; ++h)
                for (int w = 0; w < s.w; ++w) {
                    double v = xp[h * s.w + w];
                    int oh = h * 2, ow = w * 2, W2 = s.w * 2;
                    yp[oh * W2 + ow] = v;
                    yp[oh * W2 + ow + 1] = v;
                    yp[(oh + 1) * W2 + ow] = v;
                    yp[(oh + 1) * W2 + ow + 1] = v;
                }
        }
    Var n = make_node(std::move(y), {a});
    n->backprop = [s](Node& self) {
        Node* p = self.parents[0].get();
        if (!p->requires_grad) return;
        double* pg = p->grad_ref().data();
        const double* g = self.grad.data();
        for (int b = 0; b < s.b; ++b)
            for (int c = 0; c < s.c; ++c) {
                double* xp = pg + (static_cast<int64_t>(b) * s.c + c) * s.h * s.w;
                const double* gp = g + (static_cast<int64_t>(b) * s.c + c) * s.h * s.w * 4;
                for (int h = 0; h < s.h; ++h)
                    for (int w = 0; w < s.w; ++w) {
                        int oh = h * 2, ow = w * 2, W2 = s.w * 2;
                        xp[h * s.w + w] += gp[oh * W2 + ow] + gp[oh * W2 + ow + 1] +
                                           gp[(oh + 1) * W2 + ow] + gp[(oh + 1) * W2 + ow + 1];
                    }
            }
    };
    return n;
}

// ----------------------------------------------------------------------------
// dense / convolution
// ----------------------------------------------------------------------------

Var linear(const Var& x, const Var& w, const Var& b) {
    require(x->value.rank() == 2 && w->value.rank() == 2, "linear expects 2-d input and weight");
    int B = x->value.size(0), din = x->value.size(1);
    int dout = w->value.size(0);
    require(w->value.size(1) == din,
            "linear weight " + w->value.shape_str() + " does not accept input " + x->value.shape_str());
    Tensor y({B, dout});
    {
        MapConst X(x->value.data(), B, din);
        MapConst W(w->value.data(), dout, din);
        MapMat Y(y.data(), B, dout);
        Y.noalias() = X * W.transpose();
    }
    std::vector<Var> parents = {x, w};
    if (b) {
        require(b->value.rank() == 1 && b->value.size(0) == dout, "linear bias shape mismatch");
        const double* pb = b->value.data();
        for (int i = 0; i < B; ++i)
            for (int j = 0; j < dout; ++j) y[static_cast<int64_t>(i) * dout + j] += pb[j];
        parents.push_back(b);
    }
    Var n = make_node(std::move(y), std::move(parents));
    n->backprop = [B, din, dout](Node& self) {
        Node* px = self.parents[0].get();
        Node* pw = self.parents[1].get();
        MapConst G(self.grad.data(), B, dout);
        if (px->requires_grad) {
            MapMat GX(px->grad_ref().data(), B, din);
            MapConst W(pw->value.data(), dout, din);
            GX.noalias() += G * W;
        }
        if (pw->requires_grad) {
            MapMat GW(pw->grad_ref().data(), dout, din);
            MapConst X(px->value.data(), B, din);
            GW.noalias() += G.transpose() * X;
        }
        if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
            double* gb = self.parents[2]->grad_ref().data();
            for (int i = 0; i < B; ++i)
                for (int j = 0; j < dout; ++j) gb[j] += self.grad[static_cast<int64_t>(i) * dout + j];
        }
    };
    return n;
}

namespace {

struct ConvDims {
    int B, C, H, W, OC, kh, kw, OH, OW, stride, pad, groups;
};

ConvDims conv_dims(const Var& x, const Var& w, int stride, int pad, int groups) {
    Shape4 sx = as4(x, "conv2d");
    require(w->value.rank() == 4, "conv2d weight must be rank 4");
    ConvDims d;
    d.B = sx.b; d.C = sx.c; d.H = sx.h; d.W = sx.w;
    d.OC = w->value.size(0);
    d.kh = w->value.size(2);
    d.kw = w->value.size(3);
    d.stride = stride; d.pad = pad; d.groups = groups;
    require(stride >= 1, "conv2d stride must be >= 1");
    if (groups == 1) {
        require(w->value.size(1) == d.C,
                "conv2d weight expects " + std::to_string(w->value.size(1)) + " input channels, got " + std::to_string(d.C));
    } else {
        require(groups == d.C && d.OC == d.C && w->value.size(1) == 1,
                "conv2d supports groups=1 or depthwise (groups == in channels == out channels)");
    }
    d.OH = (d.H + 2 * pad - d.kh) / stride + 1;
    d.OW = (d.W + 2 * pad - d.kw) / stride + 1;
    require(d.OH >= 1 && d.OW >= 1, "conv2d output would be empty for input " + x->value.shape_str());
    return d;
}

void conv_forward_dense(const ConvDims& d, const double* x, const double* w, Tensor& y,
                        std::vector<double>& colbuf) {
    int K = d.C * d.kh * d.kw;
    int64_t ohw = static_cast<int64_t>(d.OH) * d.OW;
    colbuf.resize(static_cast<size_t>(K) * ohw);
    MapConst W(w, d.OC, K);
    for (int b = 0; b < d.B; ++b) {
        im2col(x + static_cast<int64_t>(b) * d.C * d.H * d.W, d.C, d.H, d.W, d.kh, d.kw,
               d.stride, d.pad, d.OH, d.OW, colbuf.data());
        MapConst col(colbuf.data(), K, ohw);
        MapMat Y(y.data() + static_cast<int64_t>(b) * d.OC * ohw, d.OC, ohw);
        Y.noalias() = W * col;
    }
}

void conv_forward_depthwise(const ConvDims& d, const double* x, const double* w, Tensor& y) {
    for (int b = 0; b < d.B; ++b)
        for (int c = 0; c < d.C; ++c) {
            const double* xc = x + (static_cast<int64_t>(b) * d.C + c) * d.H * d.W;
            const double* wc = w + static_cast<int64_t>(c) * d.kh * d.kw;
            double* yc = y.data() + (static_cast<int64_t>(b) * d.C + c) * d.OH * d.OW;
            for (int oh = 0; oh < d.OH; ++oh)
                for (int ow = 0; ow < d.OW; ++ow) {
                    double acc = 0.0;
                    for (int ki = 0; ki < d.kh; ++ki) {
                        int ih = oh * d.stride - d.pad + ki;
                        if (ih < 0 || ih >= d.H) continue;
                        for (int kj = 0; kj < d.kw; ++kj) {
                            int iw = ow * d.stride - d.pad + kj;
                            if (iw < 0 || iw >= d.W) continue;
                            acc += wc[ki * d.kw + kj] * xc[ih * d.W + iw];
                        }
                    }
                    yc[oh * d.OW + ow] = acc;
                }
        }
}

} // namespace

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad, int groups) {
    ConvDims d = conv_dims(x, w, stride, pad, groups);
    Tensor y({d.B, d.OC, d.OH, d.OW});
    if (groups == 1) {
        std::vector<double> colbuf;
        conv_forward_dense(d, x->value.data(), w->value.data(), y, colbuf);
    } else {
        conv_forward_depthwise(d, x->value.data(), w->value.data(), y);
    }
    std::vector<Var> parents = {x, w};
    if (b) {
        require(b->value.rank() == 1 && b->value.size(0) == d.OC, "conv2d bias shape mismatch");
        const double* pb = b->value.data();
        int64_t ohw = static_cast<int64_t>(d.OH) * d.OW;
        for (int i = 0; i < d.B; ++i)
            for (int c = 0; c < d.OC; ++c) {
                double* yp = y.data() + (static_cast<int64_t>(i) * d.OC + c) * ohw;
                for (int64_t k = 0; k < ohw; ++k) yp[k] += pb[c];
            }
        parents.push_back(b);
    }
    Var n = make_node(std::move(y), std::move(parents));
    n->backprop = [d](Node& self) {
        Node* px = self.parents[0].get();
        Node* pw = self.parents[1].get();
        const double* g = self.grad.data();
        int64_t ohw = static_cast<int64_t>(d.OH) * d.OW;
        if (d.groups == 1) {
            int K = d.C * d.kh * d.kw;
            std::vector<double> colbuf(static_cast<size_t>(K) * ohw);
            std::vector<double> dcolbuf;
            if (px->requires_grad) dcolbuf.resize(static_cast<size_t>(K) * ohw);
            MapConst W(pw->value.data(), d.OC, K);
            for (int b2 = 0; b2 < d.B; ++b2) {
                MapConst G(g + static_cast<int64_t>(b2) * d.OC * ohw, d.OC, ohw);
                if (pw->requires_grad || px->requires_grad)
                    im2col(px->value.data() + static_cast<int64_t>(b2) * d.C * d.H * d.W,
                           d.C, d.H, d.W, d.kh, d.kw, d.stride, d.pad, d.OH, d.OW, colbuf.data());
                if (pw->requires_grad) {
                    MapMat GW(pw->grad_ref().data(), d.OC, K);
                    MapConst col(colbuf.data(), K, ohw);
                    GW.noalias() += G * col.transpose();
                }
                if (px->requires_grad) {
                    MapMat dcol(dcolbuf.data(), K, ohw);
                    dcol.noalias() = W.transpose() * G;
                    col2im_add(dcolbuf.data(), d.C, d.H, d.W, d.kh, d.kw, d.stride, d.pad,
                               d.OH, d.OW, px->grad_ref().data() + static_cast<int64_t>(b2) * d.C * d.H * d.W);
                }
            }
        } else {
            for (int b2 = 0; b2 < d.B; ++b2)
                for (int c = 0; c < d.C; ++c) {
                    const double* gc = g + (static_cast<int64_t>(b2) * d.C + c) * ohw;
                    const double* xc = px->value.data() + (static_cast<int64_t>(b2) * d.C + c) * d.H * d.W;
                    const double* wc = pw->value.data() + static_cast<int64_t>(c) * d.kh * d.kw;
                    double* gxc = px->requires_grad
                                      ? px->grad_ref().data() + (static_cast<int64_t>(b2) * d.C + c) * d.H * d.W
                                      : nullptr;
                    double* gwc = pw->requires_grad
                                      ? pw->grad_ref().data() + static_cast<int64_t>(c) * d.kh * d.kw
                                      : nullptr;
                    for (int oh = 0; oh < d.OH; ++oh)
                        for (int ow = 0; ow < d.OW; ++ow) {
                            double gv = gc[oh * d.OW + ow];
                            if (gv == 0.0) continue;
                            for (int ki = 0; ki < d.kh; ++ki) {
                                int ih = oh * d.stride - d.pad + ki;
                                if (ih < 0 || ih >= d.H) continue;
                                for (int kj = 0; kj < d.kw; ++kj) {
                                    int iw = ow * d.stride - d.pad + kj;
                                    if (iw < 0 || iw >= d.W) continue;
                                    if (gxc) gxc[ih * d.W + iw] += wc[ki * d.kw + kj] * gv;
                                    if (gwc) gwc[ki * d.kw + kj] += xc[ih * d.W + iw] * gv;
                                }
                            }
                        }
                }
        }
        if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
            double* gb = self.parents[2]->grad_ref().data();
            for (int b2 = 0; b2 < d.B; ++b2)
                for (int c = 0; c < d.OC; ++c) {
                    const double* gc = g + (static_cast<int64_t>(b2) * d.OC + c) * ohw;
                    double acc = 0.0;
                    for (int64_t k2 = 0; k2 < ohw; ++k2) acc += gc[k2];
                    gb[c] += acc;
                }
        }
    };
    return n;
}

Var conv_transpose2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
    Shape4 sx = as4(x, "conv_transpose2d");
    require(w->value.rank() == 4, "conv_transpose2d weight must be rank 4");
    require(w->value.size(0) == sx.c,
            "conv_transpose2d weight expects " + std::to_string(w->value.size(0)) + " input channels, got " + std::to_string(sx.c));
    int OC = w->value.size(1), kh = w->value.size(2), kw = w->value.size(3);
    int OH = (sx.h - 1) * stride - 2 * pad + kh;
    int OW = (sx.w - 1) * stride - 2 * pad + kw;
    require(OH >= 1 && OW >= 1, "conv_transpose2d output would be empty");
    Tensor y({sx.b, OC, OH, OW});
    const double* px = x->value.data();
    const double* pw = w->value.data();
    for (int bi = 0; bi < sx.b; ++bi)
        for (int ic = 0; ic < sx.c; ++ic) {
            const double* xc = px + (static_cast<int64_t>(bi) * sx.c + ic) * sx.h * sx.w;
            for (int oc = 0; oc < OC; ++oc) {
                const double* wc = pw + (static_cast<int64_t>(ic) * OC + oc) * kh * kw;
                double* yc = y.data() + (static_cast<int64_t>(bi) * OC + oc) * OH * OW;
                for (int ih = 0; ih < sx.h; ++ih)
                    for (int iw = 0; iw < sx.w; ++iw) {
                        double v = xc[ih * sx.w + iw];
                        if (v == 0.0) continue;
                        for (int ki = 0; ki < kh; ++ki) {
                            int oh = ih * stride - pad + ki;
                            if (oh < 0 || oh >= OH) continue;
                            for (int kj = 0; kj < kw; ++kj) {
                                int ow = iw * stride - pad + kj;
                                if (ow < 0 || ow >= OW) continue;
                                yc[oh * OW + ow] += v * wc[ki * kw + kj];
                            }
                        }
                    }
            }
        }
    std::vector<Var> parents = {x, w};
    if (b) {
        require(b->value.rank() == 1 && b->value.size(0) == OC, "conv_transpose2d bias shape mismatch");
        const double* pb = b->value.data();
        for (int bi = 0; bi < sx.b; ++bi)
            for (int oc = 0; oc < OC; ++oc) {
                double* yc = y.data() + (static_cast<int64_t>(bi) * OC + oc) * OH * OW;
                for (int64_t k = 0; k < static_cast<int64_t>(OH) * OW; ++k) yc[k] += pb[oc];
            }
        parents.push_back(b);
    }
    Var n = make_node(std::move(y), std::move(parents));
    int C = sx.c, H = sx.h, Wd = sx.w, Bn = sx.b;
    n->backprop = [C, H, Wd, Bn, OC, kh, kw, OH, OW, stride, pad](Node& self) {
        Node* px2 = self.parents[0].get();
        Node* pw2 = self.parents[1].get();
        const double* g = self.grad.data();
        for (int bi = 0; bi < Bn; ++bi)
            for (int ic = 0; ic < C; ++ic) {
                const double* xc = px2->value.data() + (static_cast<int64_t>(bi) * C + ic) * H * Wd;
                double* gxc = px2->requires_grad
                                  ? px2->grad_ref().data() + (static_cast<int64_t>(bi) * C + ic) * H * Wd
                                  : nullptr;
                for (int oc = 0; oc < OC; ++oc) {
                    const double* wc = pw2->value.data() + (static_cast<int64_t>(ic) * OC + oc) * kh * kw;
                    double* gwc = pw2->requires_grad
                                      ? pw2->grad_ref().data() + (static_cast<int64_t>(ic) * OC + oc) * kh * kw
                                      : nullptr;
                    const double* gc = g + (static_cast<int64_t>(bi) * OC + oc) * OH * OW;
                    for (int ih = 0; ih < H; ++ih)
                        for (int iw = 0; iw < Wd; ++iw) {
                            double xv = xc[ih * Wd + iw];
                            double gx = 0.0;
                            for (int ki = 0; ki < kh; ++ki) {
                                int oh = ih * stride - pad + ki;
                                if (oh < 0 || oh >= OH) continue;
                                for (int kj = 0; kj < kw; ++kj) {
                                    int ow = iw * stride - pad + kj;
                                    if (ow < 0 || ow >= OW) continue;
                                    double gv = gc[oh * OW + ow];
                                    gx += wc[ki * kw + kj] * gv;
                                    if (gwc) gwc[ki * kw + kj] += xv * gv;
                                }
                            }
                            if (gxc) gxc[ih * Wd + iw] += gx;
                        }
                }
            }
        if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
            double* gb = self.parents[2]->grad_ref().data();
            for (int bi = 0; bi < Bn; ++bi)
                for (int oc = 0; oc < OC; ++oc) {
                    const double* gc = g + (static_cast<int64_t>(bi) * OC + oc) * OH * OW;
                    double acc = 0.0;
                    for (int64_t k = 0; k < static_cast<int64_t>(OH) * OW; ++k) acc += gc[k];
                    gb[oc] += acc;
                }
        }
    };
    return n;
}

Var global_avg_pool(const Var& x) {
    Shape4 s = as4(x, "global_avg_pool");
    Tensor y({s.b, s.c});
    int64_t plane = static_cast<int64_t>(s.h) * s.w;
    double inv = 1.0 / static_cast<double>(plane);
    const double* px = x->value.data();
    for (int b = 0; b < s.b; ++b)
        for (int c = 0; c < s.c; ++c) {
            const double* xp = px + (static_cast<int64_t>(b) * s.c + c) * plane;
            double acc = 0.0;
            for (int64_t k = 0; k < plane; ++k) acc += xp[k];
            y[static_cast<int64_t>(b) * s.c + c] = acc * inv;
        }
    Var n = make_node(std::move(y), {x});
    n->backprop = [s, plane, inv](Node& self) {
        Node* p = self.parents[0].get();
        if (!p->requires_grad) return;
        double* pg = p->grad_ref().data();
        const double* g = self.grad.data();
        for (int b = 0; b < s.b; ++b)
            for (int c = 0; c < s.c; ++c) {
                double gv = g[static_cast<int64_t>(b) * s.c + c] * inv;
                double* xp = pg + (static_cast<int64_t>(b) * s.c + c) * plane;
                for (int64_t k = 0; k < plane; ++k) xp[k] += gv;
            }
    };
    return n;
}

// ----------------------------------------------------------------------------
// normalization
// ----------------------------------------------------------------------------

Var batchnorm_train(const Var& x, const Var& gamma, const Var& beta, double eps,
                    Tensor* save_mean, Tensor* save_var) {
    Shape4 s = as4(x, "batchnorm_train");
    require((gamma == nullptr) == (beta == nullptr), "batchnorm affine needs both gamma and beta");
    int64_t plane = static_cast<int64_t>(s.h) * s.w;
    int64_t m = static_cast<int64_t>(s.b) * plane;
    require(m >= 1, "batchnorm_train needs a non-empty batch");

    Tensor mu({s.c}), var({s.c});
    const double* px = x->value.data();
    for (int c = 0; c < s.c; ++c) {
        double acc = 0.0;
        for (int b = 0; b < s.b; ++b) {
            const double* xp = px + (static_cast<int64_t>(b) * s.c + c) * plane;
            for (int64_t k = 0; k < plane; ++k) acc += xp[k];
        }
        mu[c] = acc / static_cast<double>(m);
    }
    for (int c = 0; c < s.c; ++c) {
        double acc = 0.0;
        for (int b = 0; b < s.b; ++b) {
            const double* xp = px + (static_cast<int64_t>(b) * s.c + c) * plane;
            for (int64_t k = 0; k < plane; ++k) {
                double d = xp[k] - mu[c];
                acc += d * d;
            }
        }
        var[c] = acc / static_cast<double>(m);
    }
    if (save_mean) *save_mean = mu;
    if (save_var) *save_var = var;

    Tensor inv_std({s.c});
    for (int c = 0; c < s.c; ++c) inv_std[c] = 1.0 / std::sqrt(var[c] + eps);

    Tensor xhat({s.b, s.c, s.h, s.w});
    Tensor y({s.b, s.c, s.h, s.w});
    bool affine = gamma != nullptr;
    for (int b = 0; b < s.b; ++b)
        for (int c = 0; c < s.c; ++c) {
            const double* xp = px + (static_cast<int64_t>(b) * s.c + c) * plane;
            double* hp = xhat.data() + (static_cast<int64_t>(b) * s.c + c) * plane;
            double* yp = y.data() + (static_cast<int64_t>(b) * s.c + c) * plane;
            double gm = affine ? gamma->value[c] : 1.0;
            double bt = affine ? beta->value[c] : 0.0;
            for (int64_t k = 0; k < plane; ++k) {
                double h = (xp[k] - mu[c]) * inv_std[c];
                hp[k] = h;
                yp[k] = gm * h + bt;
            }
        }

    std::vector<Var> parents = {x};
    if (affine) {
        parents.push_back(gamma);
        parents.push_back(beta);
    }
    Var n = make_node(std::move(y), std::move(parents));
    n->backprop = [s, plane, m, affine, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
        Node* px2 = self.parents[0].get();
        Node* pg2 = affine ? self.parents[1].get() : nullptr;
        Node* pb2 = affine ? self.parents[2].get() : nullptr;
        const double* g = self.grad.data();
        const double* h = xhat.data();
        double invm = 1.0 / static_cast<double>(m);
        for (int c = 0; c < s.c; ++c) {
            double sum_g = 0.0, sum_gh = 0.0;
            for (int b = 0; b < s.b; ++b) {
                const double* gp = g + (static_cast<int64_t>(b) * s.c + c) * plane;
                const double* hp = h + (static_cast<int64_t>(b) * s.c + c) * plane;
                for (int64_t k = 0; k < plane; ++k) {
                    sum_g += gp[k];
                    sum_gh += gp[k] * hp[k];
                }
            }
            if (pb2 && pb2->requires_grad) pb2->grad_ref()[c] += sum_g;
            if (pg2 && pg2->requires_grad) pg2->grad_ref()[c] += sum_gh;
            if (px2->requires_grad) {
                double gm = affine ? pg2->value[c] : 1.0;
                double k1 = gm * inv_std[c];
                double mg = sum_g * invm, mgh = sum_gh * invm;
                double* xg = px2->grad_ref().data();
                for (int b = 0; b < s.b; ++b) {
                    double* xp = xg + (static_cast<int64_t>(b) * s.c + c) * plane;
                    const double* gp = g + (static_cast<int64_t>(b) * s.c + c) * plane;
                    const double* hp = h + (static_cast<int64_t>(b) * s.c + c) * plane;
                    for (int64_t k = 0; k < plane; ++k) xp[k] += k1 * (gp[k] - mg - hp[k] * mgh);
                }
            }
        }
    };
    return n;
}

Var batchnorm_eval(const Var& x, const Var& gamma, const Var& beta,
                   const Tensor& running_mean, const Tensor& running_var, double eps) {
    Shape4 s = as4(x, "batchnorm_eval");
    require((gamma == nullptr) == (beta == nullptr), "batchnorm affine needs both gamma and beta");
    require(running_mean.numel() == s.c && running_var.numel() == s.c, "batchnorm running stats shape mismatch");
    int64_t plane = static_cast<int64_t>(s.h) * s.w;
    Tensor inv_std({s.c});
    for (int c = 0; c < s.c; ++c) inv_std[c] = 1.0 / std::sqrt(running_var[c] + eps);
    bool affine = gamma != nullptr;
    Tensor y({s.b, s.c, s.h, s.w});
    const double* px = x->value.data();
    for (int b = 0; b < s.b; ++b)
        for (int c = 0; c < s.c; ++c) {
            const double* xp = px + (static_cast<int64_t>(b) * s.c + c) * plane;
            double* yp = y.data() + (static_cast<int64_t>(b) * s.c + c) * plane;
            double gm = affine ? gamma->value[c] : 1.0;
            double bt = affine ? beta->value[c] : 0.0;
            double mu = running_mean[c];
            for (int64_t k = 0; k < plane; ++k) yp[k] = gm * (xp[k] - mu) * inv_std[c] + bt;
        }
    std::vector<Var> parents = {x};
    if (affine) {
        parents.push_back(gamma);
        parents.push_back(beta);
    }
    Var n = make_node(std::move(y), std::move(parents));
    n->backprop = [s, plane, affine, inv_std = std::move(inv_std), rm = running_mean](Node& self) {
        Node* px2 = self.parents[0].get();
        Node* pg2 = affine ? self.parents[1].get() : nullptr;
        Node* pb2 = affine ? self.parents[2].get() : nullptr;
        const double* g = self.grad.data();
        for (int c = 0; c < s.c; ++c) {
            double gm = affine ? pg2->value[c] : 1.0;
            double sum_g = 0.0, sum_gh = 0.0;
            for (int b = 0; b < s.b; ++b) {
                const double* gp = g + (static_cast<int64_t>(b) * s.c + c) * plane;
                const double* xp = px2->value.data() + (static_cast<int64_t>(b) * s.c + c) * plane;
                for (int64_t k = 0; k < plane; ++k) {
                    sum_g += gp[k];
                    sum_gh += gp[k] * (xp[k] - rm[c]) * inv_std[c];
                }
            }
            if (pb2 && pb2->requires_grad) pb2->grad_ref()[c] += sum_g;
            if (pg2 && pg2->requires_grad) pg2->grad_ref()[c] += sum_gh;
            if (px2->requires_grad) {
                double k1 = gm * inv_std[c];
                double* xg = px2->grad_ref().data();
                for (int b = 0; b < s.b; ++b) {
                    double* xp = xg + (static_cast<int64_t>(b) * s.c + c) * plane;
                    const double* gp = g + (static_cast<int64_t>(b) * s.c + c) * plane;
                    for (int64_t k = 0; k < plane; ++k) xp[k] += k1 * gp[k];
                }
            }
        }
    };
    return n;
}

Var channel_mean(const Var& x) {
    Shape4 s = as4(x, "channel_mean");
    int64_t plane = static_cast<int64_t>(s.h) * s.w;
    int64_t m = static_cast<int64_t>(s.b) * plane;
    Tensor y({s.c});
    const double* px = x->value.data();
    for (int c = 0; c < s.c; ++c) {
        double acc = 0.0;
        for (int b = 0; b < s.b; ++b) {
            const double* xp = px + (static_cast<int64_t>(b) * s.c + c) * plane;
            for (int64_t k = 0; k < plane; ++k) acc += xp[k];
        }
        y[c] = acc / static_cast<double>(m);
    }
    Var n = make_node(std::move(y), {x});
    n->backprop = [s, plane, m](Node& self) {
        Node* p = self.parents[0].get();
        if (!p->requires_grad) return;
        double invm = 1.0 / static_cast<double>(m);
        double* pg = p->grad_ref().data();
        for (int c = 0; c < s.c; ++c) {
            double gv = self.grad[c] * invm;
            for (int b = 0; b < s.b; ++b) {
                double* xp = pg + (static_cast<int64_t>(b) * s.c + c) * plane;
                for (int64_t k = 0; k < plane; ++k) xp[k] += gv;
            }
        }
    };
    return n;
}

Var channel_var_biased(const Var& x, const Var& mean) {
    Shape4 s = as4(x, "channel_var_biased");
    require(mean->value.numel() == s.c, "channel_var_biased mean shape mismatch");
    int64_t plane = static_cast<int64_t>(s.h) * s.w;
    int64_t m = static_cast<int64_t>(s.b) * plane;
    Tensor y({s.c});
    const double* px = x->value.data();
    const double* pm = mean->value.data();
    for (int c = 0; c < s.c; ++c) {
        double acc = 0.0;
        for (int b = 0; b < s.b; ++b) {
            const double* xp = px + (static_cast<int64_t>(b) * s.c + c) * plane;
            for (int64_t k = 0; k < plane; ++k) {
                double d = xp[k] - pm[c];
                acc += d * d;
            }
        }
        y[c] = acc / static_cast<double>(m);
    }
    Var n = make_node(std::move(y), {x, mean});
    n->backprop = [s, plane, m](Node& self) {
        Node* px2 = self.parents[0].get();
        Node* pm2 = self.parents[1].get();
        double invm = 1.0 / static_cast<double>(m);
        for (int c = 0; c < s.c; ++c) {
            double gv = self.grad[c];
            if (gv == 0.0) continue;
            double mc = pm2->value[c];
            double sum_d = 0.0;
            if (px2->requires_grad) {
                double* pg = px2->grad_ref().data();
                for (int b = 0; b < s.b; ++b) {
                    const double* xp = px2->value.data() + (static_cast<int64_t>(b) * s.c + c) * plane;
                    double* gp = pg + (static_cast<int64_t>(b) * s.c + c) * plane;
                    for (int64_t k = 0; k < plane; ++k) {
                        double d = xp[k] - mc;
                        gp[k] += gv * 2.0 * d * invm;
                        sum_d += d;
                    }
                }
            } else if (pm2->requires_grad) {
                for (int b = 0; b < s.b; ++b) {
                    const double* xp = px2->value.data() + (static_cast<int64_t>(b) * s.c + c) * plane;
                    for (int64_t k = 0; k < plane; ++k) sum_d += xp[k] - mc;
                }
            }
            if (pm2->requires_grad) pm2->grad_ref()[c] += gv * (-2.0) * sum_d * invm;
        }
    };
    return n;
}

// ----------------------------------------------------------------------------
// reductions and loss primitives
// ----------------------------------------------------------------------------

Var sum_rows(const Var& a) {
    require(a->value.rank() == 2, "sum_rows expects a rank-2 input");
    int B = a->value.size(0), C = a->value.size(1);
    Tensor y({B});
    const double* p = a->value.data();
    for (int i = 0; i < B; ++i) {
        double acc = 0.0;
        for (int j = 0; j < C; ++j) acc += p[static_cast<int64_t>(i) * C + j];
        y[i] = acc;
    }
    Var n = make_node(std::move(y), {a});
    n->backprop = [B, C](Node& self) {
        Node* p = self.parents[0].get();
        if (!p->requires_grad) return;
        double* pg = p->grad_ref().data();
        for (int i = 0; i < B; ++i)
            for (int j = 0; j < C; ++j) pg[static_cast<int64_t>(i) * C + j] += self.grad[i];
    };
    return n;
}

Var mean_all(const Var& a) {
    int64_t m = a->value.numel();
    require(m > 0, "mean_all of empty tensor");
    double acc = 0.0;
    const double* p = a->value.data();
    for (int64_t i = 0; i < m; ++i) acc += p[i];
    Var n = make_node(Tensor::scalar(acc / static_cast<double>(m)), {a});
    n->backprop = [m](Node& self) {
        Node* p = self.parents[0].get();
        if (!p->requires_grad) return;
        double gv = self.grad[0] / static_cast<double>(m);
        double* pg = p->grad_ref().data();
        for (int64_t i = 0; i < m; ++i) pg[i] += gv;
    };
    return n;
}

Var l2_norm(const Var& a) {
    double acc = 0.0;
    const double* p = a->value.data();
    for (int64_t i = 0; i < a->value.numel(); ++i) acc += p[i] * p[i];
    double norm = std::sqrt(acc);
    Var n = make_node(Tensor::scalar(norm), {a});
    n->backprop = [](Node& self) {
        Node* p = self.parents[0].get();
        if (!p->requires_grad) return;
        double norm = self.value[0];
        if (norm == 0.0) return; // subgradient 0 at the kink
        double gv = self.grad[0] / norm;
        double* pg = p->grad_ref().data();
        const double* x = p->value.data();
        for (int64_t i = 0; i < p->value.numel(); ++i) pg[i] += gv * x[i];
    };
    return n;
}

namespace {
// Writes row-wise softmax of logits into out (both B x C).
void softmax_fill(const double* logits, int B, int C, double* out) {
    for (int i = 0; i < B; ++i) {
        const double* r = logits + static_cast<int64_t>(i) * C;
        double mx = r[0];
        for (int j = 1; j < C; ++j) mx = std::max(mx, r[j]);
        double z = 0.0;
        for (int j = 0; j < C; ++j) {
            double e = std::exp(r[j] - mx);
            out[static_cast<int64_t>(i) * C + j] = e;
            z += e;
        }
        for (int j = 0; j < C; ++j) out[static_cast<int64_t>(i) * C + j] /= z;
    }
}
} // namespace

Var softmax_rows(const Var& a) {
    require(a->value.rank() == 2, "softmax_rows expects a rank-2 input");
    int B = a->value.size(0), C = a->value.size(1);
    Tensor y({B, C});
    softmax_fill(a->value.data(), B, C, y.data());
    Var n = make_node(std::move(y), {a});
    n->backprop = [B, C](Node& self) {
        Node* p = self.parents[0].get();
        if (!p->requires_grad) return;
        double* pg = p->grad_ref().data();
        const double* y = self.value.data();
        const double* g = self.grad.data();
        for (int i = 0; i < B; ++i) {
            const double* yr = y + static_cast<int64_t>(i) * C;
            const double* gr = g + static_cast<int64_t>(i) * C;
            double dot = 0.0;
            for (int j = 0; j < C; ++j) dot += yr[j] * gr[j];
            double* pr = pg + static_cast<int64_t>(i) * C;
            for (int j = 0; j < C; ++j) pr[j] += yr[j] * (gr[j] - dot);
        }
    };
    return n;
}

Var log_softmax_rows(const Var& a) {
    require(a->value.rank() == 2, "log_softmax_rows expects a rank-2 input");
    int B = a->value.size(0), C = a->value.size(1);
    Tensor y({B, C});
    const double* p = a->value.data();
    for (int i = 0; i < B; ++i) {
        const double* r = p + static_cast<int64_t>(i) * C;
        double mx = r[0];
        for (int j = 1; j < C; ++j) mx = std::max(mx, r[j]);
        double z = 0.0;
        for (int j = 0; j < C; ++j) z += std::exp(r[j] - mx);
        double lse = mx + std::log(z);
        for (int j = 0; j < C; ++j) y[static_cast<int64_t>(i) * C + j] = r[j] - lse;
    }
    Var n = make_node(std::move(y), {a});
    n->backprop = [B, C](Node& self) {
        Node* p = self.parents[0].get();
        if (!p->requires_grad) return;
        double* pg = p->grad_ref().data();
        const double* y = self.value.data();
        const double* g = self.grad.data();
        for (int i = 0; i < B; ++i) {
            const double* yr = y + static_cast<int64_t>(i) * C;
            const double* gr = g + static_cast<int64_t>(i) * C;
            double gsum = 0.0;
            for (int j = 0; j < C; ++j) gsum += gr[j];
            double* pr = pg + static_cast<int64_t>(i) * C;
            for (int j = 0; j < C; ++j) pr[j] += gr[j] - std::exp(yr[j]) * gsum;
        }
    };
    return n;
}

Var cross_entropy_vec(const Var& logits, const std::vector<int>& labels) {
    require(logits->value.rank() == 2, "cross_entropy_vec expects rank-2 logits");
    int B = logits->value.size(0), C = logits->value.size(1);
    require(static_cast<int>(labels.size()) == B, "cross_entropy_vec label count mismatch");
    for (int y : labels) require(y >= 0 && y < C, "cross_entropy_vec label out of range");
    Tensor probs({B, C});
    softmax_fill(logits->value.data(), B, C, probs.data());
    Tensor y({B});
    for (int i = 0; i < B; ++i) {
        double p = probs[static_cast<int64_t>(i) * C + labels[static_cast<size_t>(i)]];
        y[i] = -std::log(std::max(p, 1e-300));
    }
    Var n = make_node(std::move(y), {logits});
    n->backprop = [B, C, labels, probs = std::move(probs)](Node& self) {
        Node* p = self.parents[0].get();
        if (!p->requires_grad) return;
        double* pg = p->grad_ref().data();
        for (int i = 0; i < B; ++i) {
            double gv = self.grad[i];
            const double* pr = probs.data() + static_cast<int64_t>(i) * C;
            double* gr = pg + static_cast<int64_t>(i) * C;
            for (int j = 0; j < C; ++j) gr[j] += gv * (pr[j] - (j == labels[static_cast<size_t>(i)] ? 1.0 : 0.0));
        }
    };
    return n;
}

Var dot_const(const Var& v, const Tensor& weights) {
    require(v->value.numel() == weights.numel(), "dot_const size mismatch");
    double acc = 0.0;
    const double* a = v->value.data();
    const double* w = weights.data();
    for (int64_t i = 0; i < v->value.numel(); ++i) acc += a[i] * w[i];
    Var n = make_node(Tensor::scalar(acc), {v});
    n->backprop = [w = weights](Node& self) {
        Node* p = self.parents[0].get();
        if (!p->requires_grad) return;
        double gv = self.grad[0];
        double* pg = p->grad_ref().data();
        for (int64_t i = 0; i < w.numel(); ++i) pg[i] += gv * w[i];
    };
    return n;
}

// ----------------------------------------------------------------------------
// attention primitives
// ----------------------------------------------------------------------------

Var attention_scores(const Var& feats, const Var& q, double scale) {
    require(feats->value.rank() == 3, "attention_scores expects (B,N,D) features");
    int B = feats->value.size(0), N = feats->value.size(1), D = feats->value.size(2);
    require(q->value.numel() == D, "attention_scores query dimension mismatch");
    Tensor y({B, N});
    const double* f = feats->value.data();
    const double* qv = q->value.data();
    for (int b = 0; b < B; ++b)
        for (int nIdx = 0; nIdx < N; ++nIdx) {
            const double* fr = f + (static_cast<int64_t>(b) * N + nIdx) * D;
            double acc = 0.0;
            for (int d = 0; d < D; ++d) acc += fr[d] * qv[d];
            y[static_cast<int64_t>(b) * N + nIdx] = acc * scale;
        }
    Var n = make_node(std::move(y), {feats, q});
    n->backprop = [B, N, D, scale](Node& self) {
        Node* pf = self.parents[0].get();
        Node* pq = self.parents[1].get();
        const double* g = self.grad.data();
        if (pq->requires_grad) {
            double* qg = pq->grad_ref().data();
            const double* f = pf->value.data();
            for (int b = 0; b < B; ++b)
                for (int nIdx = 0; nIdx < N; ++nIdx) {
                    double gv = g[static_cast<int64_t>(b) * N + nIdx] * scale;
                    const double* fr = f + (static_cast<int64_t>(b) * N + nIdx) * D;
                    for (int d = 0; d < D; ++d) qg[d] += gv * fr[d];
                }
        }
        if (pf->requires_grad) {
            double* fg = pf->grad_ref().data();
            const double* qv = pq->value.data();
            for (int b = 0; b < B; ++b)
                for (int nIdx = 0; nIdx < N; ++nIdx) {
                    double gv = g[static_cast<int64_t>(b) * N + nIdx] * scale;
                    double* fr = fg + (static_cast<int64_t>(b) * N + nIdx) * D;
                    for (int d = 0; d < D; ++d) fr[d] += gv * qv[d];
                }
        }
    };
    return n;
}

Var attention_combine(const Var& weights, const Var& logits) {
    require(weights->value.rank() == 2 && logits->value.rank() == 3, "attention_combine expects (B,N) and (B,N,C)");
    int B = weights->value.size(0), N = weights->value.size(1);
    require(logits->value.size(0) == B && logits->value.size(1) == N, "attention_combine batch/head mismatch");
    int C = logits->value.size(2);
    Tensor y({B, C});
    const double* w = weights->value.data();
    const double* L = logits->value.data();
    for (int b = 0; b < B; ++b) {
        double* yr = y.data() + static_cast<int64_t>(b) * C;
        for (int nIdx = 0; nIdx < N; ++nIdx) {
            double wv = w[static_cast<int64_t>(b) * N + nIdx];
            const double* lr = L + (static_cast<int64_t>(b) * N + nIdx) * C;
            for (int c = 0; c < C; ++c) yr[c] += wv * lr[c];
        }
    }
    Var n = make_node(std::move(y), {weights, logits});
    n->backprop = [B, N, C](Node& self) {
        Node* pw = self.parents[0].get();
        Node* pl = self.parents[1].get();
        const double* g = self.grad.data();
        if (pw->requires_grad) {
            double* wg = pw->grad_ref().data();
            const double* L = pl->value.data();
            for (int b = 0; b < B; ++b)
                for (int nIdx = 0; nIdx < N; ++nIdx) {
                    const double* lr = L + (static_cast<int64_t>(b) * N + nIdx) * C;
                    const double* gr = g + static_cast<int64_t>(b) * C;
                    double acc = 0.0;
                    for (int c = 0; c < C; ++c) acc += lr[c] * gr[c];
                    wg[static_cast<int64_t>(b) * N + nIdx] += acc;
                }
        }
        if (pl->requires_grad) {
            double* lg = pl->grad_ref().data();
            const double* w = pw->value.data();
            for (int b = 0; b < B; ++b)
                for (int nIdx = 0; nIdx < N; ++nIdx) {
                    double wv = w[static_cast<int64_t>(b) * N + nIdx];
                    double* lr = lg + (static_cast<int64_t>(b) * N + nIdx) * C;
                    const double* gr = g + static_cast<int64_t>(b) * C;
                    for (int c = 0; c < C; ++c) lr[c] += wv * gr[c];
                }
        }
    };
    return n;
}

} // namespace ops
} // namespace dfkd
