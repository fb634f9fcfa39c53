#include "cect/tensor.hpp"

#include "cect/errors.hpp"
#include "cect/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace cect {

int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) os << 'x';
        os << s[i];
    }
    os << ']';
    return os.str();
}

std::vector<double>& TensorNode::ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    return grad;
}

// ---- Tensor -------------------------------------------------------------

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad) {
    for (int d : shape)
        if (d <= 0) throw ShapeError("tensor dimension must be positive, got " + shape_str(shape));
    if (shape_numel(shape) != static_cast<int64_t>(values.size()))
        throw ShapeError("data length " + std::to_string(values.size()) +
                         " does not match shape " + shape_str(shape));
    node_ = std::make_shared<TensorNode>();
    node_->shape = std::move(shape);
    node_->data = std::move(values);
    node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) {
    return Tensor(shape, std::vector<double>(shape_numel(shape), 0.0), requires_grad);
}

Tensor Tensor::full(const Shape& shape, double value, bool requires_grad) {
    return Tensor(shape, std::vector<double>(shape_numel(shape), value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return Tensor({1}, {value}, requires_grad);
}

const Shape& Tensor::shape() const { return node_->shape; }
int64_t Tensor::numel() const { return static_cast<int64_t>(node_->data.size()); }
std::vector<double>& Tensor::data() { return node_->data; }
const std::vector<double>& Tensor::data() const { return node_->data; }
bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }
std::vector<double>& Tensor::grad() { return node_->ensure_grad(); }

const std::vector<double>& Tensor::grad() const {
    if (node_->grad.empty()) throw UsageError("gradient not populated; run backward first");
    return node_->grad;
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }
void Tensor::set_requires_grad(bool flag) { node_->requires_grad = flag; }

void Tensor::zero_grad() {
    if (node_) node_->grad.assign(node_->data.size(), 0.0);
}

double Tensor::value() const {
    if (numel() != 1) throw UsageError("value() requires a scalar tensor, shape is " + shape_str(shape()));
    return node_->data[0];
}

double Tensor::at(std::initializer_list<int> idx) const {
    const Shape& s = node_->shape;
    if (idx.size() != s.size()) throw ShapeError("index rank mismatch");
    int64_t flat = 0;
    size_t i = 0;
    for (int v : idx) {
        if (v < 0 || v >= s[i]) throw ShapeError("index out of range");
        flat = flat * s[i] + v;
        ++i;
    }
    return node_->data[flat];
}

Tensor make_op(Shape shape, std::vector<double> data, std::vector<Tensor> parents,
               std::function<void(TensorNode&)> backward_fn) {
    Tensor t(std::move(shape), std::move(data), false);
    bool rg = false;
    for (const Tensor& p : parents) rg = rg || p.requires_grad();
    t.node_->requires_grad = rg;
    if (rg) {
        t.node_->parents = std::move(parents);
        t.node_->backward_fn = std::move(backward_fn);
    }
    return t;
}

BatchNormState BatchNormState::init(int channels) {
    return {Tensor::zeros({channels}), Tensor::full({channels}, 1.0)};
}

// ---- convolution --------------------------------------------------------

namespace {

void check_conv_args(const Tensor& x, const Tensor& w, const Tensor& b, int stride) {
    if (x.shape().size() != 4) throw ShapeError("conv2d input must be NCHW, got " + shape_str(x.shape()));
    if (w.shape().size() != 4) throw ShapeError("conv2d kernel must be FCKK, got " + shape_str(w.shape()));
    const int k = w.shape()[2];
    if (w.shape()[3] != k || k % 2 == 0)
        throw ShapeError("conv2d kernel must be square with odd side, got " + shape_str(w.shape()));
    if (w.shape()[1] != x.shape()[1])
        throw ShapeError("conv2d channel mismatch: input " + shape_str(x.shape()) +
                         " vs kernel " + shape_str(w.shape()));
    if (b.shape().size() != 1 || b.shape()[0] != w.shape()[0])
        throw ShapeError("conv2d bias must be [F], got " + shape_str(b.shape()));
    if (stride != 1 && stride != 2) throw ShapeError("conv2d stride must be 1 or 2");
    if (x.shape()[2] % stride != 0 || x.shape()[3] % stride != 0)
        throw ShapeError("conv2d spatial dims must be divisible by stride");
}

} // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride) {
    check_conv_args(x, w, b, stride);
    const int N = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
    const int F = w.shape()[0], K = w.shape()[2], P = K / 2, S = stride;
    const int OH = H / S, OW = W / S;

    std::vector<double> out(static_cast<size_t>(N) * F * OH * OW);
    {
        const double* xd = x.data().data();
        const double* wd = w.data().data();
        const double* bd = b.data().data();
        double* od = out.data();
        parallel_for(static_cast<int64_t>(N) * F, [&](int64_t lo, int64_t hi) {
            for (int64_t nf = lo; nf < hi; ++nf) {
                const int n = static_cast<int>(nf / F);
                const int f = static_cast<int>(nf % F);
                const double* wf = wd + static_cast<size_t>(f) * C * K * K;
                double* oplane = od + (static_cast<size_t>(n) * F + f) * OH * OW;
                for (int oy = 0; oy < OH; ++oy) {
                    double* orow = oplane + static_cast<size_t>(oy) * OW;
                    for (int ox = 0; ox < OW; ++ox) orow[ox] = bd[f];
                }
                for (int c = 0; c < C; ++c) {
                    const double* xplane = xd + (static_cast<size_t>(n) * C + c) * H * W;
                    const double* wfc = wf + static_cast<size_t>(c) * K * K;
                    for (int oy = 0; oy < OH; ++oy) {
                        double* orow = oplane + static_cast<size_t>(oy) * OW;
                        for (int ky = 0; ky < K; ++ky) {
                            const int iy = oy * S + ky - P;
                            if (iy < 0 || iy >= H) continue;
                            const double* xrow = xplane + static_cast<size_t>(iy) * W;
                            for (int kx = 0; kx < K; ++kx) {
                                const double wv = wfc[ky * K + kx];
                                const int off = kx - P;
                                int lo_x = 0;
                                while (lo_x * S + off < 0) ++lo_x;
                                int hi_x = OW;
                                while (hi_x > lo_x && (hi_x - 1) * S + off >= W) --hi_x;
                                if (S == 1) {
                                    const double* xs = xrow + off;
                                    for (int ox = lo_x; ox < hi_x; ++ox) orow[ox] += wv * xs[ox];
                                } else {
                                    for (int ox = lo_x; ox < hi_x; ++ox)
                                        orow[ox] += wv * xrow[ox * 2 + off];
                                }
                            }
                        }
                    }
                }
            }
        });
    }

    auto bw = [N, C, H, W, F, K, P, S, OH, OW](TensorNode& self) {
        const Tensor& xt = self.parents[0];
        const Tensor& wt = self.parents[1];
        const Tensor& bt = self.parents[2];
        const double* gy = self.grad.data();
        const double* xd = xt.data().data();
        const double* wd = wt.data().data();

        if (bt.requires_grad()) {
            double* db = bt.node()->ensure_grad().data();
            for (int f = 0; f < F; ++f) {
                double acc = 0.0;
                for (int n = 0; n < N; ++n) {
                    const double* gplane = gy + (static_cast<size_t>(n) * F + f) * OH * OW;
                    for (int i = 0; i < OH * OW; ++i) acc += gplane[i];
                }
                db[f] += acc;
            }
        }
        if (wt.requires_grad()) {
            double* dw = wt.node()->ensure_grad().data();
            parallel_for(F, [&](int64_t flo, int64_t fhi) {
                for (int f = static_cast<int>(flo); f < fhi; ++f) {
                    double* dwf = dw + static_cast<size_t>(f) * C * K * K;
                    for (int n = 0; n < N; ++n) {
                        const double* gplane = gy + (static_cast<size_t>(n) * F + f) * OH * OW;
                        for (int c = 0; c < C; ++c) {
                            const double* xplane = xd + (static_cast<size_t>(n) * C + c) * H * W;
                            double* dwfc = dwf + static_cast<size_t>(c) * K * K;
                            for (int ky = 0; ky < K; ++ky)
                                for (int kx = 0; kx < K; ++kx) {
                                    double acc = 0.0;
                                    for (int oy = 0; oy < OH; ++oy) {
                                        const int iy = oy * S + ky - P;
                                        if (iy < 0 || iy >= H) continue;
                                        const double* grow = gplane + static_cast<size_t>(oy) * OW;
                                        const double* xrow = xplane + static_cast<size_t>(iy) * W;
                                        for (int ox = 0; ox < OW; ++ox) {
                                            const int ix = ox * S + kx - P;
                                            if (ix < 0 || ix >= W) continue;
                                            acc += grow[ox] * xrow[ix];
                                        }
                                    }
                                    dwfc[ky * K + kx] += acc;
                                }
                        }
                    }
                }
            });
        }
        if (xt.requires_grad()) {
            double* dx = xt.node()->ensure_grad().data();
            parallel_for(static_cast<int64_t>(N) * C, [&](int64_t lo, int64_t hi) {
                for (int64_t nc = lo; nc < hi; ++nc) {
                    const int n = static_cast<int>(nc / C);
                    const int c = static_cast<int>(nc % C);
                    double* dxplane = dx + (static_cast<size_t>(n) * C + c) * H * W;
                    for (int f = 0; f < F; ++f) {
                        const double* gplane = gy + (static_cast<size_t>(n) * F + f) * OH * OW;
                        const double* wfc = wd + (static_cast<size_t>(f) * C + c) * K * K;
                        for (int ky = 0; ky < K; ++ky)
                            for (int kx = 0; kx < K; ++kx) {
                                const double wv = wfc[ky * K + kx];
                                for (int oy = 0; oy < OH; ++oy) {
                                    const int iy = oy * S + ky - P;
                                    if (iy < 0 || iy >= H) continue;
                                    const double* grow = gplane + static_cast<size_t>(oy) * OW;
                                    double* dxrow = dxplane + static_cast<size_t>(iy) * W;
                                    for (int ox = 0; ox < OW; ++ox) {
                                        const int ix = ox * S + kx - P;
                                        if (ix < 0 || ix >= W) continue;
                                        dxrow[ix] += wv * grow[ox];
                                    }
                                }
                            }
                    }
                }
            });
        }
    };
    return make_op({N, F, OH, OW}, std::move(out), {x, w, b}, bw);
}

Tensor conv2d_transpose(const Tensor& x, const Tensor& w, const Tensor& b) {
    if (x.shape().size() != 4)
        throw ShapeError("conv2d_transpose input must be NCHW, got " + shape_str(x.shape()));
    if (w.shape().size() != 4 || w.shape()[2] != 2 || w.shape()[3] != 2)
        throw ShapeError("conv2d_transpose kernel must be [C,F,2,2], got " + shape_str(w.shape()));
    if (w.shape()[0] != x.shape()[1])
        throw ShapeError("conv2d_transpose channel mismatch: input " + shape_str(x.shape()) +
                         " vs kernel " + shape_str(w.shape()));
    if (b.shape().size() != 1 || b.shape()[0] != w.shape()[1])
        throw ShapeError("conv2d_transpose bias must be [F], got " + shape_str(b.shape()));

    const int N = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
    const int F = w.shape()[1];
    const int OH = 2 * H, OW = 2 * W;

    std::vector<double> out(static_cast<size_t>(N) * F * OH * OW);
    {
        const double* xd = x.data().data();
        const double* wd = w.data().data();
        const double* bd = b.data().data();
        double* od = out.data();
        parallel_for(static_cast<int64_t>(N) * F, [&](int64_t lo, int64_t hi) {
            for (int64_t nf = lo; nf < hi; ++nf) {
                const int n = static_cast<int>(nf / F);
                const int f = static_cast<int>(nf % F);
                double* oplane = od + (static_cast<size_t>(n) * F + f) * OH * OW;
                for (int oy = 0; oy < OH; ++oy) {
                    const int iy = oy >> 1, ky = oy & 1;
                    double* orow = oplane + static_cast<size_t>(oy) * OW;
                    for (int ox = 0; ox < OW; ++ox) orow[ox] = bd[f];
                    for (int c = 0; c < C; ++c) {
                        const double* xrow = xd + ((static_cast<size_t>(n) * C + c) * H + iy) * W;
                        // w[c][f][ky][kx], kx = ox & 1
                        const double* wc = wd + ((static_cast<size_t>(c) * F + f) * 2 + ky) * 2;
                        for (int ox = 0; ox < OW; ++ox)
                            orow[ox] += xrow[ox >> 1] * wc[ox & 1];
                    }
                }
            }
        });
    }

    auto bw = [N, C, H, W, F, OH, OW](TensorNode& self) {
        const Tensor& xt = self.parents[0];
        const Tensor& wt = self.parents[1];
        const Tensor& bt = self.parents[2];
        const double* gy = self.grad.data();
        const double* xd = xt.data().data();
        const double* wd = wt.data().data();

        if (bt.requires_grad()) {
            double* db = bt.node()->ensure_grad().data();
            for (int f = 0; f < F; ++f) {
                double acc = 0.0;
                for (int n = 0; n < N; ++n) {
                    const double* gplane = gy + (static_cast<size_t>(n) * F + f) * OH * OW;
                    for (int i = 0; i < OH * OW; ++i) acc += gplane[i];
                }
                db[f] += acc;
            }
        }
        if (wt.requires_grad()) {
            double* dw = wt.node()->ensure_grad().data();
            parallel_for(C, [&](int64_t clo, int64_t chi) {
                for (int c = static_cast<int>(clo); c < chi; ++c)
                    for (int f = 0; f < F; ++f)
                        for (int ky = 0; ky < 2; ++ky)
                            for (int kx = 0; kx < 2; ++kx) {
                                double acc = 0.0;
                                for (int n = 0; n < N; ++n) {
                                    const double* xplane =
                                        xd + (static_cast<size_t>(n) * C + c) * H * W;
                                    const double* gplane =
                                        gy + (static_cast<size_t>(n) * F + f) * OH * OW;
                                    for (int iy = 0; iy < H; ++iy) {
                                        const double* xrow = xplane + static_cast<size_t>(iy) * W;
                                        const double* grow =
                                            gplane + static_cast<size_t>(2 * iy + ky) * OW + kx;
                                        for (int ix = 0; ix < W; ++ix)
                                            acc += xrow[ix] * grow[2 * ix];
                                    }
                                }
                                dw[((static_cast<size_t>(c) * F + f) * 2 + ky) * 2 + kx] += acc;
                            }
            });
        }
        if (xt.requires_grad()) {
            double* dx = xt.node()->ensure_grad().data();
            parallel_for(static_cast<int64_t>(N) * C, [&](int64_t lo, int64_t hi) {
                for (int64_t nc = lo; nc < hi; ++nc) {
                    const int n = static_cast<int>(nc / C);
                    const int c = static_cast<int>(nc % C);
                    double* dxplane = dx + (static_cast<size_t>(n) * C + c) * H * W;
                    for (int f = 0; f < F; ++f) {
                        const double* gplane = gy + (static_cast<size_t>(n) * F + f) * OH * OW;
                        const double* wc = wd + (static_cast<size_t>(c) * F + f) * 4;
                        for (int ky = 0; ky < 2; ++ky)
                            for (int kx = 0; kx < 2; ++kx) {
                                const double wv = wc[ky * 2 + kx];
                                for (int iy = 0; iy < H; ++iy) {
                                    const double* grow =
                                        gplane + static_cast<size_t>(2 * iy + ky) * OW + kx;
                                    double* dxrow = dxplane + static_cast<size_t>(iy) * W;
                                    for (int ix = 0; ix < W; ++ix)
                                        dxrow[ix] += wv * grow[2 * ix];
                                }
                            }
                    }
                }
            });
        }
    };
    return make_op({N, F, OH, OW}, std::move(out), {x, w, b}, bw);
}

// ---- batch normalization ------------------------------------------------

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  BatchNormState& state, Mode mode, double momentum, double eps) {
    if (x.shape().size() != 4)
        throw ShapeError("batch_norm input must be NCHW, got " + shape_str(x.shape()));
    const int N = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
    if (gamma.shape() != Shape{C} || beta.shape() != Shape{C})
        throw ShapeError("batch_norm gamma/beta must be [C]");
    if (state.running_mean.shape() != Shape{C} || state.running_var.shape() != Shape{C})
        throw ShapeError("batch_norm running stats must be [C]");
    const int64_t M = static_cast<int64_t>(N) * H * W;
    if (mode == Mode::Train && M < 2)
        throw ShapeError("batch_norm train mode needs at least 2 values per channel");

    const double* xd = x.data().data();
    const double* gm = gamma.data().data();
    const double* bt = beta.data().data();

    std::vector<double> mean(C), invstd(C);
    if (mode == Mode::Train) {
        for (int c = 0; c < C; ++c) {
            double s = 0.0;
            for (int n = 0; n < N; ++n) {
                const double* p = xd + (static_cast<size_t>(n) * C + c) * H * W;
                for (int i = 0; i < H * W; ++i) s += p[i];
            }
            const double mu = s / static_cast<double>(M);
            double v = 0.0;
            for (int n = 0; n < N; ++n) {
                const double* p = xd + (static_cast<size_t>(n) * C + c) * H * W;
                for (int i = 0; i < H * W; ++i) {
                    const double d = p[i] - mu;
                    v += d * d;
                }
            }
            const double var = v / static_cast<double>(M);
            mean[c] = mu;
            invstd[c] = 1.0 / std::sqrt(var + eps);
            auto& rm = state.running_mean.data();
            auto& rv = state.running_var.data();
            rm[c] = momentum * rm[c] + (1.0 - momentum) * mu;
            rv[c] = momentum * rv[c] + (1.0 - momentum) * var;
        }
    } else {
        for (int c = 0; c < C; ++c) {
            mean[c] = state.running_mean.data()[c];
            invstd[c] = 1.0 / std::sqrt(state.running_var.data()[c] + eps);
        }
    }

    std::vector<double> out(x.numel());
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const double* p = xd + (static_cast<size_t>(n) * C + c) * H * W;
            double* o = out.data() + (static_cast<size_t>(n) * C + c) * H * W;
            const double mu = mean[c], is = invstd[c], g = gm[c], be = bt[c];
            for (int i = 0; i < H * W; ++i) o[i] = g * (p[i] - mu) * is + be;
        }

    auto bw = [N, C, H, W, M, mode, mean = std::move(mean),
               invstd = std::move(invstd)](TensorNode& self) {
        const Tensor& xt = self.parents[0];
        const Tensor& gt = self.parents[1];
        const Tensor& bt2 = self.parents[2];
        const double* gy = self.grad.data();
        const double* xd2 = xt.data().data();
        const double* gm2 = gt.data().data();

        for (int c = 0; c < C; ++c) {
            const double mu = mean[c], is = invstd[c];
            double s1 = 0.0, s2 = 0.0;
            for (int n = 0; n < N; ++n) {
                const double* g = gy + (static_cast<size_t>(n) * C + c) * H * W;
                const double* p = xd2 + (static_cast<size_t>(n) * C + c) * H * W;
                for (int i = 0; i < H * W; ++i) {
                    s1 += g[i];
                    s2 += g[i] * (p[i] - mu) * is;
                }
            }
            if (gt.requires_grad()) gt.node()->ensure_grad()[c] += s2;
            if (bt2.requires_grad()) bt2.node()->ensure_grad()[c] += s1;
            if (xt.requires_grad()) {
                double* dx = xt.node()->ensure_grad().data();
                const double gsc = gm2[c] * is;
                if (mode == Mode::Train) {
                    const double m1 = s1 / static_cast<double>(M);
                    const double m2 = s2 / static_cast<double>(M);
                    for (int n = 0; n < N; ++n) {
                        const double* g = gy + (static_cast<size_t>(n) * C + c) * H * W;
                        const double* p = xd2 + (static_cast<size_t>(n) * C + c) * H * W;
                        double* d = dx + (static_cast<size_t>(n) * C + c) * H * W;
                        for (int i = 0; i < H * W; ++i) {
                            const double xhat = (p[i] - mu) * is;
                            d[i] += gsc * (g[i] - m1 - xhat * m2);
                        }
                    }
                } else {
                    for (int n = 0; n < N; ++n) {
                        const double* g = gy + (static_cast<size_t>(n) * C + c) * H * W;
                        double* d = dx + (static_cast<size_t>(n) * C + c) * H * W;
                        for (int i = 0; i < H * W; ++i) d[i] += gsc * g[i];
                    }
                }
            }
        }
    };
    return make_op(x.shape(), std::move(out), {x, gamma, beta}, bw);
}

// ---- elementwise ops ----------------------------------------------------

namespace {

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

} // namespace

Tensor relu(const Tensor& x) {
    std::vector<double> out(x.numel());
    const auto& xd = x.data();
    for (size_t i = 0; i < out.size(); ++i) out[i] = xd[i] > 0.0 ? xd[i] : 0.0;
    auto bw = [](TensorNode& self) {
        const Tensor& xt = self.parents[0];
        if (!xt.requires_grad()) return;
        auto& dx = xt.node()->ensure_grad();
        const auto& xd = xt.data();
        for (size_t i = 0; i < dx.size(); ++i)
            if (xd[i] > 0.0) dx[i] += self.grad[i];
    };
    return make_op(x.shape(), std::move(out), {x}, bw);
}

Tensor steep_sigmoid(const Tensor& x, double steepness, double threshold) {
    if (steepness <= 0.0) throw UsageError("steep_sigmoid steepness must be positive");
    std::vector<double> out(x.numel());
    const auto& xd = x.data();
    for (size_t i = 0; i < out.size(); ++i) {
        double z = steepness * (xd[i] - threshold);
        z = std::clamp(z, -60.0, 60.0);
        out[i] = 1.0 / (1.0 + std::exp(-z));
    }
    auto bw = [steepness](TensorNode& self) {
        const Tensor& xt = self.parents[0];
        if (!xt.requires_grad()) return;
        auto& dx = xt.node()->ensure_grad();
        for (size_t i = 0; i < dx.size(); ++i) {
            const double y = self.data[i];
            dx[i] += self.grad[i] * steepness * y * (1.0 - y);
        }
    };
    return make_op(x.shape(), std::move(out), {x}, bw);
}

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    std::vector<double> out(a.numel());
    const auto& ad = a.data();
    const auto& bd = b.data();
    for (size_t i = 0; i < out.size(); ++i) out[i] = ad[i] + bd[i];
    auto bw = [](TensorNode& self) {
        for (int p = 0; p < 2; ++p) {
            const Tensor& t = self.parents[p];
            if (!t.requires_grad()) continue;
            auto& g = t.node()->ensure_grad();
            for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
    };
    return make_op(a.shape(), std::move(out), {a, b}, bw);
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "sub");
    std::vector<double> out(a.numel());
    const auto& ad = a.data();
    const auto& bd = b.data();
    for (size_t i = 0; i < out.size(); ++i) out[i] = ad[i] - bd[i];
    auto bw = [](TensorNode& self) {
        const Tensor& a = self.parents[0];
        const Tensor& b = self.parents[1];
        if (a.requires_grad()) {
            auto& g = a.node()->ensure_grad();
            for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
        if (b.requires_grad()) {
            auto& g = b.node()->ensure_grad();
            for (size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
        }
    };
    return make_op(a.shape(), std::move(out), {a, b}, bw);
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mul");
    std::vector<double> out(a.numel());
    const auto& ad = a.data();
    const auto& bd = b.data();
    for (size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * bd[i];
    auto bw = [](TensorNode& self) {
        const Tensor& a = self.parents[0];
        const Tensor& b = self.parents[1];
        if (a.requires_grad()) {
            auto& g = a.node()->ensure_grad();
            const auto& bd = b.data();
            for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bd[i];
        }
        if (b.requires_grad()) {
            auto& g = b.node()->ensure_grad();
            const auto& ad = a.data();
            for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * ad[i];
        }
    };
    return make_op(a.shape(), std::move(out), {a, b}, bw);
}

Tensor scale(const Tensor& x, double c) {
    std::vector<double> out(x.numel());
    const auto& xd = x.data();
    for (size_t i = 0; i < out.size(); ++i) out[i] = c * xd[i];
    auto bw = [c](TensorNode& self) {
        const Tensor& xt = self.parents[0];
        if (!xt.requires_grad()) return;
        auto& g = xt.node()->ensure_grad();
        for (size_t i = 0; i < g.size(); ++i) g[i] += c * self.grad[i];
    };
    return make_op(x.shape(), std::move(out), {x}, bw);
}

Tensor add_scalar(const Tensor& x, double c) {
    std::vector<double> out(x.numel());
    const auto& xd = x.data();
    for (size_t i = 0; i < out.size(); ++i) out[i] = xd[i] + c;
    auto bw = [](TensorNode& self) {
        const Tensor& xt = self.parents[0];
        if (!xt.requires_grad()) return;
        auto& g = xt.node()->ensure_grad();
        for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    };
    return make_op(x.shape(), std::move(out), {x}, bw);
}

Tensor sum(const Tensor& x) {
    double acc = 0.0;
    for (double v : x.data()) acc += v;
    auto bw = [](TensorNode& self) {
        const Tensor& xt = self.parents[0];
        if (!xt.requires_grad()) return;
        auto& g = xt.node()->ensure_grad();
        const double gy = self.grad[0];
        for (size_t i = 0; i < g.size(); ++i) g[i] += gy;
    };
    return make_op({1}, {acc}, {x}, bw);
}

Tensor sqrt(const Tensor& x) {
    std::vector<double> out(x.numel());
    const auto& xd = x.data();
    for (size_t i = 0; i < out.size(); ++i) out[i] = std::sqrt(xd[i]);
    auto bw = [](TensorNode& self) {
        const Tensor& xt = self.parents[0];
        if (!xt.requires_grad()) return;
        auto& g = xt.node()->ensure_grad();
        for (size_t i = 0; i < g.size(); ++i) {
            const double y = self.data[i];
            if (y > 0.0) g[i] += self.grad[i] * 0.5 / y;
        }
    };
    return make_op(x.shape(), std::move(out), {x}, bw);
}

Tensor log_clamped(const Tensor& x, double floor) {
    std::vector<double> out(x.numel());
    const auto& xd = x.data();
    for (size_t i = 0; i < out.size(); ++i) out[i] = std::log(std::max(xd[i], floor));
    auto bw = [floor](TensorNode& self) {
        const Tensor& xt = self.parents[0];
        if (!xt.requires_grad()) return;
        auto& g = xt.node()->ensure_grad();
        const auto& xd = xt.data();
        for (size_t i = 0; i < g.size(); ++i)
            if (xd[i] > floor) g[i] += self.grad[i] / xd[i];
    };
    return make_op(x.shape(), std::move(out), {x}, bw);
}

Tensor masked_select(const Tensor& x, const Tensor& mask) {
    if (mask.requires_grad()) throw UsageError("masked_select mask must not require grad");
    const bool broadcast = x.shape().size() == 4 && mask.shape().size() == 4 &&
                           mask.shape()[0] == 1 && x.shape()[0] != 1 &&
                           std::equal(x.shape().begin() + 1, x.shape().end(),
                                      mask.shape().begin() + 1);
    if (!broadcast) check_same_shape(x, mask, "masked_select");

    const int64_t block = broadcast ? mask.numel() : x.numel();
    std::vector<double> out(x.numel());
    const auto& xd = x.data();
    const auto& md = mask.data();
    for (int64_t i = 0; i < x.numel(); ++i) out[i] = xd[i] * md[i % block];
    auto bw = [block](TensorNode& self) {
        const Tensor& xt = self.parents[0];
        const Tensor& mt = self.parents[1];
        if (!xt.requires_grad()) return;
        auto& g = xt.node()->ensure_grad();
        const auto& md = mt.data();
        for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * md[i % block];
    };
    return make_op(x.shape(), std::move(out), {x, mask}, bw);
}

Tensor select_sample(const Tensor& x, int n) {
    if (x.shape().size() != 4) throw ShapeError("select_sample input must be NCHW");
    const int N = x.shape()[0];
    if (n < 0 || n >= N) throw ShapeError("select_sample index out of range");
    const int64_t block = x.numel() / N;
    std::vector<double> out(block);
    const auto& xd = x.data();
    std::copy(xd.begin() + n * block, xd.begin() + (n + 1) * block, out.begin());
    auto bw = [n, block](TensorNode& self) {
        const Tensor& xt = self.parents[0];
        if (!xt.requires_grad()) return;
        auto& g = xt.node()->ensure_grad();
        for (int64_t i = 0; i < block; ++i) g[n * block + i] += self.grad[i];
    };
    return make_op({1, x.shape()[1], x.shape()[2], x.shape()[3]}, std::move(out), {x}, bw);
}

// ---- backward -----------------------------------------------------------

void backward(const Tensor& loss) {
    if (!loss.defined() || loss.numel() != 1)
        throw UsageError("backward requires a defined scalar loss tensor");
    if (!loss.requires_grad()) return;

    // Iterative post-order DFS over requires_grad parents; reversing the
    // post-order gives consumers-before-producers, so each node's grad is
    // complete when its backward_fn runs.
    std::vector<TensorNode*> order;
    std::unordered_set<TensorNode*> visited;
    struct Frame {
        TensorNode* node;
        size_t next_parent;
    };
    std::vector<Frame> stack;
    stack.push_back({loss.node(), 0});
    visited.insert(loss.node());
    while (!stack.empty()) {
        Frame& fr = stack.back();
        if (fr.next_parent < fr.node->parents.size()) {
            TensorNode* p = fr.node->parents[fr.next_parent++].node();
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.push_back({p, 0});
            }
        } else {
            order.push_back(fr.node);
            stack.pop_back();
        }
    }

    loss.node()->ensure_grad()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorNode* node = *it;
        if (node->backward_fn) {
            node->ensure_grad();
            node->backward_fn(*node);
        }
    }
}

double grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor point, double step) {
    if (!point.defined()) throw UsageError("grad_check point must be defined");
    point.set_requires_grad(true);
    point.zero_grad();
    Tensor y = f(point);
    if (y.numel() != 1) throw UsageError("grad_check requires a scalar-valued function");
    backward(y);
    std::vector<double> analytic = point.grad();

    double max_err = 0.0;
    auto& data = point.data();
    for (size_t i = 0; i < data.size(); ++i) {
        const double orig = data[i];
        data[i] = orig + step;
        const double fp = f(point).value();
        data[i] = orig - step;
        const double fm = f(point).value();
        data[i] = orig;
        const double numeric = (fp - fm) / (2.0 * step);
        const double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i]));
        max_err = std::max(max_err, err);
    }
    return max_err;
}

} // namespace cect
