#include "nextpoi/ad.hpp"

#include <algorithm>
#include <cmath>

namespace nextpoi::ad {

// --- ParamStore / GradBuffer -----------------------------------------------

int ParamStore::add(std::string name, Mat value) {
    if (find(name) >= 0) throw ConfigError("duplicate parameter name: " + name);
    names_.push_back(std::move(name));
    values_.push_back(std::move(value));
    return static_cast<int>(names_.size()) - 1;
}

int ParamStore::find(const std::string& name) const {
    for (size_t i = 0; i < names_.size(); ++i)
        if (names_[i] == name) return static_cast<int>(i);
    return -1;
}

int ParamStore::require(const std::string& name) const {
    const int i = find(name);
    if (i < 0) throw LookupError("unknown parameter: " + name);
    return i;
}

void GradBuffer::accumulate(int param, const Mat& g) {
    Mat& slot = grads_[param];
    if (slot.size() == 0)
        slot = g;
    else
        slot += g;
}

void GradBuffer::add_scaled(const GradBuffer& other, double scale) {
    for (size_t i = 0; i < grads_.size(); ++i) {
        if (other.grads_[i].size() == 0) continue;
        if (grads_[i].size() == 0)
            grads_[i] = scale * other.grads_[i];
        else
            grads_[i] += scale * other.grads_[i];
    }
}

void GradBuffer::clear() {
    for (Mat& g : grads_) g.resize(0, 0);
}

// --- Tape internals -----------------------------------------------------------

Var Tape::push(Node n) {
    nodes_.push_back(std::move(n));
    return Var{static_cast<int32_t>(nodes_.size()) - 1};
}

const Mat& Tape::val(Var v) const { return nodes_.at(v.id).v(); }

Mat Tape::grad_of(Var v) const {
    const Node& n = nodes_.at(v.id);
    if (n.grad.size() == 0) return Mat::Zero(n.v().rows(), n.v().cols());
    return n.grad;
}

Mat& Tape::grad_ref(Var v) {
    Node& n = nodes_[v.id];
    if (n.grad.size() == 0) n.grad = Mat::Zero(n.v().rows(), n.v().cols());
    return n.grad;
}

void Tape::add_grad(Var v, const Mat& g) {
    if (!tracked(v)) return;
    grad_ref(v) += g;
}

Var Tape::constant(Mat v) {
    Node n;
    n.value = std::move(v);
    n.track = false;
    return push(std::move(n));
}

Var Tape::input(Mat v) {
    Node n;
    n.value = std::move(v);
    n.track = true;
    return push(std::move(n));
}

Var Tape::param(const ParamStore& store, int idx) {
    Node n;
    n.external = &store.value(idx);
    n.track = true;
    n.param_index = idx;
    return push(std::move(n));
}

// --- arithmetic ------------------------------------------------------------------

Var Tape::add(Var a, Var b) {
    Node n;
    n.value = val(a) + val(b);
    n.track = tracked(a) || tracked(b);
    if (n.track)
        n.back = [a, b, out = Var{int32_t(nodes_.size())}](Tape& t) {
            const Mat& g = t.nodes_[out.id].grad;
            t.add_grad(a, g);
            t.add_grad(b, g);
        };
    return push(std::move(n));
}

Var Tape::sub(Var a, Var b) {
    Node n;
    n.value = val(a) - val(b);
    n.track = tracked(a) || tracked(b);
    if (n.track)
        n.back = [a, b, out = Var{int32_t(nodes_.size())}](Tape& t) {
            const Mat& g = t.nodes_[out.id].grad;
            t.add_grad(a, g);
            t.add_grad(b, -g);
        };
    return push(std::move(n));
}

Var Tape::cwise_mul(Var a, Var b) {
    Node n;
    n.value = val(a).cwiseProduct(val(b));
    n.track = tracked(a) || tracked(b);
    if (n.track)
        n.back = [a, b, out = Var{int32_t(nodes_.size())}](Tape& t) {
            const Mat& g = t.nodes_[out.id].grad;
            t.add_grad(a, g.cwiseProduct(t.val(b)));
            t.add_grad(b, g.cwiseProduct(t.val(a)));
        };
    return push(std::move(n));
}

Var Tape::scale(Var a, double s) {
    Node n;
    n.value = s * val(a);
    n.track = tracked(a);
    if (n.track)
        n.back = [a, s, out = Var{int32_t(nodes_.size())}](Tape& t) {
            t.add_grad(a, s * t.nodes_[out.id].grad);
        };
    return push(std::move(n));
}

Var Tape::matmul(Var a, Var b) {
    Node n;
    n.value = val(a) * val(b);
    n.track = tracked(a) || tracked(b);
    if (n.track)
        n.back = [a, b, out = Var{int32_t(nodes_.size())}](Tape& t) {
            const Mat& g = t.nodes_[out.id].grad;
            if (t.tracked(a)) t.add_grad(a, g * t.val(b).transpose());
            if (t.tracked(b)) t.add_grad(b, t.val(a).transpose() * g);
        };
    return push(std::move(n));
}

Var Tape::matmul_nt(Var a, Var b) {
    Node n;
    n.value = val(a) * val(b).transpose();
    n.track = tracked(a) || tracked(b);
    if (n.track)
        n.back = [a, b, out = Var{int32_t(nodes_.size())}](Tape& t) {
            const Mat& g = t.nodes_[out.id].grad;
            if (t.tracked(a)) t.add_grad(a, g * t.val(b));
            if (t.tracked(b)) t.add_grad(b, g.transpose() * t.val(a));
        };
    return push(std::move(n));
}

Var Tape::matmul_tn(Var a, Var b) {
    Node n;
    n.value = val(a).transpose() * val(b);
    n.track = tracked(a) || tracked(b);
    if (n.track)
        n.back = [a, b, out = Var{int32_t(nodes_.size())}](Tape& t) {
            const Mat& g = t.nodes_[out.id].grad;
            if (t.tracked(a)) t.add_grad(a, t.val(b) * g.transpose());
            if (t.tracked(b)) t.add_grad(b, t.val(a) * g);
        };
    return push(std::move(n));
}

Var Tape::add_row_broadcast(Var m, Var row) {
    if (val(row).rows() != 1 || val(row).cols() != val(m).cols())
        throw ConfigError("broadcast row shape mismatch");
    Node n;
    n.value = val(m).rowwise() + val(row).row(0);
    n.track = tracked(m) || tracked(row);
    if (n.track)
        n.back = [m, row, out = Var{int32_t(nodes_.size())}](Tape& t) {
            const Mat& g = t.nodes_[out.id].grad;
            t.add_grad(m, g);
            if (t.tracked(row)) t.add_grad(row, g.colwise().sum());
        };
    return push(std::move(n));
}

// --- nonlinearities ------------------------------------------------------------

Var Tape::relu(Var a) {
    Node n;
    n.value = val(a).cwiseMax(0.0);
    n.track = tracked(a);
    if (n.track)
        n.back = [a, out = Var{int32_t(nodes_.size())}](Tape& t) {
            const Mat& g = t.nodes_[out.id].grad;
            const Mat mask = (t.val(a).array() > 0.0).cast<double>();
            t.add_grad(a, g.cwiseProduct(mask));
        };
    return push(std::move(n));
}

Var Tape::leaky_relu(Var a, double slope) {
    Node n;
    n.value = val(a).unaryExpr([slope](double x) { return x > 0.0 ? x : slope * x; });
    n.track = tracked(a);
    if (n.track)
        n.back = [a, slope, out = Var{int32_t(nodes_.size())}](Tape& t) {
            const Mat& g = t.nodes_[out.id].grad;
            Mat d = t.val(a).unaryExpr([slope](double x) { return x > 0.0 ? 1.0 : slope; });
            t.add_grad(a, g.cwiseProduct(d));
        };
    return push(std::move(n));
}

Var Tape::elu(Var a) {
    Node n;
    n.value = val(a).unaryExpr([](double x) { return x > 0.0 ? x : std::expm1(x); });
    n.track = tracked(a);
    if (n.track)
        n.back = [a, out = Var{int32_t(nodes_.size())}](Tape& t) {
            const Mat& g = t.nodes_[out.id].grad;
            Mat d = t.val(a).unaryExpr([](double x) { return x > 0.0 ? 1.0 : std::exp(x); });
            t.add_grad(a, g.cwiseProduct(d));
        };
    return push(std::move(n));
}

// --- shape ----------------------------------------------------------------------

Var Tape::gather_rows(Var a, std::vector<int> rows) {
    const Mat& src = val(a);
    Node n;
    n.value.resize(static_cast<Eigen::Index>(rows.size()), src.cols());
    for (size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] < 0 || rows[i] >= src.rows()) throw LookupError("gather_rows: row out of range");
        n.value.row(static_cast<Eigen::Index>(i)) = src.row(rows[i]);
    }
    n.track = tracked(a);
    if (n.track)
        n.back = [a, rows = std::move(rows), out = Var{int32_t(nodes_.size())}](Tape& t) {
            const Mat& g = t.nodes_[out.id].grad;
            Mat& ga = t.grad_ref(a);
            for (size_t i = 0; i < rows.size(); ++i)
                ga.row(rows[i]) += g.row(static_cast<Eigen::Index>(i));
        };
    return push(std::move(n));
}

Var Tape::slice_rows(Var a, int first, int count) {
    Node n;
    n.value = val(a).middleRows(first, count);
    n.track = tracked(a);
    if (n.track)
        n.back = [a, first, count, out = Var{int32_t(nodes_.size())}](Tape& t) {
            t.grad_ref(a).middleRows(first, count) += t.nodes_[out.id].grad;
        };
    return push(std::move(n));
}

Var Tape::concat_rows(Var a, Var b) {
    const Mat& av = val(a);
    const Mat& bv = val(b);
    if (av.cols() != bv.cols()) throw ConfigError("concat_rows: column mismatch");
    Node n;
    n.value.resize(av.rows() + bv.rows(), av.cols());
    n.value.topRows(av.rows()) = av;
    n.value.bottomRows(bv.rows()) = bv;
    n.track = tracked(a) || tracked(b);
    if (n.track)
        n.back = [a, b, ra = av.rows(), rb = bv.rows(), out = Var{int32_t(nodes_.size())}](Tape& t) {
            const Mat& g = t.nodes_[out.id].grad;
            t.add_grad(a, g.topRows(ra));
            t.add_grad(b, g.bottomRows(rb));
        };
    return push(std::move(n));
}

Var Tape::reshape(Var a, int rows, int cols) {
    const Mat& src = val(a);
    if (src.size() != int64_t(rows) * cols) throw ConfigError("reshape: size mismatch");
    Node n;
    n.value = Eigen::Map<const Mat>(src.data(), rows, cols);
    n.track = tracked(a);
    if (n.track)
        n.back = [a, out = Var{int32_t(nodes_.size())}](Tape& t) {
            const Mat& g = t.nodes_[out.id].grad;
            const Mat& src = t.val(a);
            t.add_grad(a, Eigen::Map<const Mat>(g.data(), src.rows(), src.cols()));
        };
    return push(std::move(n));
}

// --- normalization / attention -----------------------------------------------------

namespace {

Mat softmax_rows_value(const Mat& logits) {
    Mat out(logits.rows(), logits.cols());
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
        const double mx = logits.row(r).maxCoeff();
        Eigen::ArrayXd e = (logits.row(r).array() - mx).exp();
        out.row(r) = (e / e.sum()).matrix();
    }
    return out;
}

} // namespace

Var Tape::softmax_rows(Var a) {
    Node n;
    n.value = softmax_rows_value(val(a));
    n.track = tracked(a);
    if (n.track)
        n.back = [a, out = Var{int32_t(nodes_.size())}](Tape& t) {
            const Mat& g = t.nodes_[out.id].grad;
            const Mat& y = t.nodes_[out.id].v();
            Mat da(y.rows(), y.cols());
            for (Eigen::Index r = 0; r < y.rows(); ++r) {
                const double dot = g.row(r).dot(y.row(r));
                da.row(r) = (g.row(r).array() - dot).matrix().cwiseProduct(y.row(r));
            }
            t.add_grad(a, da);
        };
    return push(std::move(n));
}

Var Tape::softmax_rows_masked(Var a, const Mat& additive_mask) {
    if (additive_mask.rows() != val(a).rows() || additive_mask.cols() != val(a).cols())
        throw ConfigError("mask shape mismatch");
    Node n;
    n.value = softmax_rows_value(val(a) + additive_mask);
    n.track = tracked(a);
    if (n.track)
        n.back = [a, out = Var{int32_t(nodes_.size())}](Tape& t) {
            const Mat& g = t.nodes_[out.id].grad;
            const Mat& y = t.nodes_[out.id].v();
            Mat da(y.rows(), y.cols());
            for (Eigen::Index r = 0; r < y.rows(); ++r) {
                const double dot = g.row(r).dot(y.row(r));
                da.row(r) = (g.row(r).array() - dot).matrix().cwiseProduct(y.row(r));
            }
            t.add_grad(a, da);
        };
    return push(std::move(n));
}

Var Tape::layer_norm_rows(Var x, Var gain, Var bias, double eps) {
    const Mat& src = val(x);
    const Eigen::Index d = src.cols();
    if (val(gain).rows() != 1 || val(gain).cols() != d || val(bias).rows() != 1 ||
        val(bias).cols() != d)
        throw ConfigError("layer norm gain/bias must be 1 x d");

    Node n;
    n.value.resize(src.rows(), d);
    Mat xhat(src.rows(), d);
    Eigen::VectorXd inv_std(src.rows());
    for (Eigen::Index r = 0; r < src.rows(); ++r) {
        const double mean = src.row(r).mean();
        const double var = (src.row(r).array() - mean).square().mean();
        const double is = 1.0 / std::sqrt(var + eps);
        inv_std(r) = is;
        xhat.row(r) = ((src.row(r).array() - mean) * is).matrix();
    }
    n.value = (xhat.array().rowwise() * val(gain).row(0).array()).matrix();
    n.value.rowwise() += val(bias).row(0);
    n.track = tracked(x) || tracked(gain) || tracked(bias);
    if (n.track)
        n.back = [x, gain, bias, xhat = std::move(xhat), inv_std = std::move(inv_std),
                  out = Var{int32_t(nodes_.size())}](Tape& t) {
            const Mat& g = t.nodes_[out.id].grad;
            if (t.tracked(gain)) t.add_grad(gain, (g.cwiseProduct(xhat)).colwise().sum());
            if (t.tracked(bias)) t.add_grad(bias, g.colwise().sum());
            if (t.tracked(x)) {
                const Eigen::Index d = g.cols();
                Mat dx(g.rows(), d);
                const Eigen::RowVectorXd gr = t.val(gain).row(0);
                for (Eigen::Index r = 0; r < g.rows(); ++r) {
                    const Eigen::RowVectorXd gy = g.row(r).cwiseProduct(gr);
                    const double mean_gy = gy.mean();
                    const double mean_gy_xhat = gy.dot(xhat.row(r)) / double(d);
                    dx.row(r) = inv_std(r) *
                                (gy.array() - mean_gy - xhat.row(r).array() * mean_gy_xhat);
                }
                t.add_grad(x, dx);
            }
        };
    return push(std::move(n));
}

Var Tape::l2_normalize_rows(Var x, double eps) {
    const Mat& src = val(x);
    Node n;
    n.value.resize(src.rows(), src.cols());
    Eigen::VectorXd inv_norm(src.rows());
    for (Eigen::Index r = 0; r < src.rows(); ++r) {
        const double nn = std::sqrt(src.row(r).squaredNorm() + eps);
        inv_norm(r) = 1.0 / nn;
        n.value.row(r) = src.row(r) * inv_norm(r);
    }
    n.track = tracked(x);
    if (n.track)
        n.back = [x, inv_norm = std::move(inv_norm), out = Var{int32_t(nodes_.size())}](Tape& t) {
            const Mat& g = t.nodes_[out.id].grad;
            const Mat& y = t.nodes_[out.id].v();
            Mat dx(g.rows(), g.cols());
            for (Eigen::Index r = 0; r < g.rows(); ++r) {
                const double dot = g.row(r).dot(y.row(r));
                dx.row(r) = inv_norm(r) * (g.row(r) - dot * y.row(r));
            }
            t.add_grad(x, dx);
        };
    return push(std::move(n));
}

Var Tape::dropout(Var x, double p, Rng& rng) {
    if (p <= 0.0) return x;
    if (p >= 1.0) throw ConfigError("dropout probability must be < 1");
    const Mat& src = val(x);
    Mat mask(src.rows(), src.cols());
    const double keep = 1.0 - p;
    for (Eigen::Index c = 0; c < src.cols(); ++c)
        for (Eigen::Index r = 0; r < src.rows(); ++r)
            mask(r, c) = rng.uniform() < p ? 0.0 : 1.0 / keep;

    Node n;
    n.value = src.cwiseProduct(mask);
    n.track = tracked(x);
    if (n.track)
        n.back = [x, mask = std::move(mask), out = Var{int32_t(nodes_.size())}](Tape& t) {
            t.add_grad(x, t.nodes_[out.id].grad.cwiseProduct(mask));
        };
    return push(std::move(n));
}

// --- convolution ----------------------------------------------------------------------

namespace {

// Patch matrix for a 3x3/pad-1 convolution: (C*9) x (Ho*Wo), column-major
// over output pixels.
Mat im2col_3x3(const Mat& x, int H, int W, int stride) {
    const int C = static_cast<int>(x.rows());
    const int Ho = (H + 2 - 3) / stride + 1;
    const int Wo = (W + 2 - 3) / stride + 1;
    Mat cols = Mat::Zero(int64_t(C) * 9, int64_t(Ho) * Wo);
    for (int oy = 0; oy < Ho; ++oy) {
        for (int ox = 0; ox < Wo; ++ox) {
            const int64_t col = int64_t(oy) * Wo + ox;
            for (int ky = 0; ky < 3; ++ky) {
                const int iy = oy * stride + ky - 1;
                if (iy < 0 || iy >= H) continue;
                for (int kx = 0; kx < 3; ++kx) {
                    const int ix = ox * stride + kx - 1;
                    if (ix < 0 || ix >= W) continue;
                    const int64_t pix = int64_t(iy) * W + ix;
                    cols.block((int64_t(ky) * 3 + kx) * C, col, C, 1) = x.col(pix);
                }
            }
        }
    }
    return cols;
}

void col2im_3x3(const Mat& dcols, int C, int H, int W, int stride, Mat& dx) {
    const int Ho = (H + 2 - 3) / stride + 1;
    const int Wo = (W + 2 - 3) / stride + 1;
    for (int oy = 0; oy < Ho; ++oy) {
        for (int ox = 0; ox < Wo; ++ox) {
            const int64_t col = int64_t(oy) * Wo + ox;
            for (int ky = 0; ky < 3; ++ky) {
                const int iy = oy * stride + ky - 1;
                if (iy < 0 || iy >= H) continue;
                for (int kx = 0; kx < 3; ++kx) {
                    const int ix = ox * stride + kx - 1;
                    if (ix < 0 || ix >= W) continue;
                    const int64_t pix = int64_t(iy) * W + ix;
                    dx.col(pix) += dcols.block((int64_t(ky) * 3 + kx) * C, col, C, 1);
                }
            }
        }
    }
}

} // namespace

Var Tape::conv2d_3x3(Var x, Var w, Var b, int height, int width, int stride) {
    const Mat& xin = val(x);
    const int C = static_cast<int>(xin.rows());
    if (xin.cols() != int64_t(height) * width) throw ConfigError("conv input shape mismatch");
    if (val(w).cols() != int64_t(C) * 9) throw ConfigError("conv weight shape mismatch");
    if (val(b).rows() != val(w).rows() || val(b).cols() != 1)
        throw ConfigError("conv bias shape mismatch");

    Mat cols = im2col_3x3(xin, height, width, stride);
    Node n;
    n.value.noalias() = val(w) * cols;
    n.value.colwise() += val(b).col(0);
    n.track = tracked(x) || tracked(w) || tracked(b);
    if (n.track)
        n.back = [x, w, b, cols = std::move(cols), C, height, width, stride,
                  out = Var{int32_t(nodes_.size())}](Tape& t) {
            const Mat& g = t.nodes_[out.id].grad;
            if (t.tracked(w)) t.add_grad(w, g * cols.transpose());
            if (t.tracked(b)) t.add_grad(b, g.rowwise().sum());
            if (t.tracked(x)) {
                Mat dcols = t.val(w).transpose() * g;
                Mat dx = Mat::Zero(C, int64_t(height) * width);
                col2im_3x3(dcols, C, height, width, stride, dx);
                t.add_grad(x, dx);
            }
        };
    return push(std::move(n));
}

// --- graph attention ----------------------------------------------------------------

Var Tape::arc_logits(Var dst_score, Var src_score,
                     std::span<const std::pair<int32_t, int32_t>> arcs, double slope) {
    const Mat& sd = val(dst_score);
    const Mat& ss = val(src_score);
    if (sd.cols() != 1 || ss.cols() != 1) throw ConfigError("arc scores must be column vectors");

    Mat pre(static_cast<Eigen::Index>(arcs.size()), 1);
    for (size_t e = 0; e < arcs.size(); ++e) pre(Eigen::Index(e), 0) = sd(arcs[e].first, 0) + ss(arcs[e].second, 0);

    Node n;
    n.value = pre.unaryExpr([slope](double v) { return v > 0.0 ? v : slope * v; });
    n.track = tracked(dst_score) || tracked(src_score);
    if (n.track)
        n.back = [dst_score, src_score, arcs, pre = std::move(pre), slope,
                  out = Var{int32_t(nodes_.size())}](Tape& t) {
            const Mat& g = t.nodes_[out.id].grad;
            Mat dd = Mat::Zero(t.val(dst_score).rows(), 1);
            Mat ds = Mat::Zero(t.val(src_score).rows(), 1);
            for (size_t e = 0; e < arcs.size(); ++e) {
                const double d = pre(Eigen::Index(e), 0) > 0.0 ? 1.0 : slope;
                const double gv = g(Eigen::Index(e), 0) * d;
                dd(arcs[e].first, 0) += gv;
                ds(arcs[e].second, 0) += gv;
            }
            t.add_grad(dst_score, dd);
            t.add_grad(src_score, ds);
        };
    return push(std::move(n));
}

Var Tape::segment_softmax(Var logits, std::span<const std::pair<int32_t, int32_t>> segments) {
    const Mat& z = val(logits);
    if (z.cols() != 1) throw ConfigError("segment softmax expects a column vector");
    Mat y(z.rows(), 1);
    for (const auto& [begin, end] : segments) {
        if (begin >= end) continue;
        double mx = -1e300;
        for (int32_t e = begin; e < end; ++e) mx = std::max(mx, z(e, 0));
        double sum = 0.0;
        for (int32_t e = begin; e < end; ++e) sum += std::exp(z(e, 0) - mx);
        for (int32_t e = begin; e < end; ++e) y(e, 0) = std::exp(z(e, 0) - mx) / sum;
    }

    Node n;
    n.value = std::move(y);
    n.track = tracked(logits);
    if (n.track)
        n.back = [logits, segments, out = Var{int32_t(nodes_.size())}](Tape& t) {
            const Mat& g = t.nodes_[out.id].grad;
            const Mat& y = t.nodes_[out.id].v();
            Mat dz = Mat::Zero(y.rows(), 1);
            for (const auto& [begin, end] : segments) {
                if (begin >= end) continue;
                double dot = 0.0;
                for (int32_t e = begin; e < end; ++e) dot += g(e, 0) * y(e, 0);
                for (int32_t e = begin; e < end; ++e) dz(e, 0) = y(e, 0) * (g(e, 0) - dot);
            }
            t.add_grad(logits, dz);
        };
    return push(std::move(n));
}

Var Tape::weighted_scatter_rows(Var w, Var u,
                                std::span<const std::pair<int32_t, int32_t>> arcs, int n_out) {
    const Mat& wv = val(w);
    const Mat& uv = val(u);
    if (wv.cols() != 1 || wv.rows() != static_cast<Eigen::Index>(arcs.size()))
        throw ConfigError("arc weight vector shape mismatch");

    Node n;
    n.value = Mat::Zero(n_out, uv.cols());
    for (size_t e = 0; e < arcs.size(); ++e)
        n.value.row(arcs[e].first) += wv(Eigen::Index(e), 0) * uv.row(arcs[e].second);
    n.track = tracked(w) || tracked(u);
    if (n.track)
        n.back = [w, u, arcs, out = Var{int32_t(nodes_.size())}](Tape& t) {
            const Mat& g = t.nodes_[out.id].grad;
            const Mat& wv = t.val(w);
            const Mat& uv = t.val(u);
            if (t.tracked(w)) {
                Mat dw(static_cast<Eigen::Index>(arcs.size()), 1);
                for (size_t e = 0; e < arcs.size(); ++e)
                    dw(Eigen::Index(e), 0) = g.row(arcs[e].first).dot(uv.row(arcs[e].second));
                t.add_grad(w, dw);
            }
            if (t.tracked(u)) {
                Mat du = Mat::Zero(uv.rows(), uv.cols());
                for (size_t e = 0; e < arcs.size(); ++e)
                    du.row(arcs[e].second) += wv(Eigen::Index(e), 0) * g.row(arcs[e].first);
                t.add_grad(u, du);
            }
        };
    return push(std::move(n));
}

// --- losses ---------------------------------------------------------------------------

Var Tape::margin_cos_loss(Var cosines, int target, double s, double m) {
    const Mat& c = val(cosines);
    if (c.cols() != 1) throw ConfigError("margin loss expects a column of cosines");
    if (target < 0 || target >= c.rows()) throw ConfigError("margin loss target out of range");

    constexpr double kClamp = 1e-7;
    const double ct = std::clamp(c(target, 0), -1.0 + kClamp, 1.0 - kClamp);
    const double theta = std::acos(ct);
    const double sin_theta = std::sin(theta);

    Eigen::VectorXd z(c.rows());
    for (Eigen::Index i = 0; i < c.rows(); ++i) z(i) = s * c(i, 0);
    z(target) = s * std::cos(theta + m);

    const double mx = z.maxCoeff();
    const double lse = mx + std::log((z.array() - mx).exp().sum());
    const double loss = lse - z(target);

    Node n;
    n.value = Mat::Constant(1, 1, loss);
    n.track = tracked(cosines);
    if (n.track) {
        Eigen::VectorXd p = (z.array() - lse).exp();
        // dz_t/dcos_t with the margin applied: s * sin(theta+m)/sin(theta).
        const double dzt = s * std::sin(theta + m) / sin_theta;
        n.back = [cosines, target, s, dzt, p = std::move(p),
                  out = Var{int32_t(nodes_.size())}](Tape& t) {
            const double g = t.nodes_[out.id].grad(0, 0);
            Mat dc(p.size(), 1);
            for (Eigen::Index i = 0; i < p.size(); ++i) dc(i, 0) = g * p(i) * s;
            dc(target, 0) = g * (p(target) - 1.0) * dzt;
            t.add_grad(cosines, dc);
        };
    }
    return push(std::move(n));
}

// --- driver ------------------------------------------------------------------------------

void Tape::backward(Var root, double seed) {
    const Node& r = nodes_.at(root.id);
    if (r.v().rows() != 1 || r.v().cols() != 1)
        throw ConfigError("backward root must be a scalar");
    grad_ref(root) = Mat::Constant(1, 1, seed);
    for (int32_t i = root.id; i >= 0; --i) {
        Node& n = nodes_[i];
        if (!n.track || !n.back || n.grad.size() == 0) continue;
        n.back(*this);
    }
}

void Tape::add_param_grads_to(GradBuffer& buf) const {
    for (const Node& n : nodes_) {
        if (n.param_index < 0 || n.grad.size() == 0) continue;
        buf.accumulate(n.param_index, n.grad);
    }
}

// --- test utilities -------------------------------------------------------------------------

Mat finite_difference(ParamStore& store, int param, const std::function<double()>& f, double eps) {
    Mat& p = store.value(param);
    Mat g(p.rows(), p.cols());
    for (Eigen::Index c = 0; c < p.cols(); ++c) {
        for (Eigen::Index r = 0; r < p.rows(); ++r) {
            const double keep = p(r, c);
            p(r, c) = keep + eps;
            const double hi = f();
            p(r, c) = keep - eps;
            const double lo = f();
            p(r, c) = keep;
            g(r, c) = (hi - lo) / (2.0 * eps);
        }
    }
    return g;
}

double max_rel_error(const Mat& analytic, const Mat& reference, double floor) {
    double worst = 0.0;
    for (Eigen::Index c = 0; c < analytic.cols(); ++c) {
        for (Eigen::Index r = 0; r < analytic.rows(); ++r) {
            const double denom = std::max({std::abs(analytic(r, c)), std::abs(reference(r, c)), floor});
            worst = std::max(worst, std::abs(analytic(r, c) - reference(r, c)) / denom);
        }
    }
    return worst;
}

} // namespace nextpoi::ad
