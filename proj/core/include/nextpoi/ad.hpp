#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "nextpoi/common.hpp"
#include "nextpoi/rng.hpp"

namespace nextpoi::ad {

using Mat = Eigen::MatrixXd;

// Named parameter registry. Values live here between optimizer steps;
// tapes bind them read-only and report gradients by entry index.
class ParamStore {
public:
    int add(std::string name, Mat value);
    int find(const std::string& name) const; // -1 when absent
    int require(const std::string& name) const;

    size_t size() const { return names_.size(); }
    const std::string& name(int i) const { return names_[i]; }
    Mat& value(int i) { return values_[i]; }
    const Mat& value(int i) const { return values_[i]; }

private:
    std::vector<std::string> names_;
    std::vector<Mat> values_;
};

// Per-sample (or per-worker) gradient accumulator aligned with a
// ParamStore. Buffers are allocated lazily so untouched parameters stay
// free.
class GradBuffer {
public:
    explicit GradBuffer(size_t n_params) : grads_(n_params) {}
    void accumulate(int param, const Mat& g);
    void add_scaled(const GradBuffer& other, double scale);
    bool touched(int param) const { return grads_[param].size() > 0; }
    const Mat& grad(int param) const { return grads_[param]; }
    Mat& grad(int param) { return grads_[param]; }
    size_t size() const { return grads_.size(); }
    void clear();

private:
    std::vector<Mat> grads_;
};

struct Var {
    int32_t id = -1;
    bool valid() const { return id >= 0; }
};

// Append-only reverse-mode tape over dense double matrices. Values are
// computed eagerly at op creation; backward() runs the recorded closures
// in reverse order. One tape per forward pass; tapes are independent and
// safe to build concurrently against a shared read-only ParamStore.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // --- leaves ---------------------------------------------------------
    Var constant(Mat v);                         // no gradient tracking
    Var input(Mat v);                            // tracked non-parameter input
    Var param(const ParamStore& store, int idx); // tracked view of a parameter

    const Mat& val(Var v) const;
    // Gradient of the last backward() root w.r.t. v (zero matrix if
    // untouched).
    Mat grad_of(Var v) const;

    // --- arithmetic ------------------------------------------------------
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var cwise_mul(Var a, Var b);
    Var scale(Var a, double s);
    Var matmul(Var a, Var b);    // A * B
    Var matmul_nt(Var a, Var b); // A * B^T
    Var matmul_tn(Var a, Var b); // A^T * B
    Var add_row_broadcast(Var m, Var row); // row added to every row of m

    // --- nonlinearities ---------------------------------------------------
    Var relu(Var a);
    Var leaky_relu(Var a, double slope);
    Var elu(Var a); // x>0: x, else exp(x)-1

    // --- shape ------------------------------------------------------------
    Var gather_rows(Var a, std::vector<int> rows);
    Var slice_rows(Var a, int first, int count);
    Var concat_rows(Var a, Var b); // [a; b]
    Var reshape(Var a, int rows, int cols); // column-major element order

    // --- normalization / attention ----------------------------------------
    Var softmax_rows(Var a);
    // Additive mask (0 = allowed, large negative = forbidden) applied to
    // the logits before the row softmax. The mask is not differentiated.
    Var softmax_rows_masked(Var a, const Mat& additive_mask);
    Var layer_norm_rows(Var x, Var gain, Var bias, double eps = 1e-5);
    Var l2_normalize_rows(Var x, double eps = 1e-12);
    // Inverted dropout on elements; identity when p == 0.
    Var dropout(Var x, double p, Rng& rng);

    // --- convolution --------------------------------------------------------
    // x: (C_in x H*W) column-major feature map, w: (C_out x C_in*k*k),
    // b: (C_out x 1); 3x3 kernel, padding 1.
    Var conv2d_3x3(Var x, Var w, Var b, int height, int width, int stride);

    // --- graph attention ----------------------------------------------------
    // logits[e] = leaky_relu(dst_score[arcs[e].first] + src_score[arcs[e].second])
    Var arc_logits(Var dst_score, Var src_score,
                   std::span<const std::pair<int32_t, int32_t>> arcs, double slope);
    // Softmax within contiguous segments of rows (arcs grouped by
    // destination); `segments` holds [begin, end) offsets.
    Var segment_softmax(Var logits, std::span<const std::pair<int32_t, int32_t>> segments);
    // out[dst] += w[e] * u[src] over arcs; output has n_out rows.
    Var weighted_scatter_rows(Var w, Var u,
                              std::span<const std::pair<int32_t, int32_t>> arcs, int n_out);

    // --- losses ---------------------------------------------------------------
    // Additive angular-margin softmax over cosine similarities (n x 1).
    // loss = -log( e^{s*cos(theta_t + m)} / (e^{s*cos(theta_t + m)} +
    //         sum_{c != t} e^{s*cos_c}) ), with cos_t clamped before acos.
    Var margin_cos_loss(Var cosines, int target, double s, double m);

    // --- driver -----------------------------------------------------------------
    // root must be 1x1. seed scales the whole gradient (use 1/batch for
    // mean losses).
    void backward(Var root, double seed = 1.0);
    // Adds gradients of every bound parameter into `buf`, in binding order.
    void add_param_grads_to(GradBuffer& buf) const;

    size_t node_count() const { return nodes_.size(); }

private:
    struct Node {
        Mat value;                 // owned value (empty for parameter views)
        const Mat* external = nullptr; // set for parameter views
        Mat grad;
        bool track = false;
        int param_index = -1;
        std::function<void(Tape&)> back;

        const Mat& v() const { return external ? *external : value; }
    };

    Var push(Node n);
    Mat& grad_ref(Var v);
    void add_grad(Var v, const Mat& g);
    bool tracked(Var v) const { return v.valid() && nodes_[v.id].track; }

    std::vector<Node> nodes_;
};

// Finite-difference gradient of `f` w.r.t. store parameter `param`,
// evaluated entry by entry with central differences. Test utility; f must
// be a pure function of the store values.
Mat finite_difference(ParamStore& store, int param, const std::function<double()>& f,
                      double eps = 1e-5);

// Max relative error between an analytic and a reference gradient, with an
// absolute floor to avoid blowing up near-zero entries.
double max_rel_error(const Mat& analytic, const Mat& reference, double floor = 1e-6);

} // namespace nextpoi::ad
