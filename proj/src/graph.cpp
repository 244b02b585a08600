#include "erode/graph.hpp"

#include <cmath>
#include <string>
#include <utility>

namespace erode {

// ---------------------------------------------------------------------------
// Forward kernels
// ---------------------------------------------------------------------------

Tensor dense_forward(const Tensor& input, const Tensor& weight, const Tensor& bias) {
    if (input.rank() != 2) throw DimensionError("dense: input must be rank 2, got " + shape_str(input.shape()));
    if (weight.rank() != 2) throw DimensionError("dense: weight must be rank 2, got " + shape_str(weight.shape()));
    if (bias.rank() != 1) throw DimensionError("dense: bias must be rank 1, got " + shape_str(bias.shape()));
    if (input.dim(1) != weight.dim(0))
        throw DimensionError("dense: input axis 1 (" + std::to_string(input.dim(1)) +
                             ") does not match weight axis 0 (" + std::to_string(weight.dim(0)) + ")");
    if (weight.dim(1) != bias.dim(0))
        throw DimensionError("dense: weight axis 1 (" + std::to_string(weight.dim(1)) +
                             ") does not match bias axis 0 (" + std::to_string(bias.dim(0)) + ")");

    Tensor out({input.dim(0), weight.dim(1)});
    out.mat().noalias() = input.mat() * weight.mat();
    out.mat().rowwise() += bias.a().matrix().transpose();
    return out;
}

Tensor conv2d_forward(const Tensor& input, const Tensor& kernel, const Tensor& bias) {
    if (input.rank() != 4) throw DimensionError("conv2d: input must be rank 4, got " + shape_str(input.shape()));
    if (kernel.rank() != 4) throw DimensionError("conv2d: kernel must be rank 4, got " + shape_str(kernel.shape()));
    if (bias.rank() != 1) throw DimensionError("conv2d: bias must be rank 1, got " + shape_str(bias.shape()));
    const int B = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    const int F = kernel.dim(0), KC = kernel.dim(1), k = kernel.dim(2);
    if (kernel.dim(3) != k) throw DimensionError("conv2d: kernel must be square, got " + shape_str(kernel.shape()));
    if (k % 2 == 0) throw ConfigError("conv2d: kernel size must be odd, got " + std::to_string(k));
    if (KC != C)
        throw DimensionError("conv2d: kernel axis 1 (" + std::to_string(KC) +
                             ") does not match input channel axis 1 (" + std::to_string(C) + ")");
    if (bias.dim(0) != F)
        throw DimensionError("conv2d: bias axis 0 (" + std::to_string(bias.dim(0)) +
                             ") does not match kernel axis 0 (" + std::to_string(F) + ")");

    const int p = k / 2;
    Tensor out({B, F, H, W});

    // im2col: one patch row per output pixel, then a single GEMM per image.
    using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    Eigen::Map<const RowMat> kmat(kernel.data(), F, static_cast<Eigen::Index>(C) * k * k);
    RowMat patches(static_cast<Eigen::Index>(H) * W, static_cast<Eigen::Index>(C) * k * k);
    for (int b = 0; b < B; ++b) {
        patches.setZero();
        const double* in = input.data() + static_cast<std::int64_t>(b) * C * H * W;
        for (int i = 0; i < H; ++i) {
            for (int j = 0; j < W; ++j) {
                double* row = patches.data() + (static_cast<std::int64_t>(i) * W + j) * C * k * k;
                for (int c = 0; c < C; ++c) {
                    const double* inc = in + static_cast<std::int64_t>(c) * H * W;
                    for (int u = 0; u < k; ++u) {
                        const int y = i + u - p;
                        if (y < 0 || y >= H) continue;
                        const int x0 = std::max(0, p - j);
                        const int x1 = std::min(k, W + p - j);
                        for (int v = x0; v < x1; ++v)
                            row[(c * k + u) * k + v] = inc[y * W + (j + v - p)];
                    }
                }
            }
        }
        Eigen::Map<RowMat> omat(out.data() + static_cast<std::int64_t>(b) * F * H * W, F,
                                static_cast<Eigen::Index>(H) * W);
        omat.noalias() = kmat * patches.transpose();
        omat.colwise() += bias.a().matrix();
    }
    return out;
}

Tensor relu(const Tensor& input) {
    return Tensor(input.shape(), input.a().max(0.0));
}

namespace {

// Row-wise softmax with the max shift; also returns the mean loss.
Tensor softmax_and_loss(const Tensor& logits, const std::vector<int>& labels, double& loss_out) {
    if (logits.rank() != 2)
        throw DimensionError("cross_entropy: logits must be rank 2, got " + shape_str(logits.shape()));
    const int B = logits.dim(0), C = logits.dim(1);
    if (B < 1) throw DimensionError("cross_entropy: empty batch");
    if (static_cast<int>(labels.size()) != B)
        throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for batch of " +
                             std::to_string(B));
    Tensor probs({B, C});
    double loss = 0.0;
    for (int b = 0; b < B; ++b) {
        const int y = labels[static_cast<std::size_t>(b)];
        if (y < 0 || y >= C)
            throw IndexError("cross_entropy: label " + std::to_string(y) + " out of range [0, " +
                             std::to_string(C) + ") at row " + std::to_string(b));
        const double* row = logits.data() + static_cast<std::int64_t>(b) * C;
        double m = row[0];
        for (int c = 1; c < C; ++c) m = std::max(m, row[c]);
        double z = 0.0;
        for (int c = 0; c < C; ++c) z += std::exp(row[c] - m);
        const double logz = std::log(z);
        for (int c = 0; c < C; ++c) probs.data()[static_cast<std::int64_t>(b) * C + c] = std::exp(row[c] - m) / z;
        loss += (m + logz) - row[y];
    }
    loss_out = loss / B;
    return probs;
}

}  // namespace

Tensor cross_entropy_from_logits(const Tensor& logits, const std::vector<int>& labels) {
    double loss = 0.0;
    softmax_and_loss(logits, labels, loss);
    return Tensor::scalar(loss);
}

Tensor finite_diff_check(const std::function<double(const Tensor&)>& function,
                         const Tensor& point, double step) {
    if (!(step > 0.0)) throw ContractError("finite_diff_check: step must be positive");
    Tensor probe = point;
    Tensor grad(point.shape());
    for (std::int64_t i = 0; i < point.size(); ++i) {
        const double saved = probe[i];
        probe[i] = saved + step;
        const double up = function(probe);
        probe[i] = saved - step;
        const double down = function(probe);
        probe[i] = saved;
        grad[i] = (up - down) / (2.0 * step);
    }
    return grad;
}

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

Value Tape::push(Node node) {
    nodes_.push_back(std::move(node));
    return Value{static_cast<std::int32_t>(nodes_.size() - 1)};
}

void Tape::check_handle(Value v, const char* what) const {
    if (!v.valid() || static_cast<std::size_t>(v.idx) >= nodes_.size())
        throw ContractError(std::string(what) + ": value handle does not belong to this tape");
}

Value Tape::input(Tensor value) {
    Node n;
    n.value = std::move(value);
    n.op = OpKind::Input;
    return push(std::move(n));
}

Value Tape::dense(Value input, Value weight, Value bias) {
    check_handle(input, "dense");
    check_handle(weight, "dense");
    check_handle(bias, "dense");
    Node n;
    n.value = dense_forward(value(input), value(weight), value(bias));
    n.op = OpKind::Dense;
    n.parents = {input.idx, weight.idx, bias.idx};
    return push(std::move(n));
}

Value Tape::conv2d(Value input, Value kernel, Value bias) {
    check_handle(input, "conv2d");
    check_handle(kernel, "conv2d");
    check_handle(bias, "conv2d");
    Node n;
    n.value = conv2d_forward(value(input), value(kernel), value(bias));
    n.op = OpKind::Conv2d;
    n.parents = {input.idx, kernel.idx, bias.idx};
    return push(std::move(n));
}

Value Tape::relu(Value input) {
    check_handle(input, "relu");
    Node n;
    n.value = erode::relu(value(input));
    n.op = OpKind::Relu;
    n.parents[0] = input.idx;
    return push(std::move(n));
}

Value Tape::add(Value a, Value b) {
    check_handle(a, "add");
    check_handle(b, "add");
    require_same_shape(value(a), value(b), "add");
    Node n;
    n.value = value(a) + value(b);
    n.op = OpKind::Add;
    n.parents = {a.idx, b.idx, -1};
    return push(std::move(n));
}

Value Tape::mul(Value a, Value b) {
    check_handle(a, "mul");
    check_handle(b, "mul");
    require_same_shape(value(a), value(b), "mul");
    Node n;
    n.value = hadamard(value(a), value(b));
    n.op = OpKind::Mul;
    n.parents = {a.idx, b.idx, -1};
    return push(std::move(n));
}

Value Tape::scale(Value x, double s) {
    check_handle(x, "scale");
    Node n;
    n.value = Tensor(value(x).shape(), value(x).a() * s);
    n.op = OpKind::Scale;
    n.parents[0] = x.idx;
    n.scalar = s;
    return push(std::move(n));
}

Value Tape::affine(Value x, double a, double b) {
    check_handle(x, "affine");
    Node n;
    n.value = Tensor(value(x).shape(), value(x).a() * a + b);
    n.op = OpKind::Affine;
    n.parents[0] = x.idx;
    n.scalar = a;
    n.offset = b;
    return push(std::move(n));
}

namespace {

void check_mask_broadcast(const Tensor& x, const Tensor& mask) {
    const Shape& xs = x.shape();
    const Shape& ms = mask.shape();
    bool ok = xs.size() == ms.size() + 1;
    if (ok)
        for (std::size_t i = 0; i < ms.size(); ++i) ok = ok && xs[i + 1] == ms[i];
    if (!ok)
        throw DimensionError("mask_scale: mask " + shape_str(ms) + " does not broadcast over " + shape_str(xs));
}

}  // namespace

Value Tape::mask_scale(Value x, const Tensor& mask, double s) {
    check_handle(x, "mask_scale");
    const Tensor& xv = value(x);
    check_mask_broadcast(xv, mask);
    const std::int64_t rows = xv.dim(0);
    const std::int64_t cols = mask.size();
    Tensor out(xv.shape());
    for (std::int64_t b = 0; b < rows; ++b)
        for (std::int64_t i = 0; i < cols; ++i)
            out[b * cols + i] = mask[i] * (xv[b * cols + i] * s);
    Node n;
    n.value = std::move(out);
    n.op = OpKind::MaskScale;
    n.parents[0] = x.idx;
    n.scalar = s;
    n.aux = mask;
    return push(std::move(n));
}

Value Tape::reshape(Value x, Shape shape) {
    check_handle(x, "reshape");
    Node n;
    n.saved_shape = value(x).shape();
    n.value = value(x).reshaped(std::move(shape));
    n.op = OpKind::Reshape;
    n.parents[0] = x.idx;
    return push(std::move(n));
}

Value Tape::sum(Value x) {
    check_handle(x, "sum");
    Node n;
    n.value = Tensor::scalar(sum_value(value(x)));
    n.op = OpKind::Sum;
    n.parents[0] = x.idx;
    return push(std::move(n));
}

Value Tape::cross_entropy(Value logits, std::vector<int> labels) {
    check_handle(logits, "cross_entropy");
    Node n;
    double loss = 0.0;
    n.aux = softmax_and_loss(value(logits), labels, loss);  // keep probs for backward
    n.value = Tensor::scalar(loss);
    n.op = OpKind::CrossEntropy;
    n.parents[0] = logits.idx;
    n.labels = std::move(labels);
    return push(std::move(n));
}

Gradients Tape::backward(Value loss) const {
    check_handle(loss, "backward");
    if (value(loss).size() != 1) throw ContractError("backward: loss must be a scalar node");

    std::vector<Tensor> grads(nodes_.size());
    std::vector<bool> set(nodes_.size(), false);

    auto accumulate = [&](std::int32_t idx, Tensor g) {
        const auto u = static_cast<std::size_t>(idx);
        if (!set[u]) {
            grads[u] = std::move(g);
            set[u] = true;
        } else {
            grads[u].a() += g.a();
        }
    };

    accumulate(loss.idx, Tensor::scalar(1.0));

    for (std::int32_t i = loss.idx; i >= 0; --i) {
        const auto u = static_cast<std::size_t>(i);
        if (!set[u]) continue;
        const Node& n = nodes_[u];
        const Tensor& g = grads[u];
        switch (n.op) {
            case OpKind::Input:
                break;
            case OpKind::Dense: {
                const Tensor& x = nodes_[static_cast<std::size_t>(n.parents[0])].value;
                const Tensor& w = nodes_[static_cast<std::size_t>(n.parents[1])].value;
                Tensor gx({x.dim(0), x.dim(1)});
                gx.mat().noalias() = g.mat() * w.mat().transpose();
                Tensor gw({w.dim(0), w.dim(1)});
                gw.mat().noalias() = x.mat().transpose() * g.mat();
                Tensor gb({w.dim(1)});
                gb.a() = g.mat().colwise().sum().transpose().array();
                accumulate(n.parents[0], std::move(gx));
                accumulate(n.parents[1], std::move(gw));
                accumulate(n.parents[2], std::move(gb));
                break;
            }
            case OpKind::Conv2d: {
                const Tensor& x = nodes_[static_cast<std::size_t>(n.parents[0])].value;
                const Tensor& kn = nodes_[static_cast<std::size_t>(n.parents[1])].value;
                const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
                const int F = kn.dim(0), k = kn.dim(2), p = k / 2;
                Tensor gx(x.shape());
                Tensor gk(kn.shape());
                Tensor gb({F});
                using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
                Eigen::Map<const RowMat> kmat(kn.data(), F, static_cast<Eigen::Index>(C) * k * k);
                Eigen::Map<RowMat> gkmat(gk.data(), F, static_cast<Eigen::Index>(C) * k * k);
                RowMat patches(static_cast<Eigen::Index>(H) * W, static_cast<Eigen::Index>(C) * k * k);
                RowMat gpatches(static_cast<Eigen::Index>(H) * W, static_cast<Eigen::Index>(C) * k * k);
                for (int b = 0; b < B; ++b) {
                    patches.setZero();
                    const double* in = x.data() + static_cast<std::int64_t>(b) * C * H * W;
                    for (int i = 0; i < H; ++i) {
                        for (int j = 0; j < W; ++j) {
                            double* row = patches.data() + (static_cast<std::int64_t>(i) * W + j) * C * k * k;
                            for (int c = 0; c < C; ++c) {
                                const double* inc = in + static_cast<std::int64_t>(c) * H * W;
                                for (int u = 0; u < k; ++u) {
                                    const int y = i + u - p;
                                    if (y < 0 || y >= H) continue;
                                    const int x0 = std::max(0, p - j);
                                    const int x1 = std::min(k, W + p - j);
                                    for (int v = x0; v < x1; ++v)
                                        row[(c * k + u) * k + v] = inc[y * W + (j + v - p)];
                                }
                            }
                        }
                    }
                    Eigen::Map<const RowMat> gmat(g.data() + static_cast<std::int64_t>(b) * F * H * W, F,
                                                  static_cast<Eigen::Index>(H) * W);
                    gb.a().matrix() += gmat.rowwise().sum();
                    gkmat.noalias() += gmat * patches;
                    gpatches.noalias() = gmat.transpose() * kmat;
                    // col2im scatter of the patch gradients.
                    double* gin = gx.data() + static_cast<std::int64_t>(b) * C * H * W;
                    for (int i = 0; i < H; ++i) {
                        for (int j = 0; j < W; ++j) {
                            const double* row =
                                gpatches.data() + (static_cast<std::int64_t>(i) * W + j) * C * k * k;
                            for (int c = 0; c < C; ++c) {
                                double* ginc = gin + static_cast<std::int64_t>(c) * H * W;
                                for (int u = 0; u < k; ++u) {
                                    const int y = i + u - p;
                                    if (y < 0 || y >= H) continue;
                                    const int x0 = std::max(0, p - j);
                                    const int x1 = std::min(k, W + p - j);
                                    for (int v = x0; v < x1; ++v)
                                        ginc[y * W + (j + v - p)] += row[(c * k + u) * k + v];
                                }
                            }
                        }
                    }
                }
                accumulate(n.parents[0], std::move(gx));
                accumulate(n.parents[1], std::move(gk));
                accumulate(n.parents[2], std::move(gb));
                break;
            }
            case OpKind::Relu: {
                const Tensor& x = nodes_[static_cast<std::size_t>(n.parents[0])].value;
                Tensor gx(x.shape());
                gx.a() = (x.a() > 0.0).select(g.a(), 0.0);
                accumulate(n.parents[0], std::move(gx));
                break;
            }
            case OpKind::Add:
                accumulate(n.parents[0], g);
                accumulate(n.parents[1], g);
                break;
            case OpKind::Mul: {
                const Tensor& a = nodes_[static_cast<std::size_t>(n.parents[0])].value;
                const Tensor& b = nodes_[static_cast<std::size_t>(n.parents[1])].value;
                accumulate(n.parents[0], hadamard(b, g));
                accumulate(n.parents[1], hadamard(a, g));
                break;
            }
            case OpKind::Scale:
            case OpKind::Affine:
                accumulate(n.parents[0], Tensor(g.shape(), g.a() * n.scalar));
                break;
            case OpKind::MaskScale: {
                const std::int64_t rows = g.dim(0);
                const std::int64_t cols = n.aux.size();
                Tensor gx(g.shape());
                for (std::int64_t b = 0; b < rows; ++b)
                    for (std::int64_t c = 0; c < cols; ++c)
                        gx[b * cols + c] = n.aux[c] * (g[b * cols + c] * n.scalar);
                accumulate(n.parents[0], std::move(gx));
                break;
            }
            case OpKind::Reshape:
                accumulate(n.parents[0], g.reshaped(n.saved_shape));
                break;
            case OpKind::Sum: {
                const Tensor& x = nodes_[static_cast<std::size_t>(n.parents[0])].value;
                accumulate(n.parents[0], Tensor::full(x.shape(), g[0]));
                break;
            }
            case OpKind::CrossEntropy: {
                const Tensor& probs = n.aux;
                const int B = probs.dim(0), C = probs.dim(1);
                Tensor gl(probs.shape(), probs.a() * (g[0] / B));
                for (int b = 0; b < B; ++b)
                    gl[static_cast<std::int64_t>(b) * C + n.labels[static_cast<std::size_t>(b)]] -= g[0] / B;
                accumulate(n.parents[0], std::move(gl));
                break;
            }
        }
    }

    for (std::size_t i = 0; i < nodes_.size(); ++i)
        if (!set[i]) grads[i] = Tensor(nodes_[i].value.shape());
    return Gradients(std::move(grads));
}

}  // namespace erode
