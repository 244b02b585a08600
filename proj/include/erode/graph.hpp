#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <vector>

#include "erode/tensor.hpp"

namespace erode {

// ---------------------------------------------------------------------------
// Forward kernels. Pure tensor -> tensor functions; the tape ops below reuse
// them so graph and direct evaluation cannot drift apart.
// ---------------------------------------------------------------------------

// output[b,j] = sum_i input[b,i] * weight[i,j] + bias[j]
Tensor dense_forward(const Tensor& input, const Tensor& weight, const Tensor& bias);

// Cross-correlation, stride 1, zero same-padding, odd kernel size.
// input B x C x H x W, kernel F x C x k x k, bias F -> B x F x H x W.
Tensor conv2d_forward(const Tensor& input, const Tensor& kernel, const Tensor& bias);

// Elementwise max(0, v).
Tensor relu(const Tensor& input);

// Mean over the batch of -log softmax(logits)[label], computed with the
// log-sum-exp max shift. Returns a scalar tensor of shape [1].
Tensor cross_entropy_from_logits(const Tensor& logits, const std::vector<int>& labels);

// Central finite differences (f(x+h e_i) - f(x-h e_i)) / 2h per coordinate.
// Verification oracle; independent of the reverse-mode path.
Tensor finite_diff_check(const std::function<double(const Tensor&)>& function,
                         const Tensor& point, double step);

// ---------------------------------------------------------------------------
// Define-by-run reverse-mode tape. A Tape owns the nodes of one computation
// graph; building an op appends a node and returns a handle. Graphs are
// rebuilt per forward pass and are confined to one thread.
// ---------------------------------------------------------------------------

enum class OpKind : std::uint8_t {
    Input,
    Dense,
    Conv2d,
    Relu,
    Add,
    Mul,
    Scale,      // s * x
    Affine,     // a * x + b elementwise, scalar a and b
    MaskScale,  // (mask ⊙ x) * s, mask broadcast over the batch axis
    Reshape,
    Sum,
    CrossEntropy,
};

struct Value {
    std::int32_t idx = -1;
    bool valid() const { return idx >= 0; }
};

// Result of Tape::backward: one gradient per node, aligned with the tape.
// Nodes that do not contribute to the loss hold all-zero gradients.
class Gradients {
public:
    explicit Gradients(std::vector<Tensor> grads) : grads_(std::move(grads)) {}
    const Tensor& at(Value v) const { return grads_[static_cast<std::size_t>(v.idx)]; }

private:
    std::vector<Tensor> grads_;
};

class Tape {
public:
    Value input(Tensor value);

    Value dense(Value input, Value weight, Value bias);
    Value conv2d(Value input, Value kernel, Value bias);
    Value relu(Value input);
    Value add(Value a, Value b);
    Value mul(Value a, Value b);
    Value scale(Value x, double s);
    Value affine(Value x, double a, double b);
    Value mask_scale(Value x, const Tensor& mask, double s);
    Value reshape(Value x, Shape shape);
    Value sum(Value x);
    Value cross_entropy(Value logits, std::vector<int> labels);

    const Tensor& value(Value v) const { return nodes_[static_cast<std::size_t>(v.idx)].value; }
    std::size_t node_count() const { return nodes_.size(); }

    // Exact reverse-mode gradients of a scalar loss with respect to every node.
    Gradients backward(Value loss) const;

private:
    struct Node {
        Tensor value;
        OpKind op = OpKind::Input;
        std::array<std::int32_t, 3> parents{-1, -1, -1};
        double scalar = 0.0;         // Scale / Affine / MaskScale factor
        double offset = 0.0;         // Affine shift
        Tensor aux;                  // MaskScale mask
        std::vector<int> labels;     // CrossEntropy labels
        Shape saved_shape;           // Reshape source shape
    };

    Value push(Node node);
    const Node& node(Value v) const { return nodes_[static_cast<std::size_t>(v.idx)]; }
    void check_handle(Value v, const char* what) const;

    std::vector<Node> nodes_;
};

}  // namespace erode
