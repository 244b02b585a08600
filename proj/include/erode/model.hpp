#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "erode/erosion.hpp"
#include "erode/graph.hpp"
#include "erode/tensor.hpp"

namespace erode {

enum class Family : std::uint8_t { Plain, Residual };
enum class BlockKind : std::uint8_t { Dense, Conv };

std::string family_name(Family f);
std::string block_kind_name(BlockKind k);

struct ArchitectureSpec {
    Family family = Family::Plain;
    BlockKind block_kind = BlockKind::Dense;
    Shape input_shape;    // C x H x W
    int class_count = 0;
    int block_count = 0;  // L
    int width = 0;        // units (dense) or channels (conv) per block
    int kernel_size = 3;  // conv blocks only; odd

    void validate() const;
    int flat_input_dim() const;
};

// Ordered stack of parameterized blocks plus a dense classifier head.
//
// Plain family: block 0 maps the (normalized) input to `width`, blocks
// 1..L-1 are width -> width, each block ends in a relu. Residual family: a
// linear stem maps the input to `width`, then L pre-activation residual
// blocks z' = z + f(z) with a two-layer residual function
// f(z) = lin2(relu(lin1(relu(z)))); the head reads relu(z_L). Pixel inputs
// in [0, 255] are normalized to [-1, 1] inside the first parameterized
// layer.
struct Model {
    ArchitectureSpec spec;
    std::string name;
    std::uint64_t init_seed = 0;

    Tensor stem_weight, stem_bias;           // residual family only
    std::vector<Tensor> block_weight;        // L entries, first layer
    std::vector<Tensor> block_bias;
    std::vector<Tensor> block_weight2;       // residual family only, second layer
    std::vector<Tensor> block_bias2;
    Tensor head_weight, head_bias;

    // Stable 32-bit tag of (architecture, init seed); keys erosion streams.
    std::uint32_t identity() const;
    // Per-example shape of the activation entering block l.
    Shape block_input_shape(int l) const;
    std::int64_t parameter_count() const;
    std::vector<Tensor*> parameters();
    // Shape-preservation and conformance checks over the parameter tensors.
    void validate() const;
};

// Seeded scaled-uniform fan-in initialization (biases start at zero).
Model build_model(const ArchitectureSpec& spec, std::uint64_t seed);

struct ForwardNodes {
    Value logits;
    std::vector<Value> params;  // aligned with Model::parameters() order
};

// Builds the forward computation on the tape; `sample` == nullptr or an
// identity sample gives the clean network.
ForwardNodes forward_graph(Tape& tape, const Model& model, Value x, const ErosionSample* sample);

// Clean forward pass (no erosion); x is B x C x H x W.
Tensor model_logits(const Model& model, const Tensor& x);

std::vector<int> predict_labels(const Model& model, const Tensor& batch);
double accuracy(const Model& model, const Tensor& batch, const std::vector<int>& labels);

// File format: magic "ERODE-MODEL", version, architecture descriptor, then
// parameters as little-endian 64-bit floats in block order.
void save_model(const Model& model, const std::string& path);
Model load_model(const std::string& path);

}  // namespace erode
