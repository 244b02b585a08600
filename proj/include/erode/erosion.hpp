#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "erode/tensor.hpp"

namespace erode {

struct Model;

// Attack-time stochastic perturbation of activations. A spec describes the
// distributions; a sample is one concrete draw defining a virtual model.
enum class ErosionMode : std::uint8_t {
    None,
    GnDropout,     // g_l(z) = f_l(r_l ⊙ z / (1 - lambda_b)) at every block
    GnSkip,        // z' = lambda_l z + f(z)                  (residual only)
    DsnePlain,     // g_l(z) = f_l(r_l ⊙ lambda_l z / (1 - lambda_b))
    DsneResidual,  // z' = lambda_l (z + gamma_l f(z))        (residual only)
};

std::string erosion_mode_name(ErosionMode mode);
ErosionMode erosion_mode_from_name(const std::string& name);

struct ErosionSpec {
    ErosionMode mode = ErosionMode::None;
    double lambda_u = 0.0;   // uniform half-width, [0, 1): lambda_l ~ U[1-Λu, 1+Λu]
    double lambda_b = 0.0;   // dropout rate, [0, 1): r_l ~ Bernoulli(1-Λb)
    double gamma = 1.0;      // residual branch factor, (0, 1]
    std::uint64_t seed = 0;

    void validate() const;
    // GnSkip / DsneResidual need a residual model.
    void check_compatible(const Model& model) const;
    bool uses_mask() const { return mode == ErosionMode::GnDropout || mode == ErosionMode::DsnePlain; }
    bool uses_lambda() const {
        return mode == ErosionMode::GnSkip || mode == ErosionMode::DsnePlain ||
               mode == ErosionMode::DsneResidual;
    }
};

// One draw of per-block scalars and masks. Immutable once drawn; forward and
// backward of one attack iteration share the same sample.
struct ErosionSample {
    ErosionMode mode = ErosionMode::None;
    std::vector<double> lambda;  // per block
    std::vector<Tensor> mask;    // per block, single-example shape of z_l
    std::vector<double> gamma;   // per block (broadcast of the spec scalar)
    double lambda_b = 0.0;       // kept for the 1/(1-Λb) rescale
    int draw_index = 0;          // iteration number t
    std::uint32_t model_identity = 0;

    bool is_identity() const;
};

// Draws the sample for iteration t from a counter-based stream keyed by
// (spec.seed, model identity, t, block, field). Distinct t are independent;
// the same (seed, t) reproduces the sample bit-exactly. Mask draws and
// lambda draws live on separate substreams, so e.g. DsnePlain and GnDropout
// with equal seeds see identical masks.
ErosionSample sample_erosion(const ErosionSpec& spec, const Model& model, int t);

// Logits of the virtual model defined by `sample` on batch x.
Tensor eroded_forward(const Model& model, const ErosionSample& sample, const Tensor& x);

// Exact reverse-mode gradient of the cross-entropy loss through the eroded
// graph with respect to the input batch.
Tensor eroded_input_gradient(const Model& model, const ErosionSample& sample, const Tensor& x,
                             const std::vector<int>& labels);

}  // namespace erode
