#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "erode/erosion.hpp"
#include "erode/model.hpp"
#include "erode/tensor.hpp"

namespace erode {

// Gaussian smoothing kernel for translation-invariant gradient averaging.
struct Kernel {
    int size = 1;
    double sigma = 1.0;
    Tensor weights;  // size x size, nonnegative, sums to 1
};

// exp(-(i^2+j^2)/(2 sigma^2)) on the centered k x k grid, normalized to sum 1.
Kernel make_ti_kernel(int size, double sigma);

// Per-channel 2-d convolution with zero same-padding; linear in grad.
// grad is C x H x W.
Tensor smooth_gradient(const Tensor& grad, const Kernel& kernel);

struct AttackSpec {
    double epsilon = 16.0;  // max L∞ perturbation, pixel units
    int iterations = 10;
    std::optional<double> step;  // defaults to epsilon / iterations
    double mu = 1.0;             // momentum decay
    bool use_momentum = true;
    std::optional<Kernel> ti_kernel;
    std::uint64_t master_seed = 0;

    double step_size() const { return step ? *step : epsilon / iterations; }
    void validate() const;
};

struct MomentumState {
    Tensor g;  // accumulated gradient, shaped like the input
    int t = 0;
};

// g' = mu * g + grad / ||grad||_1; an all-zero grad contributes nothing.
MomentumState mi_update(const MomentumState& state, const Tensor& grad, double mu);

// Per pixel min{255, x+eps, max{0, x-eps, x'}}.
Tensor clip_ball(const Tensor& x_orig, const Tensor& x_cand, double epsilon);

// Exact feasibility test against the clip formula's own bounds: checks
// x-eps <= v <= x+eps (with the bounds computed exactly as clip_ball
// computes them) and v in [0, 255], with zero tolerance.
bool within_ball(const Tensor& x_orig, const Tensor& x_cand, double epsilon);

struct EnsembleMember {
    const Model* model = nullptr;
    ErosionSpec erosion;
};

struct EnsembleSpec {
    std::vector<EnsembleMember> members;
    std::vector<double> weights;  // nonnegative, sum to 1

    void validate() const;
    std::string label() const;  // member names joined with '+'
};

// sum_k w_k * eroded_forward(model_k, sample_k, x); one sample per member.
Tensor fused_logits(const EnsembleSpec& ensemble, const std::vector<ErosionSample>& samples,
                    const Tensor& x);

// Iterative sign attack on the fused eroded loss with fresh erosion samples
// every iteration; erosion streams are keyed (master seed, member index, t).
// x is a single example C x H x W with values in [0, 255]. When `iterates`
// is non-null every intermediate x*_t is appended to it.
Tensor run_attack(const EnsembleSpec& ensemble, const Tensor& x, int label, const AttackSpec& spec,
                  std::vector<Tensor>* iterates = nullptr);

}  // namespace erode
