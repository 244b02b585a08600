#include "erode/attack.hpp"

#include <cmath>

#include "erode/graph.hpp"
#include "erode/rng.hpp"

namespace erode {

Kernel make_ti_kernel(int size, double sigma) {
    if (size < 1 || size % 2 == 0)
        throw ConfigError("ti kernel: size must be odd and positive, got " + std::to_string(size));
    if (!(sigma > 0.0)) throw ConfigError("ti kernel: sigma must be positive");
    Kernel k;
    k.size = size;
    k.sigma = sigma;
    k.weights = Tensor({size, size});
    const int h = size / 2;
    double total = 0.0;
    for (int i = 0; i < size; ++i) {
        for (int j = 0; j < size; ++j) {
            const double di = i - h, dj = j - h;
            const double v = std::exp(-(di * di + dj * dj) / (2.0 * sigma * sigma));
            k.weights[static_cast<std::int64_t>(i) * size + j] = v;
            total += v;
        }
    }
    k.weights.a() /= total;
    return k;
}

Tensor smooth_gradient(const Tensor& grad, const Kernel& kernel) {
    if (grad.rank() != 3)
        throw DimensionError("smooth_gradient: grad must be C x H x W, got " + shape_str(grad.shape()));
    const int C = grad.dim(0), H = grad.dim(1), W = grad.dim(2);
    const int k = kernel.size, p = k / 2;
    Tensor out(grad.shape());
    const double* kw = kernel.weights.data();
    for (int c = 0; c < C; ++c) {
        const double* in = grad.data() + static_cast<std::int64_t>(c) * H * W;
        double* o = out.data() + static_cast<std::int64_t>(c) * H * W;
        for (int i = 0; i < H; ++i) {
            for (int j = 0; j < W; ++j) {
                double acc = 0.0;
                for (int u = 0; u < k; ++u) {
                    const int y = i + u - p;
                    if (y < 0 || y >= H) continue;
                    for (int v = 0; v < k; ++v) {
                        const int x = j + v - p;
                        if (x < 0 || x >= W) continue;
                        acc += in[y * W + x] * kw[u * k + v];
                    }
                }
                o[i * W + j] = acc;
            }
        }
    }
    return out;
}

void AttackSpec::validate() const {
    if (!(epsilon >= 0.0)) throw ConfigError("attack: epsilon must be nonnegative");
    if (iterations < 1) throw ConfigError("attack: iterations must be >= 1");
    if (step && !(*step > 0.0)) throw ConfigError("attack: step must be positive");
    if (!(mu >= 0.0)) throw ConfigError("attack: mu must be >= 0");
    if (ti_kernel) {
        const double s = sum_value(ti_kernel->weights);
        if (std::abs(s - 1.0) > 1e-12)
            throw ConfigError("attack: ti kernel weights must sum to 1, got " + std::to_string(s));
    }
}

MomentumState mi_update(const MomentumState& state, const Tensor& grad, double mu) {
    require_same_shape(state.g, grad, "mi_update");
    MomentumState next;
    const double norm = l1_norm(grad);
    if (norm == 0.0) {
        next.g = Tensor(state.g.shape(), mu * state.g.a());
    } else {
        next.g = Tensor(state.g.shape(), mu * state.g.a() + grad.a() / norm);
    }
    next.t = state.t + 1;
    return next;
}

Tensor clip_ball(const Tensor& x_orig, const Tensor& x_cand, double epsilon) {
    require_same_shape(x_orig, x_cand, "clip_ball");
    Tensor out(x_orig.shape());
    out.a() = x_cand.a().max(0.0).max(x_orig.a() - epsilon).min(x_orig.a() + epsilon).min(255.0);
    return out;
}

bool within_ball(const Tensor& x_orig, const Tensor& x_cand, double epsilon) {
    require_same_shape(x_orig, x_cand, "within_ball");
    for (std::int64_t i = 0; i < x_orig.size(); ++i) {
        const double v = x_cand[i], x = x_orig[i];
        if (!(v >= 0.0 && v <= 255.0)) return false;
        if (v > x + epsilon || v < x - epsilon) return false;
    }
    return true;
}

void EnsembleSpec::validate() const {
    if (members.empty()) throw ConfigError("ensemble: needs at least one member");
    if (weights.size() != members.size())
        throw ConfigError("ensemble: " + std::to_string(weights.size()) + " weights for " +
                          std::to_string(members.size()) + " members");
    double total = 0.0;
    for (double w : weights) {
        if (w < 0.0) throw ConfigError("ensemble: weights must be nonnegative");
        total += w;
    }
    if (std::abs(total - 1.0) > 1e-12)
        throw ConfigError("ensemble: weights must sum to 1, got " + std::to_string(total));
    for (const EnsembleMember& m : members) {
        if (!m.model) throw ConfigError("ensemble: null model");
        m.erosion.check_compatible(*m.model);
    }
}

std::string EnsembleSpec::label() const {
    std::string s;
    for (std::size_t i = 0; i < members.size(); ++i) {
        if (i) s += '+';
        s += members[i].model->name;
    }
    return s;
}

namespace {

// Shared by fused_logits and run_attack so both fuse identically.
Value fused_logits_graph(Tape& tape, const EnsembleSpec& ensemble,
                         const std::vector<ErosionSample>& samples, Value x) {
    if (samples.size() != ensemble.members.size())
        throw ConfigError("fused_logits: " + std::to_string(samples.size()) + " samples for " +
                          std::to_string(ensemble.members.size()) + " members");
    Value acc;
    for (std::size_t k = 0; k < ensemble.members.size(); ++k) {
        ForwardNodes fwd = forward_graph(tape, *ensemble.members[k].model, x, &samples[k]);
        Value weighted = tape.scale(fwd.logits, ensemble.weights[k]);
        acc = k == 0 ? weighted : tape.add(acc, weighted);
    }
    return acc;
}

}  // namespace

Tensor fused_logits(const EnsembleSpec& ensemble, const std::vector<ErosionSample>& samples,
                    const Tensor& x) {
    ensemble.validate();
    Tape tape;
    Value v = fused_logits_graph(tape, ensemble, samples, tape.input(x));
    return tape.value(v);
}

Tensor run_attack(const EnsembleSpec& ensemble, const Tensor& x, int label, const AttackSpec& spec,
                  std::vector<Tensor>* iterates) {
    ensemble.validate();
    spec.validate();
    if (x.rank() != 3)
        throw DimensionError("run_attack: input must be C x H x W, got " + shape_str(x.shape()));
    if (min_value(x) < 0.0 || max_value(x) > 255.0)
        throw ContractError("run_attack: input pixels must lie in [0, 255]");

    const double alpha = spec.step_size();
    const int n_members = static_cast<int>(ensemble.members.size());

    // Per-member erosion streams derive from the master seed and the member
    // index; iteration t then addresses the draw inside the stream.
    std::vector<ErosionSpec> member_specs;
    member_specs.reserve(ensemble.members.size());
    for (int k = 0; k < n_members; ++k) {
        ErosionSpec es = ensemble.members[static_cast<std::size_t>(k)].erosion;
        es.seed = derive_seed(spec.master_seed, static_cast<std::uint64_t>(k));
        member_specs.push_back(es);
    }

    Shape batch_shape = x.shape();
    batch_shape.insert(batch_shape.begin(), 1);

    MomentumState state{Tensor(x.shape()), 0};
    Tensor adv = x;
    for (int t = 0; t < spec.iterations; ++t) {
        std::vector<ErosionSample> samples;
        samples.reserve(ensemble.members.size());
        for (int k = 0; k < n_members; ++k)
            samples.push_back(sample_erosion(member_specs[static_cast<std::size_t>(k)],
                                             *ensemble.members[static_cast<std::size_t>(k)].model, t));

        Tape tape;
        Value input = tape.input(adv.reshaped(batch_shape));
        Value logits = fused_logits_graph(tape, ensemble, samples, input);
        Value loss = tape.cross_entropy(logits, {label});
        Tensor grad = tape.backward(loss).at(input).reshaped(x.shape());
        if (!grad.all_finite())
            throw AttackError("run_attack: non-finite gradient at iteration " + std::to_string(t));

        if (spec.ti_kernel) grad = smooth_gradient(grad, *spec.ti_kernel);

        Tensor direction;
        if (spec.use_momentum) {
            state = mi_update(state, grad, spec.mu);
            direction = sign(state.g);
        } else {
            direction = sign(grad);
        }
        adv = clip_ball(x, adv + alpha * direction, spec.epsilon);
        if (iterates) iterates->push_back(adv);
    }
    return adv;
}

}  // namespace erode
