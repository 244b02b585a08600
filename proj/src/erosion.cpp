#include "erode/erosion.hpp"

#include "erode/model.hpp"
#include "erode/rng.hpp"

namespace erode {

namespace {

// Field tags inside one (seed, model, t, block) substream. Lambda and mask
// draws never share counters, so modes that skip a field leave the others
// unchanged.
enum : std::uint32_t { kFieldLambda = 0, kFieldMask = 1 };

std::uint32_t stream_word(int block, std::uint32_t field) {
    return (static_cast<std::uint32_t>(block) << 4) | field;
}

}  // namespace

std::string erosion_mode_name(ErosionMode mode) {
    switch (mode) {
        case ErosionMode::None: return "none";
        case ErosionMode::GnDropout: return "gn-dropout";
        case ErosionMode::GnSkip: return "gn-skip";
        case ErosionMode::DsnePlain: return "dsne-plain";
        case ErosionMode::DsneResidual: return "dsne-residual";
    }
    throw ConfigError("unknown erosion mode");
}

ErosionMode erosion_mode_from_name(const std::string& name) {
    if (name == "none") return ErosionMode::None;
    if (name == "gn-dropout") return ErosionMode::GnDropout;
    if (name == "gn-skip") return ErosionMode::GnSkip;
    if (name == "dsne-plain") return ErosionMode::DsnePlain;
    if (name == "dsne-residual") return ErosionMode::DsneResidual;
    throw ConfigError("unknown erosion mode '" + name + "'");
}

void ErosionSpec::validate() const {
    if (!(lambda_u >= 0.0 && lambda_u < 1.0))
        throw ConfigError("erosion: lambda_u must be in [0, 1), got " + std::to_string(lambda_u));
    if (!(lambda_b >= 0.0 && lambda_b < 1.0))
        throw ConfigError("erosion: lambda_b must be in [0, 1), got " + std::to_string(lambda_b));
    if (!(gamma > 0.0 && gamma <= 1.0))
        throw ConfigError("erosion: gamma must be in (0, 1], got " + std::to_string(gamma));
}

void ErosionSpec::check_compatible(const Model& model) const {
    validate();
    if ((mode == ErosionMode::GnSkip || mode == ErosionMode::DsneResidual) &&
        model.spec.family != Family::Residual)
        throw ConfigError("erosion mode '" + erosion_mode_name(mode) + "' requires a residual model, '" +
                          model.name + "' is " + family_name(model.spec.family));
}

bool ErosionSample::is_identity() const {
    if (mode == ErosionMode::None) return true;
    for (double l : lambda)
        if (l != 1.0) return false;
    for (double g : gamma)
        if (g != 1.0) return false;
    if (lambda_b != 0.0) return false;
    for (const Tensor& m : mask)
        if ((m.a() != 1.0).any()) return false;
    return true;
}

ErosionSample sample_erosion(const ErosionSpec& spec, const Model& model, int t) {
    spec.check_compatible(model);
    const int L = model.spec.block_count;
    ErosionSample s;
    s.mode = spec.mode;
    s.lambda_b = spec.uses_mask() ? spec.lambda_b : 0.0;
    s.draw_index = t;
    s.model_identity = model.identity();
    s.lambda.assign(static_cast<std::size_t>(L), 1.0);
    s.gamma.assign(static_cast<std::size_t>(L), spec.mode == ErosionMode::DsneResidual ? spec.gamma : 1.0);
    s.mask.reserve(static_cast<std::size_t>(L));

    const std::uint64_t key = derive_seed(spec.seed, s.model_identity);
    for (int l = 0; l < L; ++l) {
        if (spec.uses_lambda()) {
            CounterRng rng(key, static_cast<std::uint32_t>(t), stream_word(l, kFieldLambda));
            s.lambda[static_cast<std::size_t>(l)] =
                (1.0 - spec.lambda_u) + 2.0 * spec.lambda_u * rng.uniform01();
        }
        Shape mshape = model.block_input_shape(l);
        if (spec.uses_mask()) {
            CounterRng rng(key, static_cast<std::uint32_t>(t), stream_word(l, kFieldMask));
            Tensor m(mshape);
            const double keep = 1.0 - spec.lambda_b;
            for (std::int64_t i = 0; i < m.size(); ++i) m[i] = rng.bernoulli(keep);
            s.mask.push_back(std::move(m));
        } else {
            s.mask.push_back(Tensor::full(mshape, 1.0));
        }
    }
    return s;
}

Tensor eroded_forward(const Model& model, const ErosionSample& sample, const Tensor& x) {
    Tape tape;
    ForwardNodes fwd = forward_graph(tape, model, tape.input(x), &sample);
    return tape.value(fwd.logits);
}

Tensor eroded_input_gradient(const Model& model, const ErosionSample& sample, const Tensor& x,
                             const std::vector<int>& labels) {
    Tape tape;
    Value input = tape.input(x);
    ForwardNodes fwd = forward_graph(tape, model, input, &sample);
    Value loss = tape.cross_entropy(fwd.logits, labels);
    return tape.backward(loss).at(input);
}

}  // namespace erode
