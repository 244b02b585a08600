#include "erode/model.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

#include "erode/rng.hpp"

static_assert(std::endian::native == std::endian::little, "model files are little-endian");

namespace erode {

namespace {

constexpr char kMagic[] = "ERODE-MODEL";
constexpr std::size_t kMagicLen = 11;
constexpr std::uint32_t kFormatVersion = 1;
constexpr std::uint32_t kInitStream = 7;

std::uint32_t fnv1a32(const void* data, std::size_t len, std::uint32_t h = 0x811C9DC5u) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 16777619u;
    }
    return h;
}

}  // namespace

std::string family_name(Family f) { return f == Family::Plain ? "plain" : "residual"; }
std::string block_kind_name(BlockKind k) { return k == BlockKind::Dense ? "dense" : "conv"; }

void ArchitectureSpec::validate() const {
    if (input_shape.size() != 3)
        throw ConfigError("architecture: input shape must be C x H x W, got " + shape_str(input_shape));
    for (int d : input_shape)
        if (d <= 0) throw ConfigError("architecture: degenerate input shape " + shape_str(input_shape));
    if (class_count < 2) throw ConfigError("architecture: class count must be >= 2");
    if (block_count < 1) throw ConfigError("architecture: block count must be >= 1");
    if (width < 1) throw ConfigError("architecture: width must be >= 1");
    if (block_kind == BlockKind::Conv && (kernel_size < 1 || kernel_size % 2 == 0))
        throw ConfigError("architecture: conv kernel size must be odd and positive, got " +
                          std::to_string(kernel_size));
}

int ArchitectureSpec::flat_input_dim() const {
    return input_shape[0] * input_shape[1] * input_shape[2];
}

std::uint32_t Model::identity() const {
    std::uint32_t h = 0x811C9DC5u;
    auto mix = [&h](std::uint64_t v) { h = fnv1a32(&v, sizeof(v), h); };
    mix(static_cast<std::uint64_t>(spec.family));
    mix(static_cast<std::uint64_t>(spec.block_kind));
    for (int d : spec.input_shape) mix(static_cast<std::uint64_t>(d));
    mix(static_cast<std::uint64_t>(spec.class_count));
    mix(static_cast<std::uint64_t>(spec.block_count));
    mix(static_cast<std::uint64_t>(spec.width));
    mix(static_cast<std::uint64_t>(spec.kernel_size));
    mix(init_seed);
    return h;
}

Shape Model::block_input_shape(int l) const {
    const bool conv = spec.block_kind == BlockKind::Conv;
    const int H = spec.input_shape[1], W = spec.input_shape[2];
    if (spec.family == Family::Plain && l == 0) {
        if (conv) return spec.input_shape;
        return {spec.flat_input_dim()};
    }
    if (conv) return {spec.width, H, W};
    return {spec.width};
}

std::int64_t Model::parameter_count() const {
    std::int64_t n = stem_weight.size() + stem_bias.size() + head_weight.size() + head_bias.size();
    for (const Tensor& t : block_weight) n += t.size();
    for (const Tensor& t : block_bias) n += t.size();
    for (const Tensor& t : block_weight2) n += t.size();
    for (const Tensor& t : block_bias2) n += t.size();
    return n;
}

std::vector<Tensor*> Model::parameters() {
    std::vector<Tensor*> out;
    const bool residual = spec.family == Family::Residual;
    if (residual) {
        out.push_back(&stem_weight);
        out.push_back(&stem_bias);
    }
    for (std::size_t l = 0; l < block_weight.size(); ++l) {
        out.push_back(&block_weight[l]);
        out.push_back(&block_bias[l]);
        if (residual) {
            out.push_back(&block_weight2[l]);
            out.push_back(&block_bias2[l]);
        }
    }
    out.push_back(&head_weight);
    out.push_back(&head_bias);
    return out;
}

void Model::validate() const {
    spec.validate();
    const bool conv = spec.block_kind == BlockKind::Conv;
    const int L = spec.block_count;
    if (static_cast<int>(block_weight.size()) != L || static_cast<int>(block_bias.size()) != L)
        throw ConfigError("model: expected " + std::to_string(L) + " blocks, have " +
                          std::to_string(block_weight.size()));
    const bool residual = spec.family == Family::Residual;
    if (residual && (static_cast<int>(block_weight2.size()) != L ||
                     static_cast<int>(block_bias2.size()) != L))
        throw ConfigError("model: residual blocks need a second layer");
    for (int l = 0; l < L; ++l) {
        const Shape in_shape = block_input_shape(l);
        auto check_layer = [&](const Tensor& w, int in_ch_or_dim, const char* which) -> int {
            if (conv) {
                if (w.rank() != 4 || w.dim(1) != in_ch_or_dim)
                    throw ConfigError("model: block " + std::to_string(l) + " " + which + " kernel " +
                                      shape_str(w.shape()) + " does not accept " +
                                      std::to_string(in_ch_or_dim) + " channels");
                return w.dim(0);
            }
            if (w.rank() != 2 || w.dim(0) != in_ch_or_dim)
                throw ConfigError("model: block " + std::to_string(l) + " " + which + " weight " +
                                  shape_str(w.shape()) + " does not accept input of dim " +
                                  std::to_string(in_ch_or_dim));
            return w.dim(1);
        };
        const int in0 = in_shape[0];
        int out = check_layer(block_weight[static_cast<std::size_t>(l)], in0, "first");
        if (residual) out = check_layer(block_weight2[static_cast<std::size_t>(l)], out, "second");
        if (residual && out != in0)
            throw ConfigError("model: residual block " + std::to_string(l) + " is not shape-preserving (" +
                              std::to_string(in0) + " -> " + std::to_string(out) + ")");
    }
}

namespace {

Tensor init_uniform_fanin(Shape shape, int fan_in, CounterRng& rng, double scale = 1.0) {
    const double limit = scale * std::sqrt(3.0 / fan_in);
    Tensor t(std::move(shape));
    for (std::int64_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-limit, limit);
    return t;
}

}  // namespace

Model build_model(const ArchitectureSpec& spec, std::uint64_t seed) {
    spec.validate();
    Model m;
    m.spec = spec;
    m.init_seed = seed;

    const bool conv = spec.block_kind == BlockKind::Conv;
    const int k = spec.kernel_size;
    const int C = spec.input_shape[0];
    const int width = spec.width;
    const std::uint64_t key = derive_seed(seed, kInitStream);
    std::uint32_t tensor_idx = 0;
    auto next_rng = [&]() { return CounterRng(key, tensor_idx++, 0); };

    if (spec.family == Family::Residual) {
        CounterRng rng = next_rng();
        if (conv) {
            m.stem_weight = init_uniform_fanin({width, C, k, k}, C * k * k, rng);
        } else {
            const int d = spec.flat_input_dim();
            m.stem_weight = init_uniform_fanin({d, width}, d, rng);
        }
        m.stem_bias = Tensor({width});
        ++tensor_idx;  // bias slot keeps the stream layout stable
    }

    for (int l = 0; l < spec.block_count; ++l) {
        CounterRng rng = next_rng();
        if (conv) {
            const int in_ch = (spec.family == Family::Plain && l == 0) ? C : width;
            m.block_weight.push_back(init_uniform_fanin({width, in_ch, k, k}, in_ch * k * k, rng));
        } else {
            const int in_dim = (spec.family == Family::Plain && l == 0) ? spec.flat_input_dim() : width;
            m.block_weight.push_back(init_uniform_fanin({in_dim, width}, in_dim, rng));
        }
        m.block_bias.push_back(Tensor({width}));
        ++tensor_idx;
        if (spec.family == Family::Residual) {
            CounterRng rng2 = next_rng();
            // Depth-aware scale on the branch output keeps activations from
            // compounding block over block (no batch norm here).
            const double scale = 1.0 / std::sqrt(static_cast<double>(spec.block_count));
            if (conv)
                m.block_weight2.push_back(
                    init_uniform_fanin({width, width, k, k}, width * k * k, rng2, scale));
            else
                m.block_weight2.push_back(init_uniform_fanin({width, width}, width, rng2, scale));
            m.block_bias2.push_back(Tensor({width}));
            ++tensor_idx;
        }
    }

    {
        CounterRng rng = next_rng();
        const int head_in = conv ? width * spec.input_shape[1] * spec.input_shape[2] : width;
        m.head_weight = init_uniform_fanin({head_in, spec.class_count}, head_in, rng);
        m.head_bias = Tensor({spec.class_count});
    }

    m.validate();
    return m;
}

// ---------------------------------------------------------------------------
// Forward graph
// ---------------------------------------------------------------------------

namespace {

constexpr double kPixelScale = 1.0 / 127.5;  // [0,255] -> [-1,1]

struct BlockParams {
    Value weight, bias;
};

Value apply_linear(Tape& t, Value u, const BlockParams& p, bool conv) {
    return conv ? t.conv2d(u, p.weight, p.bias) : t.dense(u, p.weight, p.bias);
}

}  // namespace

ForwardNodes forward_graph(Tape& tape, const Model& model, Value x, const ErosionSample* sample) {
    const ArchitectureSpec& spec = model.spec;
    const Tensor& xv = tape.value(x);
    if (xv.rank() != 4)
        throw DimensionError("forward: input must be B x C x H x W, got " + shape_str(xv.shape()));
    if (xv.dim(1) != spec.input_shape[0] || xv.dim(2) != spec.input_shape[1] ||
        xv.dim(3) != spec.input_shape[2])
        throw DimensionError("forward: input " + shape_str(xv.shape()) + " does not match architecture " +
                             shape_str(spec.input_shape));
    if (sample && sample->mode != ErosionMode::None) {
        if (sample->model_identity != model.identity())
            throw ContractError("forward: erosion sample was drawn for a different model");
        if (static_cast<int>(sample->lambda.size()) != spec.block_count)
            throw ContractError("forward: erosion sample has " + std::to_string(sample->lambda.size()) +
                                " blocks, model has " + std::to_string(spec.block_count));
    }
    const bool conv = spec.block_kind == BlockKind::Conv;
    const int B = xv.dim(0);
    const ErosionMode mode = sample ? sample->mode : ErosionMode::None;
    const bool mask_mode = mode == ErosionMode::GnDropout || mode == ErosionMode::DsnePlain;

    auto lambda_of = [&](int l) { return sample->lambda[static_cast<std::size_t>(l)]; };
    auto gamma_of = [&](int l) { return sample->gamma[static_cast<std::size_t>(l)]; };
    // r_l ⊙ lambda_l z / (1 - lambda_b); lambda_l is 1 for GnDropout.
    auto erode_in = [&](Value z, int l) {
        const double s = lambda_of(l) / (1.0 - sample->lambda_b);
        return tape.mask_scale(z, sample->mask[static_cast<std::size_t>(l)], s);
    };

    // Parameter nodes are created in Model::parameters() order so callers
    // can pair gradients with the tensors they update.
    ForwardNodes out;
    BlockParams stem{};
    if (spec.family == Family::Residual) {
        stem = {tape.input(model.stem_weight), tape.input(model.stem_bias)};
        out.params.push_back(stem.weight);
        out.params.push_back(stem.bias);
    }
    std::vector<BlockParams> blocks;
    std::vector<BlockParams> blocks2;
    blocks.reserve(static_cast<std::size_t>(spec.block_count));
    for (int l = 0; l < spec.block_count; ++l) {
        blocks.push_back({tape.input(model.block_weight[static_cast<std::size_t>(l)]),
                          tape.input(model.block_bias[static_cast<std::size_t>(l)])});
        out.params.push_back(blocks.back().weight);
        out.params.push_back(blocks.back().bias);
        if (spec.family == Family::Residual) {
            blocks2.push_back({tape.input(model.block_weight2[static_cast<std::size_t>(l)]),
                               tape.input(model.block_bias2[static_cast<std::size_t>(l)])});
            out.params.push_back(blocks2.back().weight);
            out.params.push_back(blocks2.back().bias);
        }
    }
    BlockParams head{tape.input(model.head_weight), tape.input(model.head_bias)};
    out.params.push_back(head.weight);
    out.params.push_back(head.bias);

    Value z = conv ? x : tape.reshape(x, {B, spec.flat_input_dim()});

    if (spec.family == Family::Plain) {
        for (int l = 0; l < spec.block_count; ++l) {
            Value u = mask_mode ? erode_in(z, l) : z;
            if (l == 0) u = tape.affine(u, kPixelScale, -1.0);
            z = tape.relu(apply_linear(tape, u, blocks[static_cast<std::size_t>(l)], conv));
        }
    } else {
        z = apply_linear(tape, tape.affine(z, kPixelScale, -1.0), stem, conv);
        for (int l = 0; l < spec.block_count; ++l) {
            const BlockParams& p = blocks[static_cast<std::size_t>(l)];
            const BlockParams& p2 = blocks2[static_cast<std::size_t>(l)];
            // Two-layer pre-activation residual function.
            auto branch = [&](Value in) {
                Value h = apply_linear(tape, tape.relu(in), p, conv);
                return apply_linear(tape, tape.relu(h), p2, conv);
            };
            switch (mode) {
                case ErosionMode::None:
                    z = tape.add(z, branch(z));
                    break;
                case ErosionMode::GnDropout:
                case ErosionMode::DsnePlain: {
                    Value u = erode_in(z, l);
                    z = tape.add(u, branch(u));
                    break;
                }
                case ErosionMode::GnSkip:
                    z = tape.add(tape.scale(z, lambda_of(l)), branch(z));
                    break;
                case ErosionMode::DsneResidual:
                    z = tape.scale(tape.add(z, tape.scale(branch(z), gamma_of(l))), lambda_of(l));
                    break;
            }
        }
        z = tape.relu(z);
    }

    if (conv) z = tape.reshape(z, {B, spec.width * spec.input_shape[1] * spec.input_shape[2]});
    out.logits = tape.dense(z, head.weight, head.bias);
    return out;
}

Tensor model_logits(const Model& model, const Tensor& x) {
    Tape tape;
    ForwardNodes fwd = forward_graph(tape, model, tape.input(x), nullptr);
    return tape.value(fwd.logits);
}

std::vector<int> predict_labels(const Model& model, const Tensor& batch) {
    Tensor logits = model_logits(model, batch);
    const int B = logits.dim(0), C = logits.dim(1);
    std::vector<int> out(static_cast<std::size_t>(B));
    for (int b = 0; b < B; ++b) {
        const double* row = logits.data() + static_cast<std::int64_t>(b) * C;
        int best = 0;
        for (int c = 1; c < C; ++c)
            if (row[c] > row[best]) best = c;
        out[static_cast<std::size_t>(b)] = best;
    }
    return out;
}

double accuracy(const Model& model, const Tensor& batch, const std::vector<int>& labels) {
    std::vector<int> pred = predict_labels(model, batch);
    if (pred.size() != labels.size()) throw DimensionError("accuracy: label count does not match batch");
    if (pred.empty()) return 0.0;
    int hits = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == labels[i];
    return static_cast<double>(hits) / static_cast<double>(pred.size());
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

namespace {

template <typename T>
void put(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

template <typename T>
T get(std::istream& is, const std::string& path) {
    T v{};
    if (!is.read(reinterpret_cast<char*>(&v), sizeof(v)))
        throw LoadError("model file truncated: " + path);
    return v;
}

void put_tensor(std::ostream& os, const Tensor& t) {
    os.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * 8));
}

void get_tensor(std::istream& is, Tensor& t, const std::string& path) {
    if (!is.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * 8)))
        throw LoadError("model file truncated: " + path);
}

}  // namespace

void save_model(const Model& model, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for writing: " + path);
    os.write(kMagic, kMagicLen);
    put<std::uint32_t>(os, kFormatVersion);
    put<std::uint8_t>(os, static_cast<std::uint8_t>(model.spec.family));
    put<std::uint8_t>(os, static_cast<std::uint8_t>(model.spec.block_kind));
    for (int d : model.spec.input_shape) put<std::uint32_t>(os, static_cast<std::uint32_t>(d));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(model.spec.class_count));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(model.spec.block_count));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(model.spec.width));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(model.spec.kernel_size));
    put<std::uint64_t>(os, model.init_seed);
    put<std::uint32_t>(os, static_cast<std::uint32_t>(model.name.size()));
    os.write(model.name.data(), static_cast<std::streamsize>(model.name.size()));

    if (model.spec.family == Family::Residual) {
        put_tensor(os, model.stem_weight);
        put_tensor(os, model.stem_bias);
    }
    for (int l = 0; l < model.spec.block_count; ++l) {
        put_tensor(os, model.block_weight[static_cast<std::size_t>(l)]);
        put_tensor(os, model.block_bias[static_cast<std::size_t>(l)]);
        if (model.spec.family == Family::Residual) {
            put_tensor(os, model.block_weight2[static_cast<std::size_t>(l)]);
            put_tensor(os, model.block_bias2[static_cast<std::size_t>(l)]);
        }
    }
    put_tensor(os, model.head_weight);
    put_tensor(os, model.head_bias);
    if (!os) throw IoError("write failed: " + path);
}

Model load_model(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open: " + path);
    char magic[kMagicLen];
    if (!is.read(magic, kMagicLen) || std::memcmp(magic, kMagic, kMagicLen) != 0)
        throw LoadError("not a model file (bad magic): " + path);
    const auto version = get<std::uint32_t>(is, path);
    if (version != kFormatVersion)
        throw LoadError("model file " + path + " has format version " + std::to_string(version) +
                        ", expected " + std::to_string(kFormatVersion));

    ArchitectureSpec spec;
    spec.family = static_cast<Family>(get<std::uint8_t>(is, path));
    spec.block_kind = static_cast<BlockKind>(get<std::uint8_t>(is, path));
    spec.input_shape = {static_cast<int>(get<std::uint32_t>(is, path)),
                        static_cast<int>(get<std::uint32_t>(is, path)),
                        static_cast<int>(get<std::uint32_t>(is, path))};
    spec.class_count = static_cast<int>(get<std::uint32_t>(is, path));
    spec.block_count = static_cast<int>(get<std::uint32_t>(is, path));
    spec.width = static_cast<int>(get<std::uint32_t>(is, path));
    spec.kernel_size = static_cast<int>(get<std::uint32_t>(is, path));
    const auto init_seed = get<std::uint64_t>(is, path);
    const auto name_len = get<std::uint32_t>(is, path);
    std::string name(name_len, '\0');
    if (name_len && !is.read(name.data(), name_len)) throw LoadError("model file truncated: " + path);

    // The file is authoritative for the architecture; build the parameter
    // layout from it and then overwrite every tensor.
    Model m = build_model(spec, init_seed);
    m.name = std::move(name);
    if (spec.family == Family::Residual) {
        get_tensor(is, m.stem_weight, path);
        get_tensor(is, m.stem_bias, path);
    }
    for (int l = 0; l < spec.block_count; ++l) {
        get_tensor(is, m.block_weight[static_cast<std::size_t>(l)], path);
        get_tensor(is, m.block_bias[static_cast<std::size_t>(l)], path);
        if (spec.family == Family::Residual) {
            get_tensor(is, m.block_weight2[static_cast<std::size_t>(l)], path);
            get_tensor(is, m.block_bias2[static_cast<std::size_t>(l)], path);
        }
    }
    get_tensor(is, m.head_weight, path);
    get_tensor(is, m.head_bias, path);
    char extra;
    if (is.read(&extra, 1)) throw LoadError("model file has trailing bytes: " + path);
    m.validate();
    return m;
}

}  // namespace erode
