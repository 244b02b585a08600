#include "erode/dataset.hpp"

#include <cmath>

#include "erode/rng.hpp"

namespace erode {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

// Stream tags for the dataset generator's counter space.
enum : std::uint32_t { kClassStream = 1, kExampleStream = 2 };

// Each class owns redundant cues: two gratings and a blob. Per-example
// amplitude mixing keeps any single cue from being reliable on its own, so
// independently trained models weight the cues differently.
struct ClassTemplate {
    double freq_x, freq_y;    // primary grating, cycles per image
    double freq2_x, freq2_y;  // secondary grating
    double phase0, phase2;    // base grating phases
    double blob_x, blob_y;    // blob center in [0, 1) image coordinates
    double blob_sigma;        // blob radius relative to image size
};

ClassTemplate class_template(std::uint64_t seed, int classes, int c) {
    CounterRng rng(derive_seed(seed, kClassStream), static_cast<std::uint32_t>(c), 0);
    ClassTemplate t{};
    // Orientations spread evenly with a small random offset so no two
    // classes share a grating direction; magnitude varies a little by class.
    const double angle = kTwoPi * 0.5 * (static_cast<double>(c) / classes) + rng.uniform(-0.08, 0.08);
    const double mag = 2.0 + static_cast<double>(c % 3) + rng.uniform(-0.2, 0.2);
    t.freq_x = mag * std::cos(angle);
    t.freq_y = mag * std::sin(angle);
    t.phase0 = rng.uniform(0.0, kTwoPi);
    const double angle2 = angle + kTwoPi * 0.25 + rng.uniform(-0.1, 0.1);
    const double mag2 = 3.0 + static_cast<double>((c + 1) % 3) + rng.uniform(-0.2, 0.2);
    t.freq2_x = mag2 * std::cos(angle2);
    t.freq2_y = mag2 * std::sin(angle2);
    t.phase2 = rng.uniform(0.0, kTwoPi);
    const double blob_angle = kTwoPi * (static_cast<double>(c) + 0.5) / classes + rng.uniform(-0.15, 0.15);
    t.blob_x = 0.5 + 0.27 * std::cos(blob_angle);
    t.blob_y = 0.5 + 0.27 * std::sin(blob_angle);
    t.blob_sigma = rng.uniform(0.11, 0.15);
    return t;
}

}  // namespace

Tensor Dataset::example(int index) const {
    return gather({index});
}

Tensor Dataset::gather(const std::vector<int>& indices) const {
    const std::int64_t stride = shape_numel(example_shape);
    Shape out_shape = example_shape;
    out_shape.insert(out_shape.begin(), static_cast<int>(indices.size()));
    Tensor out(out_shape);
    for (std::size_t r = 0; r < indices.size(); ++r) {
        const int idx = indices[r];
        if (idx < 0 || idx >= size()) throw IndexError("dataset index " + std::to_string(idx) + " out of range");
        out.a().segment(static_cast<Eigen::Index>(r) * stride, stride) =
            inputs.a().segment(static_cast<Eigen::Index>(idx) * stride, stride);
    }
    return out;
}

std::vector<int> Dataset::gather_labels(const std::vector<int>& indices) const {
    std::vector<int> out;
    out.reserve(indices.size());
    for (int idx : indices) out.push_back(labels[static_cast<std::size_t>(idx)]);
    return out;
}

Dataset make_synthetic_dataset(std::uint64_t seed, int classes, int per_class, const Shape& shape) {
    if (classes < 2) throw ConfigError("dataset: classes must be >= 2, got " + std::to_string(classes));
    if (per_class < 1) throw ConfigError("dataset: per-class must be >= 1, got " + std::to_string(per_class));
    if (shape.size() != 3) throw ConfigError("dataset: shape must be C x H x W, got " + shape_str(shape));
    for (int d : shape)
        if (d <= 0) throw ConfigError("dataset: degenerate shape " + shape_str(shape));

    const int C = shape[0], H = shape[1], W = shape[2];
    const int n = classes * per_class;

    std::vector<ClassTemplate> templates;
    templates.reserve(static_cast<std::size_t>(classes));
    for (int c = 0; c < classes; ++c) templates.push_back(class_template(seed, classes, c));

    Dataset ds;
    ds.class_count = classes;
    ds.example_shape = shape;
    ds.inputs = Tensor({n, C, H, W});
    ds.labels.resize(static_cast<std::size_t>(n));

    const std::uint64_t example_key = derive_seed(seed, kExampleStream);
    for (int i = 0; i < n; ++i) {
        const int label = i % classes;
        const int within = i / classes;
        ds.labels[static_cast<std::size_t>(i)] = label;
        const ClassTemplate& t = templates[static_cast<std::size_t>(label)];

        CounterRng rng(example_key, static_cast<std::uint32_t>(label), static_cast<std::uint32_t>(within));
        const double phase = t.phase0 + rng.uniform(0.0, kTwoPi);
        const double phase2 = t.phase2 + rng.uniform(0.0, kTwoPi);
        const double bx = (t.blob_x + rng.uniform(-0.06, 0.06)) * W;
        const double by = (t.blob_y + rng.uniform(-0.06, 0.06)) * H;
        const double bs = t.blob_sigma * std::min(H, W);
        // Random cue mix: total grating energy splits between the two
        // gratings, and the blob swings from faint to dominant.
        const double mix = rng.uniform(0.35, 0.65);
        const double amp_total = rng.uniform(47.0, 67.0);
        const double amp_g1 = amp_total * mix;
        const double amp_g2 = amp_total * (1.0 - mix);
        const double amp_b = rng.uniform(36.0, 67.0);
        const double brightness = rng.uniform(-12.0, 12.0);
        const double noise_sigma = 22.0;

        double* img = ds.inputs.data() + static_cast<std::int64_t>(i) * C * H * W;
        for (int ch = 0; ch < C; ++ch) {
            const double chphase = phase + 0.7 * ch;
            const double chscale = 1.0 - 0.12 * ch;
            for (int y = 0; y < H; ++y) {
                for (int x = 0; x < W; ++x) {
                    const double g1 = std::cos(kTwoPi * (t.freq_x * x / W + t.freq_y * y / H) + chphase);
                    const double g2 =
                        std::cos(kTwoPi * (t.freq2_x * x / W + t.freq2_y * y / H) + phase2 + 0.7 * ch);
                    const double dx = x - bx, dy = y - by;
                    const double blob = std::exp(-(dx * dx + dy * dy) / (2.0 * bs * bs));
                    double v = 128.0 + brightness +
                               chscale * (amp_g1 * g1 + amp_g2 * g2 + amp_b * blob) +
                               noise_sigma * rng.normal();
                    if (v < 0.0) v = 0.0;
                    if (v > 255.0) v = 255.0;
                    img[(static_cast<std::int64_t>(ch) * H + y) * W + x] = v;
                }
            }
        }

        // Every fifth example of a class goes to the eval split.
        if (within % 5 == 4)
            ds.eval_indices.push_back(i);
        else
            ds.train_indices.push_back(i);
    }
    return ds;
}

}  // namespace erode
