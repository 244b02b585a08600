#include "erode/image.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

namespace erode {

namespace {

unsigned char to_byte(double v) {
    double r = std::llround(v);
    if (r < 0.0) r = 0.0;
    if (r > 255.0) r = 255.0;
    return static_cast<unsigned char>(r);
}

}  // namespace

void write_image(const Tensor& chw, const std::string& path) {
    if (chw.rank() != 3)
        throw DimensionError("write_image: expected C x H x W, got " + shape_str(chw.shape()));
    const int C = chw.dim(0), H = chw.dim(1), W = chw.dim(2);
    if (C != 1 && C != 3)
        throw ConfigError("write_image: only 1 (PGM) or 3 (PPM) channels supported, got " +
                          std::to_string(C));
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for writing: " + path);
    os << (C == 1 ? "P5" : "P6") << "\n" << W << " " << H << "\n255\n";
    std::vector<unsigned char> row(static_cast<std::size_t>(W) * static_cast<std::size_t>(C));
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x)
            for (int c = 0; c < C; ++c)
                row[static_cast<std::size_t>(x) * C + static_cast<std::size_t>(c)] =
                    to_byte(chw[(static_cast<std::int64_t>(c) * H + y) * W + x]);
        os.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
    }
    if (!os) throw IoError("write failed: " + path);
}

void dump_images(const Tensor& clean_batch, const Tensor& adv_batch, const std::string& prefix) {
    require_same_shape(clean_batch, adv_batch, "dump_images");
    if (clean_batch.rank() != 4)
        throw DimensionError("dump_images: expected B x C x H x W, got " + shape_str(clean_batch.shape()));
    const int B = clean_batch.dim(0);
    const Shape chw{clean_batch.dim(1), clean_batch.dim(2), clean_batch.dim(3)};
    const std::int64_t stride = shape_numel(chw);
    const char* ext = chw[0] == 1 ? ".pgm" : ".ppm";
    for (int b = 0; b < B; ++b) {
        char idx[16];
        std::snprintf(idx, sizeof(idx), "%03d", b);
        Tensor clean(chw, clean_batch.a().segment(static_cast<Eigen::Index>(b) * stride, stride));
        Tensor adv(chw, adv_batch.a().segment(static_cast<Eigen::Index>(b) * stride, stride));
        write_image(clean, prefix + "_" + idx + "_clean" + ext);
        write_image(adv, prefix + "_" + idx + "_adv" + ext);
    }
}

namespace {
constexpr char kTensorMagic[] = "ERODE-TENSOR";
constexpr std::size_t kTensorMagicLen = 12;
}  // namespace

void save_tensor(const Tensor& t, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for writing: " + path);
    os.write(kTensorMagic, kTensorMagicLen);
    const std::uint32_t rank = static_cast<std::uint32_t>(t.rank());
    os.write(reinterpret_cast<const char*>(&rank), sizeof(rank));
    for (int d : t.shape()) {
        const std::uint32_t v = static_cast<std::uint32_t>(d);
        os.write(reinterpret_cast<const char*>(&v), sizeof(v));
    }
    os.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * 8));
    if (!os) throw IoError("write failed: " + path);
}

Tensor load_tensor(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open: " + path);
    char magic[kTensorMagicLen];
    if (!is.read(magic, kTensorMagicLen) || std::memcmp(magic, kTensorMagic, kTensorMagicLen) != 0)
        throw LoadError("not a tensor file (bad magic): " + path);
    std::uint32_t rank = 0;
    if (!is.read(reinterpret_cast<char*>(&rank), sizeof(rank)) || rank > 8)
        throw LoadError("tensor file corrupt: " + path);
    Shape shape(rank);
    for (std::uint32_t i = 0; i < rank; ++i) {
        std::uint32_t d = 0;
        if (!is.read(reinterpret_cast<char*>(&d), sizeof(d))) throw LoadError("tensor file truncated: " + path);
        shape[i] = static_cast<int>(d);
    }
    Tensor t(shape);
    if (!is.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * 8)))
        throw LoadError("tensor file truncated: " + path);
    return t;
}

}  // namespace erode
