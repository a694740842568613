#include "corrvae/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>

namespace corrvae {

std::size_t Image::filled_count() const {
    std::size_t c = 0;
    for (std::uint8_t p : pixels) c += (p != 0);
    return c;
}

double x_margin(ShapeKind, double size) { return size / 4.0; }

double y_margin(ShapeKind kind, double size) {
    return kind == ShapeKind::Square ? size / 4.0 : size / 6.0;
}

namespace {

bool pixel_inside(ShapeKind kind, double px, double py, double cx, double cy, double a, double b) {
    if (kind == ShapeKind::Square) return std::abs(px - cx) <= a && std::abs(py - cy) <= b;
    const double dx = (px - cx) / a;
    const double dy = (py - cy) / b;
    return dx * dx + dy * dy <= 1.0;
}

// No canvas validation; pixels outside the grid are simply dropped. A shape
// too small to cover any pixel center keeps its center pixel lit so rendered
// shapes are never invisible.
Image render_clipped(ShapeKind kind, double size, double x, double y, std::size_t n) {
    Image img;
    img.n = n;
    img.pixels.assign(n * n, 0);
    const double cx = x * static_cast<double>(n);
    const double cy = y * static_cast<double>(n);
    const double a = size * static_cast<double>(n) / 4.0;
    const double b = kind == ShapeKind::Square ? a : size * static_cast<double>(n) / 6.0;
    std::size_t filled = 0;
    for (std::size_t r = 0; r < n; ++r) {
        const double py = static_cast<double>(r) + 0.5;
        for (std::size_t c = 0; c < n; ++c) {
            const double px = static_cast<double>(c) + 0.5;
            if (pixel_inside(kind, px, py, cx, cy, a, b)) {
                img.pixels[r * n + c] = 1;
                ++filled;
            }
        }
    }
    if (filled == 0) {
        const long r = std::clamp(static_cast<long>(std::floor(cy)), 0L, static_cast<long>(n) - 1);
        const long c = std::clamp(static_cast<long>(std::floor(cx)), 0L, static_cast<long>(n) - 1);
        img.pixels[static_cast<std::size_t>(r) * n + static_cast<std::size_t>(c)] = 1;
    }
    return img;
}

// Pixel count on an unbounded pixel grid; the size inversion must not be
// skewed by canvas clipping when the probe shape pokes past an edge.
std::size_t count_unclipped(ShapeKind kind, double size, double x, double y, std::size_t n) {
    const double cx = x * static_cast<double>(n);
    const double cy = y * static_cast<double>(n);
    const double a = size * static_cast<double>(n) / 4.0;
    const double b = kind == ShapeKind::Square ? a : size * static_cast<double>(n) / 6.0;
    const long r0 = static_cast<long>(std::floor(cy - b - 1.0));
    const long r1 = static_cast<long>(std::ceil(cy + b + 1.0));
    const long c0 = static_cast<long>(std::floor(cx - a - 1.0));
    const long c1 = static_cast<long>(std::ceil(cx + a + 1.0));
    std::size_t count = 0;
    for (long r = r0; r <= r1; ++r)
        for (long c = c0; c <= c1; ++c)
            if (pixel_inside(kind, static_cast<double>(c) + 0.5, static_cast<double>(r) + 0.5, cx,
                             cy, a, b))
                ++count;
    return count == 0 ? 1 : count;
}

}  // namespace

Image render(ShapeKind kind, double size, double x, double y, std::size_t n) {
    if (n < 8) throw Error("render: canvas must be at least 8x8");
    if (size < kSizeMin || size > kSizeMax)
        throw Error("render: size " + std::to_string(size) + " outside [" +
                    std::to_string(kSizeMin) + "," + std::to_string(kSizeMax) + "]");
    const double mx = x_margin(kind, size);
    const double my = y_margin(kind, size);
    if (x < mx || x > 1.0 - mx || y < my || y > 1.0 - my)
        throw Error("render: shape at (" + std::to_string(x) + "," + std::to_string(y) +
                    ") with size " + std::to_string(size) + " leaves the canvas");
    return render_clipped(kind, size, x, y, n);
}

namespace {

// Smallest s in [lo,hi] with count_unclipped(s) >= target, by bisection on
// the monotone pixel-count staircase.
double lowest_size_reaching(ShapeKind kind, std::size_t target, double x, double y, std::size_t n,
                            double lo, double hi) {
    for (int it = 0; it < 48; ++it) {
        double mid = 0.5 * (lo + hi);
        if (count_unclipped(kind, mid, x, y, n) >= target)
            hi = mid;
        else
            lo = mid;
    }
    return hi;
}

}  // namespace

Measurement measure(const Image& image) {
    const std::size_t n = image.n;
    const std::size_t count = image.filled_count();
    if (count == 0) throw Error("measure: empty image");

    double sx = 0.0, sy = 0.0;
    std::size_t min_r = n, max_r = 0, min_c = n, max_c = 0;
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c < n; ++c) {
            if (!image.at(r, c)) continue;
            sx += static_cast<double>(c) + 0.5;
            sy += static_cast<double>(r) + 0.5;
            min_r = std::min(min_r, r);
            max_r = std::max(max_r, r);
            min_c = std::min(min_c, c);
            max_c = std::max(max_c, c);
        }
    }
    const double cnt = static_cast<double>(count);
    Measurement out;
    out.properties.x = sx / cnt / static_cast<double>(n);
    out.properties.y = sy / cnt / static_cast<double>(n);

    // A square rasterizes to a filled near-square block; a pixelated ellipse
    // either leaves bbox corners empty or shows its 3:2 aspect ratio.
    const std::size_t rows_span = max_r - min_r + 1;
    const std::size_t cols_span = max_c - min_c + 1;
    const double bbox = static_cast<double>(rows_span * cols_span);
    const bool blockish = cnt / bbox >= 0.95;
    const bool square_aspect =
        (cols_span > rows_span ? cols_span - rows_span : rows_span - cols_span) <= 1;
    out.kind_guess = (blockish && square_aspect) ? ShapeKind::Square : ShapeKind::Ellipse;

    // Invert size through the render model at the measured centroid: the
    // count staircase is monotone in s, so take the midpoint of the plateau
    // that matches the observed count.
    const double s_lo = 0.02, s_hi = 1.6;
    const double x = out.properties.x, y = out.properties.y;
    double size;
    if (count_unclipped(out.kind_guess, s_hi, x, y, n) < count) {
        size = s_hi;
    } else if (count_unclipped(out.kind_guess, s_lo, x, y, n) > count) {
        size = s_lo;
    } else {
        double left = lowest_size_reaching(out.kind_guess, count, x, y, n, s_lo, s_hi);
        double right = lowest_size_reaching(out.kind_guess, count + 1, x, y, n, left, s_hi);
        size = 0.5 * (left + right);
    }

    // Refinement for clean shapes: average every (s, x, y) near the initial
    // estimate whose render reproduces the observed pixels exactly. The
    // centroid alone carries sub-pixel bias that widens the count plateau;
    // the barycenter of the exact-match set removes it. Noisy images (no
    // exact match) keep the count-based estimate.
    {
        double sum_s = 0.0, sum_x = 0.0, sum_y = 0.0;
        std::size_t matches = 0;
        for (int si = -40; si <= 40; ++si) {
            const double s = size + 0.005 * static_cast<double>(si);
            if (s <= 0.0) continue;
            for (int xi = -6; xi <= 6; ++xi) {
                const double px = x + 0.1 * static_cast<double>(xi) / static_cast<double>(n);
                for (int yi = -6; yi <= 6; ++yi) {
                    const double py = y + 0.1 * static_cast<double>(yi) / static_cast<double>(n);
                    if (render_clipped(out.kind_guess, s, px, py, n).pixels != image.pixels)
                        continue;
                    sum_s += s;
                    sum_x += px;
                    sum_y += py;
                    ++matches;
                }
            }
        }
        if (matches > 0) {
            size = sum_s / static_cast<double>(matches);
            out.properties.x = sum_x / static_cast<double>(matches);
            out.properties.y = sum_y / static_cast<double>(matches);
        }
    }

    out.properties.size = size;
    out.properties.xy = 0.5 * (out.properties.x + out.properties.y);
    return out;
}

SyntheticSample draw_sample(std::uint64_t seed, std::uint64_t index, std::size_t n) {
    Rng rng = Rng::for_stream(seed, index);
    SyntheticSample s;
    s.kind = rng.uniform() < 0.5 ? ShapeKind::Square : ShapeKind::Ellipse;
    s.properties.size = kSizeMin + (kSizeMax - kSizeMin) * rng.uniform();
    const double mx = x_margin(s.kind, s.properties.size);
    const double my = y_margin(s.kind, s.properties.size);
    s.properties.x = mx + (1.0 - 2.0 * mx) * rng.uniform();
    s.properties.y = my + (1.0 - 2.0 * my) * rng.uniform();
    s.properties.xy = 0.5 * (s.properties.x + s.properties.y);
    s.image = render(s.kind, s.properties.size, s.properties.x, s.properties.y, n);
    return s;
}

Dataset make_dataset(std::size_t count, std::uint64_t seed, std::size_t n) {
    if (count == 0) throw Error("make_dataset: need at least one sample");
    Dataset ds;
    ds.header.image_n = n;
    ds.header.count = count;
    ds.header.property_names = {"size", "x", "y", "x+y"};
    ds.header.property_ranges = {{kSizeMin, kSizeMax}, {0.0, 1.0}, {0.0, 1.0}, {0.0, 1.0}};
    ds.samples.reserve(count);
    for (std::size_t i = 0; i < count; ++i) ds.samples.push_back(draw_sample(seed, i, n));
    return ds;
}

Tensor Dataset::images_tensor(std::size_t begin, std::size_t end) const {
    if (begin >= end || end > samples.size()) throw Error("images_tensor: bad range");
    const std::size_t d = header.image_n * header.image_n;
    std::vector<double> data;
    data.reserve((end - begin) * d);
    for (std::size_t i = begin; i < end; ++i)
        for (std::uint8_t p : samples[i].image.pixels) data.push_back(p ? 1.0 : 0.0);
    return Tensor::from_data({end - begin, d}, std::move(data));
}

Tensor Dataset::properties_tensor(std::size_t begin, std::size_t end) const {
    if (begin >= end || end > samples.size()) throw Error("properties_tensor: bad range");
    std::vector<double> data;
    data.reserve((end - begin) * 4);
    for (std::size_t i = begin; i < end; ++i) {
        auto p = samples[i].properties.as_array();
        data.insert(data.end(), p.begin(), p.end());
    }
    return Tensor::from_data({end - begin, 4}, std::move(data));
}

// --- file format ---

namespace {

constexpr char kMagic[4] = {'C', 'V', 'D', 'S'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw Error("dataset file truncated");
    return v;
}

void write_string(std::ostream& os, const std::string& s) {
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& is) {
    auto len = read_pod<std::uint32_t>(is);
    std::string s(len, '\0');
    is.read(s.data(), len);
    if (!is) throw Error("dataset file truncated");
    return s;
}

}  // namespace

void save_dataset(const Dataset& ds, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("cannot open '" + path + "' for writing");
    os.write(kMagic, 4);
    write_pod<std::uint32_t>(os, kVersion);
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(ds.header.image_n));
    write_pod<std::uint64_t>(os, static_cast<std::uint64_t>(ds.header.count));
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(ds.property_count()));
    for (const auto& name : ds.header.property_names) write_string(os, name);
    for (const auto& [lo, hi] : ds.header.property_ranges) {
        write_pod<double>(os, lo);
        write_pod<double>(os, hi);
    }
    const std::size_t n = ds.header.image_n;
    const std::size_t bitmap_bytes = (n * n + 7) / 8;
    std::vector<std::uint8_t> bits(bitmap_bytes);
    for (const auto& s : ds.samples) {
        write_pod<std::uint8_t>(os, static_cast<std::uint8_t>(s.kind));
        std::fill(bits.begin(), bits.end(), 0);
        for (std::size_t i = 0; i < n * n; ++i)
            if (s.image.pixels[i]) bits[i / 8] |= static_cast<std::uint8_t>(0x80u >> (i % 8));
        os.write(reinterpret_cast<const char*>(bits.data()),
                 static_cast<std::streamsize>(bits.size()));
        for (double p : s.properties.as_array()) write_pod<double>(os, p);
    }
    if (!os) throw Error("write to '" + path + "' failed");
}

Dataset load_dataset(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error("cannot open dataset '" + path + "'");
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0)
        throw Error("'" + path + "' is not a dataset file");
    if (read_pod<std::uint32_t>(is) != kVersion) throw Error("unsupported dataset version");
    Dataset ds;
    ds.header.image_n = read_pod<std::uint32_t>(is);
    ds.header.count = read_pod<std::uint64_t>(is);
    const std::uint32_t m = read_pod<std::uint32_t>(is);
    for (std::uint32_t i = 0; i < m; ++i) ds.header.property_names.push_back(read_string(is));
    for (std::uint32_t i = 0; i < m; ++i) {
        double lo = read_pod<double>(is);
        double hi = read_pod<double>(is);
        ds.header.property_ranges.emplace_back(lo, hi);
    }
    const std::size_t n = ds.header.image_n;
    const std::size_t bitmap_bytes = (n * n + 7) / 8;
    std::vector<std::uint8_t> bits(bitmap_bytes);
    ds.samples.resize(ds.header.count);
    for (auto& s : ds.samples) {
        s.kind = static_cast<ShapeKind>(read_pod<std::uint8_t>(is));
        is.read(reinterpret_cast<char*>(bits.data()), static_cast<std::streamsize>(bits.size()));
        if (!is) throw Error("dataset file truncated");
        s.image.n = n;
        s.image.pixels.assign(n * n, 0);
        for (std::size_t i = 0; i < n * n; ++i)
            s.image.pixels[i] = (bits[i / 8] & (0x80u >> (i % 8))) ? 1 : 0;
        s.properties.size = read_pod<double>(is);
        s.properties.x = read_pod<double>(is);
        s.properties.y = read_pod<double>(is);
        s.properties.xy = read_pod<double>(is);
    }
    return ds;
}

Tensor ground_truth_mask(std::size_t latent_dim) {
    if (latent_dim < 6) throw Error("ground_truth_mask: needs latent width >= 6");
    // columns: size, x, y, x+y
    std::vector<double> m(latent_dim * 4, 0.0);
    auto set = [&](std::size_t row, std::size_t col) { m[row * 4 + col] = 1.0; };
    set(0, 0);             // size
    set(1, 1);             // x
    set(2, 2);             // y
    set(3, 1); set(3, 3);  // x and x+y
    set(4, 2); set(4, 3);  // y and x+y
    set(5, 1); set(5, 2); set(5, 3);  // x, y, x+y together
    return Tensor::from_data({latent_dim, 4}, std::move(m));
}

std::vector<std::pair<std::size_t, std::size_t>> ground_truth_pairs() {
    return {{1, 2}, {1, 3}, {2, 3}};
}

void write_pgm(const Image& image, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("cannot open '" + path + "' for writing");
    os << "P5\n" << image.n << " " << image.n << "\n255\n";
    for (std::uint8_t p : image.pixels) os.put(p ? static_cast<char>(255) : 0);
    if (!os) throw Error("write to '" + path + "' failed");
}

Image image_from_probs(const std::vector<double>& probs, std::size_t n) {
    if (probs.size() != n * n) throw Error("image_from_probs: wrong pixel count");
    Image img;
    img.n = n;
    img.pixels.resize(n * n);
    for (std::size_t i = 0; i < n * n; ++i) img.pixels[i] = probs[i] >= 0.5 ? 1 : 0;
    return img;
}

}  // namespace corrvae
