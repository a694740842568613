#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "corrvae/rng.hpp"
#include "corrvae/tensor.hpp"

namespace corrvae {

enum class ShapeKind : std::uint8_t { Square = 0, Ellipse = 1 };

/// Binary raster, one byte per pixel (0 or 1), row-major.
struct Image {
    std::size_t n = 0;
    std::vector<std::uint8_t> pixels;

    std::uint8_t at(std::size_t row, std::size_t col) const { return pixels[row * n + col]; }
    std::size_t filled_count() const;
};

struct Properties {
    double size = 0.0;
    double x = 0.0;
    double y = 0.0;
    double xy = 0.0;  // (x + y) / 2, kept on the shared [0,1] scale

    std::array<double, 4> as_array() const { return {size, x, y, xy}; }
};

inline constexpr double kSizeMin = 0.2;
inline constexpr double kSizeMax = 0.9;

/// Valid center ranges so the rendered shape stays fully inside the canvas.
double x_margin(ShapeKind kind, double size);
double y_margin(ShapeKind kind, double size);

/// Axis-aligned filled square (half-width size*N/4) or ellipse (semi-axes
/// size*N/4, size*N/6) centered at (x*N, y*N), pixel-center inclusion.
Image render(ShapeKind kind, double size, double x, double y, std::size_t n);

struct Measurement {
    Properties properties;
    ShapeKind kind_guess = ShapeKind::Square;
};

/// Analytic property oracle: centroid for position, render-model search for
/// size. Throws on an empty image.
Measurement measure(const Image& image);

struct SyntheticSample {
    Image image;
    ShapeKind kind = ShapeKind::Square;
    Properties properties;
};

struct DatasetHeader {
    std::size_t image_n = 16;
    std::size_t count = 0;
    std::vector<std::string> property_names;
    std::vector<std::pair<double, double>> property_ranges;
};

struct Dataset {
    DatasetHeader header;
    std::vector<SyntheticSample> samples;

    std::size_t property_count() const { return header.property_names.size(); }
    /// Flattened images as a [count, n*n] design matrix in [0,1].
    Tensor images_tensor(std::size_t begin, std::size_t end) const;
    /// Property rows as [count, m].
    Tensor properties_tensor(std::size_t begin, std::size_t end) const;
};

/// Draws one sample deterministically from (seed, index).
SyntheticSample draw_sample(std::uint64_t seed, std::uint64_t index, std::size_t n);

Dataset make_dataset(std::size_t count, std::uint64_t seed, std::size_t n = 16);

void save_dataset(const Dataset& ds, const std::string& path);
Dataset load_dataset(const std::string& path);

/// Construction ground truth for an l-dimensional latent code over the
/// property set (size, x, y, x+y): private rows for each property plus
/// shared rows realizing the x/x+y, y/x+y and x/y overlaps.
Tensor ground_truth_mask(std::size_t latent_dim);
std::vector<std::pair<std::size_t, std::size_t>> ground_truth_pairs();

void write_pgm(const Image& image, const std::string& path);
/// Thresholds decoded probabilities at 0.5 into a binary image.
Image image_from_probs(const std::vector<double>& probs, std::size_t n);

}  // namespace corrvae
