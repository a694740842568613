#include "corrvae/maskpool.hpp"

namespace corrvae {

MaskMatrix MaskMatrix::init(std::size_t l, std::size_t m, double logit0) {
    MaskMatrix mask;
    mask.logits = Tensor::full({l, m}, logit0, true);
    return mask;
}

Tensor sample_mask(const MaskMatrix& mask, Rng& rng) {
    if (mask.tau <= 0.0) throw Error("sample_mask: temperature must be positive");
    const std::size_t n = mask.logits.size();
    std::vector<double> noise(n);
    for (double& v : noise) {
        double g1 = rng.gumbel();
        double g0 = rng.gumbel();
        v = g1 - g0;
    }
    Tensor noise_t = Tensor::from_data(mask.logits.shape(), std::move(noise));
    Tensor relaxed = sigmoid(scale(add(mask.logits, noise_t), 1.0 / mask.tau));
    if (!mask.hard) return relaxed;

    // straight-through: hard value forward, relaxed gradient backward
    const auto& rv = relaxed.values();
    std::vector<double> correction(n);
    for (std::size_t i = 0; i < n; ++i) correction[i] = (rv[i] > 0.5 ? 1.0 : 0.0) - rv[i];
    return add(relaxed, Tensor::from_data(mask.logits.shape(), std::move(correction)));
}

Tensor expected_mask(const MaskMatrix& mask) { return sigmoid(mask.logits); }

Tensor hard_mask(const MaskMatrix& mask) {
    std::vector<double> h(mask.logits.size());
    const auto& lv = mask.logits.values();
    for (std::size_t i = 0; i < h.size(); ++i) h[i] = lv[i] > 0.0 ? 1.0 : 0.0;
    return Tensor::from_data(mask.logits.shape(), std::move(h));
}

Tensor sparsity_loss(const MaskMatrix& mask) { return sum(expected_mask(mask)); }

Aggregator Aggregator::make(std::size_t l, std::size_t m, std::size_t hidden, Kind kind,
                            Rng& rng) {
    Aggregator agg;
    agg.kind = kind;
    for (std::size_t j = 0; j < m; ++j) {
        if (kind == Kind::Linear) {
            agg.nets.push_back(Mlp::make(l, {}, 1, Act::None, rng, /*zero_output=*/false));
        } else {
            agg.nets.push_back(Mlp::make(l, {hidden}, 1, Act::Tanh, rng, /*zero_output=*/false));
        }
    }
    return agg;
}

Tensor aggregate(const Tensor& w, const Tensor& mask_sample, const Aggregator& agg) {
    if (w.shape().size() != 2) throw ShapeError("aggregate expects w as [B,l]");
    const std::size_t l = w.dim(1);
    if (mask_sample.shape().size() != 2 || mask_sample.dim(0) != l)
        throw ShapeError("aggregate: mask shape " + shape_str(mask_sample.shape()) +
                         " does not match latent width " + std::to_string(l));
    const std::size_t m = mask_sample.dim(1);
    if (agg.property_count() != m)
        throw ShapeError("aggregate: aggregator has " + std::to_string(agg.property_count()) +
                         " nets for " + std::to_string(m) + " mask columns");

    std::vector<Tensor> columns;
    columns.reserve(m);
    for (std::size_t j = 0; j < m; ++j) {
        Tensor col = reshape(slice(mask_sample, 1, j, j + 1), {l});
        Tensor masked = mul(w, col);  // row-broadcast over the batch
        columns.push_back(agg.nets[j].forward(masked));
    }
    return concat(columns, 1);
}

std::set<std::pair<std::size_t, std::size_t>> correlation_pairs(const Tensor& mask_hard) {
    if (mask_hard.shape().size() != 2) throw ShapeError("correlation_pairs expects an l x m mask");
    const auto& v = mask_hard.values();
    for (double e : v) {
        if (e != 0.0 && e != 1.0) throw Error("correlation_pairs: mask is not strictly binary");
    }
    const std::size_t l = mask_hard.dim(0);
    const std::size_t m = mask_hard.dim(1);
    std::set<std::pair<std::size_t, std::size_t>> pairs;
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = i + 1; j < m; ++j) {
            for (std::size_t r = 0; r < l; ++r) {
                if (v[r * m + i] == 1.0 && v[r * m + j] == 1.0) {
                    pairs.emplace(i, j);
                    break;
                }
            }
        }
    }
    return pairs;
}

}  // namespace corrvae
