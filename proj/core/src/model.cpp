#include "corrvae/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "corrvae/optim.hpp"

namespace corrvae {

const char* LossBreakdown::csv_header() {
    return "epoch,recon,prop_nll,kl,tc_zw,tc_w,l3,mask_l1,total";
}

std::string LossBreakdown::csv_row() const {
    char buf[360];
    std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g", recon,
                  prop_nll, kl, tc_zw, tc_w, l3, mask_l1, total);
    return buf;
}

CorrVae::CorrVae(const TrainConfig& config, Rng& rng) : config_(config) {
    const ModelDims& d = config.dims;
    prop_enc_ = Mlp::make(d.pixels(), {d.enc_hidden, d.enc_hidden}, 2 * d.latent_w, Act::Relu, rng);
    obj_enc_ = Mlp::make(d.pixels(), {d.enc_hidden, d.enc_hidden}, 2 * d.latent_z, Act::Relu, rng);
    decoder_ = Mlp::make(d.latent_w + d.latent_z, {d.enc_hidden, d.enc_hidden}, d.pixels(),
                         Act::Relu, rng);
    // start dense: property information must flow through the mask before
    // the L1 pressure can tell informative entries from dead ones
    mask_ = MaskMatrix::init(d.latent_w, d.properties, 0.5);
    mask_.tau = config.tau_start;
    truth_mask_ = ground_truth_mask(d.latent_w);
    agg_ = Aggregator::make(d.latent_w, d.properties, d.agg_hidden,
                            config.aggregator == AggregatorKind::Linear ? Aggregator::Kind::Linear
                                                                        : Aggregator::Kind::Mlp,
                            rng);
    head_ = InvertibleHead(d.properties, d.head_hidden, 2, config.lip_c, rng);
}

namespace {

void check_image_range(const Tensor& x) {
    for (double v : x.values()) {
        if (v < 0.0 || v > 1.0) throw Error("encode: image values must lie in [0,1]");
    }
}

DiagGaussian split_posterior(const Tensor& enc_out, std::size_t latent) {
    return DiagGaussian(slice(enc_out, 1, 0, latent), slice(enc_out, 1, latent, 2 * latent));
}

}  // namespace

std::pair<DiagGaussian, DiagGaussian> CorrVae::encode(const Tensor& x) const {
    if (x.shape().size() != 2 || x.dim(1) != config_.dims.pixels())
        throw ShapeError("encode: expected [B," + std::to_string(config_.dims.pixels()) + "]");
    check_image_range(x);
    return {split_posterior(prop_enc_.forward(x), config_.dims.latent_w),
            split_posterior(obj_enc_.forward(x), config_.dims.latent_z)};
}

Tensor CorrVae::decode_logits(const Tensor& w, const Tensor& z) const {
    if (w.shape().size() != 2 || z.shape().size() != 2 || w.dim(0) != z.dim(0) ||
        w.dim(1) != config_.dims.latent_w || z.dim(1) != config_.dims.latent_z)
        throw ShapeError("decode: latent shapes disagree with the model dims");
    return decoder_.forward(concat({w, z}, 1));
}

Tensor CorrVae::decode(const Tensor& w, const Tensor& z) const {
    return sigmoid(decode_logits(w, z));
}

Tensor CorrVae::eval_mask() const {
    return config_.mask_mode == MaskMode::GroundTruth ? truth_mask_ : hard_mask(mask_);
}

Tensor CorrVae::objective_mask(Rng& rng) {
    return config_.mask_mode == MaskMode::GroundTruth ? truth_mask_ : sample_mask(mask_, rng);
}

ObjectiveResult CorrVae::objective(const Tensor& x, const Tensor& y, Rng& rng,
                                   std::size_t dataset_size) {
    const std::size_t batch = x.dim(0);
    if (batch < 2) throw Error("objective: batch size must be >= 2 for the TC estimator");
    if (y.shape().size() != 2 || y.dim(0) != batch || y.dim(1) != config_.dims.properties)
        throw ShapeError("objective: property batch has the wrong shape");
    for (double v : y.values())
        if (v < 0.0 || v > 1.0) throw Error("objective: property targets must lie in [0,1]");

    auto [qw, qz] = encode(x);
    Tensor w = reparameterize(qw, sample(rng, Dist::StandardNormal, qw.mu.shape()));
    Tensor z = reparameterize(qz, sample(rng, Dist::StandardNormal, qz.mu.shape()));

    // Bernoulli cross-entropy through stable log-sigmoids of the logits
    Tensor logits = decode_logits(w, z);
    Tensor ll = add(mul(x, logsigmoid(logits)),
                    mul(sub(Tensor::ones(x.shape()), x), logsigmoid(scale(logits, -1.0))));
    Tensor recon = scale(sum(ll), -1.0 / static_cast<double>(batch));

    Tensor mask_s = objective_mask(rng);
    Tensor w_prime = aggregate(w, mask_s, agg_);
    Tensor prop_nll = head_.l3_loss(w_prime, y);
    Tensor l3 = prop_nll;

    Tensor kl = scale(add(kl_to_standard(qw), kl_to_standard(qz)), 1.0 / static_cast<double>(batch));
    TotalCorrelation tc = total_correlation_terms(w, z, qw, qz, dataset_size);

    Tensor mask_l1 = config_.mask_mode == MaskMode::GroundTruth ? Tensor::scalar(0.0)
                                                                : sparsity_loss(mask_);

    const double lambda_mask_eff = config_.lambda_mask * mask_penalty_scale_;
    const double lambda3_eff = std::min(config_.lambda3, lambda3_cap_);
    Tensor total = add(add(add(recon, prop_nll), kl),
                       add(add(scale(tc.tc_zw, config_.rho1), scale(tc.tc_w, config_.rho2)),
                           add(scale(l3, lambda3_eff), scale(mask_l1, lambda_mask_eff))));

    ObjectiveResult out;
    out.breakdown.recon = recon.item();
    out.breakdown.prop_nll = prop_nll.item();
    out.breakdown.kl = kl.item();
    out.breakdown.tc_zw = tc.tc_zw.item();
    out.breakdown.tc_w = tc.tc_w.item();
    out.breakdown.l3 = l3.item();
    out.breakdown.mask_l1 = mask_l1.item();
    out.breakdown.total = total.item();
    out.total = total;
    return out;
}

Tensor CorrVae::predict_properties(const Tensor& x) const {
    auto [qw, qz] = encode(x);
    Tensor w_prime = aggregate(qw.mu, eval_mask(), agg_);
    return head_.predict(w_prime);
}

ParamRegistry CorrVae::parameters() const {
    ParamRegistry reg;
    reg.add_mlp("prop_enc", prop_enc_);
    reg.add_mlp("obj_enc", obj_enc_);
    reg.add_mlp("decoder", decoder_);
    reg.add("mask.logits", mask_.logits);
    for (std::size_t j = 0; j < agg_.nets.size(); ++j)
        reg.add_mlp("agg." + std::to_string(j), agg_.nets[j]);
    head_.register_params(reg, "head");
    return reg;
}

std::vector<Tensor> CorrVae::trainable() const {
    std::vector<Tensor> out = parameters().tensors();
    if (config_.mask_mode == MaskMode::GroundTruth) {
        std::erase_if(out, [this](const Tensor& t) { return t.impl() == mask_.logits.impl(); });
    }
    return out;
}

namespace {

void require_finite(const char* term, double v) {
    if (!std::isfinite(v))
        throw NumericError(std::string("training aborted: loss term '") + term +
                           "' became non-finite");
}

}  // namespace

TrainResult train(CorrVae& model, const Dataset& data, Rng& rng) {
    const TrainConfig& cfg = model.config();
    const std::size_t n = data.samples.size();
    if (n < cfg.batch) throw Error("train: dataset smaller than one batch");

    std::vector<Tensor> params = model.trainable();
    Adam opt(params, cfg.lr);
    TrainResult result;
    std::ostringstream csv;
    csv << LossBreakdown::csv_header() << "\n";

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;

    // Two-phase schedule. Phase one learns the mask structure with the
    // property weight capped (full lambda3 floods Adam's second moments on
    // the logits and neutralizes the L1) and the sparsity penalty warmed in.
    // At the midpoint the learned mask is committed to hard binary routing
    // (a binary-concrete entry flips with probability sigmoid(-|logit|) at
    // any temperature, so mid-range entries never stop injecting noise) and
    // phase two fine-tunes the heads at full property weight with a fresh
    // optimizer state.
    const double kSnapPoint = 0.6;
    const double kStructureLambda3 = 20.0;
    bool snapped = false;
    const double tau_ratio = cfg.tau_end / cfg.tau_start;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double t = cfg.epochs > 1
                             ? static_cast<double>(epoch) / static_cast<double>(cfg.epochs - 1)
                             : 1.0;
        model.mask().tau = cfg.tau_start * std::pow(tau_ratio, t);
        model.set_mask_penalty_scale(std::clamp(6.0 * (t - 1.0 / 6.0), 0.0, 1.0));
        if (cfg.mask_mode == MaskMode::Learned && cfg.epochs >= 6) {
            if (t < kSnapPoint) {
                model.set_lambda3_cap(kStructureLambda3);
            } else {
                if (!snapped) {
                    // commit entries above threshold, but keep every
                    // property wired to at least its two strongest rows
                    auto& logits = model.mask().logits.mutable_values();
                    const std::size_t l = cfg.dims.latent_w, m = cfg.dims.properties;
                    std::vector<double> snapped_vals(l * m, -8.0);
                    for (std::size_t j = 0; j < m; ++j) {
                        std::size_t best = 0, second = 0;
                        for (std::size_t r = 1; r < l; ++r) {
                            if (logits[r * m + j] > logits[best * m + j]) best = r;
                        }
                        second = best == 0 ? 1 : 0;
                        for (std::size_t r = 0; r < l; ++r) {
                            if (r != best && logits[r * m + j] > logits[second * m + j])
                                second = r;
                        }
                        for (std::size_t r = 0; r < l; ++r) {
                            if (logits[r * m + j] > 0.0 || r == best || r == second)
                                snapped_vals[r * m + j] = 8.0;
                        }
                    }
                    logits = snapped_vals;
                    opt = Adam(params, cfg.lr);
                    snapped = true;
                }
                model.set_lambda3_cap(std::numeric_limits<double>::infinity());
            }
        }

        // Fisher-Yates with the run RNG keeps epoch order reproducible.
        for (std::size_t i = n - 1; i > 0; --i) {
            std::size_t j = rng.next_u64() % (i + 1);
            std::swap(order[i], order[j]);
        }

        LossBreakdown epoch_mean;
        std::size_t steps = 0;
        for (std::size_t start = 0; start + 2 <= n; start += cfg.batch) {
            const std::size_t stop = std::min(start + cfg.batch, n);
            if (stop - start < 2) break;
            std::vector<double> xb, yb;
            xb.reserve((stop - start) * data.header.image_n * data.header.image_n);
            yb.reserve((stop - start) * 4);
            for (std::size_t i = start; i < stop; ++i) {
                const auto& s = data.samples[order[i]];
                for (std::uint8_t p : s.image.pixels) xb.push_back(p ? 1.0 : 0.0);
                auto pr = s.properties.as_array();
                yb.insert(yb.end(), pr.begin(), pr.end());
            }
            Tensor x = Tensor::from_data(
                {stop - start, data.header.image_n * data.header.image_n}, std::move(xb));
            Tensor y = Tensor::from_data({stop - start, 4}, std::move(yb));

            model.head().normalize_exact();
            ObjectiveResult step;
            try {
                step = model.objective(x, y, rng, n);
            } catch (const NumericError& e) {
                throw NumericError("training aborted (epoch " + std::to_string(epoch) +
                                   "): " + e.what());
            }
            require_finite("recon", step.breakdown.recon);
            require_finite("prop_nll", step.breakdown.prop_nll);
            require_finite("kl", step.breakdown.kl);
            require_finite("tc_zw", step.breakdown.tc_zw);
            require_finite("tc_w", step.breakdown.tc_w);
            require_finite("l3", step.breakdown.l3);
            require_finite("mask_l1", step.breakdown.mask_l1);
            require_finite("total", step.breakdown.total);

            for (Tensor& p : params) p.zero_grad();
            step.total.backward();
            opt.step();

            epoch_mean.recon += step.breakdown.recon;
            epoch_mean.prop_nll += step.breakdown.prop_nll;
            epoch_mean.kl += step.breakdown.kl;
            epoch_mean.tc_zw += step.breakdown.tc_zw;
            epoch_mean.tc_w += step.breakdown.tc_w;
            epoch_mean.l3 += step.breakdown.l3;
            epoch_mean.mask_l1 += step.breakdown.mask_l1;
            epoch_mean.total += step.breakdown.total;
            ++steps;
        }
        const double inv = 1.0 / static_cast<double>(steps);
        epoch_mean.recon *= inv;
        epoch_mean.prop_nll *= inv;
        epoch_mean.kl *= inv;
        epoch_mean.tc_zw *= inv;
        epoch_mean.tc_w *= inv;
        epoch_mean.l3 *= inv;
        epoch_mean.mask_l1 *= inv;
        epoch_mean.total *= inv;
        result.epochs.push_back(epoch_mean);
        csv << epoch << "," << epoch_mean.csv_row() << "\n";
    }

    model.head().normalize_exact();  // certification-grade values for the checkpoint
    result.metrics_csv = csv.str();
    return result;
}

}  // namespace corrvae
