#pragma once

#include <limits>
#include <optional>
#include <string>

#include "corrvae/datagen.hpp"
#include "corrvae/distributions.hpp"
#include "corrvae/invhead.hpp"
#include "corrvae/maskpool.hpp"
#include "corrvae/nn.hpp"
#include "corrvae/rng.hpp"

namespace corrvae {

struct ModelDims {
    std::size_t image_n = 16;
    std::size_t latent_w = 8;   // dim of the property code w
    std::size_t latent_z = 8;   // dim of the style code z
    std::size_t properties = 4;
    std::size_t enc_hidden = 256;
    std::size_t agg_hidden = 32;
    std::size_t head_hidden = 32;

    std::size_t pixels() const { return image_n * image_n; }
};

enum class MaskMode { Learned, GroundTruth };         // GroundTruth = frozen construction mask
enum class AggregatorKind { Mlp, Linear };

struct TrainConfig {
    ModelDims dims;
    double rho1 = 1.0;         // weight on the z/w total correlation
    double rho2 = 1.0;         // weight on the within-w total correlation
    double lambda3 = 1e4;      // weight on the invertible-head likelihood
    double lambda_mask = 0.07; // weight on the mask L1 penalty
    double lip_c = 0.3;
    double lr = 1e-3;
    std::size_t batch = 64;
    std::size_t epochs = 30;
    double tau_start = 1.0;
    double tau_end = 0.1;
    std::uint64_t seed = 0;
    MaskMode mask_mode = MaskMode::Learned;
    AggregatorKind aggregator = AggregatorKind::Mlp;
    std::vector<std::string> property_names = {"size", "x", "y", "x+y"};
};

struct LossBreakdown {
    double recon = 0.0;
    double prop_nll = 0.0;
    double kl = 0.0;
    double tc_zw = 0.0;
    double tc_w = 0.0;
    double l3 = 0.0;
    double mask_l1 = 0.0;
    double total = 0.0;

    static const char* csv_header();
    std::string csv_row() const;
};

struct ObjectiveResult {
    LossBreakdown breakdown;
    Tensor total;  // scalar graph output for backward()
};

class CorrVae {
public:
    CorrVae() = default;
    CorrVae(const TrainConfig& config, Rng& rng);

    /// Posteriors q(w|x), q(z|x) for a [B, pixels] batch in [0,1].
    std::pair<DiagGaussian, DiagGaussian> encode(const Tensor& x) const;

    /// Per-pixel Bernoulli probabilities from (w [B,l], z [B,dz]).
    Tensor decode(const Tensor& w, const Tensor& z) const;
    Tensor decode_logits(const Tensor& w, const Tensor& z) const;

    /// Full training objective on one batch; y rows must be in [0,1].
    /// Requires batch >= 2 (the TC estimator) and a normalized head.
    ObjectiveResult objective(const Tensor& x, const Tensor& y, Rng& rng,
                              std::size_t dataset_size);

    /// Multiplier on lambda_mask; the trainer warms the sparsity penalty in
    /// after the utility of each mask entry has had time to establish.
    void set_mask_penalty_scale(double s) { mask_penalty_scale_ = s; }
    double mask_penalty_scale() const { return mask_penalty_scale_; }

    /// Cap on lambda3 during the mask-structure phase: full property weight
    /// floods Adam's second moments on the mask logits and neutralizes the
    /// L1, so the trainer holds lambda3 down until the mask is committed.
    void set_lambda3_cap(double cap) { lambda3_cap_ = cap; }


    /// Mask actually applied at evaluation/generation time: the learned hard
    /// mask, or the frozen construction mask in ground-truth mode.
    Tensor eval_mask() const;
    /// Mask sample used inside the objective (relaxed/straight-through in
    /// learned mode, the frozen mask otherwise).
    Tensor objective_mask(Rng& rng);

    /// Property prediction from an image batch: f(h(mu_w(x) . M_hard)).
    Tensor predict_properties(const Tensor& x) const;

    const TrainConfig& config() const { return config_; }
    MaskMatrix& mask() { return mask_; }
    const MaskMatrix& mask() const { return mask_; }
    const Aggregator& aggregator() const { return agg_; }
    InvertibleHead& head() { return head_; }
    const InvertibleHead& head() const { return head_; }

    ParamRegistry parameters() const;
    std::vector<Tensor> trainable() const;

    friend void save_checkpoint(const CorrVae& model, const std::string& path);
    friend CorrVae load_checkpoint(const std::string& path);

private:
    TrainConfig config_;
    Mlp prop_enc_;  // pixels -> 2*latent_w (mu ++ logvar)
    Mlp obj_enc_;   // pixels -> 2*latent_z
    Mlp decoder_;   // latent_w + latent_z -> pixels (logits)
    MaskMatrix mask_;
    Tensor truth_mask_;  // frozen construction mask for the ablation mode
    Aggregator agg_;
    InvertibleHead head_;
    double mask_penalty_scale_ = 1.0;
    double lambda3_cap_ = std::numeric_limits<double>::infinity();
};

struct TrainResult {
    std::vector<LossBreakdown> epochs;
    std::string metrics_csv;  // one header line + one row per epoch
};

/// Seeded Adam training; writes nothing, the caller owns persistence.
/// Aborts with a diagnostic naming the offending term if the loss leaves
/// the finite range.
TrainResult train(CorrVae& model, const Dataset& data, Rng& rng);

void save_checkpoint(const CorrVae& model, const std::string& path);
CorrVae load_checkpoint(const std::string& path);

}  // namespace corrvae
