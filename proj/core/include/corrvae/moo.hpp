#pragma once

#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "corrvae/datagen.hpp"
#include "corrvae/model.hpp"

namespace corrvae {

enum class ConstraintKind { Value, Range, Maximize, Minimize, Free };

struct PropertyConstraint {
    ConstraintKind kind = ConstraintKind::Free;
    double value = 0.0;  // Value target
    double lo = -std::numeric_limits<double>::infinity();
    double hi = std::numeric_limits<double>::infinity();
    double weight = 1.0;
};

enum class ZPolicy { Sampled, Fixed };

struct ConstraintSpec {
    std::vector<PropertyConstraint> entries;  // one per property
    ZPolicy z_policy = ZPolicy::Sampled;

    void validate(std::size_t property_count) const;
    static ConstraintSpec all_values(const std::vector<double>& targets);
    static ConstraintSpec from_json_text(const std::string& text, std::size_t property_count,
                                         const std::vector<std::string>& names);
    std::string to_json_text(const std::vector<std::string>& names) const;
};

struct SolveOptions {
    std::size_t restarts = 8;
    std::size_t inner_steps = 500;
    std::size_t outer_rounds = 4;  // range-penalty escalation rounds, x10 each
    double lr = 0.05;
    double prior_weight = 0.02;    // mu, keeps w near its standard-normal prior
    double converge_tol = 0.05;    // max per-property violation that still counts as satisfied
    std::uint64_t seed = 0;
};

struct ExactSolution {
    std::vector<double> w_prime;   // exact head inversion of the targets
    std::vector<double> w_star;    // best latent fit of w_prime
    double fit_residual = 0.0;     // ||h(w* . M) - w'||_2 of the best restart
    bool fit_ok = true;
};

/// Full-value generation: w' by exact fixed-point inversion, then w by
/// restarted gradient descent on ||h(w . M) - w'||^2 + mu ||w||^2.
ExactSolution solve_exact(const InvertibleHead& head, const Aggregator& agg,
                          const Tensor& mask_hard, const std::vector<double>& targets,
                          const SolveOptions& opts);

struct SolveReport {
    std::vector<double> w_star;
    std::vector<double> w_prime;          // h(w* . M), recomputed
    std::vector<double> achieved_model;   // f(h(w* . M)), recomputed
    std::vector<double> violations;       // per property, 0 for satisfied/free
    bool converged = false;
    std::size_t iterations = 0;           // total inner steps of the winning restart
    std::vector<double> round_violations; // total range violation after each outer round
};

/// Weighted-sum scalarization with escalating quadratic penalties on range
/// constraints; Maximize/Minimize enter as signed linear terms.
SolveReport solve_constrained(const InvertibleHead& head, const Aggregator& agg,
                              const Tensor& mask_hard, const ConstraintSpec& spec,
                              const SolveOptions& opts);

struct GenerationReport {
    SolveReport solve;
    std::vector<std::vector<double>> achieved_oracle;  // per generated image
    std::vector<Image> images;

    std::string to_json_text(const ConstraintSpec& spec,
                             const std::vector<std::string>& names) const;
    std::string to_csv(const std::vector<std::string>& names) const;
};

/// Solves the constraint spec against the model head, decodes a batch with z per
/// policy, thresholds at 0.5 and runs the analytic oracle on every image.
GenerationReport generate(CorrVae& model, const ConstraintSpec& spec, std::size_t batch, Rng& rng,
                          const SolveOptions& opts);

enum class TraverseSpace { W, WPrime };

struct TraverseStep {
    double coordinate = 0.0;
    Image image;
    std::vector<double> oracle;            // measured properties, empty if the frame is blank
    std::vector<double> model_properties;  // f(h(w . M)) at this step
};

/// Sweeps one coordinate of w (or of w', refit into w per step) over
/// [lo, hi] in `steps` points with all other coordinates held at zero.
std::vector<TraverseStep> traverse(CorrVae& model, TraverseSpace space, std::size_t index,
                                   double lo, double hi, std::size_t steps,
                                   const SolveOptions& opts);

}  // namespace corrvae
