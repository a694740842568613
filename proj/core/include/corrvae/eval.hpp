#pragma once

#include <string>
#include <vector>

#include "corrvae/datagen.hpp"
#include "corrvae/model.hpp"
#include "corrvae/moo.hpp"

namespace corrvae {

/// Pairwise normalized mutual information on equal-width 2-D histograms.
/// Every entry lies in [0,1]; constant variables yield 0 (flagged).
struct MiMatrix {
    std::size_t rows = 0, cols = 0;
    std::vector<double> values;
    bool degenerate_warning = false;

    double at(std::size_t i, std::size_t j) const { return values[i * cols + j]; }
    std::string to_csv(const std::vector<std::string>& row_names,
                       const std::vector<std::string>& col_names) const;
};

MiMatrix pairwise_normalized_mi(const Tensor& a, const Tensor& b, std::size_t bins);

/// || MI(w', y) - target ||_F^2 with the target matrix supplied by the
/// caller (identity-with-correlations over the ground-truth properties).
double avg_mi(const Tensor& w_prime_samples, const Tensor& y_samples, std::size_t bins,
              const MiMatrix& target, MiMatrix* out_matrix = nullptr);

/// The avgMI target: the MI matrix of the ground-truth properties with
/// themselves (unit diagonal, true correlations off the diagonal).
MiMatrix property_mi_target(const Tensor& y_samples, std::size_t bins);

struct MaskRecovery {
    double precision = 1.0;  // vacuously 1 for an empty mask
    double recall = 0.0;
    std::vector<std::pair<std::size_t, std::size_t>> recovered;
    std::vector<std::pair<std::size_t, std::size_t>> expected;
};

MaskRecovery mask_recovery(const Tensor& learned_hard_mask,
                           const std::vector<std::pair<std::size_t, std::size_t>>& truth_pairs);

struct EvalReport {
    std::vector<double> prediction_mse;  // per property
    std::vector<double> control_mse;     // per property
    double avg_mi = 0.0;
    MiMatrix mi_matrix;
    MaskRecovery mask;
    std::size_t control_specs = 0;
    std::size_t control_failures = 0;

    std::string to_json_text(const std::vector<std::string>& names) const;
    std::string to_csv(const std::vector<std::string>& names) const;
};

/// Per-property MSE of f(h(mu_w(x) . M_hard)) against the true properties.
std::vector<double> prediction_mse(const CorrVae& model, const Dataset& test_set);

/// Attainable all-Value specs sampled over the valid property box.
std::vector<ConstraintSpec> sample_value_battery(std::size_t count, std::uint64_t seed);

/// Generates one image per spec (fixed z) and scores the oracle-measured
/// properties against the requested values.
std::vector<double> control_mse(CorrVae& model, const std::vector<ConstraintSpec>& battery,
                                const SolveOptions& opts, std::size_t* failures = nullptr);

/// Full evaluation pass over a held-out set.
EvalReport evaluate(CorrVae& model, const Dataset& test_set, std::size_t control_battery_size,
                    std::size_t mi_bins, const SolveOptions& opts);

}  // namespace corrvae
