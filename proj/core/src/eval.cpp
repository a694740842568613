#include "corrvae/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include <json.hpp>

namespace corrvae {

using nlohmann::json;

namespace {

struct Binned {
    std::vector<int> bin;  // per sample, -1 when the variable is constant
    bool degenerate = false;
};

Binned bin_column(const std::vector<double>& col, std::size_t bins) {
    Binned out;
    auto [mn_it, mx_it] = std::minmax_element(col.begin(), col.end());
    double mn = *mn_it, mx = *mx_it;
    out.bin.resize(col.size());
    if (mx <= mn) {
        out.degenerate = true;
        std::fill(out.bin.begin(), out.bin.end(), -1);
        return out;
    }
    const double w = (mx - mn) / static_cast<double>(bins);
    for (std::size_t i = 0; i < col.size(); ++i) {
        int b = static_cast<int>((col[i] - mn) / w);
        out.bin[i] = std::clamp(b, 0, static_cast<int>(bins) - 1);
    }
    return out;
}

double entropy(const std::vector<int>& bin, std::size_t bins, std::size_t n) {
    std::vector<double> p(bins, 0.0);
    for (int b : bin) p[static_cast<std::size_t>(b)] += 1.0;
    double h = 0.0;
    for (double c : p) {
        if (c > 0.0) {
            double q = c / static_cast<double>(n);
            h -= q * std::log(q);
        }
    }
    return h;
}

double mutual_information(const std::vector<int>& a, const std::vector<int>& b, std::size_t bins,
                          std::size_t n) {
    std::vector<double> joint(bins * bins, 0.0), pa(bins, 0.0), pb(bins, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        joint[static_cast<std::size_t>(a[i]) * bins + static_cast<std::size_t>(b[i])] += 1.0;
        pa[static_cast<std::size_t>(a[i])] += 1.0;
        pb[static_cast<std::size_t>(b[i])] += 1.0;
    }
    const double inv = 1.0 / static_cast<double>(n);
    double mi = 0.0;
    for (std::size_t i = 0; i < bins; ++i) {
        for (std::size_t j = 0; j < bins; ++j) {
            double pij = joint[i * bins + j] * inv;
            if (pij <= 0.0) continue;
            mi += pij * std::log(pij / (pa[i] * inv * pb[j] * inv));
        }
    }
    return mi;
}

std::vector<double> column(const Tensor& t, std::size_t j) {
    const std::size_t rows = t.dim(0), cols = t.dim(1);
    std::vector<double> out(rows);
    for (std::size_t i = 0; i < rows; ++i) out[i] = t.values()[i * cols + j];
    return out;
}

}  // namespace

MiMatrix pairwise_normalized_mi(const Tensor& a, const Tensor& b, std::size_t bins) {
    if (a.shape().size() != 2 || b.shape().size() != 2 || a.dim(0) != b.dim(0))
        throw ShapeError("pairwise_normalized_mi expects [n,da] and [n,db]");
    if (a.dim(0) < 1000) throw Error("pairwise_normalized_mi: need at least 1000 paired samples");
    if (bins < 8) throw Error("pairwise_normalized_mi: need at least 8 bins");

    const std::size_t n = a.dim(0), da = a.dim(1), db = b.dim(1);
    std::vector<Binned> abins(da), bbins(db);
    std::vector<double> ah(da), bh(db);
    MiMatrix out;
    out.rows = da;
    out.cols = db;
    out.values.assign(da * db, 0.0);
    for (std::size_t i = 0; i < da; ++i) {
        abins[i] = bin_column(column(a, i), bins);
        out.degenerate_warning = out.degenerate_warning || abins[i].degenerate;
        ah[i] = abins[i].degenerate ? 0.0 : entropy(abins[i].bin, bins, n);
    }
    for (std::size_t j = 0; j < db; ++j) {
        bbins[j] = bin_column(column(b, j), bins);
        out.degenerate_warning = out.degenerate_warning || bbins[j].degenerate;
        bh[j] = bbins[j].degenerate ? 0.0 : entropy(bbins[j].bin, bins, n);
    }
    for (std::size_t i = 0; i < da; ++i) {
        for (std::size_t j = 0; j < db; ++j) {
            if (abins[i].degenerate || bbins[j].degenerate) continue;
            double denom = std::min(ah[i], bh[j]);
            if (denom <= 0.0) continue;
            double mi = mutual_information(abins[i].bin, bbins[j].bin, bins, n);
            out.values[i * db + j] = std::clamp(mi / denom, 0.0, 1.0);
        }
    }
    return out;
}

std::string MiMatrix::to_csv(const std::vector<std::string>& row_names,
                             const std::vector<std::string>& col_names) const {
    std::ostringstream os;
    for (const auto& c : col_names) os << "," << c;
    os << "\n";
    for (std::size_t i = 0; i < rows; ++i) {
        os << row_names[i];
        for (std::size_t j = 0; j < cols; ++j) {
            char buf[40];
            std::snprintf(buf, sizeof(buf), ",%.6f", at(i, j));
            os << buf;
        }
        os << "\n";
    }
    return os.str();
}

double avg_mi(const Tensor& w_prime_samples, const Tensor& y_samples, std::size_t bins,
              const MiMatrix& target, MiMatrix* out_matrix) {
    MiMatrix mi = pairwise_normalized_mi(w_prime_samples, y_samples, bins);
    if (mi.rows != target.rows || mi.cols != target.cols)
        throw ShapeError("avg_mi: target matrix shape mismatch");
    double frob = 0.0;
    for (std::size_t i = 0; i < mi.values.size(); ++i) {
        double d = mi.values[i] - target.values[i];
        frob += d * d;
    }
    if (out_matrix) *out_matrix = std::move(mi);
    return frob;
}

MiMatrix property_mi_target(const Tensor& y_samples, std::size_t bins) {
    return pairwise_normalized_mi(y_samples, y_samples, bins);
}

MaskRecovery mask_recovery(const Tensor& learned_hard_mask,
                           const std::vector<std::pair<std::size_t, std::size_t>>& truth_pairs) {
    MaskRecovery out;
    auto pairs = correlation_pairs(learned_hard_mask);
    out.recovered.assign(pairs.begin(), pairs.end());
    out.expected = truth_pairs;
    std::size_t hit = 0;
    for (const auto& p : out.recovered)
        if (std::find(truth_pairs.begin(), truth_pairs.end(), p) != truth_pairs.end()) ++hit;
    out.precision = out.recovered.empty() ? 1.0
                                          : static_cast<double>(hit) /
                                                static_cast<double>(out.recovered.size());
    out.recall = truth_pairs.empty() ? 1.0
                                     : static_cast<double>(hit) /
                                           static_cast<double>(truth_pairs.size());
    return out;
}

std::vector<double> prediction_mse(const CorrVae& model, const Dataset& test_set) {
    if (test_set.samples.empty()) throw Error("prediction_mse: empty test set");
    const std::size_t n = test_set.samples.size();
    const std::size_t m = model.config().dims.properties;
    Tensor x = test_set.images_tensor(0, n);
    Tensor y = test_set.properties_tensor(0, n);
    Tensor pred = model.predict_properties(x);
    std::vector<double> mse(m, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) {
            double d = pred.values()[i * m + j] - y.values()[i * m + j];
            mse[j] += d * d;
        }
    for (double& v : mse) v /= static_cast<double>(n);
    return mse;
}

std::vector<ConstraintSpec> sample_value_battery(std::size_t count, std::uint64_t seed) {
    std::vector<ConstraintSpec> battery;
    for (std::size_t i = 0; i < count; ++i) {
        Rng rng = Rng::for_stream(seed, i);
        // keep requests inside the comfortably attainable box
        double s = 0.3 + 0.5 * rng.uniform();
        double margin = s / 4.0 + 0.05;
        double x = margin + (1.0 - 2.0 * margin) * rng.uniform();
        double y = margin + (1.0 - 2.0 * margin) * rng.uniform();
        // sampled z: the prior-mean z decodes to an averaged blur that can
        // fall entirely under the 0.5 threshold
        ConstraintSpec spec = ConstraintSpec::all_values({s, x, y, 0.5 * (x + y)});
        spec.z_policy = ZPolicy::Sampled;
        battery.push_back(spec);
    }
    return battery;
}

std::vector<double> control_mse(CorrVae& model, const std::vector<ConstraintSpec>& battery,
                                const SolveOptions& opts, std::size_t* failures) {
    const std::size_t m = model.config().dims.properties;
    std::vector<double> sq(m, 0.0);
    std::vector<std::size_t> counts(m, 0);
    std::size_t failed = 0;
    Rng gen_rng(opts.seed);
    for (std::size_t si = 0; si < battery.size(); ++si) {
        GenerationReport rep;
        try {
            rep = generate(model, battery[si], 1, gen_rng, opts);
        } catch (const Error& e) {
            throw Error("control battery spec " + std::to_string(si) + ": " + e.what());
        }
        if (rep.achieved_oracle.empty() || rep.achieved_oracle[0].empty()) {
            ++failed;
            continue;
        }
        const auto& meas = rep.achieved_oracle[0];
        for (std::size_t j = 0; j < m; ++j) {
            const auto& c = battery[si].entries[j];
            if (c.kind != ConstraintKind::Value) continue;
            double d = meas[j] - c.value;
            sq[j] += d * d;
            ++counts[j];
        }
    }
    for (std::size_t j = 0; j < m; ++j)
        if (counts[j]) sq[j] /= static_cast<double>(counts[j]);
    if (failures) *failures = failed;
    return sq;
}

EvalReport evaluate(CorrVae& model, const Dataset& test_set, std::size_t control_battery_size,
                    std::size_t mi_bins, const SolveOptions& opts) {
    EvalReport report;
    report.prediction_mse = prediction_mse(model, test_set);

    auto battery = sample_value_battery(control_battery_size, opts.seed);
    report.control_specs = battery.size();
    report.control_mse = control_mse(model, battery, opts, &report.control_failures);

    const std::size_t n = test_set.samples.size();
    Tensor x = test_set.images_tensor(0, n);
    Tensor y = test_set.properties_tensor(0, n);
    auto [qw, qz] = model.encode(x);
    Tensor w_prime = aggregate(qw.mu, model.eval_mask(), model.aggregator());
    MiMatrix target = property_mi_target(y, mi_bins);
    report.avg_mi = avg_mi(w_prime, y, mi_bins, target, &report.mi_matrix);

    report.mask = mask_recovery(model.eval_mask(), ground_truth_pairs());
    return report;
}

std::string EvalReport::to_json_text(const std::vector<std::string>& names) const {
    json j;
    json pred, ctrl;
    for (std::size_t i = 0; i < names.size(); ++i) {
        pred[names[i]] = prediction_mse[i];
        ctrl[names[i]] = control_mse[i];
    }
    j["prediction_mse"] = pred;
    j["control_mse"] = ctrl;
    j["avg_mi"] = avg_mi;
    j["control_specs"] = control_specs;
    j["control_failures"] = control_failures;
    j["mask_precision"] = mask.precision;
    j["mask_recall"] = mask.recall;
    auto pair_list = [&](const std::vector<std::pair<std::size_t, std::size_t>>& ps) {
        json arr = json::array();
        for (const auto& [i, k] : ps) arr.push_back({names[i], names[k]});
        return arr;
    };
    j["recovered_pairs"] = pair_list(mask.recovered);
    j["expected_pairs"] = pair_list(mask.expected);
    return j.dump(2);
}

std::string EvalReport::to_csv(const std::vector<std::string>& names) const {
    std::ostringstream os;
    os << "metric";
    for (const auto& n : names) os << "," << n;
    os << "\n";
    auto row = [&](const char* label, const std::vector<double>& vals) {
        os << label;
        for (double v : vals) {
            char buf[40];
            std::snprintf(buf, sizeof(buf), ",%.17g", v);
            os << buf;
        }
        os << "\n";
    };
    row("prediction_mse", prediction_mse);
    row("control_mse", control_mse);
    os << "avg_mi," << avg_mi << "\n";
    os << "mask_precision," << mask.precision << "\n";
    os << "mask_recall," << mask.recall << "\n";
    return os.str();
}

}  // namespace corrvae
