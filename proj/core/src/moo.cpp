#include "corrvae/moo.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <json.hpp>

#include "corrvae/optim.hpp"

namespace corrvae {

using nlohmann::json;

void ConstraintSpec::validate(std::size_t property_count) const {
    if (entries.size() != property_count)
        throw Error("constraint spec covers " + std::to_string(entries.size()) +
                    " properties, model has " + std::to_string(property_count));
    bool any = false;
    for (const auto& e : entries) {
        if (e.kind == ConstraintKind::Range && e.lo > e.hi)
            throw Error("constraint spec: range lower bound exceeds upper bound");
        if (e.kind != ConstraintKind::Free) any = true;
        if (e.weight < 0.0) throw Error("constraint spec: negative weight");
    }
    if (!any) throw Error("constraint spec: every property is free");
}

ConstraintSpec ConstraintSpec::all_values(const std::vector<double>& targets) {
    ConstraintSpec spec;
    for (double t : targets) {
        PropertyConstraint c;
        c.kind = ConstraintKind::Value;
        c.value = t;
        spec.entries.push_back(c);
    }
    return spec;
}

namespace {

double bound_from_json(const json& v, bool upper) {
    if (v.is_string()) {
        const std::string s = v.get<std::string>();
        if (s == "inf") return std::numeric_limits<double>::infinity();
        if (s == "-inf") return -std::numeric_limits<double>::infinity();
        throw Error("constraint spec: bound must be a number, \"inf\" or \"-inf\"");
    }
    if (v.is_number()) return v.get<double>();
    return upper ? std::numeric_limits<double>::infinity()
                 : -std::numeric_limits<double>::infinity();
}

json bound_to_json(double v) {
    if (std::isinf(v)) return v > 0 ? json("inf") : json("-inf");
    return json(v);
}

PropertyConstraint entry_from_json(const json& e) {
    PropertyConstraint c;
    const std::string type = e.at("type").get<std::string>();
    if (type == "value") {
        c.kind = ConstraintKind::Value;
        c.value = e.at("c").get<double>();
    } else if (type == "range") {
        c.kind = ConstraintKind::Range;
        c.lo = e.contains("lo") ? bound_from_json(e.at("lo"), false)
                                : -std::numeric_limits<double>::infinity();
        c.hi = e.contains("hi") ? bound_from_json(e.at("hi"), true)
                                : std::numeric_limits<double>::infinity();
    } else if (type == "max") {
        c.kind = ConstraintKind::Maximize;
    } else if (type == "min") {
        c.kind = ConstraintKind::Minimize;
    } else if (type == "free") {
        c.kind = ConstraintKind::Free;
    } else {
        throw Error("constraint spec: unknown type '" + type + "'");
    }
    if (e.contains("weight")) c.weight = e.at("weight").get<double>();
    return c;
}

json entry_to_json(const PropertyConstraint& c) {
    json e;
    switch (c.kind) {
        case ConstraintKind::Value:
            e["type"] = "value";
            e["c"] = c.value;
            break;
        case ConstraintKind::Range:
            e["type"] = "range";
            e["lo"] = bound_to_json(c.lo);
            e["hi"] = bound_to_json(c.hi);
            break;
        case ConstraintKind::Maximize: e["type"] = "max"; break;
        case ConstraintKind::Minimize: e["type"] = "min"; break;
        case ConstraintKind::Free: e["type"] = "free"; break;
    }
    e["weight"] = c.weight;
    return e;
}

}  // namespace

ConstraintSpec ConstraintSpec::from_json_text(const std::string& text, std::size_t property_count,
                                              const std::vector<std::string>& names) {
    json j = json::parse(text);
    ConstraintSpec spec;
    spec.entries.assign(property_count, PropertyConstraint{});
    if (j.contains("z_policy")) spec.z_policy = j.at("z_policy") == "fixed" ? ZPolicy::Fixed
                                                                           : ZPolicy::Sampled;
    const json& props = j.contains("properties") ? j.at("properties") : j;
    for (std::size_t i = 0; i < property_count; ++i) {
        if (props.contains(names[i])) spec.entries[i] = entry_from_json(props.at(names[i]));
    }
    spec.validate(property_count);
    return spec;
}

std::string ConstraintSpec::to_json_text(const std::vector<std::string>& names) const {
    json props;
    for (std::size_t i = 0; i < entries.size(); ++i) props[names[i]] = entry_to_json(entries[i]);
    json j;
    j["properties"] = props;
    j["z_policy"] = z_policy == ZPolicy::Fixed ? "fixed" : "sampled";
    return j.dump(2);
}

// --- solvers ---

namespace {

std::vector<double> eval_model_properties(const InvertibleHead& head, const Aggregator& agg,
                                          const Tensor& mask_hard, const std::vector<double>& w) {
    Tensor wt = Tensor::from_data({1, w.size()}, w);
    Tensor f = head.predict(aggregate(wt, mask_hard, agg));
    return f.values();
}

std::vector<double> eval_w_prime(const Aggregator& agg, const Tensor& mask_hard,
                                 const std::vector<double>& w) {
    Tensor wt = Tensor::from_data({1, w.size()}, w);
    return aggregate(wt, mask_hard, agg).values();
}

std::vector<double> spec_violations(const ConstraintSpec& spec, const std::vector<double>& f) {
    std::vector<double> v(spec.entries.size(), 0.0);
    for (std::size_t i = 0; i < spec.entries.size(); ++i) {
        const auto& c = spec.entries[i];
        if (c.kind == ConstraintKind::Value) {
            v[i] = std::abs(f[i] - c.value);
        } else if (c.kind == ConstraintKind::Range) {
            v[i] = std::max({0.0, f[i] - c.hi, c.lo - f[i]});
        }
    }
    return v;
}

double total_range_violation(const ConstraintSpec& spec, const std::vector<double>& f) {
    double total = 0.0;
    for (std::size_t i = 0; i < spec.entries.size(); ++i) {
        if (spec.entries[i].kind != ConstraintKind::Range) continue;
        total += std::max({0.0, f[i] - spec.entries[i].hi, spec.entries[i].lo - f[i]});
    }
    return total;
}

Tensor constrained_loss(const Tensor& w, const InvertibleHead& head, const Aggregator& agg,
                        const Tensor& mask_hard, const ConstraintSpec& spec, double penalty_scale,
                        double prior_weight) {
    Tensor f = head.predict(aggregate(w, mask_hard, agg));  // [1,m]
    Tensor loss = scale(sum(square(w)), prior_weight);
    for (std::size_t i = 0; i < spec.entries.size(); ++i) {
        const auto& c = spec.entries[i];
        if (c.kind == ConstraintKind::Free) continue;
        Tensor fi = slice(f, 1, i, i + 1);
        switch (c.kind) {
            case ConstraintKind::Value:
                loss = add(loss, scale(sum(square(sub(fi, Tensor::scalar(c.value)))), c.weight));
                break;
            case ConstraintKind::Range:
                if (std::isfinite(c.hi))
                    loss = add(loss, scale(sum(square(relu(sub(fi, Tensor::scalar(c.hi))))),
                                           c.weight * penalty_scale));
                if (std::isfinite(c.lo))
                    loss = add(loss, scale(sum(square(relu(sub(Tensor::scalar(c.lo), fi)))),
                                           c.weight * penalty_scale));
                break;
            case ConstraintKind::Maximize:
                loss = add(loss, scale(sum(fi), -c.weight));
                break;
            case ConstraintKind::Minimize:
                loss = add(loss, scale(sum(fi), c.weight));
                break;
            case ConstraintKind::Free: break;
        }
    }
    return loss;
}

bool has_range(const ConstraintSpec& spec) {
    for (const auto& e : spec.entries)
        if (e.kind == ConstraintKind::Range) return true;
    return false;
}

}  // namespace

ExactSolution solve_exact(const InvertibleHead& head, const Aggregator& agg,
                          const Tensor& mask_hard, const std::vector<double>& targets,
                          const SolveOptions& opts) {
    if (targets.size() != head.property_count())
        throw Error("solve_exact: need a full vector of property targets");

    ExactSolution out;
    out.w_prime = head.invert(targets, 1e-12, 500).w_prime;
    Tensor target_t = Tensor::from_data({1, out.w_prime.size()}, out.w_prime);

    const std::size_t l = mask_hard.dim(0);
    double best_obj = std::numeric_limits<double>::infinity();
    for (std::size_t restart = 0; restart < opts.restarts; ++restart) {
        Rng rng = Rng::for_stream(opts.seed, restart);
        Tensor w = sample(rng, Dist::StandardNormal, {1, l});
        w = Tensor::from_data(w.shape(), w.values(), /*requires_grad=*/true);
        Adam opt({w}, opts.lr);
        for (std::size_t step = 0; step < opts.inner_steps; ++step) {
            Tensor fit = sum(square(sub(aggregate(w, mask_hard, agg), target_t)));
            Tensor loss = add(fit, scale(sum(square(w)), opts.prior_weight));
            w.zero_grad();
            loss.backward();
            opt.step();
        }
        Tensor fit = sum(square(sub(aggregate(w, mask_hard, agg), target_t)));
        double obj = fit.item() + opts.prior_weight * [&] {
            double s = 0.0;
            for (double v : w.values()) s += v * v;
            return s;
        }();
        if (obj < best_obj) {
            best_obj = obj;
            out.w_star = w.values();
            out.fit_residual = std::sqrt(fit.item());
        }
    }
    out.fit_ok = out.fit_residual <= 0.05;
    return out;
}

SolveReport solve_constrained(const InvertibleHead& head, const Aggregator& agg,
                              const Tensor& mask_hard, const ConstraintSpec& spec,
                              const SolveOptions& opts) {
    spec.validate(head.property_count());
    const std::size_t l = mask_hard.dim(0);
    const std::size_t rounds = has_range(spec) ? opts.outer_rounds : 1;

    SolveReport best;
    double best_obj = std::numeric_limits<double>::infinity();

    for (std::size_t restart = 0; restart < opts.restarts; ++restart) {
        Rng rng = Rng::for_stream(opts.seed, restart);
        Tensor w0 = sample(rng, Dist::StandardNormal, {1, l});
        Tensor w = Tensor::from_data(w0.shape(), w0.values(), /*requires_grad=*/true);

        std::vector<double> round_viol;
        std::vector<double> prev_w = w.values();
        double prev_violation = std::numeric_limits<double>::infinity();
        std::size_t iterations = 0;

        for (std::size_t round = 0; round < rounds; ++round) {
            const double penalty = std::pow(10.0, static_cast<double>(round));
            Adam opt({w}, opts.lr);
            for (std::size_t step = 0; step < opts.inner_steps; ++step) {
                Tensor loss = constrained_loss(w, head, agg, mask_hard, spec, penalty,
                                               opts.prior_weight);
                w.zero_grad();
                loss.backward();
                opt.step();
                ++iterations;
            }
            double viol = total_range_violation(
                spec, eval_model_properties(head, agg, mask_hard, w.values()));
            if (viol > prev_violation) {
                // keep the more feasible iterate; the escalated penalty still
                // applies to later rounds
                w.mutable_values() = prev_w;
                viol = prev_violation;
            }
            prev_w = w.values();
            prev_violation = viol;
            round_viol.push_back(viol);
        }

        const double final_penalty = std::pow(10.0, static_cast<double>(rounds - 1));
        Tensor final_loss =
            constrained_loss(w.detach(), head, agg, mask_hard, spec, final_penalty,
                             opts.prior_weight);
        double obj = final_loss.item();
        if (obj < best_obj) {
            best_obj = obj;
            best.w_star = w.values();
            best.round_violations = round_viol;
            best.iterations = iterations;
        }
    }

    best.w_prime = eval_w_prime(agg, mask_hard, best.w_star);
    best.achieved_model = eval_model_properties(head, agg, mask_hard, best.w_star);
    best.violations = spec_violations(spec, best.achieved_model);
    best.converged = *std::max_element(best.violations.begin(), best.violations.end()) <=
                     opts.converge_tol;
    return best;
}

GenerationReport generate(CorrVae& model, const ConstraintSpec& spec, std::size_t batch, Rng& rng,
                          const SolveOptions& opts) {
    if (!model.head().normalized()) model.head().normalize_exact();
    const ModelDims& dims = model.config().dims;
    spec.validate(dims.properties);

    GenerationReport report;
    report.solve = solve_constrained(model.head(), model.aggregator(), model.eval_mask(), spec,
                                     opts);

    Tensor w = Tensor::from_data({1, dims.latent_w}, report.solve.w_star);
    for (std::size_t i = 0; i < batch; ++i) {
        Tensor z = spec.z_policy == ZPolicy::Fixed
                       ? Tensor::zeros({1, dims.latent_z})
                       : sample(rng, Dist::StandardNormal, {1, dims.latent_z});
        Tensor probs = model.decode(w, z);
        Image img = image_from_probs(probs.values(), dims.image_n);
        report.images.push_back(img);
        if (img.filled_count() == 0) {
            report.achieved_oracle.emplace_back();  // blank frame, nothing to measure
        } else {
            auto meas = measure(img).properties.as_array();
            report.achieved_oracle.emplace_back(meas.begin(), meas.end());
        }
    }
    return report;
}

std::string GenerationReport::to_json_text(const ConstraintSpec& spec,
                                           const std::vector<std::string>& names) const {
    json j;
    j["requested"] = json::parse(spec.to_json_text(names));
    j["w_star"] = solve.w_star;
    j["w_prime"] = solve.w_prime;
    j["achieved_model"] = solve.achieved_model;
    j["violations"] = solve.violations;
    j["round_violations"] = solve.round_violations;
    j["converged"] = solve.converged;
    j["iterations"] = solve.iterations;
    json imgs = json::array();
    for (const auto& o : achieved_oracle) {
        json e;
        if (o.empty()) {
            e["measured"] = nullptr;
        } else {
            json m;
            for (std::size_t i = 0; i < names.size(); ++i) m[names[i]] = o[i];
            e["measured"] = m;
        }
        imgs.push_back(e);
    }
    j["images"] = imgs;
    return j.dump(2);
}

std::string GenerationReport::to_csv(const std::vector<std::string>& names) const {
    std::ostringstream os;
    os << "image";
    for (const auto& n : names) os << ",oracle_" << n;
    os << "\n";
    for (std::size_t i = 0; i < achieved_oracle.size(); ++i) {
        os << i;
        if (achieved_oracle[i].empty()) {
            for (std::size_t k = 0; k < names.size(); ++k) os << ",";
        } else {
            for (double v : achieved_oracle[i]) {
                char buf[40];
                std::snprintf(buf, sizeof(buf), ",%.17g", v);
                os << buf;
            }
        }
        os << "\n";
    }
    return os.str();
}

std::vector<TraverseStep> traverse(CorrVae& model, TraverseSpace space, std::size_t index,
                                   double lo, double hi, std::size_t steps,
                                   const SolveOptions& opts) {
    if (!model.head().normalized()) model.head().normalize_exact();
    const ModelDims& dims = model.config().dims;
    const std::size_t limit = space == TraverseSpace::W ? dims.latent_w : dims.properties;
    if (index >= limit) throw Error("traverse: index out of bounds");
    if (steps == 0) throw Error("traverse: need at least one step");
    if (lo == hi) steps = 1;

    Tensor mask_hard = model.eval_mask();
    std::vector<TraverseStep> out;
    std::vector<double> warm_w(dims.latent_w, 0.0);

    for (std::size_t s = 0; s < steps; ++s) {
        const double coord =
            steps == 1 ? lo : lo + (hi - lo) * static_cast<double>(s) / static_cast<double>(steps - 1);
        std::vector<double> w(dims.latent_w, 0.0);
        if (space == TraverseSpace::W) {
            w[index] = coord;
        } else {
            // move w' one coordinate at a time by refitting w
            std::vector<double> base_wp = eval_w_prime(model.aggregator(), mask_hard,
                                                       std::vector<double>(dims.latent_w, 0.0));
            base_wp[index] = coord;
            Tensor target = Tensor::from_data({1, base_wp.size()}, base_wp);
            Tensor wt = Tensor::from_data({1, dims.latent_w}, warm_w, true);
            Adam opt({wt}, opts.lr);
            for (std::size_t it = 0; it < opts.inner_steps; ++it) {
                Tensor fit = sum(square(sub(aggregate(wt, mask_hard, model.aggregator()), target)));
                Tensor loss = add(fit, scale(sum(square(wt)), opts.prior_weight));
                wt.zero_grad();
                loss.backward();
                opt.step();
            }
            w = wt.values();
            warm_w = w;
        }

        TraverseStep step;
        step.coordinate = coord;
        step.model_properties = eval_model_properties(model.head(), model.aggregator(), mask_hard, w);
        Tensor wt = Tensor::from_data({1, dims.latent_w}, w);
        Tensor z = Tensor::zeros({1, dims.latent_z});
        step.image = image_from_probs(model.decode(wt, z).values(), dims.image_n);
        if (step.image.filled_count() > 0) {
            auto meas = measure(step.image).properties.as_array();
            step.oracle.assign(meas.begin(), meas.end());
        }
        out.push_back(std::move(step));
    }
    return out;
}

}  // namespace corrvae
